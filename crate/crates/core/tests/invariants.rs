use appear::geometry::{
    primitives, skin, skin_backward, softmax_weights, subdivide, tangent_frame, uniform_laplacian, vertex_normals,
    vertex_normals_backward, BoneSet, Mesh, Neighbors,
};
use appear::linalg::mat4_identity;
use appear::loss::{image_loss, lr_at, step_lambda, LossKind, K_LAMBDA, K_LR};
use appear::raster::{
    antialias, depth_peel, interpolate, msaa_rasterize, pixel_center_ndc, project, rasterize, Camera, DepthWindow, Projected, Texture, TexturePyramid,
    WrapMode,
};
use appear::shading::{blend_layers, shade, tone_map, PointLight, Surface};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

fn perturbed_sphere(seed: &[f64]) -> Mesh<f64> {
    let mut m = primitives::uv_sphere::<f64>(8, 6, 1.0);
    for (i, p) in m.positions.iter_mut().enumerate() {
        *p += 0.05 * seed[i % seed.len()];
    }
    m
}

fn flat(pts: &[[f64; 3]]) -> Projected<f64> {
    Projected { clip: pts.iter().map(|p| [p[0], p[1], p[2], 1.0]).collect(), ndc: pts.to_vec(), valid: vec![true; pts.len()] }
}

fn euler(m: &Mesh<f64>) -> i64 {
    m.vertex_count() as i64 - m.edges().len() as i64 + m.face_count() as i64
}

fn ndc_point() -> impl Strategy<Value = [f64; 3]> {
    (-1.2f64..1.2, -1.2f64..1.2, -0.9f64..0.9).prop_map(|(x, y, z)| [x, y, z])
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn backward_is_linear_in_the_output_adjoint(
        seed in prop::collection::vec(-1.0f64..1.0, 7),
        g in prop::collection::vec(-1.0f64..1.0, 3),
        a in -4.0f64..4.0,
    ) {
        let m = perturbed_sphere(&seed);
        let n = m.positions.len();
        let go: Vec<f64> = (0..n).map(|i| g[i % 3] * (1.0 + i as f64 * 0.01)).collect();
        let scaled: Vec<f64> = go.iter().map(|x| a * x).collect();
        let mut one = vec![0.0; n];
        let mut many = vec![0.0; n];
        vertex_normals_backward(&m.positions, &m.faces, &go, &mut one);
        vertex_normals_backward(&m.positions, &m.faces, &scaled, &mut many);
        let scale = one.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(1e-300);
        for (x, y) in one.iter().zip(&many) {
            prop_assert!((a * x - y).abs() <= 1e-12 * scale * a.abs().max(1.0));
        }
    }

    #[test]
    fn backward_calls_accumulate(
        p in prop::collection::vec(-1.0f64..1.0, 9),
        logits in prop::collection::vec(-3.0f64..3.0, 6),
        g in prop::collection::vec(-1.0f64..1.0, 9),
        seed in prop::collection::vec(-1.0f64..1.0, 7),
    ) {
        // one contribution per coordinate: exact
        let mut b = mat4_identity();
        b[0][3] = 0.3;
        b[1][0] = 0.2;
        let bones = BoneSet::new(2, vec![vec![b, mat4_identity()]]).unwrap();
        let (mut gp1, mut gl1) = (vec![0.0; 9], vec![0.0; 6]);
        skin_backward(&p, &logits, &bones, 0, &g, &mut gp1, &mut gl1).unwrap();
        let (mut gp2, mut gl2) = (vec![0.0; 9], vec![0.0; 6]);
        for _ in 0..2 {
            skin_backward(&p, &logits, &bones, 0, &g, &mut gp2, &mut gl2).unwrap();
        }
        prop_assert!(gp1.iter().zip(&gp2).all(|(a, b)| 2.0 * a == *b));
        prop_assert!(gl1.iter().zip(&gl2).all(|(a, b)| 2.0 * a == *b));

        // scattered contributions: equal up to rounding
        let m = perturbed_sphere(&seed);
        let go: Vec<f64> = (0..m.positions.len()).map(|i| g[i % 9]).collect();
        let mut once = vec![0.0; go.len()];
        vertex_normals_backward(&m.positions, &m.faces, &go, &mut once);
        let mut twice = vec![0.0; go.len()];
        for _ in 0..2 {
            vertex_normals_backward(&m.positions, &m.faces, &go, &mut twice);
        }
        let scale = once.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((2.0 * a - b).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn normals_and_tangents_are_unit(seed in prop::collection::vec(-1.0f64..1.0, 11)) {
        let m = perturbed_sphere(&seed);
        let n = vertex_normals(&m.positions, &m.faces);
        let tf = tangent_frame(&m.positions, &m.faces, &m.uvs, &m.uv_faces, &n);
        for v in 0..m.vertex_count() {
            for buf in [&n, &tf.tangents, &tf.bitangents] {
                prop_assert!((norm(&buf[3 * v..3 * v + 3]) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn laplacian_is_translation_invariant_and_rotation_equivariant(
        seed in prop::collection::vec(-1.0f64..1.0, 5),
        t in prop::array::uniform3(-10.0f64..10.0),
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        let m = perturbed_sphere(&seed);
        let nb = Neighbors::from_faces(m.vertex_count(), &m.faces);
        let d = uniform_laplacian(&m.positions, &nb);
        let moved: Vec<f64> = m.positions.iter().enumerate().map(|(i, x)| x + t[i % 3]).collect();
        let dt = uniform_laplacian(&moved, &nb);
        for (a, b) in d.iter().zip(&dt) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let (s, c) = angle.sin_cos();
        let rot = |p: &[f64]| -> Vec<f64> {
            p.chunks_exact(3).flat_map(|v| [c * v[0] - s * v[2], v[1], s * v[0] + c * v[2]]).collect()
        };
        let dr = uniform_laplacian(&rot(&m.positions), &nb);
        for (a, b) in rot(&d).iter().zip(&dr) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_convex_weights(bones in 1usize..6, logits in prop::collection::vec(-60.0f64..60.0, 60)) {
        let rows = logits.len() / bones;
        let w = softmax_weights(&logits[..rows * bones], bones);
        for row in w.chunks_exact(bones) {
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn subdivision_preserves_euler_characteristic(kind in 0usize..4, levels in 1usize..3) {
        let m = match kind {
            0 => primitives::icosahedron::<f64>(),
            1 => primitives::cube(0.7),
            2 => primitives::tetrahedron(1.0),
            _ => primitives::uv_sphere(7, 5, 1.0),
        };
        let mut s = m.clone();
        for _ in 0..levels {
            s = subdivide(&s);
        }
        prop_assert_eq!(euler(&s), euler(&m));
        prop_assert_eq!(s.face_count(), m.face_count() * 4usize.pow(levels as u32));
    }

    #[test]
    fn barycentrics_partition_unity_and_stay_inside(a in ndc_point(), b in ndc_point(), c in ndc_point()) {
        let p = flat(&[a, b, c]);
        for faces in [vec![[0, 1, 2]], vec![[0, 2, 1]]] {
            let r = rasterize(&p, &faces, 23, 17, DepthWindow::None);
            for px in 0..r.pixel_count() {
                if r.covered(px).is_none() {
                    continue;
                }
                let [u, v] = r.barycentrics[px];
                prop_assert!(u >= 0.0 && v >= 0.0 && u + v <= 1.0 + 1e-9);
                prop_assert!(((1.0 - u - v) + u + v - 1.0).abs() <= 4.0 * f64::EPSILON);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_affine_attributes(
        a in ndc_point(), b in ndc_point(), c in ndc_point(),
        k in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let p = flat(&[a, b, c]);
        let faces = vec![[0, 1, 2], [0, 2, 1]];
        let (w, h) = (19, 15);
        let r = rasterize(&p, &faces, w, h, DepthWindow::None);
        let f = |x: f64, y: f64| k[0] * x + k[1] * y + k[2];
        let attrs: Vec<f64> = [a, b, c].iter().map(|q| f(q[0], q[1])).collect();
        let out = interpolate(&attrs, 1, &faces, &r).unwrap();
        for px in 0..w * h {
            if r.covered(px).is_some() {
                let ctr = pixel_center_ndc::<f64>(px % w, px / w, w, h);
                prop_assert!((out[px] - f(ctr[0], ctr[1])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn antialias_leaves_interior_pixels_untouched(
        a in ndc_point(), b in ndc_point(), c in ndc_point(), d in ndc_point(),
        shade_seed in prop::collection::vec(0.0f64..2.0, 8),
    ) {
        let p = flat(&[a, b, c, d]);
        let faces = vec![[0, 1, 2], [1, 3, 2]];
        let (w, h) = (21, 16);
        let r = rasterize(&p, &faces, w, h, DepthWindow::None);
        let input: Vec<f64> = (0..w * h)
            .flat_map(|px| match r.covered(px) {
                Some(t) => [shade_seed[2 * t] + 0.01 * (px % 7) as f64, shade_seed[2 * t + 1]],
                None => [shade_seed[4], shade_seed[5]],
            })
            .collect();
        let mut img = input.clone();
        antialias(&mut img, 2, &r, &p, &faces);
        let id = |x: i64, y: i64| -> Option<i32> {
            (x >= 0 && y >= 0 && x < w as i64 && y < h as i64).then(|| r.triangle_id[y as usize * w + x as usize])
        };
        for px in 0..w * h {
            let (x, y) = ((px % w) as i64, (px / w) as i64);
            let me = r.triangle_id[px];
            let boundary = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|(dx, dy)| id(x + dx, y + dy).is_some_and(|o| o != me));
            if !boundary {
                prop_assert_eq!(img[2 * px].to_bits(), input[2 * px].to_bits());
                prop_assert_eq!(img[2 * px + 1].to_bits(), input[2 * px + 1].to_bits());
            }
        }
    }

    #[test]
    fn peeled_layers_are_strictly_deeper(pts in prop::collection::vec(ndc_point(), 9), passes in 2usize..5) {
        let p = flat(&pts);
        let faces = vec![[0, 1, 2], [3, 4, 5], [6, 7, 8], [0, 4, 8]];
        let layers = depth_peel(&p, &faces, 16, 16, passes);
        prop_assert_eq!(layers.len(), passes);
        for px in 0..256 {
            let mut prev = f64::NEG_INFINITY;
            for l in &layers {
                if l.covered(px).is_none() {
                    break;
                }
                prop_assert!(l.depth[px] > prev);
                prev = l.depth[px];
            }
        }
    }

    #[test]
    fn constant_texture_samples_constant(
        value in prop::collection::vec(-2.0f64..2.0, 3),
        uv in prop::array::uniform2(-3.0f64..3.0),
        lod in prop::option::of(0.0f64..6.0),
        repeat in any::<bool>(),
        size in (1usize..9, 1usize..9),
    ) {
        let t = Texture::<f64>::constant(size.0, size.1, &value);
        let wrap = if repeat { WrapMode::Repeat } else { WrapMode::Clamp };
        let mut out = [0.0; 3];
        for independent in [false, true] {
            let p = TexturePyramid::from_base(t.clone(), independent);
            p.sample(uv, lod, wrap, &mut out);
            for (o, v) in out.iter().zip(&value) {
                prop_assert!((o - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn shading_is_finite_and_non_negative(
        pos in prop::array::uniform3(-1.0f64..1.0),
        dir in prop::array::uniform3(-1.0f64..1.0),
        kd in prop::array::uniform3(0.0f64..=1.0),
        orm in (0.0f64..=1.0, 0.04f64..=1.0, 0.0f64..=1.0),
        light in prop::array::uniform3(-4.0f64..4.0),
        eye in prop::array::uniform3(-4.0f64..4.0),
        power in 0.0f64..50.0,
        ambient in prop::option::of(prop::array::uniform3(0.0f64..1.0)),
    ) {
        let l = norm(&dir);
        prop_assume!(l > 1e-3);
        let normal = [dir[0] / l, dir[1] / l, dir[2] / l];
        let s = Surface { position: pos, normal, kd, orm: [orm.0, orm.1, orm.2] };
        let light = PointLight::new(light, [power; 3]).unwrap();
        let c = shade(&s, &light, eye, ambient);
        prop_assert!(c.iter().all(|v| v.is_finite() && *v >= 0.0), "{c:?}");
    }

    #[test]
    fn tone_map_is_strictly_monotone(x in 0.0f64..1e4, rel in 1e-9f64..1.0) {
        let y = x + rel * (1.0 + x);
        prop_assert!(tone_map(x).unwrap() < tone_map(y).unwrap());
    }

    #[test]
    fn opaque_front_layer_wins(c in prop::collection::vec(0.0f64..5.0, 12), bg in prop::collection::vec(0.0f64..5.0, 6)) {
        let ones = [1.0, 1.0];
        let layers: Vec<(&[f64], &[f64])> = vec![(&c[..6], &ones[..]), (&c[6..], &ones[..])];
        prop_assert_eq!(blend_layers(&layers, &bg), c[..6].to_vec());
    }

    #[test]
    fn losses_are_non_negative_and_zero_only_on_agreement(
        img in prop::collection::vec(0.0f64..10.0, 12),
        idx in 0usize..12,
        delta in 1e-6f64..1.0,
    ) {
        let mut other = img.clone();
        other[idx] += delta;
        for kind in [LossKind::L1Tonemapped, LossKind::Mse] {
            prop_assert_eq!(image_loss(kind, &img, &img).unwrap(), 0.0);
            prop_assert!(image_loss(kind, &img, &other).unwrap() > 0.0);
        }
    }

    #[test]
    fn schedules_never_increase(lambda_0 in 1e-6f64..1e3, lr_0 in 1e-4f64..1.0, t0 in 0u64..20_000, steps in 1u64..200) {
        let lambda_min = 0.02 * lambda_0;
        let mut lambda = lambda_0;
        for t in t0 + 1..=t0 + steps {
            let next = step_lambda(lambda, lambda_min, K_LAMBDA, t);
            prop_assert!(next <= lambda && next >= lambda_min);
            lambda = next;
            prop_assert!(lr_at(t, lr_0, K_LR) <= lr_at(t - 1, lr_0, K_LR));
        }
    }

    #[test]
    fn skinning_with_identity_bones_is_identity(
        p in prop::collection::vec(-5.0f64..5.0, 12),
        logits in prop::collection::vec(-4.0f64..4.0, 12),
    ) {
        let bones = BoneSet::<f64>::identity(3, 2);
        for frame in 0..2 {
            let out = skin(&p, &logits, &bones, frame).unwrap();
            for (a, b) in out.iter().zip(&p) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}

fn coverage_of(p: &Projected<f64>, face: [usize; 3], w: usize, h: usize) -> Vec<bool> {
    let r = rasterize(p, &[face], w, h, DepthWindow::None);
    (0..w * h).map(|px| r.covered(px).is_some()).collect()
}

/// Pixels strictly inside the convex quad `q` (counter-clockwise or clockwise) by `margin`.
fn strictly_inside(q: &[[f64; 3]; 4], c: [f64; 2], margin: f64) -> bool {
    let side = |a: [f64; 3], b: [f64; 3]| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let s: Vec<f64> = (0..4).map(|k| side(q[k], q[(k + 1) % 4])).collect();
    s.iter().all(|&v| v > margin) || s.iter().all(|&v| v < -margin)
}

#[test]
fn shared_diagonal_pixels_are_covered_once() {
    // a head-on unit quad larger than the frame; its diagonal passes through pixel centres
    let (w, h) = (16, 12);
    let cam = Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 0.3, 0.5, 10.0, w, h).unwrap();
    let quad = primitives::quad::<f64>(1.0);
    let p = project(&quad.positions, &cam);
    let a = coverage_of(&p, quad.faces[0], w, h);
    let b = coverage_of(&p, quad.faces[1], w, h);
    for px in 0..w * h {
        assert!(a[px] ^ b[px], "pixel {px}");
    }
}

#[test]
fn msaa_coverage_ignores_interior_edges() {
    let (w, h) = (16, 12);
    let cam = Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 0.3, 0.5, 10.0, w, h).unwrap();
    let quad = primitives::quad::<f64>(1.0);
    let p = project(&quad.positions, &cam);
    for samples in [4, 8, 16] {
        let r = msaa_rasterize(&p, &quad.faces, w, h, samples);
        assert!(r.coverage.unwrap().iter().all(|&c| c == 1.0), "{samples} samples");
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn triangles_sharing_an_edge_are_watertight(
        a in ndc_point(), b in ndc_point(), c in ndc_point(), d in ndc_point(), swap in any::<bool>(),
    ) {
        let side = |q: [f64; 3]| (b[0] - a[0]) * (q[1] - a[1]) - (b[1] - a[1]) * (q[0] - a[0]);
        prop_assume!(side(c) * side(d) < 0.0);
        let quad = [a, c, b, d];
        // convex, so the union is the quad itself
        let turns: Vec<f64> = (0..4)
            .map(|k| {
                let (p, q, r) = (quad[k], quad[(k + 1) % 4], quad[(k + 2) % 4]);
                (q[0] - p[0]) * (r[1] - q[1]) - (q[1] - p[1]) * (r[0] - q[0])
            })
            .collect();
        prop_assume!(turns.iter().all(|&t| t > 1e-3) || turns.iter().all(|&t| t < -1e-3));
        let p = flat(&[a, b, c, d]);
        let (w, h) = (24, 20);
        let first = coverage_of(&p, if swap { [1, 0, 2] } else { [0, 1, 2] }, w, h);
        let second = coverage_of(&p, [0, 1, 3], w, h);
        for px in 0..w * h {
            prop_assert!(!(first[px] && second[px]), "pixel {} covered twice", px);
            let ctr = pixel_center_ndc::<f64>(px % w, px / w, w, h);
            if strictly_inside(&quad, ctr, 1e-9) {
                prop_assert!(first[px] || second[px], "pixel {} uncovered", px);
            }
        }
    }
}
