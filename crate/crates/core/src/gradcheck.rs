//! Registered finite-difference suites over a small bundled scene.
//!
//! Each suite wraps the forward and adjoint code of one module family as
//! [`Stage`]s and runs [`fd_check`] on them in `f64`.

use crate::adjoint::{fd_check, FdReport, FnStage, SigStage, Stage};
use crate::error::{Error, Result};
use crate::geometry::{
    displace, displace_backward, laplacian_loss, laplacian_loss_backward, primitives, skin, skin_backward,
    tangent_frame, tangent_frame_backward, uniform_laplacian, vertex_normals,
    vertex_normals_backward, BoneSet, LaplacianMode, Mesh, Neighbors, Subdivision,
};
use crate::geometry::laplacian::uniform_laplacian_backward;
use crate::linalg::{mat4_identity, normalize};
use crate::loss::{image_loss, image_loss_backward, LossKind};
use crate::raster::{
    antialias, antialias_backward, barycentrics_backward, interpolate, interpolate_backward, project,
    project_backward, rasterize, Camera, DepthWindow, Projected, Texture, TexturePyramid, WrapMode,
};
use crate::render::{render, render_backward, AaMode, Asset, AssetGrad, RenderOptions, Topology};
use crate::shading::{
    apply_normal_map, apply_normal_map_backward, blend_layers, blend_layers_backward, shade, shade_backward,
    tone_map, tone_map_derivative, Material, PointLight, Surface,
};

pub const SUITES: [&str; 4] = ["geometry", "rasterizer", "shading", "loss"];

/// Relative error bound a coordinate must meet.
pub const TOLERANCE: f64 = 1e-3;
/// Fraction of smooth coordinates that must meet [`TOLERANCE`].
pub const PASS_FRACTION: f64 = 0.95;
pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub suite: &'static str,
    pub op: &'static str,
    pub outcome: std::result::Result<FdReport, String>,
}

impl OpCheck {
    /// Needs at least one smooth coordinate and enough of them within tolerance.
    pub fn passes(&self) -> bool {
        match &self.outcome {
            Ok(r) => !r.errors.is_empty() && r.passes(TOLERANCE, PASS_FRACTION),
            Err(_) => false,
        }
    }

    /// Smooth coordinates over the bound.
    pub fn failing_coords(&self) -> Vec<(usize, f64)> {
        match &self.outcome {
            Ok(r) => r.errors.iter().copied().filter(|&(_, e)| e > TOLERANCE).collect(),
            Err(_) => Vec::new(),
        }
    }
}

struct Op {
    name: &'static str,
    stage: Box<dyn Stage<f64>>,
    inputs: Vec<f64>,
    samples: usize,
}

fn op<S: Stage<f64> + 'static>(name: &'static str, stage: S, inputs: Vec<f64>, samples: usize) -> Op {
    Op { name, stage: Box::new(stage), inputs, samples }
}

/// Runs one suite; unknown names are a configuration error.
pub fn run_suite(name: &str, epsilon: f64) -> Result<Vec<OpCheck>> {
    let (suite, ops) = match name {
        "geometry" => (SUITES[0], geometry_ops()),
        "rasterizer" => (SUITES[1], rasterizer_ops()),
        "shading" => (SUITES[2], shading_ops()),
        "loss" => (SUITES[3], loss_ops()),
        _ => return Err(Error::Config(format!("unknown gradcheck suite `{name}` (expected one of {SUITES:?})"))),
    };
    Ok(ops
        .into_iter()
        .map(|o| OpCheck {
            suite,
            op: o.name,
            outcome: fd_check(o.stage.as_ref(), &o.inputs, epsilon, o.samples).map_err(|e| e.to_string()),
        })
        .collect())
}

pub fn run_all(epsilon: f64) -> Result<Vec<OpCheck>> {
    let mut out = Vec::new();
    for s in SUITES {
        out.extend(run_suite(s, epsilon)?);
    }
    Ok(out)
}

fn bumpy_sphere(amp: f64) -> Mesh<f64> {
    let mut m = primitives::uv_sphere::<f64>(8, 6, 1.0);
    for (i, p) in m.positions.iter_mut().enumerate() {
        *p += amp * ((i as f64) * 1.7).sin();
    }
    m
}

fn wave(n: usize, scale: f64, freq: f64) -> Vec<f64> {
    (0..n).map(|i| scale * (i as f64 * freq).sin()).collect()
}

fn translation(t: [f64; 3]) -> crate::linalg::Mat4<f64> {
    let mut m = mat4_identity();
    for k in 0..3 {
        m[k][3] = t[k];
    }
    m
}

fn geometry_ops() -> Vec<Op> {
    let mut ops = Vec::new();

    let m = bumpy_sphere(0.05);
    let (f1, f2) = (m.faces.clone(), m.faces.clone());
    ops.push(op(
        "vertex_normals",
        FnStage {
            forward: move |x: &[f64]| vertex_normals(x, &f1),
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| vertex_normals_backward(x, &f2, g, gi),
        },
        m.positions.clone(),
        200,
    ));

    // the frame is undefined at the uv poles; their outputs are masked
    let poles = [0, m.vertex_count() - 1];
    let mask = move |out: &mut [f64]| {
        let nv = out.len() / 6;
        for half in 0..2 {
            for &v in &poles {
                out[3 * (half * nv + v)..3 * (half * nv + v) + 3].fill(0.0);
            }
        }
    };
    let (m1, m2) = (m.clone(), m.clone());
    ops.push(op(
        "tangent_frame",
        FnStage {
            forward: move |x: &[f64]| {
                let n = vertex_normals(x, &m1.faces);
                let tf = tangent_frame(x, &m1.faces, &m1.uvs, &m1.uv_faces, &n);
                let mut out = tf.tangents;
                out.extend(tf.bitangents);
                mask(&mut out);
                out
            },
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                let mut g = g.to_vec();
                mask(&mut g);
                let n = vertex_normals(x, &m2.faces);
                let half = g.len() / 2;
                let mut gn = vec![0.0; n.len()];
                tangent_frame_backward(x, &m2.faces, &m2.uvs, &m2.uv_faces, &n, &g[..half], &g[half..], gi, &mut gn);
                vertex_normals_backward(x, &m2.faces, &gn, gi);
            },
        },
        m.positions.clone(),
        200,
    ));

    let mut b0 = translation([0.2, -0.1, 0.4]);
    b0[0][1] = 0.3;
    b0[2][0] = -0.2;
    let bones = BoneSet::new(2, vec![vec![b0, translation([-0.5, 0.3, 0.1])]]).expect("affine bones");
    let mut x = vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6, 0.7, -0.8, 0.9];
    x.extend([0.1, -0.3, 0.8, 0.2, -1.0, 0.5]);
    let (bb1, bb2) = (bones.clone(), bones);
    ops.push(op(
        "skin",
        FnStage {
            forward: move |x: &[f64]| skin(&x[..9], &x[9..], &bb1, 0).expect("frame 0"),
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                let (gp, gl) = gi.split_at_mut(9);
                skin_backward(&x[..9], &x[9..], &bb2, 0, g, gp, gl).expect("frame 0");
            },
        },
        x,
        15,
    ));

    let cube = primitives::cube::<f64>(0.5);
    let s1 = Subdivision::for_mesh(&cube);
    let s2 = s1.clone();
    ops.push(op(
        "subdivide",
        FnStage {
            forward: move |x: &[f64]| s1.apply(x, 3),
            backward: move |_: &[f64], g: &[f64], gi: &mut [f64]| s2.backward(g, 3, gi),
        },
        cube.positions.clone(),
        24,
    ));

    let sphere = primitives::uv_sphere::<f64>(8, 6, 1.0);
    let uv = sphere.vertex_uvs();
    let np = sphere.positions.len();
    let mut x = sphere.positions.clone();
    x.extend(wave(16, 0.05, 1.0));
    let (f1, f2, uv1, uv2) = (sphere.faces.clone(), sphere.faces.clone(), uv.clone(), uv);
    ops.push(op(
        "displace",
        FnStage {
            forward: move |x: &[f64]| {
                let t = Texture::new(4, 4, 1, x[np..].to_vec()).expect("4x4 map");
                displace(&x[..np], &f1, &uv1, &t, WrapMode::Clamp)
            },
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                let t = Texture::new(4, 4, 1, x[np..].to_vec()).expect("4x4 map");
                let (gp, gt) = gi.split_at_mut(np);
                displace_backward(&x[..np], &f2, &uv2, &t, WrapMode::Clamp, g, gp, gt);
            },
        },
        x,
        200,
    ));

    let n = Neighbors::from_faces(sphere.vertex_count(), &sphere.faces);
    let (n1, n2) = (n.clone(), n.clone());
    ops.push(op(
        "uniform_laplacian",
        FnStage {
            forward: move |x: &[f64]| uniform_laplacian(x, &n1),
            backward: move |_: &[f64], g: &[f64], gi: &mut [f64]| uniform_laplacian_backward(&n2, g, gi),
        },
        sphere.positions.clone(),
        100,
    ));

    let init: Vec<f64> = uniform_laplacian(&sphere.positions, &n).iter().map(|d| 0.7 * d).collect();
    for (name, mode) in [("laplacian_loss_relative", LaplacianMode::Relative), ("laplacian_loss_absolute", LaplacianMode::Absolute)] {
        let (n1, n2, i1, i2) = (n.clone(), n.clone(), init.clone(), init.clone());
        ops.push(op(
            name,
            FnStage {
                forward: move |x: &[f64]| vec![laplacian_loss(x, &n1, mode, Some(&i1)).expect("differentials")],
                backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                    laplacian_loss_backward(x, &n2, mode, Some(&i2), g[0], gi).expect("differentials")
                },
            },
            bumpy_sphere(0.03).positions,
            100,
        ));
    }
    ops
}

fn flat(x: &[f64]) -> Projected<f64> {
    let ndc: Vec<[f64; 3]> = x.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Projected { clip: ndc.iter().map(|p| [p[0], p[1], p[2], 1.0]).collect(), ndc, valid: vec![true; x.len() / 3] }
}

/// The bundled toy scene: a uv sphere with a rippled normal map, framed so
/// the uv poles stay out of view.
pub fn toy_asset() -> Asset<f64> {
    let mesh = primitives::uv_sphere::<f64>(12, 8, 1.0);
    let mut material = Material::uniform([0.6, 0.5, 0.4, 1.0], [0.0, 0.5, 0.0], 8);
    let nm: Vec<f64> = (0..64).flat_map(|i| [0.5 + 0.1 * (i as f64).sin(), 0.5 + 0.1 * (i as f64 * 0.7).cos(), 0.95]).collect();
    material.normal = TexturePyramid::from_base(Texture::new(8, 8, 3, nm).expect("8x8 map"), false);
    Asset { mesh, material, subdivisions: 0 }
}

pub fn toy_camera() -> Camera<f64> {
    Camera::look_at([1.2, 0.1, 3.2], [0.8, 0.0, 0.0], [0.0, 1.0, 0.0], 0.35, 0.5, 10.0, 24, 24).expect("valid camera")
}

pub fn toy_light() -> PointLight<f64> {
    PointLight::new([2.0, 2.5, 3.0], [12.0, 11.0, 10.0]).expect("valid light")
}

/// Full-pipeline stage over a slice of the asset selected by `set` and `take`.
struct RenderStage<F, G> {
    asset: Asset<f64>,
    topo: Topology<f64>,
    opts: RenderOptions<f64>,
    camera: Camera<f64>,
    light: PointLight<f64>,
    set: F,
    take: G,
}

fn render_stage<F, G>(asset: Asset<f64>, topo: Topology<f64>, opts: RenderOptions<f64>, set: F, take: G) -> RenderStage<F, G>
where
    F: Fn(&Asset<f64>, &[f64]) -> Asset<f64>,
    G: Fn(&Asset<f64>, AssetGrad<f64>) -> Vec<f64>,
{
    RenderStage { asset, topo, opts, camera: toy_camera(), light: toy_light(), set, take }
}

impl<F, G> RenderStage<F, G>
where
    F: Fn(&Asset<f64>, &[f64]) -> Asset<f64>,
{
    fn run(&self, x: &[f64]) -> Result<(Asset<f64>, crate::render::Rendered<f64>)> {
        let a = (self.set)(&self.asset, x);
        let out = render(&a, &self.topo, &self.camera, &self.light, None, &self.opts)?;
        Ok((a, out))
    }
}

impl<F, G> Stage<f64> for RenderStage<F, G>
where
    F: Fn(&Asset<f64>, &[f64]) -> Asset<f64>,
    G: Fn(&Asset<f64>, AssetGrad<f64>) -> Vec<f64>,
{
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.run(x)?.1.image)
    }

    fn backward(&self, x: &[f64], g: &[f64], gi: &mut [f64]) -> Result<()> {
        let (a, out) = self.run(x)?;
        let mut grads = AssetGrad::zeros(&a);
        render_backward(&a, &self.topo, None, &self.opts, &out, g, &mut grads)?;
        for (d, s) in gi.iter_mut().zip((self.take)(&a, grads)) {
            *d += s;
        }
        Ok(())
    }

    fn signature(&self, x: &[f64]) -> Option<Vec<i64>> {
        let out = self.run(x).ok()?.1;
        let mut s: Vec<i64> = out.layers.iter().flat_map(|l| l.raster.triangle_id.iter().map(|&i| i as i64)).collect();
        for c in out.layers.iter().filter_map(|l| l.raster.coverage.as_ref()) {
            // covered-sample counts
            s.extend(c.iter().map(|&f| (f * 64.0).round() as i64));
        }
        if let Some(tape) = &out.aa {
            s.extend(tape.signature());
        }
        Some(s)
    }
}

fn rasterizer_ops() -> Vec<Op> {
    let mut ops = Vec::new();

    let cam = toy_camera();
    let (c1, c2) = (cam.clone(), cam);
    ops.push(op(
        "project",
        FnStage {
            forward: move |x: &[f64]| project(x, &c1).ndc.iter().flatten().copied().collect(),
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| project_backward(&c2, &project(x, &c2), g, gi),
        },
        vec![0.1, 0.2, -0.3, -0.5, 0.4, 0.6, 0.9, -0.7, 0.2],
        9,
    ));

    let quad = vec![-0.8, -0.7, 0.1, 0.9, -0.5, 0.2, 0.1, 0.85, -0.3, 0.95, 0.9, 0.0];
    let faces = vec![[0, 1, 2], [1, 3, 2]];
    let raster = rasterize(&flat(&quad), &faces, 16, 16, DepthWindow::None);
    let (f1, f2, ra1, ra2) = (faces.clone(), faces.clone(), raster.clone(), raster);
    ops.push(op(
        "interpolate",
        FnStage {
            forward: move |a: &[f64]| interpolate(a, 2, &f1, &ra1).expect("attribute count"),
            backward: move |a: &[f64], g: &[f64], ga: &mut [f64]| interpolate_backward(a, 2, &f2, &ra2, g, ga, None),
        },
        (0..8).map(|i| (i as f64 * 0.7).cos()).collect(),
        8,
    ));

    let attrs = vec![0.3, -1.0, 2.0, 0.7];
    let (w, h) = (12, 10);
    let fwd = {
        let (faces, attrs) = (faces.clone(), attrs.clone());
        move |x: &[f64]| {
            let r = rasterize(&flat(x), &faces, w, h, DepthWindow::None);
            let out = interpolate(&attrs, 1, &faces, &r).expect("attribute count");
            (r, out)
        }
    };
    let (fw1, fw2, fw3) = (fwd.clone(), fwd.clone(), fwd);
    let f3 = faces.clone();
    ops.push(op(
        "barycentrics",
        SigStage {
            forward: move |x: &[f64]| fw1(x).1,
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                let (r, _) = fw2(x);
                let mut gb = vec![[0.0; 2]; w * h];
                let mut ga = vec![0.0; 4];
                interpolate_backward(&attrs, 1, &f3, &r, g, &mut ga, Some(&mut gb));
                barycentrics_backward(&flat(x), &f3, &r, &gb, gi);
            },
            signature: move |x: &[f64]| fw3(x).0.triangle_id.iter().map(|&i| i as i64).collect(),
        },
        quad.clone(),
        12,
    ));

    let n = 40;
    let mut x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
    x.extend([0.31, 0.47, 0.77, 0.12, 0.52, 0.83]);
    let lod = Some(0.6);
    let pyramid = move |x: &[f64]| TexturePyramid::from_base(Texture::new(5, 4, 2, x[..n].to_vec()).expect("5x4 texture"), false);
    ops.push(op(
        "texture_sample",
        FnStage {
            forward: move |x: &[f64]| {
                let p = pyramid(x);
                let mut out = Vec::new();
                for k in 0..3 {
                    let mut o = [0.0; 2];
                    p.sample([x[n + 2 * k], x[n + 2 * k + 1]], lod, WrapMode::Clamp, &mut o);
                    out.extend(o);
                }
                out
            },
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                let p = pyramid(x);
                let mut pg = p.zero_grad();
                for k in 0..3 {
                    let uv = [x[n + 2 * k], x[n + 2 * k + 1]];
                    let gv = &g[2 * k..2 * k + 2];
                    p.scatter_grad(uv, lod, WrapMode::Clamp, gv, &mut pg);
                    let guv = p.uv_gradient(uv, lod, WrapMode::Clamp, gv);
                    gi[n + 2 * k] += guv[0];
                    gi[n + 2 * k + 1] += guv[1];
                }
                p.reduce_grad(&mut pg);
                for (a, b) in gi[..n].iter_mut().zip(&pg.levels[0]) {
                    *a += b;
                }
            },
        },
        x,
        46,
    ));

    let slanted = vec![-0.83, -0.71, 0.2, 0.77, -0.52, 0.1, -0.12, 0.81, 0.3, 0.66, 0.58, -0.2];
    let colours = vec![0.9, 0.2, 0.4, 0.7];
    let (w, h) = (13, 11);
    let run = {
        let faces = faces.clone();
        move |x: &[f64]| {
            let p = flat(x);
            let r = rasterize(&p, &faces, w, h, DepthWindow::None);
            let mut img: Vec<f64> = (0..w * h)
                .flat_map(|px| match r.covered(px) {
                    Some(t) => [colours[2 * t], colours[2 * t + 1]],
                    None => [0.1, 0.9],
                })
                .collect();
            let tape = antialias(&mut img, 2, &r, &p, &faces);
            (p, r, img, tape)
        }
    };
    let (r1, r2, r3) = (run.clone(), run.clone(), run);
    ops.push(op(
        "antialias",
        SigStage {
            forward: move |x: &[f64]| r1(x).2,
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                let (p, r, _, tape) = r2(x);
                let mut gimg = g.to_vec();
                antialias_backward(&tape, 2, &r, &p, &mut gimg, gi);
            },
            signature: move |x: &[f64]| {
                let (_, r, _, tape) = r3(x);
                let mut s: Vec<i64> = r.triangle_id.iter().map(|&i| i as i64).collect();
                s.extend(tape.signature());
                s
            },
        },
        slanted,
        12,
    ));

    let a = toy_asset();
    let positions = a.mesh.positions.clone();
    for (name, aa, subdivisions) in [
        ("render_positions", AaMode::Analytic, 0),
        ("render_positions_subdivided", AaMode::Analytic, 1),
        ("render_positions_msaa", AaMode::Msaa(4), 0),
    ] {
        let t = Topology::new(&a.mesh, subdivisions).expect("toy topology");
        let mut o = RenderOptions::new(24, 24);
        o.aa = aa;
        let stage = render_stage(
            a.clone(),
            t,
            o,
            |a: &Asset<f64>, x: &[f64]| {
                let mut a = a.clone();
                a.mesh.positions = x.to_vec();
                a
            },
            |_: &Asset<f64>, g: AssetGrad<f64>| g.positions,
        );
        ops.push(op(name, stage, positions.clone(), 60));
    }

    let n_kd = a.material.kd.base().data.len();
    let n_nm = a.material.normal.base().data.len();
    let t = Topology::new(&a.mesh, 0).expect("toy topology");
    let set = move |a: &Asset<f64>, x: &[f64]| {
        let mut a = a.clone();
        let tex = |r: std::ops::Range<usize>, c| TexturePyramid::from_base(Texture::new(8, 8, c, x[r].to_vec()).expect("8x8"), false);
        a.material.kd = tex(0..n_kd, 4);
        a.material.normal = tex(n_kd..n_kd + n_nm, 3);
        a.material.orm = tex(n_kd + n_nm..x.len(), 3);
        a
    };
    let take = |a: &Asset<f64>, mut g: AssetGrad<f64>| {
        a.material.kd.reduce_grad(&mut g.kd);
        a.material.normal.reduce_grad(&mut g.normal);
        a.material.orm.reduce_grad(&mut g.orm);
        let mut all = g.kd.levels.swap_remove(0);
        all.extend(&g.normal.levels[0]);
        all.extend(&g.orm.levels[0]);
        all
    };
    let mut x = a.material.kd.base().data.clone();
    x.extend(&a.material.normal.base().data);
    x.extend((0..64).flat_map(|i| [0.1, 0.3 + 0.2 * (i as f64 * 0.3).sin().abs(), 0.2]));
    ops.push(op("render_textures", render_stage(a.clone(), t, RenderOptions::new(24, 24), set, take), x, 120));

    let mut d = a.clone();
    let disp: Vec<f64> = (0..16).map(|i| 0.02 * (i as f64).cos()).collect();
    d.material.displacement = Some(Texture::new(4, 4, 1, disp.clone()).expect("4x4"));
    let t = Topology::new(&d.mesh, 1).expect("toy topology");
    let mut o = RenderOptions::new(24, 24);
    o.aa = AaMode::None;
    let set = |a: &Asset<f64>, x: &[f64]| {
        let mut a = a.clone();
        a.material.displacement = Some(Texture::new(4, 4, 1, x.to_vec()).expect("4x4"));
        a
    };
    let take = |_: &Asset<f64>, g: AssetGrad<f64>| g.displacement.unwrap_or_default();
    ops.push(op("render_displacement", render_stage(d, t, o, set, take), disp, 16));
    ops
}

fn shading_ops() -> Vec<Op> {
    let mut ops = Vec::new();
    fn v(x: &[f64], i: usize) -> [f64; 3] {
        [x[i], x[i + 1], x[i + 2]]
    }
    ops.push(op(
        "normal_map",
        FnStage {
            forward: move |x: &[f64]| apply_normal_map(v(x, 0), v(x, 3), v(x, 6), v(x, 9)).to_vec(),
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                let (a, b, c, d) = apply_normal_map_backward(v(x, 0), v(x, 3), v(x, 6), v(x, 9), [g[0], g[1], g[2]]);
                for (k, part) in [a, b, c, d].iter().enumerate() {
                    for j in 0..3 {
                        gi[3 * k + j] += part[j];
                    }
                }
            },
        },
        vec![0.1, 0.2, 0.97, 0.99, 0.0, -0.1, 0.0, 0.98, -0.2, 0.7, 0.4, 0.8],
        12,
    ));

    let unpack = |x: &[f64]| Surface { position: v(x, 0), normal: v(x, 3), kd: v(x, 6), orm: v(x, 9) };
    let light = PointLight::new([0.8, 1.5, 2.0], [3.0, 2.0, 1.5]).expect("valid light");
    let eye = [-0.4, 0.6, 3.0];
    let n = normalize([0.1, 0.3, 0.9], 0.0).expect("nonzero");
    for (name, orm, ambient) in [
        ("shade_dielectric", [0.2, 0.3, 0.1], None),
        ("shade_metal", [0.0, 0.7, 0.9], Some([0.05, 0.1, 0.02])),
        ("shade_glossy", [0.5, 0.08, 0.4], Some([0.05, 0.1, 0.02])),
    ] {
        let (l1, l2) = (light.clone(), light.clone());
        ops.push(op(
            name,
            FnStage {
                forward: move |x: &[f64]| shade(&unpack(x), &l1, eye, ambient).to_vec(),
                backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                    let s = shade_backward(&unpack(x), &l2, eye, ambient, [g[0], g[1], g[2]]);
                    for (k, part) in [s.position, s.normal, s.kd, s.orm].iter().enumerate() {
                        for j in 0..3 {
                            gi[3 * k + j] += part[j];
                        }
                    }
                },
            },
            vec![0.05, -0.1, 0.2, n[0], n[1], n[2], 0.6, 0.3, 0.8, orm[0], orm[1], orm[2]],
            12,
        ));
    }

    // two pixels, three layers: colours (18), alphas (6), background (6)
    let layers = |x: &[f64]| -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..3).map(|l| (x[6 * l..6 * l + 6].to_vec(), x[18 + 2 * l..20 + 2 * l].to_vec())).collect()
    };
    ops.push(op(
        "blend_layers",
        FnStage {
            forward: move |x: &[f64]| {
                let ls = layers(x);
                let r: Vec<(&[f64], &[f64])> = ls.iter().map(|(c, a)| (&c[..], &a[..])).collect();
                blend_layers(&r, &x[24..])
            },
            backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                let ls = layers(x);
                let r: Vec<(&[f64], &[f64])> = ls.iter().map(|(c, a)| (&c[..], &a[..])).collect();
                let (gc, ga, gb) = blend_layers_backward(&r, &x[24..], g);
                for l in 0..3 {
                    for k in 0..6 {
                        gi[6 * l + k] += gc[l][k];
                    }
                    for k in 0..2 {
                        gi[18 + 2 * l + k] += ga[l][k];
                    }
                }
                for k in 0..6 {
                    gi[24 + k] += gb[k];
                }
            },
        },
        (0..30).map(|i| 0.5 + 0.4 * ((i as f64) * 1.7).sin()).collect(),
        30,
    ));

    // both sides of the linear-segment threshold
    ops.push(op(
        "tone_map",
        FnStage {
            forward: |x: &[f64]| x.iter().map(|&v| tone_map(v).unwrap_or(f64::NAN)).collect(),
            backward: |x: &[f64], g: &[f64], gi: &mut [f64]| {
                for ((d, &v), &gv) in gi.iter_mut().zip(x).zip(g) {
                    *d += gv * tone_map_derivative(v);
                }
            },
        },
        vec![0.001, 0.002, 0.01, 0.05, 0.3, 1.0, 2.5, 7.0, 40.0],
        9,
    ));
    ops
}

fn loss_ops() -> Vec<Op> {
    let r: Vec<f64> = (0..12).map(|i| 0.2 + (i as f64 * 0.9).sin().abs()).collect();
    let x: Vec<f64> = r.iter().enumerate().map(|(i, v)| (v + 0.1 * (i as f64 - 5.5)).abs()).collect();
    [("l1_tonemapped", LossKind::L1Tonemapped), ("mse", LossKind::Mse)]
        .into_iter()
        .map(|(name, kind)| {
            let (r1, r2) = (r.clone(), r.clone());
            op(
                name,
                FnStage {
                    forward: move |x: &[f64]| vec![image_loss(kind, x, &r1).unwrap_or(f64::NAN)],
                    backward: move |x: &[f64], g: &[f64], gi: &mut [f64]| {
                        for (a, b) in gi.iter_mut().zip(image_loss_backward(kind, x, &r2).unwrap_or_else(|_| vec![f64::NAN; x.len()])) {
                            *a += g[0] * b;
                        }
                    },
                },
                x.clone(),
                12,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(matches!(run_suite("optics", 1e-4), Err(Error::Config(_))));
    }

    #[test]
    fn loss_suite_passes() {
        let r = run_suite("loss", DEFAULT_EPSILON).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(OpCheck::passes), "{r:?}");
    }
}
