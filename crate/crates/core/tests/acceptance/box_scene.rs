//! Stand-alone renderer for an axis-aligned box lit by a point light. It
//! shares no code with the library: it builds its own camera matrices, casts
//! rays, shades with a Lambertian BRDF and writes PFM images plus a manifest
//! in the documented JSON layout.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit(a: V3) -> V3 {
    let l = dot(a, a).sqrt();
    [a[0] / l, a[1] / l, a[2] / l]
}

pub struct BoxView {
    pub eye: V3,
    pub right: V3,
    pub up: V3,
    pub forward: V3,
    pub fov_y: f64,
    pub light: V3,
    pub intensity: f64,
}

impl BoxView {
    fn new(eye: V3, fov_y: f64, light: V3, intensity: f64, up_hint: V3) -> Self {
        let forward = unit(sub([0.0; 3], eye));
        let right = unit(cross(forward, up_hint));
        let up = cross(right, forward);
        Self { eye, right, up, forward, fov_y, light, intensity }
    }

    /// OpenGL-style row-major world-to-camera matrix.
    fn view_matrix(&self) -> Vec<f64> {
        let (r, u, f, e) = (self.right, self.up, self.forward, self.eye);
        vec![
            r[0], r[1], r[2], -dot(r, e),
            u[0], u[1], u[2], -dot(u, e),
            -f[0], -f[1], -f[2], dot(f, e),
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    fn proj_matrix(&self, aspect: f64, near: f64, far: f64) -> Vec<f64> {
        let t = 1.0 / (self.fov_y / 2.0).tan();
        vec![
            t / aspect, 0.0, 0.0, 0.0,
            0.0, t, 0.0, 0.0,
            0.0, 0.0, (far + near) / (near - far), 2.0 * far * near / (near - far),
            0.0, 0.0, -1.0, 0.0,
        ]
    }
}

/// Slab test against `[-h, h]^3`; returns distance and outward normal.
fn hit_box(o: V3, d: V3, h: f64) -> Option<(f64, V3)> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut axis = 0;
    let mut sign = 0.0;
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k].abs() > h {
                return None;
            }
            continue;
        }
        let (a, b) = ((-h - o[k]) / d[k], (h - o[k]) / d[k]);
        let (near, far) = if a < b { (a, b) } else { (b, a) };
        if near > t0 {
            t0 = near;
            axis = k;
            sign = if d[k] > 0.0 { -1.0 } else { 1.0 };
        }
        t1 = t1.min(far);
    }
    if t0 > t1 || t0 <= 0.0 {
        return None;
    }
    let mut n = [0.0; 3];
    n[axis] = sign;
    Some((t0, n))
}

fn radiance(v: &BoxView, o: V3, d: V3, half: f64, albedo: f64) -> f64 {
    let Some((t, n)) = hit_box(o, d, half) else { return 0.0 };
    let p = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
    let l = sub(v.light, p);
    let d2 = dot(l, l);
    let cos = dot(n, unit(l)).max(0.0);
    albedo / PI * v.intensity * cos / d2
}

/// Box-filtered render with `k × k` rays per pixel; rows from the top.
pub fn render(v: &BoxView, size: usize, k: usize, half: f64, albedo: f64) -> Vec<f64> {
    let t = (v.fov_y / 2.0).tan();
    let mut out = vec![0.0; size * size * 3];
    for py in 0..size {
        for px in 0..size {
            let mut sum = 0.0;
            for sy in 0..k {
                for sx in 0..k {
                    let x = 2.0 * (px as f64 + (sx as f64 + 0.5) / k as f64) / size as f64 - 1.0;
                    let y = 1.0 - 2.0 * (py as f64 + (sy as f64 + 0.5) / k as f64) / size as f64;
                    let d = unit([0, 1, 2].map(|c| v.forward[c] + x * t * v.right[c] + y * t * v.up[c]));
                    sum += radiance(v, v.eye, d, half, albedo);
                }
            }
            let c = sum / (k * k) as f64;
            out[3 * (py * size + px)..3 * (py * size + px) + 3].fill(c);
        }
    }
    out
}

fn write_pfm(path: &Path, size: usize, rgb: &[f64]) {
    let mut f = std::fs::File::create(path).unwrap();
    write!(f, "PF\n{size} {size}\n-1.0\n").unwrap();
    for row in (0..size).rev() {
        for v in &rgb[3 * row * size..3 * (row + 1) * size] {
            f.write_all(&(*v as f32).to_le_bytes()).unwrap();
        }
    }
}

/// Writes `count` views of a box of half extent `half` and a manifest; returns its path.
pub fn write_dataset(dir: &Path, count: usize, size: usize, half: f64, albedo: f64) -> std::path::PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb0c5);
    let mut records = Vec::new();
    for i in 0..count {
        let dir_on_sphere = |rng: &mut ChaCha8Rng| loop {
            let p: V3 = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let l = dot(p, p);
            if l > 1e-6 && l <= 1.0 {
                return unit(p);
            }
        };
        let cam = dir_on_sphere(&mut rng);
        let dist = rng.gen_range(2.6..3.4);
        let up_hint = if cam[1].abs() > 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let ld = dir_on_sphere(&mut rng);
        let lr = rng.gen_range(2.0..4.0);
        let light = [ld[0] * lr, ld[1] * lr, ld[2] * lr];
        let view = BoxView::new([cam[0] * dist, cam[1] * dist, cam[2] * dist], 0.8, light, 3.0 * lr * lr, up_hint);
        let name = format!("box_{i:03}.pfm");
        write_pfm(&dir.join(&name), size, &render(&view, size, 4, half, albedo));
        records.push(serde_json::json!({
            "view_matrix": view.view_matrix(),
            "proj_matrix": view.proj_matrix(1.0, 0.1, 20.0),
            "light_pos": view.light,
            "light_intensity": vec![view.intensity; 3],
            "image": name,
        }));
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&serde_json::json!({ "records": records })).unwrap()).unwrap();
    path
}

/// Triangulated box surface for Chamfer comparisons.
pub fn box_mesh(half: f64) -> (Vec<f64>, Vec<[usize; 3]>) {
    let mut p = Vec::new();
    for i in 0..8 {
        p.extend([(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64].map(|c| (2.0 * c - 1.0) * half));
    }
    let quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
    let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    (p, faces)
}
