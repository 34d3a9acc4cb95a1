//! Image losses, the regularized objective, schedules and report metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cross, get3, norm, sub};
use crate::scalar::Real;
use crate::shading::{tone_map, tone_map_derivative};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    L1Tonemapped,
    Mse,
}

fn same_shape<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch(format!("image sizes {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// Mean of `|tone_map(img) − tone_map(ref)|`.
pub fn l1_tonemapped<T: Real>(img: &[T], reference: &[T]) -> Result<T> {
    same_shape(img, reference)?;
    let mut sum = T::zero();
    for (&a, &b) in img.iter().zip(reference) {
        sum += (tone_map(a)? - tone_map(b)?).abs();
    }
    Ok(sum / T::from_usize_lossy(img.len()))
}

/// `∂ l1_tonemapped / ∂img`; zero where the two sides agree.
pub fn l1_tonemapped_backward<T: Real>(img: &[T], reference: &[T]) -> Result<Vec<T>> {
    same_shape(img, reference)?;
    let inv = T::one() / T::from_usize_lossy(img.len());
    img.iter()
        .zip(reference)
        .map(|(&a, &b)| {
            let d = tone_map(a)? - tone_map(b)?;
            let s = if d > T::zero() {
                T::one()
            } else if d < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            Ok(s * tone_map_derivative(a) * inv)
        })
        .collect()
}

pub fn mse<T: Real>(img: &[T], reference: &[T]) -> Result<T> {
    same_shape(img, reference)?;
    let sum: T = img.iter().zip(reference).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(sum / T::from_usize_lossy(img.len()))
}

pub fn mse_backward<T: Real>(img: &[T], reference: &[T]) -> Result<Vec<T>> {
    same_shape(img, reference)?;
    let s = T::lit(2.0) / T::from_usize_lossy(img.len());
    Ok(img.iter().zip(reference).map(|(&a, &b)| s * (a - b)).collect())
}

pub fn image_loss<T: Real>(kind: LossKind, img: &[T], reference: &[T]) -> Result<T> {
    match kind {
        LossKind::L1Tonemapped => l1_tonemapped(img, reference),
        LossKind::Mse => mse(img, reference),
    }
}

pub fn image_loss_backward<T: Real>(kind: LossKind, img: &[T], reference: &[T]) -> Result<Vec<T>> {
    match kind {
        LossKind::L1Tonemapped => l1_tonemapped_backward(img, reference),
        LossKind::Mse => mse_backward(img, reference),
    }
}

pub const K_LAMBDA: f64 = 1e-6;
pub const K_LR: f64 = 0.0002;

/// Regularization weight and learning-rate schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub lambda_0: f64,
    pub lambda_min: f64,
    pub lambda: f64,
    pub k_lambda: f64,
    pub lr_0: f64,
    pub k_lr: f64,
    pub t: u64,
}

impl ScheduleState {
    pub fn new(lambda_0: f64, lr_0: f64) -> Self {
        Self { lambda_0, lambda_min: 0.02 * lambda_0, lambda: lambda_0, k_lambda: K_LAMBDA, lr_0, k_lr: K_LR, t: 0 }
    }

    /// Advances to the next iteration and returns the new λ.
    pub fn step(&mut self) -> f64 {
        self.t += 1;
        self.lambda = step_lambda(self.lambda, self.lambda_min, self.k_lambda, self.t);
        self.lambda
    }

    pub fn lr(&self) -> f64 {
        lr_at(self.t, self.lr_0, self.k_lr)
    }
}

/// `λ_0 = 0.25·L_image/L_δ` (or the override) and `λ_min = 0.02·λ_0`.
pub fn init_lambda(image_loss: f64, laplacian_loss: f64, user_override: Option<f64>) -> Result<(f64, f64)> {
    let l0 = match user_override {
        Some(v) if v >= 0.0 && v.is_finite() => v,
        Some(v) => return Err(Error::Config(format!("lambda override {v} must be finite and non-negative"))),
        None if laplacian_loss > 0.0 => 0.25 * image_loss / laplacian_loss,
        None => return Err(Error::ZeroLaplacian),
    };
    Ok((l0, 0.02 * l0))
}

/// `λ_t = (λ_{t−1} − λ_min)·10^{−k·t} + λ_min`.
pub fn step_lambda(prev: f64, lambda_min: f64, k: f64, t: u64) -> f64 {
    (prev - lambda_min) * 10f64.powf(-k * t as f64) + lambda_min
}

/// `lr_0·10^{−k·t}`.
pub fn lr_at(t: u64, lr_0: f64, k: f64) -> f64 {
    lr_0 * 10f64.powf(-k * t as f64)
}

/// `L_image + λ·L_δ`.
pub fn objective(image_loss: f64, laplacian_loss: f64, lambda: f64) -> f64 {
    image_loss + lambda * laplacian_loss
}

/// `10·log10(peak²/MSE)`, `+∞` for identical images.
pub fn psnr<T: Real>(img: &[T], reference: &[T], peak: f64) -> Result<f64> {
    let m = mse(img, reference)?.as_f64();
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / m).log10() })
}

/// PSNR of tone-mapped images with unit peak.
pub fn psnr_tonemapped<T: Real>(img: &[T], reference: &[T]) -> Result<f64> {
    let a: Vec<T> = crate::shading::tone_map_image(img)?;
    let b: Vec<T> = crate::shading::tone_map_image(reference)?;
    psnr(&a, &b, 1.0)
}

/// Area-uniform surface samples.
pub fn sample_surface(positions: &[f64], faces: &[[usize; 3]], count: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    let mut cdf = Vec::with_capacity(faces.len());
    let mut total = 0.0;
    for f in faces {
        let a = get3(positions, f[0]);
        total += 0.5 * norm(cross(sub(get3(positions, f[1]), a), sub(get3(positions, f[2]), a)));
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::InvalidMesh("surface has zero area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let x = rng.gen::<f64>() * total;
            let fi = cdf.partition_point(|&c| c < x).min(faces.len() - 1);
            let (mut r1, mut r2) = (rng.gen::<f64>(), rng.gen::<f64>());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            let f = faces[fi];
            let (a, b, c) = (get3(positions, f[0]), get3(positions, f[1]), get3(positions, f[2]));
            [0, 1, 2].map(|k| a[k] + r1 * (b[k] - a[k]) + r2 * (c[k] - a[k]))
        })
        .collect())
}

/// Static 3-d tree over points for nearest-neighbour queries.
pub struct KdTree {
    points: Vec<[f64; 3]>,
}

impl KdTree {
    pub fn new(mut points: Vec<[f64; 3]>) -> Self {
        let n = points.len();
        build(&mut points, 0, n, 0);
        Self { points }
    }

    /// Distance to the nearest point.
    pub fn nearest(&self, q: [f64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(q, 0, self.points.len(), 0, &mut best);
        best.sqrt()
    }

    fn search(&self, q: [f64; 3], lo: usize, hi: usize, axis: usize, best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let p = self.points[mid];
        let d2 = (0..3).map(|k| (p[k] - q[k]) * (p[k] - q[k])).sum::<f64>();
        if d2 < *best {
            *best = d2;
        }
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        let next = (axis + 1) % 3;
        self.search(q, near.0, near.1, next, best);
        if diff * diff < *best {
            self.search(q, far.0, far.1, next, best);
        }
    }
}

fn build(points: &mut [[f64; 3]], lo: usize, hi: usize, axis: usize) {
    if hi - lo <= 1 {
        return;
    }
    let mid = (lo + hi) / 2;
    points[lo..hi].select_nth_unstable_by(mid - lo, |a, b| a[axis].total_cmp(&b[axis]));
    build(points, lo, mid, (axis + 1) % 3);
    build(points, mid + 1, hi, (axis + 1) % 3);
}

/// Mean of the two directional mean nearest-point distances between
/// `count` area-uniform samples of each surface.
pub fn chamfer_l1(
    a: (&[f64], &[[usize; 3]]),
    b: (&[f64], &[[usize; 3]]),
    count: usize,
    seed: u64,
) -> Result<f64> {
    if count == 0 {
        return Err(Error::Config("chamfer sample count must be positive".into()));
    }
    let pa = sample_surface(a.0, a.1, count, seed)?;
    let pb = sample_surface(b.0, b.1, count, seed)?;
    let directed = |from: &[[f64; 3]], to: Vec<[f64; 3]>| {
        let tree = KdTree::new(to);
        from.iter().map(|&q| tree.nearest(q)).sum::<f64>() / from.len() as f64
    };
    Ok(0.5 * (directed(&pa, pb.clone()) + directed(&pb, pa)))
}
