//! Pinhole cameras and the homogeneous projection feeding rasterization.

use crate::error::{Error, Result};
use crate::linalg::{get3, look_at, mat4_affine_inverse, mat4_mul, mat4_transform_point, perspective, Mat4, Vec3};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T> {
    /// World to camera.
    pub view: Mat4<T>,
    /// Camera to clip; NDC depth in [−1, 1].
    pub proj: Mat4<T>,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Camera<T> {
    pub fn new(view: Mat4<T>, proj: Mat4<T>, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("camera resolution {width}x{height}")));
        }
        let cam = Self { view, proj, width, height };
        if mat4_affine_inverse(&cam.view).is_none() {
            return Err(Error::Config("view matrix is not invertible".into()));
        }
        if let Some((near, far)) = cam.clip_range() {
            if !(near > T::zero() && far > near) {
                return Err(Error::Config(format!("invalid clip range near={near} far={far}")));
            }
        }
        Ok(cam)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3<T>,
        target: Vec3<T>,
        up: Vec3<T>,
        fov_y: T,
        near: T,
        far: T,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(near > T::zero() && far > near) {
            return Err(Error::Config(format!("invalid clip range near={near} far={far}")));
        }
        let view = look_at(eye, target, up).ok_or_else(|| Error::Config("degenerate look-at frame".into()))?;
        let aspect = T::from_usize_lossy(width) / T::from_usize_lossy(height.max(1));
        Self::new(view, perspective(fov_y, aspect, near, far), width, height)
    }

    /// Near and far distances decoded from a perspective projection.
    pub fn clip_range(&self) -> Option<(T, T)> {
        let p = &self.proj;
        if p[3][2] == T::zero() {
            return None;
        }
        let (a, b) = (p[2][2], p[2][3]);
        Some((b / (a - T::one()), b / (a + T::one())))
    }

    pub fn view_proj(&self) -> Mat4<T> {
        mat4_mul(&self.proj, &self.view)
    }

    /// Camera centre in world space.
    pub fn position(&self) -> Vec3<T> {
        let inv = mat4_affine_inverse(&self.view).expect("validated view matrix");
        [inv[0][3], inv[1][3], inv[2][3]]
    }

    pub fn with_resolution(&self, width: usize, height: usize) -> Self {
        Self { width, height, ..self.clone() }
    }
}

/// Clip and NDC coordinates of every vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected<T> {
    pub clip: Vec<[T; 4]>,
    pub ndc: Vec<[T; 3]>,
    /// False for vertices in front of the near plane (or behind the eye);
    /// triangles touching them are culled.
    pub valid: Vec<bool>,
}

impl<T: Real> Projected<T> {
    pub fn triangle_valid(&self, f: &[usize; 3]) -> bool {
        f.iter().all(|&v| self.valid[v])
    }
}

pub fn project<T: Real>(positions: &[T], camera: &Camera<T>) -> Projected<T> {
    let m = camera.view_proj();
    let n = positions.len() / 3;
    let mut clip = Vec::with_capacity(n);
    let mut ndc = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let tol = T::lit(1e-9);
    for v in 0..n {
        let c = mat4_transform_point(&m, get3(positions, v));
        let w = c[3];
        let ok = w > T::epsilon();
        let inv = if ok { T::one() / w } else { T::zero() };
        let d = [c[0] * inv, c[1] * inv, c[2] * inv];
        clip.push(c);
        ndc.push(d);
        valid.push(ok && d[2] >= -T::one() - tol && d.iter().all(|x| x.is_finite()));
    }
    Projected { clip, ndc, valid }
}

/// Accumulates `∂L/∂positions` from `∂L/∂ndc` (flat V×3).
pub fn project_backward<T: Real>(camera: &Camera<T>, projected: &Projected<T>, grad_ndc: &[T], grad_positions: &mut [T]) {
    let m = camera.view_proj();
    for (v, (c, d)) in projected.clip.iter().zip(&projected.ndc).enumerate() {
        if !projected.valid[v] {
            continue;
        }
        let g = [grad_ndc[3 * v], grad_ndc[3 * v + 1], grad_ndc[3 * v + 2]];
        if g.iter().all(|x| *x == T::zero()) {
            continue;
        }
        let inv = T::one() / c[3];
        let gc = [g[0] * inv, g[1] * inv, g[2] * inv, -(g[0] * d[0] + g[1] * d[1] + g[2] * d[2]) * inv];
        for k in 0..3 {
            grad_positions[3 * v + k] += gc[0] * m[0][k] + gc[1] * m[1][k] + gc[2] * m[2][k] + gc[3] * m[3][k];
        }
    }
}
