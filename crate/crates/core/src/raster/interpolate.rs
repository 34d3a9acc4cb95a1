//! Barycentric interpolation of vertex attributes over a raster output.

use super::camera::Projected;
use super::rasterize::{ndc_to_screen, RasterOutput};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Per-pixel `(1 − u − v)·a0 + u·a1 + v·a2` for a flat V×K attribute
/// buffer indexed through `faces`; background pixels are zero.
pub fn interpolate<T: Real>(attrs: &[T], channels: usize, faces: &[[usize; 3]], raster: &RasterOutput<T>) -> Result<Vec<T>> {
    check(attrs, channels, faces)?;
    let mut out = vec![T::zero(); raster.pixel_count() * channels];
    for (pixel, px) in out.chunks_exact_mut(channels).enumerate() {
        let Some(tri) = raster.covered(pixel) else { continue };
        let f = faces[tri];
        let [u, v] = raster.barycentrics[pixel];
        let w = T::one() - u - v;
        for (c, o) in px.iter_mut().enumerate() {
            *o = w * attrs[f[0] * channels + c] + u * attrs[f[1] * channels + c] + v * attrs[f[2] * channels + c];
        }
    }
    Ok(out)
}

fn check<T>(attrs: &[T], channels: usize, faces: &[[usize; 3]]) -> Result<()> {
    if channels == 0 || attrs.len() % channels != 0 {
        return Err(Error::ShapeMismatch(format!("attribute buffer of {} values with {channels} channels", attrs.len())));
    }
    let n = attrs.len() / channels;
    if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
        return Err(Error::ShapeMismatch(format!("face {f:?} indexes beyond {n} attribute vertices")));
    }
    Ok(())
}

/// Accumulates into `grad_attrs` and, when given, per-pixel `∂L/∂(u, v)`.
pub fn interpolate_backward<T: Real>(
    attrs: &[T],
    channels: usize,
    faces: &[[usize; 3]],
    raster: &RasterOutput<T>,
    grad_out: &[T],
    grad_attrs: &mut [T],
    mut grad_bary: Option<&mut [[T; 2]]>,
) {
    for (pixel, g) in grad_out.chunks_exact(channels).enumerate() {
        let Some(tri) = raster.covered(pixel) else { continue };
        let f = faces[tri];
        let [u, v] = raster.barycentrics[pixel];
        let w = T::one() - u - v;
        let (mut gu, mut gv) = (T::zero(), T::zero());
        for (c, &gc) in g.iter().enumerate() {
            let a = [0, 1, 2].map(|k| attrs[f[k] * channels + c]);
            grad_attrs[f[0] * channels + c] += w * gc;
            grad_attrs[f[1] * channels + c] += u * gc;
            grad_attrs[f[2] * channels + c] += v * gc;
            gu += gc * (a[1] - a[0]);
            gv += gc * (a[2] - a[0]);
        }
        if let Some(gb) = grad_bary.as_deref_mut() {
            gb[pixel][0] += gu;
            gb[pixel][1] += gv;
        }
    }
}

#[inline]
fn cross2<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    a[0] * b[1] - a[1] * b[0]
}

/// Accumulates `∂L/∂ndc` (flat V×3, xy only) from per-pixel barycentric
/// gradients. Barycentrics are functions of the pixel centre and the three
/// projected vertices.
pub fn barycentrics_backward<T: Real>(
    projected: &Projected<T>,
    faces: &[[usize; 3]],
    raster: &RasterOutput<T>,
    grad_bary: &[[T; 2]],
    grad_ndc: &mut [T],
) {
    let (w, h) = (raster.width, raster.height);
    let sx = T::from_usize_lossy(w) * T::lit(0.5);
    let sy = -T::from_usize_lossy(h) * T::lit(0.5);
    for (pixel, &[gu, gv]) in grad_bary.iter().enumerate() {
        let Some(tri) = raster.covered(pixel) else { continue };
        if gu == T::zero() && gv == T::zero() {
            continue;
        }
        let f = faces[tri];
        let s = [0, 1, 2].map(|k| ndc_to_screen(projected.ndc[f[k]], w, h));
        let c = [T::from_usize_lossy(pixel % w) + T::lit(0.5), T::from_usize_lossy(pixel / w) + T::lit(0.5)];
        let q = [c[0] - s[0][0], c[1] - s[0][1]];
        let e1 = [s[1][0] - s[0][0], s[1][1] - s[0][1]];
        let e2 = [s[2][0] - s[0][0], s[2][1] - s[0][1]];
        let area = cross2(e1, e2);
        if area == T::zero() {
            continue;
        }
        let [u, v] = raster.barycentrics[pixel];
        let ga = (gu * u + gv * v) / area;
        let (gu, gv) = (gu / area, gv / area);
        let gq = [gu * e2[1] - gv * e1[1], -gu * e2[0] + gv * e1[0]];
        let ge1 = [gv * q[1] - ga * e2[1], -gv * q[0] + ga * e2[0]];
        let ge2 = [-gu * q[1] + ga * e1[1], gu * q[0] - ga * e1[0]];
        let gs = [
            [-gq[0] - ge1[0] - ge2[0], -gq[1] - ge1[1] - ge2[1]],
            ge1,
            ge2,
        ];
        for k in 0..3 {
            grad_ndc[3 * f[k]] += gs[k][0] * sx;
            grad_ndc[3 * f[k] + 1] += gs[k][1] * sy;
        }
    }
}
