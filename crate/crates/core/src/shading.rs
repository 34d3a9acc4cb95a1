//! Deferred shading: normal mapping, a diffuse lobe plus an isotropic GGX
//! lobe parameterized by `(γ, r, m)`, layer compositing and tone mapping.
//!
//! `ks = (1 − m)·0.04 + m·kd` and the specular lobe is scaled by `1 − γ`.
//! The GGX distribution uses `α = r²`, visibility is height-correlated Smith
//! and Fresnel is Schlick's with `F0 = ks`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{add, add_assign, dot, normalize, normalize_backward, scale, sub, Vec3};
use crate::raster::texture::{Texture, TexturePyramid, WrapMode};
use crate::scalar::Real;

/// Lower bound on roughness enforced after each optimizer step.
pub const R_MIN: f64 = 0.04;

const COS_EPS: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct Material<T> {
    /// RGBA; alpha is coverage-style transparency.
    pub kd: TexturePyramid<T>,
    /// `(γ, r, m)`.
    pub orm: TexturePyramid<T>,
    /// Tangent space, stored in [0, 1].
    pub normal: TexturePyramid<T>,
    pub displacement: Option<Texture<T>>,
    pub ambient: Option<[T; 3]>,
    pub wrap: WrapMode,
}

impl<T: Real> Material<T> {
    /// Uniform material with a flat normal map.
    pub fn uniform(kd: [f64; 4], orm: [f64; 3], size: usize) -> Self {
        Self {
            kd: TexturePyramid::from_base(Texture::constant(size, size, &kd), false),
            orm: TexturePyramid::from_base(Texture::constant(size, size, &orm), false),
            normal: TexturePyramid::from_base(Texture::constant(size, size, &[0.5, 0.5, 1.0]), false),
            displacement: None,
            ambient: None,
            wrap: WrapMode::Clamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLight<T> {
    pub position: Vec3<T>,
    pub intensity: [T; 3],
}

impl<T: Real> PointLight<T> {
    pub fn new(position: Vec3<T>, intensity: [T; 3]) -> Result<Self> {
        if intensity.iter().any(|&i| !(i >= T::zero())) {
            return Err(Error::Config("light intensity must be non-negative".into()));
        }
        Ok(Self { position, intensity })
    }
}

#[inline]
fn decode<T: Real>(map: [T; 3]) -> [T; 3] {
    map.map(|m| T::lit(2.0) * m - T::one())
}

/// `normalize(T·mx + B·my + N·mz)` with `m = 2·map − 1`; falls back to the
/// geometric normal when the perturbed vector vanishes.
pub fn apply_normal_map<T: Real>(n: Vec3<T>, t: Vec3<T>, b: Vec3<T>, map: [T; 3]) -> Vec3<T> {
    let m = decode(map);
    let p = add(add(scale(t, m[0]), scale(b, m[1])), scale(n, m[2]));
    normalize(p, T::epsilon()).unwrap_or(n)
}

/// Gradients with respect to `(n, t, b, map)`.
pub fn apply_normal_map_backward<T: Real>(
    n: Vec3<T>,
    t: Vec3<T>,
    b: Vec3<T>,
    map: [T; 3],
    grad: Vec3<T>,
) -> (Vec3<T>, Vec3<T>, Vec3<T>, [T; 3]) {
    let m = decode(map);
    let p = add(add(scale(t, m[0]), scale(b, m[1])), scale(n, m[2]));
    if normalize(p, T::epsilon()).is_none() {
        return (grad, [T::zero(); 3], [T::zero(); 3], [T::zero(); 3]);
    }
    let gp = normalize_backward(p, grad);
    let two = T::lit(2.0);
    (scale(gp, m[2]), scale(gp, m[0]), scale(gp, m[1]), [two * dot(t, gp), two * dot(b, gp), two * dot(n, gp)])
}

/// GGX normal distribution with `α = r²`.
pub fn ggx_d<T: Real>(n_dot_h: T, r: T) -> T {
    let a2 = (r * r) * (r * r);
    let c = n_dot_h.max(T::zero());
    let den = c * c * (a2 - T::one()) + T::one();
    a2 / (T::PI() * den * den)
}

/// Height-correlated Smith visibility `G / (4·n·l·n·v)`.
pub fn smith_visibility<T: Real>(n_dot_l: T, n_dot_v: T, r: T) -> T {
    let a2 = (r * r) * (r * r);
    let eps = T::lit(COS_EPS);
    let (cl, cv) = (n_dot_l.max(eps), n_dot_v.max(eps));
    let sl = (cl * cl * (T::one() - a2) + a2).sqrt();
    let sv = (cv * cv * (T::one() - a2) + a2).sqrt();
    T::lit(0.5) / (cv * sl + cl * sv)
}

/// Shading inputs of one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surface<T> {
    pub position: Vec3<T>,
    /// Unit shading normal.
    pub normal: Vec3<T>,
    pub kd: [T; 3],
    /// `(γ, r, m)`.
    pub orm: [T; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceGrad<T> {
    pub position: Vec3<T>,
    pub normal: Vec3<T>,
    pub kd: [T; 3],
    pub orm: [T; 3],
}

impl<T: Real> Default for SurfaceGrad<T> {
    fn default() -> Self {
        let z = [T::zero(); 3];
        Self { position: z, normal: z, kd: z, orm: z }
    }
}

/// Outgoing radiance towards `eye`.
pub fn shade<T: Real>(s: &Surface<T>, light: &PointLight<T>, eye: Vec3<T>, ambient: Option<[T; 3]>) -> [T; 3] {
    let amb = ambient.unwrap_or([T::zero(); 3]);
    let mut out = [0, 1, 2].map(|c| amb[c] * s.kd[c]);
    let l = sub(light.position, s.position);
    let d2 = dot(l, l);
    let Some(wl) = normalize(l, T::zero()) else { return out };
    let ndl = dot(s.normal, wl);
    if !(ndl > T::zero()) {
        return out;
    }
    let Some(wv) = normalize(sub(eye, s.position), T::zero()) else { return out };
    let h = normalize(add(wl, wv), T::zero()).unwrap_or(s.normal);
    let [gamma, r, m] = s.orm;
    let d = ggx_d(dot(s.normal, h), r);
    let vis = smith_visibility(ndl, dot(s.normal, wv), r);
    let fw = (T::one() - dot(wv, h).max(T::zero())).powi(5);
    let f04 = T::lit(0.04);
    for c in 0..3 {
        let f0 = f04 * (T::one() - m) + m * s.kd[c];
        let f = f0 + (T::one() - f0) * fw;
        let lobe = (T::one() - m) * s.kd[c] * T::FRAC_1_PI() + (T::one() - gamma) * d * vis * f;
        out[c] += lobe * ndl * light.intensity[c] / d2;
    }
    out
}

/// Gradient of `Σ grad·shade(..)` with respect to the surface.
pub fn shade_backward<T: Real>(
    s: &Surface<T>,
    light: &PointLight<T>,
    eye: Vec3<T>,
    ambient: Option<[T; 3]>,
    grad: [T; 3],
) -> SurfaceGrad<T> {
    let mut g = SurfaceGrad::default();
    let amb = ambient.unwrap_or([T::zero(); 3]);
    for c in 0..3 {
        g.kd[c] = grad[c] * amb[c];
    }
    let zero = T::zero();
    let one = T::one();
    let l = sub(light.position, s.position);
    let d2 = dot(l, l);
    let Some(wl) = normalize(l, zero) else { return g };
    let n = s.normal;
    let ndl = dot(n, wl);
    if !(ndl > zero) {
        return g;
    }
    let vv = sub(eye, s.position);
    let Some(wv) = normalize(vv, zero) else { return g };
    let hh = add(wl, wv);
    let Some(h) = normalize(hh, zero) else { return g };
    let [gamma, r, m] = s.orm;
    let ndv = dot(n, wv);
    let ndh_raw = dot(n, h);
    let vdh_raw = dot(wv, h);
    let (ndh, vdh) = (ndh_raw.max(zero), vdh_raw.max(zero));

    let a2 = (r * r) * (r * r);
    let pi = T::PI();
    let den = ndh * ndh * (a2 - one) + one;
    let d = a2 / (pi * den * den);
    let eps = T::lit(COS_EPS);
    let (cl, cv) = (ndl.max(eps), ndv.max(eps));
    let sl = (cl * cl * (one - a2) + a2).sqrt();
    let sv = (cv * cv * (one - a2) + a2).sqrt();
    let q = cv * sl + cl * sv;
    let vis = T::lit(0.5) / q;
    let fw = (one - vdh).powi(5);
    let f04 = T::lit(0.04);
    let spec_scale = one - gamma;

    let (mut g_ndl, mut g_d2, mut g_d, mut g_vis, mut g_fw) = (zero, zero, zero, zero, zero);
    for c in 0..3 {
        let f0 = f04 * (one - m) + m * s.kd[c];
        let f = f0 + (one - f0) * fw;
        let lobe = (one - m) * s.kd[c] * T::FRAC_1_PI() + spec_scale * d * vis * f;
        let e = light.intensity[c] / d2;
        let g_lobe = grad[c] * ndl * e;
        g_ndl += grad[c] * lobe * e;
        g_d2 -= grad[c] * lobe * ndl * e / d2;
        g.kd[c] += g_lobe * (one - m) * T::FRAC_1_PI();
        g.orm[2] -= g_lobe * s.kd[c] * T::FRAC_1_PI();
        g.orm[0] -= g_lobe * d * vis * f;
        g_d += g_lobe * spec_scale * vis * f;
        g_vis += g_lobe * spec_scale * d * f;
        let g_f = g_lobe * spec_scale * d * vis;
        let g_f0 = g_f * (one - fw);
        g_fw += g_f * (one - f0);
        g.orm[2] += g_f0 * (s.kd[c] - f04);
        g.kd[c] += g_f0 * m;
    }

    // distribution
    let g_ndh = g_d * (-T::lit(4.0) * a2 * ndh * (a2 - one)) / (pi * den * den * den);
    let mut g_a2 = g_d * (one / (pi * den * den) - T::lit(2.0) * a2 * ndh * ndh / (pi * den * den * den));
    // visibility
    let g_q = -g_vis * vis / q;
    let g_cl = g_q * (cv * cl * (one - a2) / sl + sv);
    let g_cv = g_q * (sl + cl * cv * (one - a2) / sv);
    g_a2 += g_q * (cv * (one - cl * cl) / (T::lit(2.0) * sl) + cl * (one - cv * cv) / (T::lit(2.0) * sv));
    g.orm[1] = g_a2 * T::lit(4.0) * r * r * r;
    if ndl > eps {
        g_ndl += g_cl;
    }
    let g_ndv = if ndv > eps { g_cv } else { zero };
    // Fresnel
    let g_vdh = if vdh_raw > zero { -g_fw * T::lit(5.0) * (one - vdh).powi(4) } else { zero };
    let g_ndh = if ndh_raw > zero { g_ndh } else { zero };

    let mut g_h = add(scale(n, g_ndh), scale(wv, g_vdh));
    let mut g_wl = scale(n, g_ndl);
    let mut g_wv = add(scale(n, g_ndv), scale(h, g_vdh));
    g.normal = add(add(scale(wl, g_ndl), scale(wv, g_ndv)), scale(h, g_ndh));
    let g_hh = normalize_backward(hh, g_h);
    g_h = g_hh;
    add_assign(&mut g_wl, g_h);
    add_assign(&mut g_wv, g_h);
    let g_vv = normalize_backward(vv, g_wv);
    let g_l = add(normalize_backward(l, g_wl), scale(l, T::lit(2.0) * g_d2));
    g.position = scale(add(g_vv, g_l), -one);
    g
}

/// Per-pixel G-buffer for deferred shading.
#[derive(Debug, Clone)]
pub struct GBuffer<T> {
    pub width: usize,
    pub height: usize,
    pub covered: Vec<bool>,
    pub surface: Vec<Surface<T>>,
    pub alpha: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Shaded<T> {
    /// P×3 HDR radiance.
    pub radiance: Vec<T>,
    pub alpha: Vec<T>,
}

/// Shades every covered pixel; background pixels get zero radiance and alpha.
pub fn shade_deferred<T: Real>(
    gbuf: &GBuffer<T>,
    light: &PointLight<T>,
    eye: Vec3<T>,
    ambient: Option<[T; 3]>,
) -> Result<Shaded<T>> {
    let px: Vec<[T; 3]> = (0..gbuf.covered.len())
        .into_par_iter()
        .map(|i| if gbuf.covered[i] { shade(&gbuf.surface[i], light, eye, ambient) } else { [T::zero(); 3] })
        .collect();
    if let Some(i) = px.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteRadiance { x: i % gbuf.width, y: i / gbuf.width });
    }
    let alpha = gbuf.covered.iter().zip(&gbuf.alpha).map(|(&c, &a)| if c { a } else { T::zero() }).collect();
    Ok(Shaded { radiance: px.into_iter().flatten().collect(), alpha })
}

/// Per-pixel surface gradients; uncovered pixels get zeros.
pub fn shade_deferred_backward<T: Real>(
    gbuf: &GBuffer<T>,
    light: &PointLight<T>,
    eye: Vec3<T>,
    ambient: Option<[T; 3]>,
    grad_radiance: &[T],
) -> Vec<SurfaceGrad<T>> {
    (0..gbuf.covered.len())
        .into_par_iter()
        .map(|i| {
            if !gbuf.covered[i] {
                return SurfaceGrad::default();
            }
            let g = [grad_radiance[3 * i], grad_radiance[3 * i + 1], grad_radiance[3 * i + 2]];
            shade_backward(&gbuf.surface[i], light, eye, ambient, g)
        })
        .collect()
}

/// Back-to-front "over" compositing of front-to-back layers onto
/// `background` (P×3). Each layer is `(colour P×3, alpha P)`.
pub fn blend_layers<T: Real>(layers: &[(&[T], &[T])], background: &[T]) -> Vec<T> {
    let mut acc = background.to_vec();
    for (colour, alpha) in layers.iter().rev() {
        for (i, &a) in alpha.iter().enumerate() {
            for c in 0..3 {
                acc[3 * i + c] = a * colour[3 * i + c] + (T::one() - a) * acc[3 * i + c];
            }
        }
    }
    acc
}

/// Returns `(grad colours, grad alphas, grad background)`.
pub fn blend_layers_backward<T: Real>(
    layers: &[(&[T], &[T])],
    background: &[T],
    grad: &[T],
) -> (Vec<Vec<T>>, Vec<Vec<T>>, Vec<T>) {
    // partial composites behind each layer
    let mut behind = Vec::with_capacity(layers.len());
    let mut acc = background.to_vec();
    for (colour, alpha) in layers.iter().rev() {
        behind.push(acc.clone());
        for (i, &a) in alpha.iter().enumerate() {
            for c in 0..3 {
                acc[3 * i + c] = a * colour[3 * i + c] + (T::one() - a) * acc[3 * i + c];
            }
        }
    }
    behind.reverse();
    let mut g = grad.to_vec();
    let mut g_col = Vec::with_capacity(layers.len());
    let mut g_alpha = Vec::with_capacity(layers.len());
    for ((colour, alpha), back) in layers.iter().zip(&behind) {
        let mut gc = vec![T::zero(); colour.len()];
        let mut ga = vec![T::zero(); alpha.len()];
        for (i, &a) in alpha.iter().enumerate() {
            for c in 0..3 {
                let k = 3 * i + c;
                gc[k] = a * g[k];
                ga[i] += g[k] * (colour[k] - back[k]);
                g[k] = (T::one() - a) * g[k];
            }
        }
        g_col.push(gc);
        g_alpha.push(ga);
    }
    (g_col, g_alpha, g)
}

/// `coverage·shaded + (1 − coverage)·background` per pixel.
pub fn composite_coverage<T: Real>(shaded: &[T], coverage: &[T], background: &[T]) -> Vec<T> {
    shaded
        .iter()
        .zip(background)
        .enumerate()
        .map(|(k, (&s, &b))| {
            let c = coverage[k / 3];
            c * s + (T::one() - c) * b
        })
        .collect()
}

const SRGB_THRESHOLD: f64 = 0.0031308;

/// sRGB transfer function.
pub fn srgb<T: Real>(y: T) -> T {
    if y <= T::lit(SRGB_THRESHOLD) {
        T::lit(12.92) * y
    } else {
        T::lit(1.055) * y.powf(T::lit(1.0 / 2.4)) - T::lit(0.055)
    }
}

/// Derivative of [`srgb`]; the power branch is used at the threshold.
pub fn srgb_derivative<T: Real>(y: T) -> T {
    if y < T::lit(SRGB_THRESHOLD) {
        T::lit(12.92)
    } else {
        T::lit(1.055 / 2.4) * y.powf(T::lit(1.0 / 2.4 - 1.0))
    }
}

/// `srgb(log(x + 1))`.
pub fn tone_map<T: Real>(x: T) -> Result<T> {
    if x < T::zero() || x.is_nan() {
        return Err(Error::NegativeInput("tone_map"));
    }
    Ok(srgb(x.ln_1p()))
}

pub fn tone_map_derivative<T: Real>(x: T) -> T {
    srgb_derivative(x.ln_1p()) / (T::one() + x)
}

pub fn tone_map_image<T: Real>(x: &[T]) -> Result<Vec<T>> {
    x.iter().map(|&v| tone_map(v)).collect()
}
