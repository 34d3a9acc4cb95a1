//! Textures, mip pyramids and differentiable bilinear/trilinear lookups.
//!
//! Texel `(x, y)` covers `u ∈ [x/W, (x+1)/W]` and `v ∈ [y/H, (y+1)/H]`, so row 0
//! sits at `v = 0` (the bottom of the image in the usual OBJ convention).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WrapMode {
    #[default]
    Clamp,
    Repeat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Texture<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, channels innermost.
    pub data: Vec<T>,
}

pub const MAX_CHANNELS: usize = 8;

impl<T: Real> Texture<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 || channels > MAX_CHANNELS {
            return Err(Error::ShapeMismatch(format!("texture extent {width}x{height}x{channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "texture {width}x{height}x{channels} given {} values",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn constant(width: usize, height: usize, value: &[f64]) -> Self {
        assert!(!value.is_empty() && value.len() <= MAX_CHANNELS, "texture channel count {}", value.len());
        let data = (0..width * height).flat_map(|_| value.iter().map(|&v| T::lit(v))).collect();
        Self { width, height, channels: value.len(), data }
    }

    pub fn texel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// 2×2 box filter with ceil halving; partial blocks average what exists.
    pub fn downsample(&self) -> Self {
        let (w, h, c) = (self.width.div_ceil(2), self.height.div_ceil(2), self.channels);
        let mut data = vec![T::zero(); w * h * c];
        for y in 0..h {
            for x in 0..w {
                let block = block(self.width, self.height, x, y);
                let inv = T::one() / T::from_usize_lossy(block.len());
                let dst = &mut data[(y * w + x) * c..(y * w + x + 1) * c];
                for &(sx, sy) in &block {
                    for (d, &s) in dst.iter_mut().zip(self.texel(sx, sy)) {
                        *d += s * inv;
                    }
                }
            }
        }
        Self { width: w, height: h, channels: c, data }
    }
}

fn block(width: usize, height: usize, x: usize, y: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(4);
    for sy in 2 * y..(2 * y + 2).min(height) {
        for sx in 2 * x..(2 * x + 2).min(width) {
            out.push((sx, sy));
        }
    }
    out
}

/// Transpose of [`Texture::downsample`]: spreads coarse gradients to fine texels.
pub fn downsample_backward<T: Real>(fine_w: usize, fine_h: usize, channels: usize, grad_coarse: &[T], grad_fine: &mut [T]) {
    let (w, h) = (fine_w.div_ceil(2), fine_h.div_ceil(2));
    for y in 0..h {
        for x in 0..w {
            let block = block(fine_w, fine_h, x, y);
            let inv = T::one() / T::from_usize_lossy(block.len());
            for &(sx, sy) in &block {
                for c in 0..channels {
                    grad_fine[(sy * fine_w + sx) * channels + c] += grad_coarse[(y * w + x) * channels + c] * inv;
                }
            }
        }
    }
}

/// Four texels and weights of a bilinear lookup.
#[derive(Debug, Clone, Copy)]
pub struct Footprint<T> {
    /// Texel indices (not channel offsets): 00, 10, 01, 11.
    pub texels: [usize; 4],
    pub weights: [T; 4],
    pub fx: T,
    pub fy: T,
}

fn wrap_index(i: i64, n: usize, wrap: WrapMode) -> usize {
    match wrap {
        WrapMode::Clamp => i.clamp(0, n as i64 - 1) as usize,
        WrapMode::Repeat => i.rem_euclid(n as i64) as usize,
    }
}

pub fn footprint<T: Real>(width: usize, height: usize, uv: [T; 2], wrap: WrapMode) -> Footprint<T> {
    let x = uv[0] * T::from_usize_lossy(width) - T::lit(0.5);
    let y = uv[1] * T::from_usize_lossy(height) - T::lit(0.5);
    let (x0f, y0f) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0f, y - y0f);
    let (x0, y0) = (x0f.to_i64().unwrap_or(0), y0f.to_i64().unwrap_or(0));
    let xs = [wrap_index(x0, width, wrap), wrap_index(x0 + 1, width, wrap)];
    let ys = [wrap_index(y0, height, wrap), wrap_index(y0 + 1, height, wrap)];
    let one = T::one();
    Footprint {
        texels: [ys[0] * width + xs[0], ys[0] * width + xs[1], ys[1] * width + xs[0], ys[1] * width + xs[1]],
        weights: [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy],
        fx,
        fy,
    }
}

impl<T: Real> Texture<T> {
    pub fn sample(&self, uv: [T; 2], wrap: WrapMode, out: &mut [T]) {
        let fp = footprint(self.width, self.height, uv, wrap);
        let c = self.channels;
        out[..c].iter_mut().for_each(|o| *o = T::zero());
        for (&t, &w) in fp.texels.iter().zip(&fp.weights) {
            for (o, &v) in out.iter_mut().zip(&self.data[t * c..(t + 1) * c]) {
                *o += w * v;
            }
        }
    }

    /// `∂L/∂uv` of a bilinear lookup given `∂L/∂value`.
    pub fn uv_gradient(&self, uv: [T; 2], wrap: WrapMode, grad_value: &[T]) -> [T; 2] {
        let fp = footprint(self.width, self.height, uv, wrap);
        let c = self.channels;
        let t = |k: usize, ch: usize| self.data[fp.texels[k] * c + ch];
        let one = T::one();
        let (mut gx, mut gy) = (T::zero(), T::zero());
        for (ch, &g) in grad_value.iter().enumerate().take(c) {
            let dx = (one - fp.fy) * (t(1, ch) - t(0, ch)) + fp.fy * (t(3, ch) - t(2, ch));
            let dy = (one - fp.fx) * (t(2, ch) - t(0, ch)) + fp.fx * (t(3, ch) - t(1, ch));
            gx += g * dx;
            gy += g * dy;
        }
        [gx * T::from_usize_lossy(self.width), gy * T::from_usize_lossy(self.height)]
    }

    /// Accumulates `∂L/∂texels` of a bilinear lookup.
    pub fn scatter_grad(&self, uv: [T; 2], wrap: WrapMode, grad_value: &[T], grad_texels: &mut [T]) {
        scatter_grad(self.width, self.height, self.channels, uv, wrap, grad_value, grad_texels);
    }
}

pub fn scatter_grad<T: Real>(
    width: usize,
    height: usize,
    channels: usize,
    uv: [T; 2],
    wrap: WrapMode,
    grad_value: &[T],
    grad_texels: &mut [T],
) {
    let fp = footprint(width, height, uv, wrap);
    for (&t, &w) in fp.texels.iter().zip(&fp.weights) {
        for (g, &gv) in grad_texels[t * channels..(t + 1) * channels].iter_mut().zip(grad_value) {
            *g += w * gv;
        }
    }
}

/// Mip chain. With `independent_levels` every level is its own latent
/// variable; otherwise levels above 0 are box filters of level 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TexturePyramid<T> {
    pub levels: Vec<Texture<T>>,
    pub independent_levels: bool,
}

/// Per-level texel gradients matching a pyramid's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidGrad<T> {
    pub levels: Vec<Vec<T>>,
}

/// Number of levels in a full ceil-halving chain down to 1×1.
pub fn full_level_count(width: usize, height: usize) -> usize {
    let mut n = 1;
    let (mut w, mut h) = (width, height);
    while w > 1 || h > 1 {
        w = w.div_ceil(2);
        h = h.div_ceil(2);
        n += 1;
    }
    n
}

/// Mixing weights of the (at most two) levels touched by a lookup at `lod`.
pub fn lod_levels<T: Real>(lod: Option<T>, level_count: usize) -> [(usize, T); 2] {
    let Some(lod) = lod else { return [(0, T::one()), (0, T::zero())] };
    let max = T::from_usize_lossy(level_count - 1);
    let lod = if lod.is_nan() { T::zero() } else { lod.max(T::zero()).min(max) };
    let l0 = lod.floor();
    let f = lod - l0;
    let l0 = l0.to_usize().unwrap_or(0);
    let l1 = (l0 + 1).min(level_count - 1);
    [(l0, T::one() - f), (l1, f)]
}

impl<T: Real> TexturePyramid<T> {
    /// Builds a full chain from `base` by box filtering.
    pub fn from_base(base: Texture<T>, independent_levels: bool) -> Self {
        let n = full_level_count(base.width, base.height);
        let mut levels = vec![base];
        for _ in 1..n {
            let next = levels.last().unwrap().downsample();
            levels.push(next);
        }
        Self { levels, independent_levels }
    }

    /// A single-level pyramid.
    pub fn single(base: Texture<T>) -> Self {
        Self { levels: vec![base], independent_levels: false }
    }

    pub fn base(&self) -> &Texture<T> {
        &self.levels[0]
    }

    pub fn channels(&self) -> usize {
        self.levels[0].channels
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Recomputes derived levels from level 0 (no-op for independent pyramids).
    pub fn rebuild(&mut self) {
        if self.independent_levels {
            return;
        }
        for l in 1..self.levels.len() {
            self.levels[l] = self.levels[l - 1].downsample();
        }
    }

    pub fn zero_grad(&self) -> PyramidGrad<T> {
        PyramidGrad { levels: self.levels.iter().map(|t| vec![T::zero(); t.data.len()]).collect() }
    }

    /// Bilinear lookup at level 0, or trilinear when `lod` is given.
    pub fn sample(&self, uv: [T; 2], lod: Option<T>, wrap: WrapMode, out: &mut [T]) {
        let c = self.channels();
        let mut tmp = [T::zero(); MAX_CHANNELS];
        out[..c].iter_mut().for_each(|o| *o = T::zero());
        for (l, w) in lod_levels(lod, self.level_count()) {
            if w == T::zero() {
                continue;
            }
            self.levels[l].sample(uv, wrap, &mut tmp[..c]);
            for (o, &v) in out.iter_mut().zip(&tmp[..c]) {
                *o += w * v;
            }
        }
    }

    pub fn uv_gradient(&self, uv: [T; 2], lod: Option<T>, wrap: WrapMode, grad_value: &[T]) -> [T; 2] {
        let mut g = [T::zero(); 2];
        for (l, w) in lod_levels(lod, self.level_count()) {
            if w == T::zero() {
                continue;
            }
            let gl = self.levels[l].uv_gradient(uv, wrap, grad_value);
            g[0] += w * gl[0];
            g[1] += w * gl[1];
        }
        g
    }

    pub fn scatter_grad(&self, uv: [T; 2], lod: Option<T>, wrap: WrapMode, grad_value: &[T], grads: &mut PyramidGrad<T>) {
        let c = self.channels();
        let mut scaled = [T::zero(); MAX_CHANNELS];
        for (l, w) in lod_levels(lod, self.level_count()) {
            if w == T::zero() {
                continue;
            }
            for (s, &g) in scaled.iter_mut().zip(grad_value).take(c) {
                *s = g * w;
            }
            let t = &self.levels[l];
            scatter_grad(t.width, t.height, c, uv, wrap, &scaled[..c], &mut grads.levels[l]);
        }
    }

    /// For derived pyramids, folds every level's gradient into level 0 through
    /// the box-filter transpose.
    pub fn reduce_grad(&self, grads: &mut PyramidGrad<T>) {
        if self.independent_levels {
            return;
        }
        for l in (1..self.levels.len()).rev() {
            let fine = &self.levels[l - 1];
            let coarse = std::mem::take(&mut grads.levels[l]);
            downsample_backward(fine.width, fine.height, fine.channels, &coarse, &mut grads.levels[l - 1]);
            grads.levels[l] = vec![T::zero(); coarse.len()];
        }
    }
}
