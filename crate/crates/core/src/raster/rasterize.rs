//! Coverage: pixel-centre rasterization, multisampled visibility and depth
//! peeling.
//!
//! Pixel `(x, y)` (row 0 at the top) has its centre at NDC
//! `((2x + 1)/W − 1, 1 − (2y + 1)/H)`. A sample exactly on an edge belongs to
//! the triangle for which that edge is "owned" (a top-left style rule), so
//! pixels on a shared edge are covered exactly once. The nearest interpolated
//! NDC depth wins; equal depths keep the lower triangle index.

use super::camera::Projected;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct RasterOutput<T> {
    pub width: usize,
    pub height: usize,
    /// Winning triangle per pixel, −1 for background.
    pub triangle_id: Vec<i32>,
    /// `(u, v)` weights of vertices 1 and 2; vertex 0 gets `1 − u − v`.
    pub barycentrics: Vec<[T; 2]>,
    /// Interpolated NDC depth, `+∞` for background.
    pub depth: Vec<T>,
    /// Fraction of samples hitting any triangle (multisampled only).
    pub coverage: Option<Vec<T>>,
}

impl<T: Real> RasterOutput<T> {
    fn background(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            triangle_id: vec![-1; n],
            barycentrics: vec![[T::zero(); 2]; n],
            depth: vec![T::infinity(); n],
            coverage: None,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn covered(&self, pixel: usize) -> Option<usize> {
        let id = self.triangle_id[pixel];
        (id >= 0).then_some(id as usize)
    }
}

/// NDC coordinates of a pixel centre.
#[inline]
pub fn pixel_center_ndc<T: Real>(x: usize, y: usize, width: usize, height: usize) -> [T; 2] {
    let two = T::lit(2.0);
    [
        (two * T::from_usize_lossy(x) + T::one()) / T::from_usize_lossy(width) - T::one(),
        T::one() - (two * T::from_usize_lossy(y) + T::one()) / T::from_usize_lossy(height),
    ]
}

/// NDC xy to continuous pixel coordinates (pixel centres at `k + 0.5`).
#[inline]
pub fn ndc_to_screen<T: Real>(p: [T; 3], width: usize, height: usize) -> [T; 2] {
    let half = T::lit(0.5);
    [(p[0] + T::one()) * half * T::from_usize_lossy(width), (T::one() - p[1]) * half * T::from_usize_lossy(height)]
}

/// Depth restriction applied per fragment (both bounds exclusive).
#[derive(Debug, Clone, Copy)]
pub enum DepthWindow<'a, T> {
    None,
    Range(T, T),
    /// Per-pixel exclusive lower bound; only strictly deeper fragments pass.
    Floor(&'a [T]),
}

#[inline]
fn cross2<T: Real>(a: [T; 2], b: [T; 2]) -> T {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn owned<T: Real>(d: [T; 2]) -> bool {
    d[1] > T::zero() || (d[1] == T::zero() && d[0] < T::zero())
}

/// Screen-space setup of one triangle.
struct Setup<T> {
    s: [[T; 2]; 3],
    z: [T; 3],
    area: T,
    owned: [bool; 3],
    /// Per edge: the lexicographically smaller endpoint, the direction to the
    /// other one, and whether that reverses the oriented edge. Shared edges
    /// are then evaluated identically by both triangles.
    edges: [([T; 2], [T; 2], bool); 3],
}

impl<T: Real> Setup<T> {
    fn new(proj: &Projected<T>, f: &[usize; 3], width: usize, height: usize) -> Option<Self> {
        if !proj.triangle_valid(f) {
            return None;
        }
        let s = [0, 1, 2].map(|k| ndc_to_screen(proj.ndc[f[k]], width, height));
        let z = [0, 1, 2].map(|k| proj.ndc[f[k]][2]);
        let area = cross2([s[1][0] - s[0][0], s[1][1] - s[0][1]], [s[2][0] - s[0][0], s[2][1] - s[0][1]]);
        if area == T::zero() || !area.is_finite() {
            return None;
        }
        let order = if area > T::zero() { [0, 1, 2] } else { [0, 2, 1] };
        let owned = [0, 1, 2].map(|k| {
            let (a, b) = (s[order[k]], s[order[(k + 1) % 3]]);
            owned([b[0] - a[0], b[1] - a[1]])
        });
        let edges = [0, 1, 2].map(|k| {
            let (a, b) = (s[order[k]], s[order[(k + 1) % 3]]);
            let flip = (b[0], b[1]) < (a[0], a[1]);
            let (lo, hi) = if flip { (b, a) } else { (a, b) };
            (lo, [hi[0] - lo[0], hi[1] - lo[1]], flip)
        });
        Some(Self { s, z, area, owned, edges })
    }

    #[inline]
    fn inside(&self, p: [T; 2]) -> bool {
        for k in 0..3 {
            let (a, d, flip) = self.edges[k];
            let e = cross2(d, [p[0] - a[0], p[1] - a[1]]);
            let e = if flip { -e } else { e };
            if e < T::zero() || (e == T::zero() && !self.owned[k]) {
                return false;
            }
        }
        true
    }

    /// Barycentrics (extrapolated outside the triangle).
    #[inline]
    fn barycentrics(&self, p: [T; 2]) -> [T; 2] {
        let [s0, s1, s2] = self.s;
        let q = [p[0] - s0[0], p[1] - s0[1]];
        let u = cross2(q, [s2[0] - s0[0], s2[1] - s0[1]]) / self.area;
        let v = cross2([s1[0] - s0[0], s1[1] - s0[1]], q) / self.area;
        [u, v]
    }

    #[inline]
    fn depth(&self, b: [T; 2]) -> T {
        (T::one() - b[0] - b[1]) * self.z[0] + b[0] * self.z[1] + b[1] * self.z[2]
    }

    fn pixel_bounds(&self, width: usize, height: usize, pad: f64) -> Option<(usize, usize, usize, usize)> {
        let pad = T::lit(pad);
        let (mut x0, mut x1, mut y0, mut y1) = (T::infinity(), T::neg_infinity(), T::infinity(), T::neg_infinity());
        for p in &self.s {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        let lo = |v: T| (v - T::lit(0.5) - pad).floor().max(T::zero());
        let hi = |v: T, n: usize| (v - T::lit(0.5) + pad).ceil().min(T::from_usize_lossy(n - 1));
        let (xa, xb, ya, yb) = (lo(x0), hi(x1, width), lo(y0), hi(y1, height));
        if xa > xb || ya > yb {
            return None;
        }
        Some((xa.to_usize()?, xb.to_usize()?, ya.to_usize()?, yb.to_usize()?))
    }
}

#[inline]
fn depth_passes<T: Real>(z: T, window: &DepthWindow<'_, T>, pixel: usize) -> bool {
    if !(z >= -T::one() && z <= T::one()) {
        return false;
    }
    match window {
        DepthWindow::None => true,
        DepthWindow::Range(lo, hi) => z > *lo && z < *hi,
        DepthWindow::Floor(f) => z > f[pixel],
    }
}

/// Visibility at arbitrary sub-pixel offsets. Returns per (pixel, sample)
/// triangle ids and depths, sample index innermost.
fn raster_samples<T: Real>(
    proj: &Projected<T>,
    faces: &[[usize; 3]],
    width: usize,
    height: usize,
    offsets: &[[f64; 2]],
    window: DepthWindow<'_, T>,
) -> (Vec<i32>, Vec<T>) {
    let ns = offsets.len();
    let mut ids = vec![-1i32; width * height * ns];
    let mut depth = vec![T::infinity(); width * height * ns];
    let offs: Vec<[T; 2]> = offsets.iter().map(|o| [T::lit(o[0] + 0.5), T::lit(o[1] + 0.5)]).collect();
    let pad = offsets.iter().flatten().fold(0.0f64, |m, o| m.max(o.abs()));
    for (fi, f) in faces.iter().enumerate() {
        let Some(setup) = Setup::new(proj, f, width, height) else { continue };
        let Some((x0, x1, y0, y1)) = setup.pixel_bounds(width, height, pad) else { continue };
        for y in y0..=y1 {
            let yf = T::from_usize_lossy(y);
            for x in x0..=x1 {
                let xf = T::from_usize_lossy(x);
                let pixel = y * width + x;
                for (s, o) in offs.iter().enumerate() {
                    let p = [xf + o[0], yf + o[1]];
                    if !setup.inside(p) {
                        continue;
                    }
                    let z = setup.depth(setup.barycentrics(p));
                    let slot = pixel * ns + s;
                    if depth_passes(z, &window, pixel) && z < depth[slot] {
                        depth[slot] = z;
                        ids[slot] = fi as i32;
                    }
                }
            }
        }
    }
    (ids, depth)
}

/// Single sample at each pixel centre.
pub fn rasterize<T: Real>(
    proj: &Projected<T>,
    faces: &[[usize; 3]],
    width: usize,
    height: usize,
    window: DepthWindow<'_, T>,
) -> RasterOutput<T> {
    let (ids, depth) = raster_samples(proj, faces, width, height, &[[0.0, 0.0]], window);
    let mut out = RasterOutput::background(width, height);
    for pixel in 0..width * height {
        let id = ids[pixel];
        if id < 0 {
            continue;
        }
        let setup = Setup::new(proj, &faces[id as usize], width, height).expect("rasterized triangle");
        let c = [T::from_usize_lossy(pixel % width) + T::lit(0.5), T::from_usize_lossy(pixel / width) + T::lit(0.5)];
        out.triangle_id[pixel] = id;
        out.barycentrics[pixel] = setup.barycentrics(c);
        out.depth[pixel] = depth[pixel];
    }
    out
}

/// Sub-pixel sample offsets (in pixels, relative to the centre).
pub fn sample_pattern(samples: usize) -> Option<Vec<[f64; 2]>> {
    let raw: &[[i32; 2]] = match samples {
        1 => &[[0, 0]],
        4 => &[[-2, -6], [6, -2], [-6, 2], [2, 6]],
        8 => &[[1, -3], [-1, 3], [5, 1], [-3, -5], [-5, 5], [-7, -1], [3, 7], [7, -7]],
        16 => &[
            [1, 1],
            [-1, -3],
            [-3, 2],
            [4, -1],
            [-5, -2],
            [2, 5],
            [5, 3],
            [3, -5],
            [-2, 6],
            [0, -7],
            [-4, -6],
            [-6, 4],
            [-8, 0],
            [7, -4],
            [6, 7],
            [-7, -8],
        ],
        _ => return None,
    };
    Some(raw.iter().map(|o| [o[0] as f64 / 16.0, o[1] as f64 / 16.0]).collect())
}

/// Visibility at `samples` sub-pixel positions, shading data at the centre.
///
/// The winner is the triangle covering the centre, else the plurality of the
/// samples (lower index on ties). Its barycentrics are evaluated at the pixel
/// centre, extrapolating when the centre itself is uncovered.
///
/// # Panics
/// If `samples` is not 1, 4, 8 or 16.
pub fn msaa_rasterize<T: Real>(
    proj: &Projected<T>,
    faces: &[[usize; 3]],
    width: usize,
    height: usize,
    samples: usize,
) -> RasterOutput<T> {
    let pattern = sample_pattern(samples).expect("samples per pixel must be 1, 4, 8 or 16");
    let mut out = rasterize(proj, faces, width, height, DepthWindow::None);
    let (ids, _) = raster_samples(proj, faces, width, height, &pattern, DepthWindow::None);
    let mut coverage = vec![T::zero(); width * height];
    let inv = T::one() / T::from_usize_lossy(samples);
    let mut counts: Vec<(i32, usize)> = Vec::with_capacity(samples);
    for pixel in 0..width * height {
        let sample_ids = &ids[pixel * samples..(pixel + 1) * samples];
        let winner = if out.triangle_id[pixel] >= 0 {
            out.triangle_id[pixel]
        } else {
            counts.clear();
            for &id in sample_ids.iter().filter(|&&id| id >= 0) {
                match counts.iter_mut().find(|(i, _)| *i == id) {
                    Some(c) => c.1 += 1,
                    None => counts.push((id, 1)),
                }
            }
            match counts.iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))) {
                Some(&(id, _)) => id,
                None => continue,
            }
        };
        // shading is per pixel, so every covered sample counts towards it
        let n = sample_ids.iter().filter(|&&id| id >= 0).count();
        coverage[pixel] = T::from_usize_lossy(n) * inv;
        if out.triangle_id[pixel] < 0 {
            let setup = Setup::new(proj, &faces[winner as usize], width, height).expect("rasterized triangle");
            let c = [T::from_usize_lossy(pixel % width) + T::lit(0.5), T::from_usize_lossy(pixel / width) + T::lit(0.5)];
            let b = setup.barycentrics(c);
            out.triangle_id[pixel] = winner;
            out.barycentrics[pixel] = b;
            out.depth[pixel] = setup.depth(b);
        }
    }
    out.coverage = Some(coverage);
    out
}

/// Front-to-back layers; layer `p` keeps the nearest fragment strictly behind
/// layer `p − 1`. Always returns `passes` layers.
pub fn depth_peel<T: Real>(
    proj: &Projected<T>,
    faces: &[[usize; 3]],
    width: usize,
    height: usize,
    passes: usize,
) -> Vec<RasterOutput<T>> {
    let mut layers: Vec<RasterOutput<T>> = Vec::with_capacity(passes);
    for p in 0..passes {
        let layer = match layers.last() {
            None => rasterize(proj, faces, width, height, DepthWindow::None),
            Some(prev) if prev.triangle_id.iter().all(|&id| id < 0) => RasterOutput::background(width, height),
            Some(prev) => rasterize(proj, faces, width, height, DepthWindow::Floor(&prev.depth)),
        };
        debug_assert!(p == layers.len());
        layers.push(layer);
    }
    layers
}
