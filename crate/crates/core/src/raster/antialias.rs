//! Analytic silhouette blending.
//!
//! For each pair of adjacent pixels with different triangle ids, the owner
//! (the covered one, or the nearer of two covered ones) is searched for a
//! silhouette edge crossing the segment between the two pixel centres. With
//! `t` the crossing position measured from the owner's centre, both pixels
//! become `t·C_owner + (1 − t)·C_other`. The blend is continuous as the edge
//! sweeps across either centre, and `t` is a smooth function of the edge
//! endpoints, so vertex positions receive gradients.
//!
//! Horizontal pairs are processed before vertical pairs, row-major, in place.

use std::collections::HashMap;

use super::camera::Projected;
use super::rasterize::{ndc_to_screen, RasterOutput};
use crate::scalar::Real;

/// Silhouette flags for the three edges of every face (`k` = edge `f[k]→f[k+1]`).
#[derive(Debug, Clone)]
pub struct EdgeMap {
    pub silhouette: Vec<[bool; 3]>,
}

impl EdgeMap {
    /// An edge is a silhouette when it is a boundary or non-manifold edge, or
    /// when its neighbour is culled or has the opposite screen orientation.
    pub fn new<T: Real>(projected: &Projected<T>, faces: &[[usize; 3]]) -> Self {
        let orient: Vec<i8> = faces
            .iter()
            .map(|f| {
                if !projected.triangle_valid(f) {
                    return 0;
                }
                let [a, b, c] = f.map(|v| projected.ndc[v]);
                let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                if area > T::zero() {
                    1
                } else if area < T::zero() {
                    -1
                } else {
                    0
                }
            })
            .collect();
        let mut adjacency: HashMap<(usize, usize), Vec<usize>> = HashMap::with_capacity(faces.len() * 2);
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                adjacency.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        let silhouette = faces
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                [0, 1, 2].map(|k| {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    let adj = &adjacency[&(a.min(b), a.max(b))];
                    if adj.len() != 2 {
                        return true;
                    }
                    let other = if adj[0] == fi { adj[1] } else { adj[0] };
                    orient[other] == 0 || orient[other] != orient[fi]
                })
            })
            .collect();
        Self { silhouette }
    }
}

/// One blend, recorded for the backward pass.
#[derive(Debug, Clone)]
pub struct BlendRecord<T> {
    pub owner: usize,
    pub other: usize,
    /// Vertex ids of the crossing edge.
    pub edge: [usize; 2],
    pub vertical: bool,
    pub t: T,
    /// Edge interpolation parameter at the crossing.
    pub k: T,
    /// Sign of the pixel step from owner to other (±1).
    pub step: T,
    /// Colours before the blend.
    pub c_owner: Vec<T>,
    pub c_other: Vec<T>,
}

#[derive(Debug, Clone, Default)]
pub struct AaTape<T> {
    pub records: Vec<BlendRecord<T>>,
}

impl<T> AaTape<T> {
    /// Discrete structure of the blends, for finite-difference checks.
    pub fn signature(&self) -> Vec<i64> {
        self.records
            .iter()
            .flat_map(|r| [r.owner as i64, r.other as i64, r.edge[0] as i64, r.edge[1] as i64])
            .collect()
    }
}

fn owner_of<T: Real>(raster: &RasterOutput<T>, a: usize, b: usize) -> Option<(usize, usize)> {
    let (ia, ib) = (raster.triangle_id[a], raster.triangle_id[b]);
    if ia == ib {
        return None;
    }
    match (ia >= 0, ib >= 0) {
        (false, false) => None,
        (true, false) => Some((a, b)),
        (false, true) => Some((b, a)),
        (true, true) => {
            let (da, db) = (raster.depth[a], raster.depth[b]);
            if da < db || (da == db && ia < ib) {
                Some((a, b))
            } else {
                Some((b, a))
            }
        }
    }
}

/// First silhouette edge of `tri` crossing the owner→other centre segment.
#[allow(clippy::too_many_arguments)]
fn crossing<T: Real>(
    screen: &[[T; 2]],
    faces: &[[usize; 3]],
    edges: &EdgeMap,
    tri: usize,
    owner_c: [T; 2],
    other_c: [T; 2],
    vertical: bool,
) -> Option<([usize; 2], T, T)> {
    // a = axis along the segment, b = the fixed axis
    let (a, b) = if vertical { (1, 0) } else { (0, 1) };
    let fixed = owner_c[b];
    let step = other_c[a] - owner_c[a];
    let f = faces[tri];
    for e in 0..3 {
        if !edges.silhouette[tri][e] {
            continue;
        }
        let (v0, v1) = (f[e], f[(e + 1) % 3]);
        let (p0, p1) = (screen[v0], screen[v1]);
        let d = p1[b] - p0[b];
        if d == T::zero() {
            continue;
        }
        let k = (fixed - p0[b]) / d;
        if !(k >= T::zero() && k <= T::one()) {
            continue;
        }
        let x = p0[a] + k * (p1[a] - p0[a]);
        let t = (x - owner_c[a]) / step;
        if t >= T::zero() && t <= T::one() {
            return Some(([v0, v1], t, k));
        }
    }
    None
}

/// Blends `image` (P×C) in place and returns the tape.
pub fn antialias<T: Real>(
    image: &mut [T],
    channels: usize,
    raster: &RasterOutput<T>,
    projected: &Projected<T>,
    faces: &[[usize; 3]],
) -> AaTape<T> {
    let (w, h) = (raster.width, raster.height);
    let edges = EdgeMap::new(projected, faces);
    let screen: Vec<[T; 2]> = projected.ndc.iter().map(|&p| ndc_to_screen(p, w, h)).collect();
    let centre = |p: usize| [T::from_usize_lossy(p % w) + T::lit(0.5), T::from_usize_lossy(p / w) + T::lit(0.5)];
    let mut tape = AaTape::default();
    let horizontal = (0..h).flat_map(|y| (0..w.saturating_sub(1)).map(move |x| (y * w + x, y * w + x + 1, false)));
    let vertical = (0..h.saturating_sub(1)).flat_map(|y| (0..w).map(move |x| (y * w + x, (y + 1) * w + x, true)));
    for (pa, pb, is_vertical) in horizontal.chain(vertical) {
        let Some((owner, other)) = owner_of(raster, pa, pb) else { continue };
        let tri = raster.triangle_id[owner] as usize;
        let (oc, xc) = (centre(owner), centre(other));
        let Some((edge, t, k)) = crossing(&screen, faces, &edges, tri, oc, xc, is_vertical) else { continue };
        let c_owner = image[owner * channels..(owner + 1) * channels].to_vec();
        let c_other = image[other * channels..(other + 1) * channels].to_vec();
        for c in 0..channels {
            let v = t * c_owner[c] + (T::one() - t) * c_other[c];
            image[owner * channels + c] = v;
            image[other * channels + c] = v;
        }
        let axis = usize::from(is_vertical);
        tape.records.push(BlendRecord {
            owner,
            other,
            edge,
            vertical: is_vertical,
            t,
            k,
            step: xc[axis] - oc[axis],
            c_owner,
            c_other,
        });
    }
    tape
}

/// Replays `tape` in reverse. `grad_image` holds `∂L/∂output` on entry and
/// `∂L/∂input` on return; `∂L/∂ndc` (flat V×3) is accumulated.
pub fn antialias_backward<T: Real>(
    tape: &AaTape<T>,
    channels: usize,
    raster: &RasterOutput<T>,
    projected: &Projected<T>,
    grad_image: &mut [T],
    grad_ndc: &mut [T],
) {
    let (w, h) = (raster.width, raster.height);
    let scale = [T::from_usize_lossy(w) * T::lit(0.5), -T::from_usize_lossy(h) * T::lit(0.5)];
    for r in tape.records.iter().rev() {
        let mut gt = T::zero();
        for c in 0..channels {
            let g = grad_image[r.owner * channels + c] + grad_image[r.other * channels + c];
            gt += g * (r.c_owner[c] - r.c_other[c]);
            grad_image[r.owner * channels + c] = r.t * g;
            grad_image[r.other * channels + c] = (T::one() - r.t) * g;
        }
        if gt == T::zero() {
            continue;
        }
        let (a, b) = if r.vertical { (1, 0) } else { (0, 1) };
        let p0 = ndc_to_screen(projected.ndc[r.edge[0]], w, h);
        let p1 = ndc_to_screen(projected.ndc[r.edge[1]], w, h);
        let gx = gt / r.step;
        let d = p1[b] - p0[b];
        let gk = gx * (p1[a] - p0[a]);
        let mut g0 = [T::zero(); 2];
        let mut g1 = [T::zero(); 2];
        g0[a] = gx * (T::one() - r.k);
        g1[a] = gx * r.k;
        g0[b] = gk * (r.k - T::one()) / d;
        g1[b] = -gk * r.k / d;
        for j in 0..2 {
            grad_ndc[3 * r.edge[0] + j] += g0[j] * scale[j];
            grad_ndc[3 * r.edge[1] + j] += g1[j] * scale[j];
        }
    }
}
