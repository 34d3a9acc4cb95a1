//! Scalar displacement along smooth vertex normals: `v + tex2d(t) · n`.
//!
//! Normals are computed on the (tessellated) input positions; the lookup is
//! bilinear at level 0. Gradients reach positions through both terms and the
//! displacement texels, never the texture coordinates.

use super::normals::{vertex_normals, vertex_normals_backward};
use crate::linalg::get3;
use crate::raster::texture::{Texture, WrapMode};
use crate::scalar::Real;

/// Displacement values sampled at each vertex.
pub fn sample_displacement<T: Real>(vertex_uvs: &[T], map: &Texture<T>, wrap: WrapMode) -> Vec<T> {
    let mut out = [T::zero()];
    vertex_uvs
        .chunks_exact(2)
        .map(|uv| {
            map.sample([uv[0], uv[1]], wrap, &mut out);
            out[0]
        })
        .collect()
}

pub fn displace<T: Real>(
    positions: &[T],
    faces: &[[usize; 3]],
    vertex_uvs: &[T],
    map: &Texture<T>,
    wrap: WrapMode,
) -> Vec<T> {
    let normals = vertex_normals(positions, faces);
    let d = sample_displacement(vertex_uvs, map, wrap);
    let mut out = positions.to_vec();
    for (v, &dv) in d.iter().enumerate() {
        let n = get3(&normals, v);
        for k in 0..3 {
            out[3 * v + k] += dv * n[k];
        }
    }
    out
}

/// Accumulates gradients into `grad_positions` and `grad_texels` (level 0).
pub fn displace_backward<T: Real>(
    positions: &[T],
    faces: &[[usize; 3]],
    vertex_uvs: &[T],
    map: &Texture<T>,
    wrap: WrapMode,
    grad_out: &[T],
    grad_positions: &mut [T],
    grad_texels: &mut [T],
) {
    let normals = vertex_normals(positions, faces);
    let d = sample_displacement(vertex_uvs, map, wrap);
    let mut grad_normals = vec![T::zero(); positions.len()];
    for (v, &dv) in d.iter().enumerate() {
        let g = get3(grad_out, v);
        let n = get3(&normals, v);
        for k in 0..3 {
            grad_positions[3 * v + k] += g[k];
            grad_normals[3 * v + k] = dv * g[k];
        }
        let gd = g[0] * n[0] + g[1] * n[1] + g[2] * n[2];
        map.scatter_grad([vertex_uvs[2 * v], vertex_uvs[2 * v + 1]], wrap, &[gd], grad_texels);
    }
    vertex_normals_backward(positions, faces, &grad_normals, grad_positions);
}
