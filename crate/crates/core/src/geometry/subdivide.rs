//! Edge-midpoint subdivision with topology computed once up front.
//!
//! Every triangle is split into four; each undirected edge gets one shared
//! midpoint vertex. The new positions are a fixed linear map of the base
//! positions, so they can be recomputed (and differentiated) every iteration.

use std::collections::HashMap;

use super::mesh::{Mesh, SkinLogits};
use crate::scalar::Real;

/// Precomputed topology of one subdivision step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subdivision {
    pub base_vertices: usize,
    /// Endpoints of the edge behind midpoint vertex `base_vertices + k`.
    pub edges: Vec<[usize; 2]>,
    pub faces: Vec<[usize; 3]>,
    pub base_uvs: usize,
    pub uv_edges: Vec<[usize; 2]>,
    pub uv_faces: Vec<[usize; 3]>,
}

fn split(faces: &[[usize; 3]], base: usize) -> (Vec<[usize; 2]>, Vec<[usize; 3]>) {
    let mut key_to_vertex: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges = Vec::new();
    let mut out = Vec::with_capacity(faces.len() * 4);
    let mut midpoint = |a: usize, b: usize, edges: &mut Vec<[usize; 2]>| -> usize {
        let key = (a.min(b), a.max(b));
        *key_to_vertex.entry(key).or_insert_with(|| {
            edges.push([key.0, key.1]);
            base + edges.len() - 1
        })
    };
    for &[a, b, c] in faces {
        let ab = midpoint(a, b, &mut edges);
        let bc = midpoint(b, c, &mut edges);
        let ca = midpoint(c, a, &mut edges);
        out.push([a, ab, ca]);
        out.push([ab, b, bc]);
        out.push([ca, bc, c]);
        out.push([ab, bc, ca]);
    }
    (edges, out)
}

fn midpoints<T: Real>(base: &[T], dim: usize, edges: &[[usize; 2]]) -> Vec<T> {
    let half = T::lit(0.5);
    let mut out = base.to_vec();
    out.reserve(edges.len() * dim);
    for &[a, b] in edges {
        for k in 0..dim {
            out.push((base[dim * a + k] + base[dim * b + k]) * half);
        }
    }
    out
}

impl Subdivision {
    pub fn new(faces: &[[usize; 3]], uv_faces: &[[usize; 3]], vertex_count: usize, uv_count: usize) -> Self {
        let (edges, new_faces) = split(faces, vertex_count);
        let (uv_edges, new_uv_faces) = split(uv_faces, uv_count);
        Self { base_vertices: vertex_count, edges, faces: new_faces, base_uvs: uv_count, uv_edges, uv_faces: new_uv_faces }
    }

    pub fn for_mesh<T: Real>(mesh: &Mesh<T>) -> Self {
        Self::new(&mesh.faces, &mesh.uv_faces, mesh.vertex_count(), mesh.uv_count())
    }

    pub fn vertex_count(&self) -> usize {
        self.base_vertices + self.edges.len()
    }

    /// Maps a per-vertex attribute with `dim` channels to the refined mesh.
    pub fn apply<T: Real>(&self, base: &[T], dim: usize) -> Vec<T> {
        midpoints(base, dim, &self.edges)
    }

    pub fn apply_uvs<T: Real>(&self, uvs: &[T]) -> Vec<T> {
        midpoints(uvs, 2, &self.uv_edges)
    }

    /// Adjoint of [`Subdivision::apply`]; accumulates into `grad_base`.
    pub fn backward<T: Real>(&self, grad_fine: &[T], dim: usize, grad_base: &mut [T]) {
        let n = self.base_vertices * dim;
        for (g, &f) in grad_base[..n].iter_mut().zip(&grad_fine[..n]) {
            *g += f;
        }
        let half = T::lit(0.5);
        for (k, &[a, b]) in self.edges.iter().enumerate() {
            for c in 0..dim {
                let g = grad_fine[n + k * dim + c] * half;
                grad_base[dim * a + c] += g;
                grad_base[dim * b + c] += g;
            }
        }
    }
}

/// One step of midpoint subdivision; skin logits are averaged like positions.
pub fn subdivide<T: Real>(mesh: &Mesh<T>) -> Mesh<T> {
    let s = Subdivision::for_mesh(mesh);
    Mesh {
        positions: s.apply(&mesh.positions, 3),
        faces: s.faces.clone(),
        uvs: s.apply_uvs(&mesh.uvs),
        uv_faces: s.uv_faces.clone(),
        skin: mesh.skin.as_ref().map(|sk| SkinLogits { bones: sk.bones, values: s.apply(&sk.values, sk.bones) }),
        initial_differentials: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjoint::{fd_check, FnStage};
    use crate::geometry::primitives;

    fn euler<T: Real>(m: &Mesh<T>) -> i64 {
        m.vertex_count() as i64 - m.edges().len() as i64 + m.face_count() as i64
    }

    #[test]
    fn triangle_becomes_four() {
        let m = subdivide(&primitives::triangle::<f64>());
        assert_eq!((m.vertex_count(), m.face_count()), (6, 4));
        m.validate().unwrap();
    }

    #[test]
    fn icosahedron_counts() {
        let m = primitives::icosahedron::<f64>();
        assert_eq!(m.edges().len(), 30);
        let s = subdivide(&m);
        assert_eq!((s.vertex_count(), s.face_count()), (42, 80));
        assert_eq!(subdivide(&s).face_count(), 20 * 16);
    }

    #[test]
    fn euler_characteristic_preserved() {
        for m in [primitives::uv_sphere::<f64>(10, 7, 1.0), primitives::cube(1.0), primitives::tetrahedron(1.0)] {
            let s = subdivide(&m);
            assert_eq!(euler(&s), euler(&m));
            s.validate().unwrap();
        }
    }

    #[test]
    fn shared_edges_share_midpoints() {
        let q = subdivide(&primitives::quad::<f64>(1.0));
        // 4 corners + 5 edges
        assert_eq!(q.vertex_count(), 9);
    }

    #[test]
    fn adjoint_matches_fd() {
        let m = primitives::cube::<f64>(0.5);
        let s = Subdivision::for_mesh(&m);
        let s2 = s.clone();
        let stage = FnStage {
            forward: move |x: &[f64]| s.apply(x, 3),
            backward: move |_: &[f64], g: &[f64], gi: &mut [f64]| s2.backward(g, 3, gi),
        };
        let r = fd_check(&stage, &m.positions, 1e-4, 100).unwrap();
        assert!(r.max_rel_error < 1e-9);
    }
}
