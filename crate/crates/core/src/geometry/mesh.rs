use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{cross, get3, norm, sub};
use crate::scalar::Real;

/// Per-vertex skinning logits (V×B, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SkinLogits<T> {
    pub bones: usize,
    pub values: Vec<T>,
}

/// Indexed triangle mesh. Positions and texture coordinates carry separate
/// index buffers, as in Wavefront OBJ.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T> {
    /// V×3 flat.
    pub positions: Vec<T>,
    pub faces: Vec<[usize; 3]>,
    /// T×2 flat, `v` increasing upward in texture space.
    pub uvs: Vec<T>,
    pub uv_faces: Vec<[usize; 3]>,
    pub skin: Option<SkinLogits<T>>,
    /// Uniform differentials of the initial guess (V×3 flat).
    pub initial_differentials: Option<Vec<T>>,
}

impl<T: Real> Mesh<T> {
    pub fn new(positions: Vec<T>, faces: Vec<[usize; 3]>) -> Self {
        Self { positions, faces, uvs: Vec::new(), uv_faces: Vec::new(), skin: None, initial_differentials: None }
    }

    pub fn with_uvs(mut self, uvs: Vec<T>, uv_faces: Vec<[usize; 3]>) -> Self {
        self.uvs = uvs;
        self.uv_faces = uv_faces;
        self
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len() / 3
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn uv_count(&self) -> usize {
        self.uvs.len() / 2
    }

    pub fn has_uvs(&self) -> bool {
        !self.uv_faces.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() % 3 != 0 || self.uvs.len() % 2 != 0 {
            return Err(Error::InvalidMesh("ragged attribute buffer".into()));
        }
        let v = self.vertex_count();
        if let Some(f) = self.faces.iter().position(|f| f.iter().any(|&i| i >= v)) {
            return Err(Error::InvalidMesh(format!("face {f} references a vertex out of range ({v} vertices)")));
        }
        if self.has_uvs() {
            if self.uv_faces.len() != self.faces.len() {
                return Err(Error::InvalidMesh("uv face count differs from face count".into()));
            }
            let t = self.uv_count();
            if let Some(f) = self.uv_faces.iter().position(|f| f.iter().any(|&i| i >= t)) {
                return Err(Error::InvalidMesh(format!("uv face {f} references a uv out of range ({t} uvs)")));
            }
        }
        if let Some(skin) = &self.skin {
            if skin.bones == 0 {
                return Err(Error::NoBones);
            }
            if skin.values.len() != v * skin.bones {
                return Err(Error::InvalidMesh("skin logits do not match vertex count".into()));
            }
        }
        if self.positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("vertex position".into()));
        }
        Ok(())
    }

    /// One uv per position vertex, taken from the first face corner that
    /// references it. Vertices on uv seams keep a single chart's coordinate.
    pub fn vertex_uvs(&self) -> Vec<T> {
        vertex_uvs(self.vertex_count(), &self.faces, &self.uvs, &self.uv_faces)
    }

    pub fn edges(&self) -> Vec<[usize; 2]> {
        unique_edges(&self.faces)
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> ([T; 3], [T; 3]) {
        bounds(&self.positions)
    }

    /// Total surface area.
    pub fn area(&self) -> T {
        self.faces
            .iter()
            .map(|f| {
                let a = get3(&self.positions, f[0]);
                norm(cross(sub(get3(&self.positions, f[1]), a), sub(get3(&self.positions, f[2]), a))) * T::lit(0.5)
            })
            .sum()
    }
}

pub fn bounds<T: Real>(positions: &[T]) -> ([T; 3], [T; 3]) {
    let mut lo = [T::infinity(); 3];
    let mut hi = [T::neg_infinity(); 3];
    for p in positions.chunks_exact(3) {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

pub fn vertex_uvs<T: Real>(vertex_count: usize, faces: &[[usize; 3]], uvs: &[T], uv_faces: &[[usize; 3]]) -> Vec<T> {
    let mut out = vec![T::zero(); 2 * vertex_count];
    let mut seen = vec![false; vertex_count];
    for (f, uf) in faces.iter().zip(uv_faces) {
        for k in 0..3 {
            let v = f[k];
            if !seen[v] {
                seen[v] = true;
                out[2 * v] = uvs[2 * uf[k]];
                out[2 * v + 1] = uvs[2 * uf[k] + 1];
            }
        }
    }
    out
}

/// Unique undirected edges in order of first appearance.
pub fn unique_edges(faces: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut seen = HashMap::new();
    let mut edges = Vec::new();
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            seen.entry(key).or_insert_with(|| {
                edges.push([key.0, key.1]);
                edges.len() - 1
            });
        }
    }
    edges
}

/// One-ring vertex neighborhoods over face edges, in CSR layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighbors {
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
}

impl Neighbors {
    pub fn from_faces(vertex_count: usize, faces: &[[usize; 3]]) -> Self {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); vertex_count];
        for [a, b] in unique_edges(faces) {
            if a == b {
                continue;
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut offsets = Vec::with_capacity(vertex_count + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for mut n in adj {
            n.sort_unstable();
            indices.extend(n);
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn of(&self, v: usize) -> &[usize] {
        &self.indices[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Procedural meshes used by tests, examples and the CLI.
pub mod primitives {
    use super::*;

    pub fn triangle<T: Real>() -> Mesh<T> {
        let p = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0].map(T::lit).to_vec();
        let uv = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0].map(T::lit).to_vec();
        Mesh::new(p, vec![[0, 1, 2]]).with_uvs(uv, vec![[0, 1, 2]])
    }

    /// Square `[-half, half]²` in the z=0 plane facing +z, u along +x and v along +y.
    pub fn quad<T: Real>(half: f64) -> Mesh<T> {
        let h = half;
        let p = [-h, -h, 0.0, h, -h, 0.0, h, h, 0.0, -h, h, 0.0].map(T::lit).to_vec();
        let uv = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0].map(T::lit).to_vec();
        let f = vec![[0, 1, 2], [0, 2, 3]];
        Mesh::new(p, f.clone()).with_uvs(uv, f)
    }

    /// Regular tetrahedron centred at the origin with vertices at distance `sqrt(3)·s`.
    pub fn tetrahedron<T: Real>(s: f64) -> Mesh<T> {
        let p = [s, s, s, s, -s, -s, -s, s, -s, -s, -s, s].map(T::lit).to_vec();
        Mesh::new(p, vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    }

    pub fn icosahedron<T: Real>() -> Mesh<T> {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let raw = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let len = (1.0 + t * t).sqrt();
        let p = raw.iter().flat_map(|v| v.map(|x| T::lit(x / len))).collect();
        let f = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        Mesh::new(p, f)
    }

    /// Latitude/longitude sphere with shared positions and seam-split uvs.
    /// `segments` around the equator and `rings` bands pole to pole;
    /// face count is `2·segments·(rings − 1)`.
    pub fn uv_sphere<T: Real>(segments: usize, rings: usize, radius: f64) -> Mesh<T> {
        assert!(segments >= 3 && rings >= 2);
        let mut p = Vec::new();
        // north pole, ring vertices, south pole
        p.extend([0.0, radius, 0.0]);
        for r in 1..rings {
            let theta = std::f64::consts::PI * r as f64 / rings as f64;
            for s in 0..segments {
                let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                p.extend([radius * theta.sin() * phi.cos(), radius * theta.cos(), -radius * theta.sin() * phi.sin()]);
            }
        }
        p.extend([0.0, -radius, 0.0]);
        let south = 1 + (rings - 1) * segments;
        let ring_vertex = |r: usize, s: usize| 1 + (r - 1) * segments + (s % segments);

        // uv grid: (segments + 1) columns per ring row, rows 0..=rings
        let mut uv = Vec::new();
        for r in 0..=rings {
            for s in 0..=segments {
                uv.extend([s as f64 / segments as f64, 1.0 - r as f64 / rings as f64]);
            }
        }
        let uv_index = |r: usize, s: usize| r * (segments + 1) + s;

        let mut faces = Vec::new();
        let mut uv_faces = Vec::new();
        for s in 0..segments {
            // cap at the north pole; the pole uv uses the column midpoint row
            faces.push([0, ring_vertex(1, s), ring_vertex(1, s + 1)]);
            uv_faces.push([uv_index(0, s), uv_index(1, s), uv_index(1, s + 1)]);
        }
        for r in 1..rings - 1 {
            for s in 0..segments {
                let (a, b) = (ring_vertex(r, s), ring_vertex(r, s + 1));
                let (c, d) = (ring_vertex(r + 1, s), ring_vertex(r + 1, s + 1));
                let (ua, ub) = (uv_index(r, s), uv_index(r, s + 1));
                let (uc, ud) = (uv_index(r + 1, s), uv_index(r + 1, s + 1));
                faces.push([a, c, d]);
                uv_faces.push([ua, uc, ud]);
                faces.push([a, d, b]);
                uv_faces.push([ua, ud, ub]);
            }
        }
        for s in 0..segments {
            faces.push([ring_vertex(rings - 1, s), south, ring_vertex(rings - 1, s + 1)]);
            uv_faces.push([uv_index(rings - 1, s), uv_index(rings, s), uv_index(rings - 1, s + 1)]);
        }
        let p = p.into_iter().map(T::lit).collect();
        let uv = uv.into_iter().map(T::lit).collect();
        Mesh::new(p, faces).with_uvs(uv, uv_faces)
    }

    /// Axis-aligned box centred at the origin, 8 shared corners, per-face uvs.
    pub fn cube<T: Real>(half: f64) -> Mesh<T> {
        let h = half;
        let mut p = Vec::new();
        for i in 0..8 {
            p.extend([
                if i & 1 != 0 { h } else { -h },
                if i & 2 != 0 { h } else { -h },
                if i & 4 != 0 { h } else { -h },
            ]);
        }
        // outward-facing quads, counter-clockwise seen from outside
        let quads = [
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
        ];
        let uv = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0].map(T::lit).to_vec();
        let mut faces = Vec::new();
        let mut uv_faces = Vec::new();
        for q in quads {
            faces.push([q[0], q[1], q[2]]);
            faces.push([q[0], q[2], q[3]]);
            uv_faces.push([0, 1, 2]);
            uv_faces.push([0, 2, 3]);
        }
        Mesh::new(p.into_iter().map(T::lit).collect(), faces).with_uvs(uv, uv_faces)
    }
}
