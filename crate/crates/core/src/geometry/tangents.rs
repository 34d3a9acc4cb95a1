//! Per-vertex tangent frames from positions and texture coordinates.
//!
//! Face tangents solve the 2×2 system relating edge vectors to uv deltas and
//! are summed at the vertices. The sum is Gram-Schmidt orthogonalized against
//! the vertex normal; the bitangent is `sign · (n × t)`, where `sign` is the
//! uv handedness of the accumulated frame.

use crate::linalg::{
    acc3, add, add_assign, cross, cross_backward, dot, get3, norm, normalize_backward, scale, set3, sub, zero3, Vec3,
};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame<T> {
    /// V×3 flat.
    pub tangents: Vec<T>,
    /// V×3 flat.
    pub bitangents: Vec<T>,
    /// Per-vertex handedness, ±1.
    pub signs: Vec<T>,
}

struct FaceSystem<T> {
    inv_det: T,
    duv1: [T; 2],
    duv2: [T; 2],
}

fn face_system<T: Real>(uvs: &[T], uf: &[usize; 3]) -> Option<FaceSystem<T>> {
    let uv = |i: usize| [uvs[2 * uf[i]], uvs[2 * uf[i] + 1]];
    let (u0, u1, u2) = (uv(0), uv(1), uv(2));
    let duv1 = [u1[0] - u0[0], u1[1] - u0[1]];
    let duv2 = [u2[0] - u0[0], u2[1] - u0[1]];
    let det = duv1[0] * duv2[1] - duv2[0] * duv1[1];
    if det.abs() <= T::epsilon() * T::lit(1e-3) {
        return None;
    }
    Some(FaceSystem { inv_det: T::one() / det, duv1, duv2 })
}

/// Returns summed face tangents and bitangents per vertex.
fn accumulate<T: Real>(
    positions: &[T],
    faces: &[[usize; 3]],
    uvs: &[T],
    uv_faces: &[[usize; 3]],
) -> (Vec<T>, Vec<T>) {
    let mut acc_t = vec![T::zero(); positions.len()];
    let mut acc_b = vec![T::zero(); positions.len()];
    for (f, uf) in faces.iter().zip(uv_faces) {
        let Some(sys) = face_system(uvs, uf) else { continue };
        let p0 = get3(positions, f[0]);
        let e1 = sub(get3(positions, f[1]), p0);
        let e2 = sub(get3(positions, f[2]), p0);
        let t = scale(sub(scale(e1, sys.duv2[1]), scale(e2, sys.duv1[1])), sys.inv_det);
        let b = scale(sub(scale(e2, sys.duv1[0]), scale(e1, sys.duv2[0])), sys.inv_det);
        for &v in f {
            acc3(&mut acc_t, v, t);
            acc3(&mut acc_b, v, b);
        }
    }
    (acc_t, acc_b)
}

/// Unit vector orthogonal to `n`, used when a vertex has no usable uv faces.
fn any_orthogonal<T: Real>(n: Vec3<T>) -> Vec3<T> {
    let axis = if n[0].abs() < T::lit(0.9) { [T::one(), T::zero(), T::zero()] } else { [T::zero(), T::one(), T::zero()] };
    let t = sub(axis, scale(n, dot(n, axis)));
    scale(t, T::one() / norm(t))
}

fn orthogonalized<T: Real>(n: Vec3<T>, a: Vec3<T>) -> Vec3<T> {
    sub(a, scale(n, dot(n, a)))
}

fn tangent_eps<T: Real>() -> T {
    T::epsilon().sqrt() * T::epsilon().sqrt() * T::lit(1e3)
}

pub fn tangent_frame<T: Real>(
    positions: &[T],
    faces: &[[usize; 3]],
    uvs: &[T],
    uv_faces: &[[usize; 3]],
    normals: &[T],
) -> TangentFrame<T> {
    let (acc_t, acc_b) = accumulate(positions, faces, uvs, uv_faces);
    let vcount = positions.len() / 3;
    let mut tangents = vec![T::zero(); positions.len()];
    let mut bitangents = vec![T::zero(); positions.len()];
    let mut signs = vec![T::one(); vcount];
    let eps = tangent_eps::<T>();
    for v in 0..vcount {
        let n = get3(normals, v);
        let tp = orthogonalized(n, get3(&acc_t, v));
        let len = norm(tp);
        let t = if len > eps { scale(tp, T::one() / len) } else { any_orthogonal(n) };
        let nt = cross(n, t);
        let sign = if dot(nt, get3(&acc_b, v)) < T::zero() { -T::one() } else { T::one() };
        signs[v] = sign;
        set3(&mut tangents, v, t);
        set3(&mut bitangents, v, scale(nt, sign));
    }
    TangentFrame { tangents, bitangents, signs }
}

/// Accumulates gradients into `grad_positions` and `grad_normals`.
#[allow(clippy::too_many_arguments)]
pub fn tangent_frame_backward<T: Real>(
    positions: &[T],
    faces: &[[usize; 3]],
    uvs: &[T],
    uv_faces: &[[usize; 3]],
    normals: &[T],
    grad_tangents: &[T],
    grad_bitangents: &[T],
    grad_positions: &mut [T],
    grad_normals: &mut [T],
) {
    let (acc_t, acc_b) = accumulate(positions, faces, uvs, uv_faces);
    let vcount = positions.len() / 3;
    let eps = tangent_eps::<T>();
    let mut grad_acc = vec![T::zero(); positions.len()];
    for v in 0..vcount {
        let n = get3(normals, v);
        let a = get3(&acc_t, v);
        let tp = orthogonalized(n, a);
        let len = norm(tp);
        if len <= eps {
            continue;
        }
        let t = scale(tp, T::one() / len);
        let sign = if dot(cross(n, t), get3(&acc_b, v)) < T::zero() { -T::one() } else { T::one() };
        let mut g_t = get3(grad_tangents, v);
        let (gn_b, gt_b) = cross_backward(n, t, scale(get3(grad_bitangents, v), sign));
        add_assign(&mut g_t, gt_b);
        let mut g_n = gn_b;
        let g_tp = normalize_backward(tp, g_t);
        // tp = a − (n·a) n
        let na = dot(n, a);
        let ng = dot(n, g_tp);
        set3(&mut grad_acc, v, sub(g_tp, scale(n, ng)));
        add_assign(&mut g_n, scale(add(scale(g_tp, na), scale(a, ng)), -T::one()));
        acc3(grad_normals, v, g_n);
    }
    for (f, uf) in faces.iter().zip(uv_faces) {
        let Some(sys) = face_system(uvs, uf) else { continue };
        let mut g = zero3();
        for &v in f {
            add_assign(&mut g, get3(&grad_acc, v));
        }
        let g1 = scale(g, sys.duv2[1] * sys.inv_det);
        let g2 = scale(g, -sys.duv1[1] * sys.inv_det);
        acc3(grad_positions, f[1], g1);
        acc3(grad_positions, f[2], g2);
        acc3(grad_positions, f[0], scale(add(g1, g2), -T::one()));
    }
}
