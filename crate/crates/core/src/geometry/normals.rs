//! Area-weighted smooth vertex normals.

use crate::linalg::{acc3, cross, cross_backward, get3, norm, normalize_backward, set3, sub};
use crate::scalar::Real;

pub(crate) fn degenerate_threshold<T: Real>() -> T {
    T::epsilon() * T::epsilon()
}

/// Unnormalized per-vertex sums of face cross products (twice the area).
fn accumulate<T: Real>(positions: &[T], faces: &[[usize; 3]]) -> Vec<T> {
    let mut acc = vec![T::zero(); positions.len()];
    for f in faces {
        let a = get3(positions, f[0]);
        let fnrm = cross(sub(get3(positions, f[1]), a), sub(get3(positions, f[2]), a));
        for &v in f {
            acc3(&mut acc, v, fnrm);
        }
    }
    acc
}

/// Unit vertex normals (V×3 flat). Vertices whose incident faces are all
/// degenerate get `(0, 0, 1)`.
pub fn vertex_normals<T: Real>(positions: &[T], faces: &[[usize; 3]]) -> Vec<T> {
    let mut acc = accumulate(positions, faces);
    let eps = degenerate_threshold::<T>();
    for s in acc.chunks_exact_mut(3) {
        let v = [s[0], s[1], s[2]];
        let len = norm(v);
        if len > eps {
            s.iter_mut().for_each(|x| *x /= len);
        } else {
            s.copy_from_slice(&[T::zero(), T::zero(), T::one()]);
        }
    }
    acc
}

/// Accumulates `∂L/∂positions` given `∂L/∂normals`.
pub fn vertex_normals_backward<T: Real>(
    positions: &[T],
    faces: &[[usize; 3]],
    grad_normals: &[T],
    grad_positions: &mut [T],
) {
    let acc = accumulate(positions, faces);
    let eps = degenerate_threshold::<T>();
    let mut grad_acc = vec![T::zero(); acc.len()];
    for v in 0..acc.len() / 3 {
        let s = get3(&acc, v);
        if norm(s) > eps {
            set3(&mut grad_acc, v, normalize_backward(s, get3(grad_normals, v)));
        }
    }
    for f in faces {
        let a = get3(positions, f[0]);
        let e1 = sub(get3(positions, f[1]), a);
        let e2 = sub(get3(positions, f[2]), a);
        let mut g = [T::zero(); 3];
        for &v in f {
            crate::linalg::add_assign(&mut g, get3(&grad_acc, v));
        }
        let (g1, g2) = cross_backward(e1, e2, g);
        acc3(grad_positions, f[1], g1);
        acc3(grad_positions, f[2], g2);
        acc3(grad_positions, f[0], [-(g1[0] + g2[0]), -(g1[1] + g2[1]), -(g1[2] + g2[2])]);
    }
}
