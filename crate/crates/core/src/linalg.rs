//! Small fixed-size vector and matrix helpers on plain arrays.

use crate::scalar::Real;

pub type Vec2<T> = [T; 2];
pub type Vec3<T> = [T; 3];
pub type Vec4<T> = [T; 4];

/// Row-major 4×4 matrix.
pub type Mat4<T> = [[T; 4]; 4];

#[inline]
pub fn add<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<T: Real>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn add_assign<T: Real>(a: &mut Vec3<T>, b: Vec3<T>) {
    a[0] += b[0];
    a[1] += b[1];
    a[2] += b[2];
}

#[inline]
pub fn zero3<T: Real>() -> Vec3<T> {
    [T::zero(); 3]
}

/// Normalizes `v`; returns `None` when its length is not above `eps`.
#[inline]
pub fn normalize<T: Real>(v: Vec3<T>, eps: T) -> Option<Vec3<T>> {
    let len = norm(v);
    if len > eps {
        Some(scale(v, T::one() / len))
    } else {
        None
    }
}

/// Adjoint of `n = v / |v|`.
#[inline]
pub fn normalize_backward<T: Real>(v: Vec3<T>, grad_n: Vec3<T>) -> Vec3<T> {
    let len = norm(v);
    let inv = T::one() / len;
    let n = scale(v, inv);
    let proj = dot(n, grad_n);
    scale(sub(grad_n, scale(n, proj)), inv)
}

/// Adjoint of `c = a × b`; returns `(grad_a, grad_b)`.
#[inline]
pub fn cross_backward<T: Real>(a: Vec3<T>, b: Vec3<T>, grad_c: Vec3<T>) -> (Vec3<T>, Vec3<T>) {
    (cross(b, grad_c), cross(grad_c, a))
}

#[inline]
pub fn get3<T: Copy>(flat: &[T], i: usize) -> [T; 3] {
    [flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]]
}

#[inline]
pub fn set3<T: Copy>(flat: &mut [T], i: usize, v: [T; 3]) {
    flat[3 * i..3 * i + 3].copy_from_slice(&v);
}

#[inline]
pub fn acc3<T: Real>(flat: &mut [T], i: usize, v: [T; 3]) {
    flat[3 * i] += v[0];
    flat[3 * i + 1] += v[1];
    flat[3 * i + 2] += v[2];
}

pub fn mat4_identity<T: Real>() -> Mat4<T> {
    let mut m = [[T::zero(); 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

pub fn mat4_mul<T: Real>(a: &Mat4<T>, b: &Mat4<T>) -> Mat4<T> {
    let mut m = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let mut s = T::zero();
            for k in 0..4 {
                s += a[i][k] * b[k][j];
            }
            m[i][j] = s;
        }
    }
    m
}

/// `m · [p, 1]`.
#[inline]
pub fn mat4_transform_point<T: Real>(m: &Mat4<T>, p: Vec3<T>) -> Vec4<T> {
    let mut out = [T::zero(); 4];
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
    }
    out
}

/// Affine transform of a point, ignoring the bottom row.
#[inline]
pub fn mat4_affine_point<T: Real>(m: &Mat4<T>, p: Vec3<T>) -> Vec3<T> {
    let mut out = [T::zero(); 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
    }
    out
}

/// Transpose of the upper-left 3×3 block applied to `v`.
#[inline]
pub fn mat4_linear_transpose_apply<T: Real>(m: &Mat4<T>, v: Vec3<T>) -> Vec3<T> {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn is_affine<T: Real>(m: &Mat4<T>, tol: T) -> bool {
    let bottom = [T::zero(), T::zero(), T::zero(), T::one()];
    m[3].iter().zip(bottom).all(|(&a, b)| (a - b).abs() <= tol) && m.iter().flatten().all(|x| x.is_finite())
}

/// Inverse of an affine matrix with invertible linear part.
pub fn mat4_affine_inverse<T: Real>(m: &Mat4<T>) -> Option<Mat4<T>> {
    let a = [
        [m[0][0], m[0][1], m[0][2]],
        [m[1][0], m[1][1], m[1][2]],
        [m[2][0], m[2][1], m[2][2]],
    ];
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if det.abs() <= T::epsilon() {
        return None;
    }
    let inv_det = T::one() / det;
    let mut inv = [[T::zero(); 3]; 3];
    inv[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) * inv_det;
    inv[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv_det;
    inv[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv_det;
    inv[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) * inv_det;
    inv[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv_det;
    inv[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv_det;
    inv[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) * inv_det;
    inv[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv_det;
    inv[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv_det;
    let t = [m[0][3], m[1][3], m[2][3]];
    let mut out = mat4_identity();
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = inv[i][j];
        }
        out[i][3] = -(inv[i][0] * t[0] + inv[i][1] * t[1] + inv[i][2] * t[2]);
    }
    Some(out)
}

/// Right-handed look-at view matrix (camera looks down −z).
pub fn look_at<T: Real>(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Option<Mat4<T>> {
    let eps = T::lit(1e-12);
    let f = normalize(sub(target, eye), eps)?;
    let s = normalize(cross(f, up), eps)?;
    let u = cross(s, f);
    let z = T::zero();
    Some([
        [s[0], s[1], s[2], -dot(s, eye)],
        [u[0], u[1], u[2], -dot(u, eye)],
        [-f[0], -f[1], -f[2], dot(f, eye)],
        [z, z, z, T::one()],
    ])
}

/// OpenGL-style perspective projection; NDC depth in [−1, 1].
pub fn perspective<T: Real>(fov_y: T, aspect: T, near: T, far: T) -> Mat4<T> {
    let two = T::lit(2.0);
    let f = T::one() / (fov_y / two).tan();
    let z = T::zero();
    [
        [f / aspect, z, z, z],
        [z, f, z, z],
        [z, z, (far + near) / (near - far), two * far * near / (near - far)],
        [z, z, -T::one(), z],
    ]
}

pub fn mat4_from_row_major<T: Real>(v: &[f64]) -> Option<Mat4<T>> {
    if v.len() != 16 {
        return None;
    }
    let mut m = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = T::lit(v[4 * i + j]);
        }
    }
    Some(m)
}

pub fn mat4_to_row_major<T: Real>(m: &Mat4<T>) -> Vec<f64> {
    m.iter().flatten().map(|x| x.as_f64()).collect()
}
