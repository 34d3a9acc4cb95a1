//! Dense linear blend skinning with softmax-parameterized weights.

use crate::error::{Error, Result};
use crate::linalg::{is_affine, mat4_affine_point, mat4_identity, mat4_linear_transpose_apply, Mat4};
use crate::scalar::Real;

/// Bone transforms for every animation frame; bone matrices are constants.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneSet<T> {
    pub bone_count: usize,
    /// `frames[f][b]` is the transform of bone `b` in frame `f`.
    pub frames: Vec<Vec<Mat4<T>>>,
}

impl<T: Real> BoneSet<T> {
    pub fn new(bone_count: usize, frames: Vec<Vec<Mat4<T>>>) -> Result<Self> {
        if bone_count == 0 {
            return Err(Error::NoBones);
        }
        for (f, frame) in frames.iter().enumerate() {
            if frame.len() != bone_count {
                return Err(Error::InvalidMesh(format!(
                    "frame {f} has {} bone matrices, expected {bone_count}",
                    frame.len()
                )));
            }
            if let Some(b) = frame.iter().position(|m| !is_affine(m, T::zero())) {
                return Err(Error::InvalidMesh(format!("bone {b} in frame {f} is not affine")));
            }
        }
        Ok(Self { bone_count, frames })
    }

    pub fn identity(bone_count: usize, frame_count: usize) -> Self {
        Self { bone_count, frames: vec![vec![mat4_identity(); bone_count]; frame_count] }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// Row-wise softmax of V×B logits.
pub fn softmax_weights<T: Real>(logits: &[T], bones: usize) -> Vec<T> {
    let mut w = logits.to_vec();
    for row in w.chunks_exact_mut(bones) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        row.iter_mut().for_each(|x| *x /= sum);
    }
    w
}

fn check<T: Real>(positions: &[T], logits: &[T], bones: &BoneSet<T>, frame: usize) -> Result<()> {
    if bones.bone_count == 0 {
        return Err(Error::NoBones);
    }
    if frame >= bones.frame_count() {
        return Err(Error::FrameOutOfRange { frame, count: bones.frame_count() });
    }
    if logits.len() != positions.len() / 3 * bones.bone_count {
        return Err(Error::ShapeMismatch("skin logits do not match vertex and bone counts".into()));
    }
    Ok(())
}

/// `v_i^s = Σ_b w_ib M_b v_i`.
pub fn skin<T: Real>(positions: &[T], logits: &[T], bones: &BoneSet<T>, frame: usize) -> Result<Vec<T>> {
    check(positions, logits, bones, frame)?;
    let nb = bones.bone_count;
    let weights = softmax_weights(logits, nb);
    let mats = &bones.frames[frame];
    let mut out = vec![T::zero(); positions.len()];
    for (v, (p, o)) in positions.chunks_exact(3).zip(out.chunks_exact_mut(3)).enumerate() {
        let p = [p[0], p[1], p[2]];
        for (b, m) in mats.iter().enumerate() {
            let w = weights[v * nb + b];
            let q = mat4_affine_point(m, p);
            for k in 0..3 {
                o[k] += w * q[k];
            }
        }
    }
    Ok(out)
}

/// Accumulates gradients w.r.t. rest positions and logits.
pub fn skin_backward<T: Real>(
    positions: &[T],
    logits: &[T],
    bones: &BoneSet<T>,
    frame: usize,
    grad_out: &[T],
    grad_positions: &mut [T],
    grad_logits: &mut [T],
) -> Result<()> {
    check(positions, logits, bones, frame)?;
    let nb = bones.bone_count;
    let weights = softmax_weights(logits, nb);
    let mats = &bones.frames[frame];
    let mut gw = vec![T::zero(); nb];
    for v in 0..positions.len() / 3 {
        let p = [positions[3 * v], positions[3 * v + 1], positions[3 * v + 2]];
        let g = [grad_out[3 * v], grad_out[3 * v + 1], grad_out[3 * v + 2]];
        let mut acc = [T::zero(); 3];
        for (b, m) in mats.iter().enumerate() {
            let w = weights[v * nb + b];
            let q = mat4_affine_point(m, p);
            gw[b] = g[0] * q[0] + g[1] * q[1] + g[2] * q[2];
            let gp = mat4_linear_transpose_apply(m, g);
            for k in 0..3 {
                acc[k] += w * gp[k];
            }
        }
        for k in 0..3 {
            grad_positions[3 * v + k] += acc[k];
        }
        let row = &weights[v * nb..(v + 1) * nb];
        let avg: T = row.iter().zip(&gw).map(|(&w, &g)| w * g).sum();
        for b in 0..nb {
            grad_logits[v * nb + b] += row[b] * (gw[b] - avg);
        }
    }
    Ok(())
}
