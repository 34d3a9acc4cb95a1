//! Uniform Laplacian differentials and the shape regularizer built on them.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use super::mesh::Neighbors;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaplacianMode {
    /// Penalize deviation from the initial guess's differentials.
    Relative,
    /// Penalize the differentials themselves.
    Absolute,
}

static ISOLATED_WARNED: AtomicBool = AtomicBool::new(false);

/// `δ_i = v_i − mean(v_j, j ∈ N_i)`; isolated vertices get `δ_i = 0`.
pub fn uniform_laplacian<T: Real>(positions: &[T], neighbors: &Neighbors) -> Vec<T> {
    let mut delta = vec![T::zero(); positions.len()];
    for v in 0..neighbors.vertex_count() {
        let ring = neighbors.of(v);
        if ring.is_empty() {
            if !ISOLATED_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!("isolated vertex {v}: its differential is set to zero");
            }
            continue;
        }
        let inv = T::one() / T::from_usize_lossy(ring.len());
        for k in 0..3 {
            let mean: T = ring.iter().map(|&j| positions[3 * j + k]).sum::<T>() * inv;
            delta[3 * v + k] = positions[3 * v + k] - mean;
        }
    }
    delta
}

/// Adjoint of [`uniform_laplacian`] (it is linear, so positions are not needed).
pub fn uniform_laplacian_backward<T: Real>(neighbors: &Neighbors, grad_delta: &[T], grad_positions: &mut [T]) {
    for v in 0..neighbors.vertex_count() {
        let ring = neighbors.of(v);
        if ring.is_empty() {
            continue;
        }
        let inv = T::one() / T::from_usize_lossy(ring.len());
        for k in 0..3 {
            let g = grad_delta[3 * v + k];
            grad_positions[3 * v + k] += g;
            for &j in ring {
                grad_positions[3 * j + k] -= g * inv;
            }
        }
    }
}

fn target<'a, T: Real>(mode: LaplacianMode, initial: Option<&'a [T]>) -> Result<Option<&'a [T]>> {
    match mode {
        LaplacianMode::Absolute => Ok(None),
        LaplacianMode::Relative => initial.map(Some).ok_or(Error::MissingInitialDifferentials),
    }
}

/// `L_δ = (1/n) Σ ‖δ_i − δ'_i‖²`.
pub fn laplacian_loss<T: Real>(
    positions: &[T],
    neighbors: &Neighbors,
    mode: LaplacianMode,
    initial: Option<&[T]>,
) -> Result<T> {
    let reference = target(mode, initial)?;
    let delta = uniform_laplacian(positions, neighbors);
    let n = T::from_usize_lossy((positions.len() / 3).max(1));
    let sum: T = match reference {
        None => delta.iter().map(|&d| d * d).sum(),
        Some(r) => delta.iter().zip(r).map(|(&d, &r)| (d - r) * (d - r)).sum(),
    };
    Ok(sum / n)
}

/// Accumulates `scale · ∂L_δ/∂positions`.
pub fn laplacian_loss_backward<T: Real>(
    positions: &[T],
    neighbors: &Neighbors,
    mode: LaplacianMode,
    initial: Option<&[T]>,
    scale: T,
    grad_positions: &mut [T],
) -> Result<()> {
    let reference = target(mode, initial)?;
    let mut delta = uniform_laplacian(positions, neighbors);
    if let Some(r) = reference {
        delta.iter_mut().zip(r).for_each(|(d, &r)| *d -= r);
    }
    let n = T::from_usize_lossy((positions.len() / 3).max(1));
    let k = T::lit(2.0) * scale / n;
    let grad_delta: Vec<T> = delta.iter().map(|&d| d * k).collect();
    uniform_laplacian_backward(neighbors, &grad_delta, grad_positions);
    Ok(())
}
