//! Parameter registry and the forward/backward contract shared by the
//! differentiable stages, plus the central-difference gradient checker.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Handle to a tensor inside a [`Registry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Projection applied after every optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    None,
    /// Every value clamped to `[lo, hi]`.
    Range(f64, f64),
    /// Innermost axis is the channel axis; one range per channel.
    PerChannel(Vec<(f64, f64)>),
}

#[derive(Debug, Clone)]
pub enum Init<T> {
    Constant(f64),
    Values(Vec<T>),
}

#[derive(Debug, Clone)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub grad: Vec<T>,
    pub learnable: bool,
    pub constraint: Constraint,
}

impl<T: Real> ParamTensor<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Applies the tensor's constraint in place.
    pub fn project(&mut self) {
        match &self.constraint {
            Constraint::None => {}
            Constraint::Range(lo, hi) => {
                let (lo, hi) = (T::lit(*lo), T::lit(*hi));
                self.values.iter_mut().for_each(|v| *v = v.max(lo).min(hi));
            }
            Constraint::PerChannel(ranges) => {
                let c = ranges.len();
                for (i, v) in self.values.iter_mut().enumerate() {
                    let (lo, hi) = ranges[i % c];
                    *v = v.max(T::lit(lo)).min(T::lit(hi));
                }
            }
        }
    }
}

/// Ordered set of named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct Registry<T> {
    params: Vec<ParamTensor<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Real> Registry<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn register(&mut self, name: &str, shape: &[usize], init: Init<T>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(Error::ZeroExtent { name: name.to_string(), shape: shape.to_vec() });
        }
        let n: usize = shape.iter().product();
        let values = match init {
            Init::Constant(c) => vec![T::lit(c); n],
            Init::Values(v) => {
                if v.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "`{name}`: {} initial values for shape {shape:?}",
                        v.len()
                    )));
                }
                v
            }
        };
        let id = ParamId(self.params.len());
        self.params.push(ParamTensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            values,
            grad: vec![T::zero(); n],
            learnable: true,
            constraint: Constraint::None,
        });
        self.by_name.insert(name.to_string(), id.0);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor<T> {
        &mut self.params[id.0]
    }

    pub fn values(&self, id: ParamId) -> &[T] {
        &self.params[id.0].values
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.params[id.0].grad
    }

    pub fn by_name(&self, name: &str) -> Result<&ParamTensor<T>> {
        self.id(name).map(|id| self.get(id)).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Iterates in registration order.
    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(ParamTensor::zero_grad);
    }

    pub fn set_learnable(&mut self, id: ParamId, learnable: bool) {
        self.params[id.0].learnable = learnable;
    }

    pub fn set_constraint(&mut self, id: ParamId, constraint: Constraint) {
        self.params[id.0].constraint = constraint;
    }

    /// Adds `other`'s gradients scaled by `s` into this registry's gradients.
    pub fn accumulate_grads_from(&mut self, other: &Registry<T>, s: T) {
        for (dst, src) in self.params.iter_mut().zip(other.params.iter()) {
            for (d, &g) in dst.grad.iter_mut().zip(src.grad.iter()) {
                *d += g * s;
            }
        }
    }
}

/// A differentiable stage over flat input and output buffers.
///
/// `backward` must accumulate into `grad_inputs`, and must see the state of
/// the forward pass at the same `inputs` (implementations recompute it).
pub trait Stage<T: Real> {
    fn forward(&self, inputs: &[T]) -> Result<Vec<T>>;

    fn backward(&self, inputs: &[T], grad_output: &[T], grad_inputs: &mut [T]) -> Result<()>;

    /// Discrete visibility state at `inputs` (e.g. per-pixel triangle ids).
    /// Coordinates whose perturbations change it are reported separately.
    fn signature(&self, _inputs: &[T]) -> Option<Vec<i64>> {
        None
    }
}

/// Outcome of a finite-difference check.
#[derive(Debug, Clone, Default)]
pub struct FdReport {
    /// Max relative error over the smooth coordinates.
    pub max_rel_error: f64,
    /// Coordinate attaining `max_rel_error`.
    pub worst_coord: Option<usize>,
    /// Relative error of each checked smooth coordinate, in sampling order.
    pub errors: Vec<(usize, f64)>,
    /// Coordinates where a perturbation flipped pixel ownership.
    pub discontinuous: Vec<usize>,
}

impl FdReport {
    /// Fraction of smooth coordinates with relative error at most `tol`.
    pub fn fraction_within(&self, tol: f64) -> f64 {
        if self.errors.is_empty() {
            return 1.0;
        }
        let ok = self.errors.iter().filter(|(_, e)| *e <= tol).count();
        ok as f64 / self.errors.len() as f64
    }

    pub fn passes(&self, tol: f64, fraction: f64) -> bool {
        self.fraction_within(tol) >= fraction
    }
}

const FD_SEED: u64 = 0x5eed_fd00;

/// Compares a stage's analytic adjoint against central differences.
///
/// The output is reduced to a scalar with fixed pseudo-random weights; up to
/// `sample_count` input coordinates are checked.
pub fn fd_check<T: Real, S: Stage<T> + ?Sized>(
    stage: &S,
    inputs: &[T],
    epsilon: f64,
    sample_count: usize,
) -> Result<FdReport> {
    if !(epsilon > 0.0) {
        return Err(Error::Config("fd_check epsilon must be positive".into()));
    }
    let out = stage.forward(inputs)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("stage forward output".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(FD_SEED);
    let weights: Vec<T> = (0..out.len()).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
    let mut analytic = vec![T::zero(); inputs.len()];
    stage.backward(inputs, &weights, &mut analytic)?;

    let coords: Vec<usize> = if sample_count >= inputs.len() {
        (0..inputs.len()).collect()
    } else {
        let mut c = sample(&mut rng, inputs.len(), sample_count).into_vec();
        c.sort_unstable();
        c
    };
    let base_sig = stage.signature(inputs);
    let eps = T::lit(epsilon);
    let scalarize = |o: &[T]| -> f64 { o.iter().zip(&weights).map(|(&a, &w)| (a * w).as_f64()).sum() };

    let mut report = FdReport::default();
    let mut x = inputs.to_vec();
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = stage.forward(&x)?;
        let sig_plus = stage.signature(&x);
        x[i] = orig - eps;
        let minus = stage.forward(&x)?;
        let sig_minus = stage.signature(&x);
        x[i] = orig;
        if base_sig.is_some() && (sig_plus != base_sig || sig_minus != base_sig) {
            report.discontinuous.push(i);
            continue;
        }
        let fd = (scalarize(&plus) - scalarize(&minus)) / (2.0 * epsilon);
        let a = analytic[i].as_f64();
        let rel = (a - fd).abs() / fd.abs().max(1e-6);
        if !rel.is_finite() {
            return Err(Error::NonFinite(format!("gradient at coordinate {i}")));
        }
        if rel > report.max_rel_error || report.worst_coord.is_none() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst_coord = Some(i);
        }
        report.errors.push((i, rel));
    }
    Ok(report)
}

/// Stage built from a pair of closures; handy for tests and small suites.
pub struct FnStage<F, B> {
    pub forward: F,
    pub backward: B,
}

impl<T, F, B> Stage<T> for FnStage<F, B>
where
    T: Real,
    F: Fn(&[T]) -> Vec<T>,
    B: Fn(&[T], &[T], &mut [T]),
{
    fn forward(&self, inputs: &[T]) -> Result<Vec<T>> {
        Ok((self.forward)(inputs))
    }

    fn backward(&self, inputs: &[T], grad_output: &[T], grad_inputs: &mut [T]) -> Result<()> {
        (self.backward)(inputs, grad_output, grad_inputs);
        Ok(())
    }
}

/// [`FnStage`] with a visibility signature.
pub struct SigStage<F, B, S> {
    pub forward: F,
    pub backward: B,
    pub signature: S,
}

impl<T, F, B, S> Stage<T> for SigStage<F, B, S>
where
    T: Real,
    F: Fn(&[T]) -> Vec<T>,
    B: Fn(&[T], &[T], &mut [T]),
    S: Fn(&[T]) -> Vec<i64>,
{
    fn forward(&self, inputs: &[T]) -> Result<Vec<T>> {
        Ok((self.forward)(inputs))
    }

    fn backward(&self, inputs: &[T], grad_output: &[T], grad_inputs: &mut [T]) -> Result<()> {
        (self.backward)(inputs, grad_output, grad_inputs);
        Ok(())
    }

    fn signature(&self, inputs: &[T]) -> Option<Vec<i64>> {
        Some((self.signature)(inputs))
    }
}
