//! Adam updates and the cosine annealing learning-rate schedule.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-parameter moment estimates plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    first_moment: Vec<Vec<F>>,
    second_moment: Vec<Vec<F>>,
    step_count: u64,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
}

impl<F: Scalar> AdamState<F> {
    /// State sized to the given parameter shapes, with the conventional
    /// hyperparameters beta1=0.9, beta2=0.999, epsilon=1e-8.
    pub fn new(params: &[Tensor<F>]) -> Self {
        AdamState {
            first_moment: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![F::zero(); p.numel()]).collect(),
            step_count: 0,
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            epsilon: F::from_f64(1e-8),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected Adam update. Returns fresh leaf tensors holding the
/// updated parameter values; the inputs are left untouched so that graph
/// handles elsewhere stay valid.
pub fn adam_step<F: Scalar>(
    params: &[Tensor<F>],
    grads: &[Vec<F>],
    state: &mut AdamState<F>,
    lr: F,
) -> Result<Vec<Tensor<F>>> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Invalid(format!(
            "adam_step over {} params, {} grads, state of {}",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.numel() != g.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: vec![g.len()],
            });
        }
    }
    if lr <= F::zero() {
        return Err(Error::Invalid("adam_step requires lr > 0".into()));
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let one = F::one();
    let bc1 = one - state.beta1.powi(t);
    let bc2 = one - state.beta2.powi(t);

    let mut updated = Vec::with_capacity(params.len());
    for (idx, (p, g)) in params.iter().zip(grads).enumerate() {
        let m = &mut state.first_moment[idx];
        let v = &mut state.second_moment[idx];
        let mut data = p.data().to_vec();
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (one - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (one - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
        updated.push(Tensor::param(p.shape(), data)?);
    }
    Ok(updated)
}

/// Cosine annealing schedule from `lr_max` at step 0 down to `lr_min` at
/// `total_steps`.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule<F: Scalar> {
    pub lr_max: F,
    pub lr_min: F,
    pub total_steps: u64,
}

impl<F: Scalar> LrSchedule<F> {
    pub fn new(lr_max: F, lr_min: F, total_steps: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(lr_max > lr_min && lr_min > F::zero()) {
            return Err(Error::Config(format!(
                "schedule requires lr_max > lr_min > 0, got {lr_max} and {lr_min}"
            )));
        }
        Ok(LrSchedule {
            lr_max,
            lr_min,
            total_steps,
        })
    }
}

/// lr(step) = lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi * step / total)).
pub fn cosine_lr<F: Scalar>(schedule: &LrSchedule<F>, step: u64) -> Result<F> {
    if step > schedule.total_steps {
        return Err(Error::Invalid(format!(
            "step {step} outside schedule domain 0..={}",
            schedule.total_steps
        )));
    }
    let half = F::from_f64(0.5);
    let phase = F::from_f64(std::f64::consts::PI) * F::from_f64(step as f64)
        / F::from_f64(schedule.total_steps as f64);
    Ok(schedule.lr_min + half * (schedule.lr_max - schedule.lr_min) * (F::one() + phase.cos()))
}
