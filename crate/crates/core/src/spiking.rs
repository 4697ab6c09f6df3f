//! Leaky integrate-and-fire dynamics with surrogate-gradient training.
//!
//! A neuron integrates its input current through
//! `v' = v + (1/tau_m) * (-v + I)`, emits a binary spike wherever
//! `v' >= v_threshold`, and hard-resets spiking neurons to `v_reset`.
//! The forward spike is an exact step function; the backward pass
//! substitutes the arctan-family surrogate derivative
//! `g(u) = alpha / (2 * (1 + (pi/2) * alpha * |u|)^2)` at the
//! pre-threshold value `u = v' - v_threshold`. The reset gate is treated
//! as a constant during backpropagation, so membrane gradients flow
//! through the decay path while the spike nonlinearity is the only
//! surrogate approximation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BackwardOp, Tensor};

/// Neuron constants shared by a layer of LIF units.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LifParams<F: Scalar> {
    /// Membrane time constant in simulation steps; the decay factor
    /// `1/tau_m` must lie in (0, 1).
    pub tau_m: F,
    pub v_threshold: F,
    pub v_reset: F,
    /// Slope of the surrogate derivative.
    pub surrogate_alpha: F,
    /// Number of simulation steps a static input is presented for.
    pub t_window: usize,
}

impl<F: Scalar> Default for LifParams<F> {
    fn default() -> Self {
        LifParams {
            tau_m: F::from_f64(2.0),
            v_threshold: F::from_f64(1.0),
            v_reset: F::from_f64(0.0),
            surrogate_alpha: F::from_f64(2.0),
            t_window: 20,
        }
    }
}

impl<F: Scalar> LifParams<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > F::one()) {
            return Err(Error::Config(format!(
                "tau_m must exceed 1 so the decay factor is in (0,1), got {}",
                self.tau_m
            )));
        }
        if !(self.v_threshold > self.v_reset) {
            return Err(Error::Config(format!(
                "v_threshold ({}) must exceed v_reset ({})",
                self.v_threshold, self.v_reset
            )));
        }
        if self.surrogate_alpha <= F::zero() {
            return Err(Error::Config("surrogate_alpha must be positive".into()));
        }
        if self.t_window == 0 {
            return Err(Error::Config("t_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Membrane potentials carried across simulation steps, one per neuron.
#[derive(Debug, Clone)]
pub struct LifState<F: Scalar> {
    pub v: Tensor<F>,
}

impl<F: Scalar> LifState<F> {
    /// All neurons at the reset potential.
    pub fn resting(shape: &[usize], params: &LifParams<F>) -> Self {
        LifState {
            v: Tensor::full(shape, params.v_reset),
        }
    }
}

/// Surrogate derivative of the spike step at pre-threshold value `u`.
pub fn surrogate_scalar<F: Scalar>(u: F, alpha: F) -> F {
    let half_pi = F::from_f64(std::f64::consts::FRAC_PI_2);
    let denom = F::one() + half_pi * alpha * u.abs();
    alpha / (F::from_f64(2.0) * denom * denom)
}

/// Elementwise surrogate derivative, `g(u) = alpha / (2 (1 + (pi/2) alpha |u|)^2)`.
pub fn surrogate_grad<F: Scalar>(v_minus_threshold: &Tensor<F>, alpha: F) -> Result<Tensor<F>> {
    if alpha <= F::zero() {
        return Err(Error::Invalid("surrogate alpha must be positive".into()));
    }
    Ok(v_minus_threshold.detached_map(|u| surrogate_scalar(u, alpha)))
}

#[derive(Debug)]
struct SpikeOp<F> {
    alpha: F,
}

impl<F: Scalar> BackwardOp<F> for SpikeOp<F> {
    fn vjp(&self, parents: &[Tensor<F>], upstream: &[F]) -> Vec<Option<Vec<F>>> {
        let u = parents[0].data();
        vec![parents[0].requires_grad().then(|| {
            upstream
                .iter()
                .zip(u)
                .map(|(&g, &ui)| g * surrogate_scalar(ui, self.alpha))
                .collect()
        })]
    }
}

/// Heaviside step on the pre-threshold value: 1 where `u >= 0`, else 0.
/// Backward uses the surrogate derivative.
fn spike_from_pre_threshold<F: Scalar>(u: &Tensor<F>, alpha: F) -> Tensor<F> {
    let data = u
        .data()
        .iter()
        .map(|&v| if v >= F::zero() { F::one() } else { F::zero() })
        .collect();
    Tensor::from_op(
        u.shape().to_vec(),
        data,
        vec![u.clone()],
        Box::new(SpikeOp { alpha }),
    )
}

/// One simulation step: integrate the input current, spike, hard-reset.
///
/// Returns the binary spike tensor and the post-reset membrane state.
pub fn lif_step<F: Scalar>(
    state: &LifState<F>,
    input_current: &Tensor<F>,
    params: &LifParams<F>,
) -> Result<(Tensor<F>, LifState<F>)> {
    if state.v.shape() != input_current.shape() {
        return Err(Error::ShapeMismatch {
            op: "lif_step",
            lhs: state.v.shape().to_vec(),
            rhs: input_current.shape().to_vec(),
        });
    }
    let inv_tau = F::one() / params.tau_m;
    // v' = v + (1/tau)(-v + I)
    let v_prime = state
        .v
        .add(&input_current.sub(&state.v)?.scalar_mul(inv_tau))?;
    let u = v_prime.add_scalar(-params.v_threshold);
    let spikes = spike_from_pre_threshold(&u, params.surrogate_alpha);

    // Hard reset through detached gates: keep v' where silent, v_reset
    // where spiking. The gate itself carries no gradient.
    let keep = spikes.detached_map(|s| F::one() - s);
    let reset_term = spikes.detached_map(|s| s * params.v_reset);
    let v_next = v_prime.mul(&keep)?.add(&reset_term)?;
    Ok((spikes, LifState { v: v_next }))
}

/// Present `current` as a constant input for `t_window` steps starting
/// from the reset potential; returns every step's binary spike tensor.
pub fn run_window_spikes<F: Scalar>(
    current: &Tensor<F>,
    params: &LifParams<F>,
) -> Result<Vec<Tensor<F>>> {
    params.validate()?;
    let mut state = LifState::resting(current.shape(), params);
    let mut spikes = Vec::with_capacity(params.t_window);
    for _ in 0..params.t_window {
        let (s, next) = lif_step(&state, current, params)?;
        spikes.push(s);
        state = next;
    }
    Ok(spikes)
}

/// Mean spike value per neuron over the window: a firing rate in [0, 1].
///
/// `layer` maps the static input to the constant current driving the
/// window; gradients flow through both the layer and the surrogate.
pub fn run_window<F, L>(layer_input: &Tensor<F>, layer: L, params: &LifParams<F>) -> Result<Tensor<F>>
where
    F: Scalar,
    L: FnOnce(&Tensor<F>) -> Result<Tensor<F>>,
{
    let current = layer(layer_input)?;
    rate_over_window(&current, params)
}

/// Firing rate of a LIF layer driven by a fixed current.
pub fn rate_over_window<F: Scalar>(current: &Tensor<F>, params: &LifParams<F>) -> Result<Tensor<F>> {
    let spikes = run_window_spikes(current, params)?;
    mean_of(&spikes)
}

/// Elementwise mean of a non-empty list of same-shape tensors. Uses true
/// division so a window of all-ones spikes yields a rate of exactly 1.
pub fn mean_of<F: Scalar>(tensors: &[Tensor<F>]) -> Result<Tensor<F>> {
    let mut acc = tensors[0].clone();
    for t in &tensors[1..] {
        acc = acc.add(t)?;
    }
    Ok(acc.scalar_div(F::from_f64(tensors.len() as f64)))
}
