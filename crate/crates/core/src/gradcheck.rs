//! Central finite-difference verification of reverse-mode gradients.
//!
//! The checker re-evaluates the forward computation with perturbed leaf
//! values; it never touches the backward implementation it is checking.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Relative error with a guard against tiny denominators, so that pure
/// floating-point noise on near-zero gradients does not dominate.
pub fn rel_err<F: Scalar>(a: F, b: F, guard: F) -> F {
    let denom = a.abs().max(b.abs()).max(guard);
    (a - b).abs() / denom
}

/// Largest relative error between reverse-mode gradients and central finite
/// differences of `build` over every element of every leaf in `init`.
///
/// `build` must be a pure function of its parameters producing a scalar
/// loss. Leaves that do not participate in the loss are checked against a
/// zero finite-difference response.
pub fn max_rel_error<F, B>(build: B, init: &[(&[usize], Vec<F>)], eps: F) -> Result<F>
where
    F: Scalar,
    B: Fn(&[Tensor<F>]) -> Result<Tensor<F>>,
{
    let params: Vec<Tensor<F>> = init
        .iter()
        .map(|(shape, data)| Tensor::param(shape, data.clone()))
        .collect::<Result<_>>()?;
    let loss = build(&params)?;
    loss.backward()?;
    let grads: Vec<Vec<F>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![F::zero(); p.numel()]))
        .collect();

    let eval = |values: &[Vec<F>]| -> Result<F> {
        let leaves: Vec<Tensor<F>> = init
            .iter()
            .zip(values)
            .map(|((shape, _), data)| Tensor::param(shape, data.clone()))
            .collect::<Result<_>>()?;
        Ok(build(&leaves)?.data()[0])
    };

    let base: Vec<Vec<F>> = init.iter().map(|(_, d)| d.clone()).collect();
    let guard = F::from_f64(1e-6);
    let two = F::from_f64(2.0);
    let mut worst = F::zero();
    for (pi, values) in base.iter().enumerate() {
        for i in 0..values.len() {
            let mut plus = base.clone();
            plus[pi][i] += eps;
            let mut minus = base.clone();
            minus[pi][i] -= eps;
            let fd = (eval(&plus)? - eval(&minus)?) / (two * eps);
            let e = rel_err(grads[pi][i], fd, guard);
            if e > worst {
                worst = e;
            }
        }
    }
    Ok(worst)
}
