//! Pointwise identities of the linear path: endpoint prediction from a
//! velocity, re-interpolation, and the masked guidance update.

use crate::error::{invalid, FlowError, Result};
use crate::tensor::Tensor;

/// Predicted data endpoint `x0_hat` and noise endpoint `x1_hat` for a state
/// at `sigma_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorPair {
    pub x0_hat: Tensor,
    pub x1_hat: Tensor,
    pub t: f64,
    pub sigma_t: f64,
}

fn check_sigma(name: &'static str, s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(invalid(name, format!("{s} is outside [0, 1]")));
    }
    Ok(())
}

/// `x_t - sigma_t v`.
pub fn posterior_mean(x_t: &Tensor, v: &Tensor, sigma_t: f64) -> Result<Tensor> {
    check_sigma("sigma_t", sigma_t)?;
    x_t.zip_map(v, |x, v| x - sigma_t * v)
}

/// `x_t + (1 - sigma_t) v`.
pub fn posterior_noise(x_t: &Tensor, v: &Tensor, sigma_t: f64) -> Result<Tensor> {
    check_sigma("sigma_t", sigma_t)?;
    let c = 1.0 - sigma_t;
    x_t.zip_map(v, |x, v| x + c * v)
}

impl PosteriorPair {
    pub fn from_velocity(x_t: &Tensor, v: &Tensor, t: f64, sigma_t: f64) -> Result<Self> {
        Ok(Self {
            x0_hat: posterior_mean(x_t, v, sigma_t)?,
            x1_hat: posterior_noise(x_t, v, sigma_t)?,
            t,
            sigma_t,
        })
    }

    /// Point on the line through the two endpoints at `sigma_next`.
    pub fn interpolate(&self, sigma_next: f64) -> Result<Tensor> {
        interpolate_step(self, sigma_next)
    }
}

/// `(1 - sigma_next) x0_hat + sigma_next x1_hat`; only forward (towards
/// data) steps are accepted.
pub fn interpolate_step(pair: &PosteriorPair, sigma_next: f64) -> Result<Tensor> {
    check_sigma("sigma_next", sigma_next)?;
    if sigma_next > pair.sigma_t {
        return Err(FlowError::BackwardStep {
            sigma_t: pair.sigma_t,
            sigma_next,
        });
    }
    pair.x0_hat.lincomb(1.0 - sigma_next, &pair.x1_hat, sigma_next)
}

/// Pulls the masked coordinates of `x0_hat` towards `y`:
/// `x0_hat - lambda * mask * (x0_hat - y)`.
///
/// This is a gradient step on `|| mask * (y - x0_hat) ||^2` with the
/// predictor Jacobian taken as the identity; the factor 2 of the gradient
/// is folded into `lambda`. Masked entries are computed as the convex
/// combination `(1 - lambda) x0_hat + lambda y`, so `lambda = 1` lands on
/// `y` exactly. Unmasked entries are copied untouched.
pub fn guidance_step(x0_hat: &Tensor, y: &Tensor, mask: &Tensor, lambda: f64) -> Result<Tensor> {
    x0_hat.ensure_same_shape(y)?;
    x0_hat.ensure_same_shape(mask)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid("lambda", format!("{lambda} must be finite and >= 0")));
    }
    check_binary(mask)?;
    let data = x0_hat
        .data()
        .iter()
        .zip(y.data())
        .zip(mask.data())
        .map(|((&x, &y), &m)| {
            if m == 0.0 {
                x
            } else {
                (1.0 - lambda) * x + lambda * y
            }
        })
        .collect();
    Ok(Tensor::from_raw(x0_hat.shape().to_vec(), data))
}

pub fn check_binary(mask: &Tensor) -> Result<()> {
    if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(invalid("mask", "entries must be 0 or 1"));
    }
    Ok(())
}
