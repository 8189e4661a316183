use crate::error::{invalid, Result};
use crate::estimators::PosteriorPair;
use crate::field::{eval_field, NoiseSchedule, VelocityField};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::GammaMode;

/// `sigma_t0 eps + (1 - sigma_t0) y` with a fresh `eps`.
pub fn inject_noise(y: &Tensor, t0: f64, rng: &mut SeededRng) -> Result<Tensor> {
    if !(t0 > 0.0 && t0 <= 1.0) {
        return Err(invalid("t0", format!("{t0} is outside (0, 1]")));
    }
    let sigma = NoiseSchedule::linear().sigma(t0)?;
    let eps = rng.sample_standard_normal(y.shape())?;
    inject_noise_with(y, sigma, &eps)
}

/// Noise injection with caller-supplied `eps`.
pub fn inject_noise_with(y: &Tensor, sigma: f64, eps: &Tensor) -> Result<Tensor> {
    eps.lincomb(sigma, y, 1.0 - sigma)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid("gamma", format!("{gamma} is outside [0, 1]")));
    }
    Ok(())
}

/// `sqrt(gamma) eps + sqrt(1 - gamma) x1_hat` with a fresh `eps`. Draws
/// nothing when `gamma = 0`.
pub fn renoise(x1_hat: &Tensor, gamma: f64, rng: &mut SeededRng) -> Result<Tensor> {
    check_gamma(gamma)?;
    if gamma == 0.0 {
        return Ok(x1_hat.clone());
    }
    let eps = rng.sample_standard_normal(x1_hat.shape())?;
    renoise_with(x1_hat, gamma, &eps)
}

pub fn renoise_with(x1_hat: &Tensor, gamma: f64, eps: &Tensor) -> Result<Tensor> {
    check_gamma(gamma)?;
    eps.lincomb(gamma.sqrt(), x1_hat, (1.0 - gamma).sqrt())
}

/// Split of one stochastic update into its deterministic and stochastic parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// `(1 - sigma_next) x0_hat + sigma_next sqrt(1 - gamma) x1_hat`
    pub drift: Tensor,
    /// `sigma_next sqrt(gamma) eps`
    pub diffusion: Tensor,
    pub x_next: Tensor,
}

pub fn prop3_decomposition(
    x0_hat: &Tensor,
    x1_hat: &Tensor,
    eps: &Tensor,
    sigma_next: f64,
    gamma: f64,
) -> Result<Decomposition> {
    check_gamma(gamma)?;
    let drift = x0_hat.lincomb(1.0 - sigma_next, x1_hat, sigma_next * (1.0 - gamma).sqrt())?;
    let diffusion = eps.scale(sigma_next * gamma.sqrt());
    let x_next = drift.add(&diffusion)?;
    Ok(Decomposition {
        drift,
        diffusion,
        x_next,
    })
}

/// Interpolation at `sigma_next` after re-noising `x1_hat` with strength
/// `gamma`, evaluated as drift + diffusion. With `gamma = 0` no noise is
/// used and the result is the deterministic interpolation.
pub fn sde_update(
    pair: &PosteriorPair,
    eps: Option<&Tensor>,
    sigma_next: f64,
    gamma: f64,
) -> Result<Tensor> {
    match eps {
        Some(eps) if gamma > 0.0 => {
            Ok(prop3_decomposition(&pair.x0_hat, &pair.x1_hat, eps, sigma_next, gamma)?.x_next)
        }
        _ => pair.interpolate(sigma_next),
    }
}

fn posterior(field: &dyn VelocityField, x_t: &Tensor, t: f64) -> Result<PosteriorPair> {
    let sigma = NoiseSchedule::linear().sigma(t)?;
    let v = eval_field(field, x_t, t)?;
    PosteriorPair::from_velocity(x_t, &v, t, sigma)
}

fn check_forward(t: f64, t_next: f64) -> Result<()> {
    if !(t_next < t) {
        return Err(invalid("t_next", format!("{t_next} must be < t = {t}")));
    }
    Ok(())
}

/// One deterministic step from `t` to `t_next`.
pub fn step_ode(field: &dyn VelocityField, x_t: &Tensor, t: f64, t_next: f64) -> Result<Tensor> {
    check_forward(t, t_next)?;
    let pair = posterior(field, x_t, t)?;
    pair.interpolate(NoiseSchedule::linear().sigma(t_next)?)
}

/// One stochastic step: `x1_hat` is re-noised with `gamma(sigma_t)` before
/// interpolating.
pub fn step_sde(
    field: &dyn VelocityField,
    x_t: &Tensor,
    t: f64,
    t_next: f64,
    gamma_mode: GammaMode,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    check_forward(t, t_next)?;
    let pair = posterior(field, x_t, t)?;
    let gamma = gamma_mode.gamma(pair.sigma_t);
    check_gamma(gamma)?;
    let eps = if gamma > 0.0 {
        Some(rng.sample_standard_normal(x_t.shape())?)
    } else {
        None
    };
    sde_update(&pair, eps.as_ref(), NoiseSchedule::linear().sigma(t_next)?, gamma)
}

/// [`step_sde`] with caller-supplied noise.
pub fn step_sde_with(
    field: &dyn VelocityField,
    x_t: &Tensor,
    t: f64,
    t_next: f64,
    gamma: f64,
    eps: &Tensor,
) -> Result<Tensor> {
    check_forward(t, t_next)?;
    check_gamma(gamma)?;
    let pair = posterior(field, x_t, t)?;
    sde_update(&pair, Some(eps), NoiseSchedule::linear().sigma(t_next)?, gamma)
}
