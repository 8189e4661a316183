use crate::error::{invalid, FlowError, Result};
use crate::estimators::{check_binary, guidance_step, PosteriorPair};
use crate::field::{eval_field, VelocityField};
use crate::rng::SeededRng;
use crate::spectral::{filter_rows, FilterMode};
use crate::tensor::Tensor;

use super::steps::{inject_noise_with, sde_update};
use super::{make_time_grid, Method, RunTrace, SamplerConfig, StepRecord, DIVERGENCE_LIMIT};

/// What a loop does between the posterior estimate and the next state.
enum Correction<'a> {
    None,
    Guidance { mask: &'a Tensor },
    Blend { weight: f64 },
    HighBandSwap { y_high: Tensor },
    HighBandFusion,
}

struct LoopPlan<'a> {
    correction: Correction<'a>,
    stochastic: bool,
}

fn masked_mse(x: &Tensor, y: &Tensor, mask: &Tensor) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for ((a, b), m) in x.data().iter().zip(y.data()).zip(mask.data()) {
        if *m != 0.0 {
            sum += (a - b) * (a - b);
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

fn guard(x: &Tensor, step: usize, t: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(FlowError::Diverged {
            step,
            t,
            reason: "non-finite state".into(),
        });
    }
    let m = x.max_abs();
    if m > DIVERGENCE_LIMIT {
        return Err(FlowError::Diverged {
            step,
            t,
            reason: format!("|x| = {m:e} exceeds {DIVERGENCE_LIMIT:e}"),
        });
    }
    Ok(())
}

fn prepare_mask(mask: Option<&Tensor>, y: &Tensor) -> Result<Option<Tensor>> {
    mask.map(|m| {
        check_binary(m)?;
        m.expand_rows_like(y)
    })
    .transpose()
}

fn run(
    field: &dyn VelocityField,
    y: &Tensor,
    mask: Option<&Tensor>,
    cfg: &SamplerConfig,
    plan: LoopPlan<'_>,
    rng: &mut SeededRng,
) -> Result<(Tensor, RunTrace)> {
    cfg.validate()?;
    if y.row_len() != field.dim() {
        return Err(FlowError::ShapeMismatch {
            expected: vec![y.n_rows(), field.dim()],
            actual: y.shape().to_vec(),
        });
    }
    let grid = make_time_grid(cfg.t0, cfg.steps)?;
    let schedule = cfg.schedule;

    let injection_eps = rng.sample_standard_normal(y.shape())?;
    let mut x = inject_noise_with(y, schedule.sigma(cfg.t0)?, &injection_eps)?;
    let mut trace = RunTrace::default();

    for (k, (t, t_next)) in grid.intervals().enumerate() {
        let sigma = schedule.sigma(t)?;
        let sigma_next = schedule.sigma(t_next)?;
        let v = eval_field(field, &x, t)?;
        guard(&v, k, t)?;
        let mut pair = PosteriorPair::from_velocity(&x, &v, t, sigma)?;

        pair.x0_hat = match &plan.correction {
            Correction::Guidance { mask } => {
                guidance_step(&pair.x0_hat, y, mask, cfg.lambda_at(t))?
            }
            Correction::Blend { weight } => pair.x0_hat.lincomb(*weight, y, 1.0 - weight)?,
            Correction::HighBandSwap { y_high } => {
                let own_high = filter_rows(&pair.x0_hat, cfg.cutoff, FilterMode::High)?;
                pair.x0_hat.sub(&own_high)?.add(y_high)?
            }
            Correction::None | Correction::HighBandFusion => pair.x0_hat,
        };

        let gamma = if plan.stochastic {
            cfg.gamma_mode.gamma(sigma)
        } else {
            0.0
        };
        let eps = if gamma > 0.0 {
            Some(rng.sample_standard_normal(x.shape())?)
        } else {
            None
        };
        let mut x_next = sde_update(&pair, eps.as_ref(), sigma_next, gamma)?;

        if let Correction::HighBandFusion = plan.correction {
            let src_eps = if cfg.hfs_reuse_injection_noise {
                injection_eps.clone()
            } else {
                rng.sample_standard_normal(x.shape())?
            };
            let src = inject_noise_with(y, sigma_next, &src_eps)?;
            let low = filter_rows(&x_next, cfg.cutoff, FilterMode::Low)?;
            let high = filter_rows(&src, cfg.cutoff, FilterMode::High)?;
            x_next = low.add(&high)?;
        }
        guard(&x_next, k, t)?;

        trace.steps.push(StepRecord {
            t,
            sigma_t: sigma,
            masked_residual: mask.and_then(|m| masked_mse(&pair.x0_hat, y, m)),
            snapshot: cfg.record_snapshots.then(|| x_next.clone()),
        });
        x = x_next;
    }
    Ok((x, trace))
}

fn expect_method(cfg: &SamplerConfig, allowed: &[Method]) -> Result<()> {
    if !allowed.contains(&cfg.method) {
        return Err(invalid(
            "method",
            format!("{} is not handled by this sampler", cfg.method),
        ));
    }
    Ok(())
}

/// Noise injection followed by the deterministic flow ODE.
pub fn sample_ode(
    field: &dyn VelocityField,
    y: &Tensor,
    mask: Option<&Tensor>,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<(Tensor, RunTrace)> {
    let mask = prepare_mask(mask, y)?;
    let plan = LoopPlan {
        correction: Correction::None,
        stochastic: false,
    };
    run(field, y, mask.as_ref(), cfg, plan, rng)
}

/// Noise injection followed by re-noised stochastic steps, no guidance.
pub fn sample_sde(
    field: &dyn VelocityField,
    y: &Tensor,
    mask: Option<&Tensor>,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<(Tensor, RunTrace)> {
    let mask = prepare_mask(mask, y)?;
    let plan = LoopPlan {
        correction: Correction::None,
        stochastic: true,
    };
    run(field, y, mask.as_ref(), cfg, plan, rng)
}

/// Self-guided stochastic sampling.
///
/// Per step: posterior mean and noise from one velocity evaluation, a
/// masked pull of the posterior mean towards `y`, re-noising of the
/// posterior noise with `gamma(t)`, and re-interpolation at `t_next`.
pub fn sample_self_guided(
    field: &dyn VelocityField,
    y: &Tensor,
    mask: &Tensor,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<(Tensor, RunTrace)> {
    expect_method(cfg, &[Method::SelfGuidedSde])?;
    let mask = prepare_mask(Some(mask), y)?.unwrap();
    let plan = LoopPlan {
        correction: Correction::Guidance { mask: &mask },
        stochastic: true,
    };
    run(field, y, Some(&mask), cfg, plan, rng)
}

/// Vanilla SDEdit: noise to `t0`, integrate the ODE to 0.
pub fn baseline_sdedit(
    field: &dyn VelocityField,
    y: &Tensor,
    mask: Option<&Tensor>,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<(Tensor, RunTrace)> {
    sample_ode(field, y, mask, cfg, rng)
}

/// ODE loop with `x0_hat <- w x0_hat + (1 - w) y` every step.
pub fn baseline_mcs(
    field: &dyn VelocityField,
    y: &Tensor,
    mask: Option<&Tensor>,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<(Tensor, RunTrace)> {
    let mask = prepare_mask(mask, y)?;
    let plan = LoopPlan {
        correction: Correction::Blend {
            weight: cfg.mcs_weight,
        },
        stochastic: false,
    };
    run(field, y, mask.as_ref(), cfg, plan, rng)
}

/// ODE loop where, after every step, the state's high band is replaced by
/// that of `y` noised to the new time.
pub fn baseline_hfs(
    field: &dyn VelocityField,
    y: &Tensor,
    mask: Option<&Tensor>,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<(Tensor, RunTrace)> {
    let mask = prepare_mask(mask, y)?;
    let plan = LoopPlan {
        correction: Correction::HighBandFusion,
        stochastic: false,
    };
    run(field, y, mask.as_ref(), cfg, plan, rng)
}

/// ODE loop where `x0_hat`'s high band is replaced by `y`'s every step.
pub fn baseline_nc(
    field: &dyn VelocityField,
    y: &Tensor,
    mask: Option<&Tensor>,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<(Tensor, RunTrace)> {
    let mask = prepare_mask(mask, y)?;
    let y_high = filter_rows(y, cfg.cutoff, FilterMode::High)?;
    let plan = LoopPlan {
        correction: Correction::HighBandSwap { y_high },
        stochastic: false,
    };
    run(field, y, mask.as_ref(), cfg, plan, rng)
}
