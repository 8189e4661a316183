//! Inversion-free editing by integrating a velocity difference.
//!
//! The edited state `z` starts at the source sample. At each step a noisy
//! source point `x~ = (1 - sigma) x_src + sigma eps` is drawn with a fresh
//! `eps`, the target field is evaluated at the same noise offset from `z`,
//! i.e. at `x~ + (z - x_src)`, and `z` moves along
//! `v_tgt(x~ + z - x_src) - v_src(x~)`. This follows the one-paragraph
//! description of the method and is an approximation of the original
//! coupling (no averaging over several noise draws per step).

use crate::error::{FlowError, Result};
use crate::field::{eval_field, VelocityField};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::{make_time_grid, RunTrace, SamplerConfig, StepRecord, DIVERGENCE_LIMIT};

pub fn baseline_flowedit(
    src_field: &dyn VelocityField,
    tgt_field: &dyn VelocityField,
    x_src: &Tensor,
    mask: Option<&Tensor>,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<(Tensor, RunTrace)> {
    cfg.validate()?;
    if src_field.dim() != tgt_field.dim() {
        return Err(FlowError::ShapeMismatch {
            expected: vec![src_field.dim()],
            actual: vec![tgt_field.dim()],
        });
    }
    let mask = mask.map(|m| m.expand_rows_like(x_src)).transpose()?;
    let grid = make_time_grid(cfg.t0, cfg.steps)?;
    let schedule = cfg.schedule;
    let mut z = x_src.clone();
    let mut trace = RunTrace::default();

    for (k, (t, t_next)) in grid.intervals().enumerate() {
        let sigma = schedule.sigma(t)?;
        let sigma_next = schedule.sigma(t_next)?;
        let eps = rng.sample_standard_normal(x_src.shape())?;
        let noisy_src = x_src.lincomb(1.0 - sigma, &eps, sigma)?;
        let noisy_tgt = noisy_src.add(&z.sub(x_src)?)?;
        let v_src = eval_field(src_field, &noisy_src, t)?;
        let v_tgt = eval_field(tgt_field, &noisy_tgt, t)?;
        let dv = v_tgt.sub(&v_src)?;
        z = z.lincomb(1.0, &dv, sigma_next - sigma)?;
        if !z.is_finite() || z.max_abs() > DIVERGENCE_LIMIT {
            return Err(FlowError::Diverged {
                step: k,
                t,
                reason: "edited state blew up".into(),
            });
        }
        let masked_residual = mask.as_ref().and_then(|m| {
            let (mut s, mut c) = (0.0, 0usize);
            for ((a, b), w) in z.data().iter().zip(x_src.data()).zip(m.data()) {
                if *w != 0.0 {
                    s += (a - b) * (a - b);
                    c += 1;
                }
            }
            (c > 0).then(|| s / c as f64)
        });
        trace.steps.push(StepRecord {
            t,
            sigma_t: sigma,
            masked_residual,
            snapshot: cfg.record_snapshots.then(|| z.clone()),
        });
    }
    Ok((z, trace))
}
