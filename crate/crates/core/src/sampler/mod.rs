//! Sampling loops over a descending time grid.
//!
//! Restoration samplers start from a degraded input `y`, noise it to `t0`
//! and integrate back to `t = 0`. Every loop works on the posterior pair
//! `(x0_hat, x1_hat)` at each step, which is where the methods differ:
//!
//! | method            | `x0_hat` correction            | `x1_hat` re-noising | state fusion       |
//! |-------------------|--------------------------------|---------------------|--------------------|
//! | `ode`, `sdedit`   | none                           | none                | none               |
//! | `sde`             | none                           | `gamma(t)`          | none               |
//! | `self_guided_sde` | masked pull towards `y`        | `gamma(t)`          | none               |
//! | `mcs`             | `w x0_hat + (1 - w) y`         | none                | none               |
//! | `nc`              | swap high band for `y`'s       | none                | none               |
//! | `hfs`             | none                           | none                | high band of noised `y` |
//!
//! `flowedit` integrates a velocity difference instead and has its own
//! loop in [`flowedit`].

mod flowedit;
mod langevin;
mod loops;
mod steps;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{NoiseSchedule, VelocityField};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use flowedit::baseline_flowedit;
pub use langevin::langevin_stationarity_run;
pub use loops::{
    baseline_hfs, baseline_mcs, baseline_nc, baseline_sdedit, sample_ode, sample_sde,
    sample_self_guided,
};
pub use steps::{
    inject_noise, inject_noise_with, prop3_decomposition, renoise, renoise_with, sde_update,
    step_ode, step_sde, step_sde_with, Decomposition,
};

/// Values beyond this magnitude abort a run as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ode,
    Sde,
    SelfGuidedSde,
    Sdedit,
    Mcs,
    Hfs,
    Nc,
    #[serde(rename = "flowedit")]
    FlowEdit,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ode,
        Method::Sde,
        Method::SelfGuidedSde,
        Method::Sdedit,
        Method::Mcs,
        Method::Hfs,
        Method::Nc,
        Method::FlowEdit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ode => "ode",
            Method::Sde => "sde",
            Method::SelfGuidedSde => "self_guided_sde",
            Method::Sdedit => "sdedit",
            Method::Mcs => "mcs",
            Method::Hfs => "hfs",
            Method::Nc => "nc",
            Method::FlowEdit => "flowedit",
        }
    }

    pub fn is_guided(self) -> bool {
        self == Method::SelfGuidedSde
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = crate::error::FlowError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid("method", format!("unknown method `{s}`")))
    }
}

/// Re-noising strength `gamma(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// `gamma(t) = sigma_t` at the current step's time.
    SigmaT,
    Constant(f64),
}

impl GammaMode {
    pub fn gamma(self, sigma_t: f64) -> f64 {
        match self {
            GammaMode::SigmaT => sigma_t,
            GammaMode::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub method: Method,
    /// Noise-injection time in `(0, 1]`.
    pub t0: f64,
    pub steps: usize,
    /// Guidance step size; constant over the trajectory.
    pub lambda: f64,
    pub gamma_mode: GammaMode,
    pub mcs_weight: f64,
    /// Low/high band split for `hfs` and `nc`, as a normalized frequency.
    pub cutoff: f64,
    pub seed: u64,
    /// `hfs` noises the source with the injection noise instead of a fresh
    /// draw per step.
    pub hfs_reuse_injection_noise: bool,
    pub record_snapshots: bool,
    pub schedule: NoiseSchedule,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            method: Method::SelfGuidedSde,
            t0: 0.6,
            steps: 30,
            lambda: 0.2,
            gamma_mode: GammaMode::SigmaT,
            mcs_weight: 0.5,
            cutoff: 0.25,
            seed: 0,
            hfs_reuse_injection_noise: false,
            record_snapshots: false,
            schedule: NoiseSchedule::linear(),
        }
    }
}

impl SamplerConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0 <= 1.0) {
            return Err(invalid("t0", format!("{} is outside (0, 1]", self.t0)));
        }
        if self.steps == 0 {
            return Err(invalid("steps", "must be >= 1"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(invalid("lambda", format!("{} must be >= 0", self.lambda)));
        }
        if let GammaMode::Constant(c) = self.gamma_mode {
            if !(0.0..=1.0).contains(&c) {
                return Err(invalid("gamma", format!("{c} is outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.mcs_weight) {
            return Err(invalid("mcs_weight", format!("{} is outside [0, 1]", self.mcs_weight)));
        }
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(invalid("cutoff", format!("{} is outside (0, 1)", self.cutoff)));
        }
        Ok(())
    }

    /// Guidance step size at `t`. Constant for now; the hook exists so a
    /// time-dependent schedule can be slotted in.
    pub fn lambda_at(&self, _t: f64) -> f64 {
        self.lambda
    }
}

/// Descending times `t_k = t0 (N - k) / N`, `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// `(t, t_next)` for each step.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.windows(2).map(|w| (w[0], w[1]))
    }
}

pub fn make_time_grid(t0: f64, steps: usize) -> Result<TimeGrid> {
    if !(t0 > 0.0 && t0 <= 1.0) {
        return Err(invalid("t0", format!("{t0} is outside (0, 1]")));
    }
    if steps == 0 {
        return Err(invalid("steps", "must be >= 1"));
    }
    let n = steps as f64;
    let times = (0..=steps)
        .map(|k| t0 * ((steps - k) as f64 / n))
        .collect();
    Ok(TimeGrid { times })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub sigma_t: f64,
    /// Mean squared masked residual of the (corrected) `x0_hat` against `y`.
    pub masked_residual: Option<f64>,
    pub snapshot: Option<Tensor>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub steps: Vec<StepRecord>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Runs `cfg.method`. `mask` is required by `self_guided_sde`; `source` is
/// the velocity field of the degraded distribution, required by
/// `flowedit`. `mask` may be `[d]` (shared by all rows) or `y`'s shape.
pub fn restore(
    field: &dyn VelocityField,
    source: Option<&dyn VelocityField>,
    y: &Tensor,
    mask: Option<&Tensor>,
    cfg: &SamplerConfig,
    rng: &mut SeededRng,
) -> Result<(Tensor, RunTrace)> {
    match cfg.method {
        Method::Ode => sample_ode(field, y, mask, cfg, rng),
        Method::Sdedit => baseline_sdedit(field, y, mask, cfg, rng),
        Method::Sde => sample_sde(field, y, mask, cfg, rng),
        Method::SelfGuidedSde => {
            let mask = mask.ok_or_else(|| invalid("mask", "self_guided_sde needs a mask"))?;
            sample_self_guided(field, y, mask, cfg, rng)
        }
        Method::Mcs => baseline_mcs(field, y, mask, cfg, rng),
        Method::Hfs => baseline_hfs(field, y, mask, cfg, rng),
        Method::Nc => baseline_nc(field, y, mask, cfg, rng),
        Method::FlowEdit => {
            let source = source.ok_or_else(|| invalid("source", "flowedit needs a source field"))?;
            baseline_flowedit(source, field, y, mask, cfg, rng)
        }
    }
}
