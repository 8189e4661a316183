//! TOML run configuration and its merge with command-line flags.
//!
//! ```toml
//! [target]
//! means = [[2.0, 0.0], [-2.0, 0.0]]
//! std = 0.3
//!
//! [degradation]
//! shift = [0.8, 0.8]
//!
//! [sampler]
//! t0 = 0.6
//! gamma = "sigma_t"
//!
//! [experiment]
//! methods = ["ode", "sde", "self_guided_sde"]
//! seeds = 10
//! mask = [1.0, 0.0]
//! ```
//!
//! Every section and key is optional. Flags override file values, which
//! override the built-in defaults.

use std::fmt;
use std::path::Path;

use anyhow::{bail, Context};
use flowlab_core::experiment::{Degradation, ExperimentSpec};
use flowlab_core::field::{GmmSpec, NoiseSchedule};
use flowlab_core::{GammaMode, Method, Tensor};
use serde::Deserialize;

/// Error in the command line or the config file (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub target: TargetSection,
    #[serde(default)]
    pub degradation: DegradationSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub means: Option<Vec<Vec<f64>>>,
    pub std: Option<f64>,
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSection {
    pub shift: Option<Vec<f64>>,
    pub blur_cutoff: Option<f64>,
    pub mode_collapse: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum GammaSetting {
    Constant(f64),
    Named(GammaName),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaName {
    SigmaT,
}

impl GammaSetting {
    pub fn mode(self) -> GammaMode {
        match self {
            GammaSetting::Constant(c) => GammaMode::Constant(c),
            GammaSetting::Named(GammaName::SigmaT) => GammaMode::SigmaT,
        }
    }
}

impl std::str::FromStr for GammaSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "sigma_t" {
            return Ok(GammaSetting::Named(GammaName::SigmaT));
        }
        s.parse::<f64>()
            .map(GammaSetting::Constant)
            .map_err(|_| format!("expected `sigma_t` or a number, got `{s}`"))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub method: Option<Method>,
    pub t0: Option<f64>,
    pub steps: Option<usize>,
    pub lambda: Option<f64>,
    pub gamma: Option<GammaSetting>,
    pub mcs_weight: Option<f64>,
    pub cutoff: Option<f64>,
    pub hfs_reuse_injection_noise: Option<bool>,
    pub schedule_shift: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub methods: Option<Vec<Method>>,
    /// Number of seeds, starting at `seed`.
    pub seeds: Option<u64>,
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub projections: Option<usize>,
    pub mask: Option<Vec<f64>>,
    pub t0_values: Option<Vec<f64>>,
}

/// Reads and validates a config file. Parse errors carry the line and
/// column reported by the TOML parser.
pub fn load_config(path: &Path) -> anyhow::Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(|e| usage(format!("{e:#}")))?;
    parse_config(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn parse_config(text: &str) -> Result<FileConfig, toml::de::Error> {
    toml::from_str(text)
}

/// Flag values that override the file. `None` means "not given".
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub method: Option<Method>,
    pub t0: Option<f64>,
    pub steps: Option<usize>,
    pub lambda: Option<f64>,
    pub gamma: Option<GammaSetting>,
    pub mcs_weight: Option<f64>,
    pub cutoff: Option<f64>,
    pub hfs_reuse_injection_noise: bool,
    pub schedule_shift: Option<f64>,
    pub methods: Option<Vec<Method>>,
    pub seeds: Option<u64>,
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub projections: Option<usize>,
    pub mask: Option<Vec<f64>>,
    pub shift: Option<Vec<f64>>,
    pub blur_cutoff: Option<f64>,
    pub mode_collapse: Option<usize>,
}

pub const SEED_ENV: &str = "FLOWLAB_SEED";

/// Base seed: flag, then config file, then `FLOWLAB_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> anyhow::Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// A fully merged run: the experiment spec plus the pieces only some
/// commands use.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: ExperimentSpec,
    pub method: Method,
    pub base_seed: u64,
    pub t0_values: Option<Vec<f64>>,
}

pub fn resolve(file: &FileConfig, flags: &Overrides) -> anyhow::Result<Resolved> {
    let mut spec = ExperimentSpec::two_mode_shift()?;

    let t = &file.target;
    if t.means.is_some() || t.std.is_some() || t.weights.is_some() {
        let means = t.means.clone().unwrap_or_else(|| vec![vec![2.0, 0.0], vec![-2.0, 0.0]]);
        let std = t.std.unwrap_or(0.3);
        let iso = GmmSpec::isotropic(&means, std).map_err(|e| usage(format!("[target]: {e}")))?;
        spec.target = match &t.weights {
            Some(w) => GmmSpec::new(w.clone(), iso.components().to_vec())
                .map_err(|e| usage(format!("[target] weights: {e}")))?,
            None => iso,
        };
        let d = spec.target.dim();
        if file.experiment.mask.is_none() && flags.mask.is_none() {
            spec.mask = Tensor::from_vec((0..d).map(|i| if i < d.div_ceil(2) { 1.0 } else { 0.0 }).collect())?;
        }
        if file.degradation.shift.is_none() && flags.shift.is_none() {
            spec.degradation.shift = vec![0.8; d];
        }
    }

    let dg = &file.degradation;
    spec.degradation = Degradation {
        shift: flags.shift.clone().or_else(|| dg.shift.clone()).unwrap_or(spec.degradation.shift),
        blur_cutoff: flags.blur_cutoff.or(dg.blur_cutoff),
        mode_collapse: flags.mode_collapse.or(dg.mode_collapse),
    };

    let s = &file.sampler;
    let cfg = &mut spec.cfg;
    cfg.t0 = flags.t0.or(s.t0).unwrap_or(cfg.t0);
    cfg.steps = flags.steps.or(s.steps).unwrap_or(cfg.steps);
    cfg.lambda = flags.lambda.or(s.lambda).unwrap_or(cfg.lambda);
    if let Some(g) = flags.gamma.or(s.gamma) {
        cfg.gamma_mode = g.mode();
    }
    cfg.mcs_weight = flags.mcs_weight.or(s.mcs_weight).unwrap_or(cfg.mcs_weight);
    cfg.cutoff = flags.cutoff.or(s.cutoff).unwrap_or(cfg.cutoff);
    cfg.hfs_reuse_injection_noise =
        flags.hfs_reuse_injection_noise || s.hfs_reuse_injection_noise.unwrap_or(false);
    if let Some(shift) = flags.schedule_shift.or(s.schedule_shift) {
        cfg.schedule = NoiseSchedule::shifted(shift).map_err(|e| usage(e.to_string()))?;
    }
    let method = flags.method.or(s.method).unwrap_or(cfg.method);
    cfg.method = method;

    let e = &file.experiment;
    if let Some(m) = flags.methods.clone().or_else(|| e.methods.clone()) {
        spec.methods = m;
    }
    let base_seed = resolve_seed(flags.seed, e.seed)?;
    cfg.seed = base_seed;
    let count = flags.seeds.or(e.seeds).unwrap_or(spec.seeds.len() as u64);
    if count == 0 {
        bail!(usage("seeds must be at least 1"));
    }
    let end = base_seed
        .checked_add(count)
        .ok_or_else(|| usage("seed range overflows u64"))?;
    spec.seeds = (base_seed..end).collect();
    spec.particles = flags.particles.or(e.particles).unwrap_or(spec.particles);
    spec.n_proj = flags.projections.or(e.projections).unwrap_or(spec.n_proj);
    if let Some(mask) = flags.mask.clone().or_else(|| e.mask.clone()) {
        spec.mask = Tensor::from_vec(mask)?;
    }

    spec.validate().map_err(|e| usage(e.to_string()))?;
    if let Some(k) = spec.degradation.mode_collapse {
        if k >= spec.target.components().len() {
            bail!(usage(format!(
                "mode_collapse = {k} but the target has {} components",
                spec.target.components().len()
            )));
        }
    }
    Ok(Resolved {
        spec,
        method,
        base_seed,
        t0_values: e.t0_values.clone(),
    })
}
