//! Rectified-flow sampling on toy distributions: analytic and learned
//! velocity fields, deterministic and stochastic restoration samplers,
//! baseline editors, view-time schedules and distributional metrics.

pub mod checks;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod field;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod spectral;
pub mod tensor;

pub use error::{FlowError, Result};
pub use estimators::{guidance_step, interpolate_step, posterior_mean, posterior_noise, PosteriorPair};
pub use experiment::{
    noise_floor, run_restoration_experiment, t0_sweep, write_csv, Degradation, ExperimentSpec,
    ReportRow,
};
pub use field::{
    eval_field, AnalyticGaussianField, AnalyticGmmField, DataSampler, GaussianSpec, GmmSpec,
    MlpField, NoiseSchedule, ScoreField, TrainConfig, VelocityField,
};
pub use metrics::{empirical_moments, masked_mse, sliced_wasserstein};
pub use rng::SeededRng;
pub use sampler::{restore, GammaMode, Method, SamplerConfig};
pub use schedule::{coverage_stats, ScheduleConfig, ScheduleMode, TrajectorySpec};
pub use spectral::{frequency_filter, FilterMode};
pub use tensor::Tensor;
