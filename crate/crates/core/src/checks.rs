//! Built-in self-test of the algebraic identities the samplers rely on.

use crate::estimators::{posterior_mean, posterior_noise, PosteriorPair};
use crate::error::Result;
use crate::field::FnField;
use crate::rng::SeededRng;
use crate::sampler::{prop3_decomposition, step_sde_with};
use crate::spectral::{frequency_filter, FilterMode};
use crate::tensor::Tensor;

pub const PATH_IDENTITY_TOL: f64 = 1e-12;
pub const FILTER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    /// Largest absolute deviation seen.
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

fn random_tensor(rng: &mut SeededRng, len: usize, scale: f64) -> Result<Tensor> {
    Tensor::from_vec((0..len).map(|_| uniform(rng, -scale, scale)).collect())
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Posterior mean and noise re-interpolated at `sigma_t` give back `x_t`.
pub fn check_path_identity(cases: usize, rng: &mut SeededRng) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let d = 1 + rng.uniform_index(8);
        let x = random_tensor(rng, d, 10.0)?;
        let v = random_tensor(rng, d, 10.0)?;
        let sigma = rng.uniform();
        let pair = PosteriorPair {
            x0_hat: posterior_mean(&x, &v, sigma)?,
            x1_hat: posterior_noise(&x, &v, sigma)?,
            t: sigma,
            sigma_t: sigma,
        };
        worst = worst.max(max_diff(&pair.interpolate(sigma)?, &x));
    }
    Ok(CheckResult {
        name: "path identity",
        cases,
        max_error: worst,
        tolerance: PATH_IDENTITY_TOL,
    })
}

/// A stochastic step agrees bit-for-bit with drift + diffusion built from
/// the same posterior pair and noise.
pub fn check_step_decomposition(cases: usize, rng: &mut SeededRng) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let d = 1 + rng.uniform_index(6);
        let (a, b) = (uniform(rng, -2.0, 2.0), uniform(rng, -1.0, 1.0));
        let field = FnField::new(d, move |x: &[f64], t, out: &mut [f64]| {
            for (o, v) in out.iter_mut().zip(x) {
                *o = a * v * t + b * v.sin();
            }
        });
        let x = random_tensor(rng, d, 3.0)?;
        let eps = rng.sample_standard_normal(&[d])?;
        let t = uniform(rng, 0.05, 1.0);
        let t_next = t * rng.uniform();
        let gamma = rng.uniform();

        let stepped = step_sde_with(&field, &x, t, t_next, gamma, &eps)?;
        let v = crate::field::eval_field(&field, &x, t)?;
        let x0 = posterior_mean(&x, &v, t)?;
        let x1 = posterior_noise(&x, &v, t)?;
        let dec = prop3_decomposition(&x0, &x1, &eps, t_next, gamma)?;
        if stepped != dec.x_next {
            worst = worst.max(max_diff(&stepped, &dec.x_next)).max(f64::MIN_POSITIVE);
        }
    }
    Ok(CheckResult {
        name: "step decomposition",
        cases,
        max_error: worst,
        tolerance: 0.0,
    })
}

/// `low + high` reproduces the input for random 1-D and 2-D signals.
pub fn check_filter_complementarity(cases: usize, rng: &mut SeededRng) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for i in 0..cases {
        let shape = if i % 2 == 0 {
            vec![1 + rng.uniform_index(64)]
        } else {
            vec![1 + rng.uniform_index(16), 1 + rng.uniform_index(16)]
        };
        let n = shape.iter().product();
        let s = Tensor::new(shape, random_tensor(rng, n, 5.0)?.into_data())?;
        let cutoff = uniform(rng, 0.01, 0.99);
        let low = frequency_filter(&s, cutoff, FilterMode::Low)?;
        let high = frequency_filter(&s, cutoff, FilterMode::High)?;
        worst = worst.max(max_diff(&low.add(&high)?, &s));
    }
    Ok(CheckResult {
        name: "filter complementarity",
        cases,
        max_error: worst,
        tolerance: FILTER_TOL,
    })
}

/// All three identity checks with their default case counts.
pub fn identity_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let root = SeededRng::new(seed, 0);
    Ok(vec![
        check_path_identity(1000, &mut root.split(0))?,
        check_step_decomposition(100, &mut root.split(1))?,
        check_filter_complementarity(200, &mut root.split(2))?,
    ])
}
