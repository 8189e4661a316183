//! Acceptance gate. One test per criterion; each prints a single
//! `criterion N: PASS|FAIL ...` line and fails if the criterion does.
//! Tolerances and time limits are pinned here.
//!
//! Tests hold a shared lock so the time limits are measured without
//! competing with the other criteria.

use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use flowlab_core::checks::{check_path_identity, check_step_decomposition};
use flowlab_core::experiment::{summarize, Prepared};
use flowlab_core::field::{
    eval_field, fm_loss, grid_error, train_mlp_field, AnalyticGaussianField, AnalyticGmmField,
    DataSampler, FmBatch, GaussianSpec, GmmSpec, McOracle, MlpField, NoiseSchedule, TrainConfig,
    VelocityField,
};
use flowlab_core::sampler::{langevin_stationarity_run, make_time_grid, step_ode};
use flowlab_core::schedule::{build_schedule, coverage_stats};
use flowlab_core::{
    empirical_moments, noise_floor, restore, run_restoration_experiment, sliced_wasserstein,
    ExperimentSpec, GammaMode, Method, SamplerConfig, ScheduleConfig, ScheduleMode, SeededRng,
    Tensor,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|p| p.into_inner())
}

/// Prints the verdict line and fails the test if the criterion failed.
fn verdict(n: u32, ok: bool, detail: &str, elapsed: Duration, limit: Duration) {
    let in_time = elapsed < limit;
    let pass = ok && in_time;
    println!(
        "criterion {n}: {} {detail} [{:.2}s, limit {}s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(ok, "criterion {n} failed: {detail}");
    assert!(in_time, "criterion {n} exceeded its time limit");
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn max_cov_error(cov: &Tensor, d: usize) -> f64 {
    (0..d * d)
        .map(|i| {
            let target = if i / d == i % d { 1.0 } else { 0.0 };
            (cov.data()[i] - target).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_01_path_identity() {
    let _g = serial();
    let start = Instant::now();
    let r = check_path_identity(1000, &mut SeededRng::new(1, 0)).unwrap();
    let ok = r.cases == 1000 && r.max_error <= 1e-12;
    verdict(1, ok, &format!("max abs error {:.3e} over {} cases (tol 1e-12)", r.max_error, r.cases), start.elapsed(), secs(1));
}

#[test]
fn criterion_02_step_decomposition() {
    let _g = serial();
    let start = Instant::now();
    let r = check_step_decomposition(100, &mut SeededRng::new(2, 0)).unwrap();
    let ok = r.cases == 100 && r.max_error == 0.0;
    verdict(2, ok, &format!("max abs error {:e} over {} cases (bit-exact)", r.max_error, r.cases), start.elapsed(), secs(1));
}

#[test]
fn criterion_03_langevin_stationarity() {
    let _g = serial();
    let start = Instant::now();
    let spec = GaussianSpec::standard(2).unwrap();
    let x = SeededRng::new(3, 0).sample_standard_normal(&[20_000, 2]).unwrap();
    let out = langevin_stationarity_run(&spec, &x, 0.005, 200, &mut SeededRng::new(3, 1)).unwrap();
    let (mean, cov) = empirical_moments(&out).unwrap();
    let m = mean.max_abs();
    let c = max_cov_error(&cov, 2);
    let ok = m < 0.05 && c < 0.08;
    verdict(3, ok, &format!("|mean|inf {m:.4} (< 0.05), max|cov - I| {c:.4} (< 0.08)"), start.elapsed(), secs(10));
}

#[test]
fn criterion_04_ode_transport() {
    let _g = serial();
    let start = Instant::now();
    let spec = GaussianSpec::standard(2).unwrap();
    let field = AnalyticGaussianField::new(spec.clone());
    let n = 10_000;
    let mut x = SeededRng::new(4, 0).sample_standard_normal(&[n, 2]).unwrap();
    let grid = make_time_grid(1.0, 100).unwrap();
    for (t, t_next) in grid.intervals() {
        x = step_ode(&field, &x, t, t_next).unwrap();
    }
    let (_, cov) = empirical_moments(&x).unwrap();
    let c = max_cov_error(&cov, 2);
    let fresh = spec.sample(&mut SeededRng::new(4, 1), n).unwrap();
    let sw = sliced_wasserstein(&x, &fresh, 128, &mut SeededRng::new(4, 2)).unwrap();
    // Self-distance of the target, averaged over independent draw pairs.
    let floor = (0..5)
        .map(|k| {
            let root = SeededRng::new(40 + k, 0);
            let a = spec.sample(&mut root.split(0), n).unwrap();
            let b = spec.sample(&mut root.split(1), n).unwrap();
            sliced_wasserstein(&a, &b, 128, &mut root.split(2)).unwrap()
        })
        .sum::<f64>()
        / 5.0;
    let ok = c <= 0.1 && sw <= 1.5 * floor;
    verdict(
        4,
        ok,
        &format!("max|cov - I| {c:.4} (<= 0.1), sliced W2 {sw:.4} vs 1.5 x floor {:.4}", 1.5 * floor),
        start.elapsed(),
        secs(30),
    );
}

fn mean_floor(target: &GmmSpec, seeds: &[u64]) -> f64 {
    seeds
        .iter()
        .map(|&s| noise_floor(target, 10_000, 128, s).unwrap())
        .sum::<f64>()
        / seeds.len() as f64
}

#[test]
fn criterion_05_stochasticity_ablation() {
    let _g = serial();
    let start = Instant::now();
    let spec = ExperimentSpec {
        methods: vec![Method::Ode, Method::Sde],
        ..ExperimentSpec::two_mode_shift().unwrap()
    };
    assert_eq!(spec.seeds.len(), 10);
    assert_eq!((spec.cfg.t0, spec.cfg.steps), (0.6, 30));
    let summary = summarize(&run_restoration_experiment(&spec).unwrap());
    let ode = summary[0].mean_sliced_w2;
    let sde = summary[1].mean_sliced_w2;
    let floor = mean_floor(&spec.target, &spec.seeds);
    let ok = sde < ode && ode - sde >= 3.0 * floor;
    verdict(
        5,
        ok,
        &format!(
            "mean sliced W2 ode {ode:.4}, sde {sde:.4}; gap {:.4} vs 3 x floor {:.4}",
            ode - sde,
            3.0 * floor
        ),
        start.elapsed(),
        secs(60),
    );
}

#[test]
fn criterion_06_guidance_ablation() {
    let _g = serial();
    let start = Instant::now();
    let base = ExperimentSpec::two_mode_shift().unwrap();
    assert_eq!(base.mask.data(), &[1.0, 0.0]);
    let unobserved: Vec<usize> = (0..2).filter(|&i| base.mask.data()[i] == 0.0).collect();
    let mut mse = [0.0; 2];
    let mut sw = [0.0; 2];
    for (k, lambda) in [0.2, 0.0].into_iter().enumerate() {
        let spec = ExperimentSpec {
            methods: vec![Method::SelfGuidedSde],
            cfg: SamplerConfig { lambda, ..base.cfg.clone() },
            ..base.clone()
        };
        let prepared = Prepared::new(&spec).unwrap();
        for &seed in &spec.seeds {
            let cell = prepared.run_cell(Method::SelfGuidedSde, seed).unwrap();
            let restored = cell.restored.unwrap();
            mse[k] += cell.row.masked_mse;
            let a = restored.select_columns(&unobserved).unwrap();
            let b = cell.reference.select_columns(&unobserved).unwrap();
            sw[k] += sliced_wasserstein(&a, &b, spec.n_proj, &mut SeededRng::new(seed, 0).split(3)).unwrap();
        }
        mse[k] /= spec.seeds.len() as f64;
        sw[k] /= spec.seeds.len() as f64;
    }
    let ok = mse[0] <= mse[1] / 5.0 && sw[0] <= 1.3 * sw[1];
    verdict(
        6,
        ok,
        &format!(
            "masked mse {:.5} (lambda 0.2) vs {:.5} (lambda 0) needs <= 1/5; unmasked sliced W2 {:.4} vs {:.4} needs <= 1.3x",
            mse[0], mse[1], sw[0], sw[1]
        ),
        start.elapsed(),
        secs(60),
    );
}

#[test]
fn criterion_07_t0_sensitivity() {
    let _g = serial();
    let start = Instant::now();
    let base = ExperimentSpec::two_mode_shift().unwrap();
    let t0s = [0.2, 0.4, 0.6, 0.8];
    let mut unguided = Vec::new();
    let mut guided = Vec::new();
    for &t0 in &t0s {
        let spec = ExperimentSpec {
            methods: vec![Method::Sde, Method::SelfGuidedSde],
            cfg: SamplerConfig { t0, ..base.cfg.clone() },
            ..base.clone()
        };
        let summary = summarize(&run_restoration_experiment(&spec).unwrap());
        unguided.push(summary[0].mean_masked_mse);
        guided.push(summary[1].mean_masked_mse);
    }
    let monotone = unguided.windows(2).all(|w| w[1] >= w[0]);
    let ratio = (guided[3] / guided[0]).max(guided[0] / guided[3]);
    let ok = monotone && ratio <= 2.0;
    verdict(
        7,
        ok,
        &format!(
            "unguided masked mse {:?} non-decreasing: {monotone}; guided {:?}, ratio 0.8/0.2 {ratio:.1} (<= 2)",
            unguided.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            guided.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()
        ),
        start.elapsed(),
        secs(180),
    );
}

/// Per-coordinate mean and std of the `x_t` marginal of a mixture.
fn marginal_moments(spec: &GmmSpec, t: f64) -> (Vec<f64>, Vec<f64>) {
    let d = spec.dim();
    let mut mean = vec![0.0; d];
    let mut second = vec![0.0; d];
    for (w, c) in spec.weights().iter().zip(spec.components()) {
        for i in 0..d {
            let m = (1.0 - t) * c.mean()[i];
            let v = (1.0 - t).powi(2) * c.covariance()[(i, i)] + t * t;
            mean[i] += w * m;
            second[i] += w * (v + m * m);
        }
    }
    let std = mean.iter().zip(&second).map(|(m, s)| (s - m * m).sqrt()).collect();
    (mean, std)
}

#[test]
fn criterion_08_oracle_cross_check() {
    let _g = serial();
    let start = Instant::now();
    let gaussian = GmmSpec::single(GaussianSpec::standard(2).unwrap());
    let mixture = GmmSpec::symmetric_pair(&[2.0, 0.0], 0.3).unwrap();
    let offsets = [-1.5, -0.75, 0.0, 0.75, 1.5];
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (name, spec) in [("gaussian", &gaussian), ("mixture", &mixture)] {
        let field = AnalyticGmmField::new(spec.clone());
        for (k, t) in [0.25, 0.5, 0.75].into_iter().enumerate() {
            let oracle =
                McOracle::simulate(spec, t, 100_000, &mut SeededRng::new(8, k as u64), NoiseSchedule::linear()).unwrap();
            let (mean, std) = marginal_moments(spec, t);
            for a in offsets {
                for b in offsets {
                    let x = [mean[0] + a * std[0], mean[1] + b * std[1]];
                    checked += 1;
                    let mut v = [0.0; 2];
                    field.velocity_into(&x, t, &mut v).unwrap();
                    match oracle.query(&x) {
                        Ok(est) => {
                            let err = ((v[0] - est.mean.data()[0]).powi(2) + (v[1] - est.mean.data()[1]).powi(2)).sqrt();
                            let z = err / est.stderr_norm();
                            worst = worst.max(z);
                            if z > 3.0 {
                                failures.push(format!("{name} t={t} x=({:.2},{:.2}) z={z:.2}", x[0], x[1]));
                            }
                        }
                        Err(e) => failures.push(format!("{name} t={t} x=({:.2},{:.2}): {e}", x[0], x[1])),
                    }
                }
            }
        }
    }
    let ok = checked == 150 && failures.is_empty();
    verdict(
        8,
        ok,
        &format!("{checked} grid points, worst |error| / stderr {worst:.2} (<= 3); failures {failures:?}"),
        start.elapsed(),
        secs(60),
    );
}

#[test]
fn criterion_09_trained_field() {
    let _g = serial();
    let start = Instant::now();
    let spec = GaussianSpec::standard(2).unwrap();
    let mut rng = SeededRng::new(9, 0);
    let probe = MlpField::init(2, 64, &mut rng).unwrap();
    let batch = FmBatch::draw(&spec, 64, &mut rng).unwrap();
    let (_, grad) = probe.loss_and_grad(&batch, NoiseSchedule::linear()).unwrap();
    let h = 1e-6;
    let mut fd_err = 0.0f64;
    for _ in 0..20 {
        let i = rng.uniform_index(grad.len());
        let mut p = probe.clone();
        p.params_mut()[i] += h;
        let mut m = probe.clone();
        m.params_mut()[i] -= h;
        let fd = (fm_loss(&p, &batch).unwrap() - fm_loss(&m, &batch).unwrap()) / (2.0 * h);
        fd_err = fd_err.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
    }
    let cfg = TrainConfig { steps: 5000, ..TrainConfig::default() };
    let field = train_mlp_field(&spec, &cfg).unwrap();
    let analytic = AnalyticGaussianField::new(spec);
    let err = grid_error(&field, &analytic, -2.0, 2.0, 10, &[0.25, 0.5, 0.75]).unwrap();
    let ok = fd_err < 1e-4 && err < 0.15;
    verdict(
        9,
        ok,
        &format!("finite-difference relative error {fd_err:.2e} (< 1e-4), grid error {err:.4} (< 0.15)"),
        start.elapsed(),
        secs(180),
    );
}

#[test]
fn criterion_10_posterior_mean_limit() {
    let _g = serial();
    let start = Instant::now();
    let spec = GaussianSpec::standard(2).unwrap();
    let field = AnalyticGaussianField::new(spec.clone());
    let n = 10_000;
    let root = SeededRng::new(10, 0);
    let x0 = spec.sample(&mut root.split(0), n).unwrap();
    let x1 = root.split(1).sample_standard_normal(&[n, 2]).unwrap();
    let gap = |t: f64| {
        let xt = x0.lincomb(1.0 - t, &x1, t).unwrap();
        let v = eval_field(&field, &xt, t).unwrap();
        let x0_hat = xt.lincomb(1.0, &v, -t).unwrap();
        x0.sub(&x0_hat)
            .unwrap()
            .rows()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / n as f64
    };
    let near = gap(0.05);
    let far = gap(0.8);
    let ok = near < 0.1 * far;
    verdict(10, ok, &format!("E|x0 - x0_hat| {near:.4} at t=0.05 vs {far:.4} at t=0.8 (< 10%)"), start.elapsed(), secs(10));
}

#[test]
fn criterion_11_schedule_coverage() {
    let _g = serial();
    let start = Instant::now();
    let stats = |mode| coverage_stats(&build_schedule(&ScheduleConfig::new(mode, 8, 16, 3).unwrap()).unwrap());
    let diag = stats(ScheduleMode::Diagonal);
    let bullet = stats(ScheduleMode::BulletTime);
    let indep = stats(ScheduleMode::IndependentView);
    let ok = diag.frames_total == 48
        && diag.distinct_views == 8
        && diag.distinct_times == 16
        && bullet.distinct_times == 3
        && indep.distinct_views == 3;
    verdict(
        11,
        ok,
        &format!(
            "diagonal {}/{}/{} frames/views/times, bullet_time {} times, independent_view {} views",
            diag.frames_total, diag.distinct_views, diag.distinct_times, bullet.distinct_times, indep.distinct_views
        ),
        start.elapsed(),
        secs(1),
    );
}

fn compare_csv(dir: &std::path::Path, name: &str, workers: &str) -> Vec<u8> {
    let out = dir.join(name);
    let status = Command::new(env!("CARGO_BIN_EXE_flowlab"))
        .args(["compare", "--methods", "ode,sde,self_guided_sde", "--seeds", "10", "--seed", "0", "--workers", workers, "--out"])
        .arg(&out)
        .env_remove("FLOWLAB_SEED")
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(out).unwrap()
}

#[test]
fn criterion_12_reductions_and_cli_determinism() {
    let _g = serial();
    let start = Instant::now();
    let spec = ExperimentSpec::two_mode_shift().unwrap();
    let field = AnalyticGmmField::new(spec.target.clone());
    let y = spec.degradation.apply(&spec.target, &mut SeededRng::new(12, 0), 2000).unwrap();
    let run = |cfg: SamplerConfig| {
        restore(&field, None, &y, Some(&spec.mask), &cfg, &mut SeededRng::new(12, 1)).unwrap().0
    };
    let base = SamplerConfig::default();
    let reference = run(base.clone().with_method(Method::Sdedit));
    let variants = [
        ("self_guided_sde lambda=0 gamma=0", SamplerConfig { lambda: 0.0, gamma_mode: GammaMode::Constant(0.0), ..base.clone().with_method(Method::SelfGuidedSde) }),
        ("mcs w=1", SamplerConfig { mcs_weight: 1.0, ..base.clone().with_method(Method::Mcs) }),
        ("hfs cutoff->1", SamplerConfig { cutoff: 0.999, ..base.clone().with_method(Method::Hfs) }),
        ("nc cutoff->1", SamplerConfig { cutoff: 0.999, ..base.clone().with_method(Method::Nc) }),
        ("ode", base.clone().with_method(Method::Ode)),
    ];
    let mismatched: Vec<&str> = variants
        .iter()
        .filter(|(_, cfg)| {
            let out = run(cfg.clone());
            !out.data().iter().zip(reference.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        })
        .map(|(name, _)| *name)
        .collect();

    let dir = tempfile::tempdir().unwrap();
    let first = compare_csv(dir.path(), "a.csv", "1");
    let second = compare_csv(dir.path(), "b.csv", "1");
    let parallel = compare_csv(dir.path(), "c.csv", "4");
    let identical = first == second && first == parallel;
    let ok = mismatched.is_empty() && identical && !first.is_empty();
    verdict(
        12,
        ok,
        &format!(
            "reduction mismatches {mismatched:?}; compare CSV identical across runs and worker counts: {identical} ({} bytes)",
            first.len()
        ),
        start.elapsed(),
        secs(60),
    );
}
