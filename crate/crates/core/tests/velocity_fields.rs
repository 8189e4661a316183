use flowlab_core::field::{
    eval_field, fm_loss, mc_oracle_velocity, AnalyticGaussianField, AnalyticGmmField, FmBatch,
    GaussianSpec, GmmSpec, KernelEstimator, McEstimate, McOracle, MlpField, NoiseSchedule,
    TrainConfig, VelocityField,
};
use flowlab_core::{FlowError, SeededRng, Tensor};

fn point(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec()).unwrap()
}

fn within_three_stderr(analytic: &Tensor, est: &McEstimate) {
    let err = analytic.sub(&est.mean).unwrap().norm();
    assert!(
        err <= 3.0 * est.stderr_norm(),
        "analytic {:?}, oracle {:?} +- {}",
        analytic.data(),
        est.mean.data(),
        est.stderr_norm()
    );
}

#[test]
fn locally_constant_fit_is_biased_where_local_linear_is_not() {
    let spec = GaussianSpec::standard(1).unwrap();
    let oracle = McOracle::simulate(&spec, 0.75, 400_000, &mut SeededRng::new(6, 0), NoiseSchedule::linear()).unwrap();
    let ll = oracle.query(&[1.0]).unwrap();
    let nw = oracle.with_estimator(KernelEstimator::NadarayaWatson).query(&[1.0]).unwrap();
    assert!((ll.mean.data()[0] - 0.8).abs() <= 3.0 * ll.stderr.data()[0]);
    // Smoothing shrinks the slope by s^2 / (s^2 + h^2) = 1 / 1.04.
    assert!((nw.mean.data()[0] - 0.8).abs() > 3.0 * nw.stderr.data()[0]);
}

#[test]
fn standard_normal_closed_form_agrees_with_oracle() {
    let spec = GaussianSpec::standard(1).unwrap();
    let x = point(&[1.0]);
    let v = eval_field(&AnalyticGaussianField::new(spec.clone()), &x, 0.75).unwrap();
    // (2t - 1) x / ((1 - t)^2 + t^2) at t = 0.75.
    assert!((v.data()[0] - 0.8).abs() < 1e-12);
    let est = mc_oracle_velocity(&spec, &x, 0.75, 200_000, None, &mut SeededRng::new(1, 0)).unwrap();
    within_three_stderr(&v, &est);
}

#[test]
fn symmetric_point_has_zero_velocity() {
    let spec = GaussianSpec::standard(2).unwrap();
    let x = point(&[0.0, 0.0]);
    let v = eval_field(&AnalyticGaussianField::new(spec.clone()), &x, 0.5).unwrap();
    assert!(v.max_abs() < 1e-15);
    let est = mc_oracle_velocity(&spec, &x, 0.5, 100_000, None, &mut SeededRng::new(2, 0)).unwrap();
    within_three_stderr(&v, &est);
}

#[test]
fn shifted_gaussian_at_marginal_mean_agrees_with_oracle() {
    let spec = GaussianSpec::isotropic(&[3.0], 1.0).unwrap();
    let t = 0.3;
    let x = point(&[3.0 * (1.0 - t)]);
    let field = AnalyticGaussianField::new(spec.clone());
    let v = eval_field(&field, &x, t).unwrap();
    // At the marginal mean only the mean contributes: v = -mu.
    assert!((v.data()[0] + 3.0).abs() < 1e-12);
    let est = mc_oracle_velocity(&spec, &x, t, 200_000, None, &mut SeededRng::new(3, 0)).unwrap();
    within_three_stderr(&v, &est);
}

#[test]
fn mixture_agrees_with_oracle_at_a_mode() {
    let spec = GmmSpec::symmetric_pair(&[2.0, 0.0], 0.3).unwrap();
    let x = point(&[2.0, 0.0]);
    let v = eval_field(&AnalyticGmmField::new(spec.clone()), &x, 0.5).unwrap();
    let est = mc_oracle_velocity(&spec, &x, 0.5, 200_000, None, &mut SeededRng::new(4, 0)).unwrap();
    within_three_stderr(&v, &est);
}

#[test]
fn narrow_kernel_with_few_pairs_is_rejected() {
    let spec = GaussianSpec::standard(1).unwrap();
    let err = mc_oracle_velocity(&spec, &point(&[0.3]), 0.5, 1000, Some(1e-6), &mut SeededRng::new(0, 0))
        .unwrap_err();
    assert!(matches!(err, FlowError::InsufficientData { .. }), "{err}");
    assert!(mc_oracle_velocity(&spec, &point(&[0.3]), 0.5, 999, None, &mut SeededRng::new(0, 0)).is_err());
}

#[test]
fn optimal_field_has_lower_loss_than_a_perturbed_copy() {
    let spec = GmmSpec::symmetric_pair(&[1.5, -0.5], 0.4).unwrap();
    let field = AnalyticGmmField::new(spec.clone());
    let perturbed = flowlab_core::field::FnField::new(2, |x: &[f64], t, out: &mut [f64]| {
        AnalyticGmmField::new(GmmSpec::symmetric_pair(&[1.5, -0.5], 0.4).unwrap())
            .velocity_into(x, t, out)
            .unwrap();
        for (o, v) in out.iter_mut().zip(x) {
            *o += 0.1 * v;
        }
    });
    let batch = FmBatch::draw(&spec, 20_000, &mut SeededRng::new(9, 0)).unwrap();
    let best = fm_loss(&field, &batch).unwrap();
    let worse = fm_loss(&perturbed, &batch).unwrap();
    assert!(best < worse, "{best} vs {worse}");
}

#[test]
fn dispatch_matches_direct_evaluation() {
    let g = GaussianSpec::isotropic(&[0.5, -1.0], 0.7).unwrap();
    let mix = GmmSpec::symmetric_pair(&[2.0, 0.0], 0.3).unwrap();
    let mlp = MlpField::init(2, 8, &mut SeededRng::new(0, 0)).unwrap();
    let fields: Vec<Box<dyn VelocityField>> = vec![
        Box::new(AnalyticGaussianField::new(g)),
        Box::new(AnalyticGmmField::new(mix)),
        Box::new(mlp),
    ];
    let x = SeededRng::new(5, 0).sample_standard_normal(&[7, 2]).unwrap();
    for f in &fields {
        let batch = eval_field(f.as_ref(), &x, 0.4).unwrap();
        assert_eq!(batch.shape(), &[7, 2]);
        for (i, row) in x.rows().enumerate() {
            let mut out = [0.0; 2];
            f.velocity_into(row, 0.4, &mut out).unwrap();
            for (a, b) in out.iter().zip(batch.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(eval_field(f.as_ref(), &Tensor::zeros(&[3]).unwrap(), 0.4).is_err());
    }
}

#[test]
fn schedule_endpoints() {
    let s = NoiseSchedule::linear();
    assert_eq!(s.sigma(0.0).unwrap(), 0.0);
    assert_eq!(s.sigma(1.0).unwrap(), 1.0);
    assert_eq!(s.sigma(0.6).unwrap(), 0.6);
    assert!(s.sigma(1.1).is_err());
    let shifted = NoiseSchedule::shifted(3.0).unwrap();
    assert_eq!(shifted.sigma(0.0).unwrap(), 0.0);
    assert_eq!(shifted.sigma(1.0).unwrap(), 1.0);
    assert!(shifted.sigma(0.3).unwrap() > 0.3);
}

#[test]
fn mlp_gradient_matches_central_differences() {
    let spec = GaussianSpec::standard(2).unwrap();
    let mut rng = SeededRng::new(17, 0);
    let field = MlpField::init(2, 64, &mut rng).unwrap();
    let batch = FmBatch::draw(&spec, 32, &mut rng).unwrap();
    let (_, grad) = field.loss_and_grad(&batch, NoiseSchedule::linear()).unwrap();
    let n = field.params().len();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let i = rng.uniform_index(n);
        let mut plus = field.clone();
        plus.params_mut()[i] += h;
        let mut minus = field.clone();
        minus.params_mut()[i] -= h;
        let fd = (fm_loss(&plus, &batch).unwrap() - fm_loss(&minus, &batch).unwrap()) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn short_training_reduces_loss_and_round_trips_through_a_file() {
    let spec = GaussianSpec::standard(2).unwrap();
    let cfg = TrainConfig {
        steps: 300,
        batch: 128,
        hidden: 32,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut losses = Vec::new();
    let field = flowlab_core::field::mlp::train_mlp_field_with(&spec, &cfg, |_, l| losses.push(l)).unwrap();
    let eval = FmBatch::draw(&spec, 4000, &mut SeededRng::new(99, 0)).unwrap();
    let init = MlpField::init(2, 32, &mut SeededRng::new(4, 0).split(0)).unwrap();
    assert!(fm_loss(&field, &eval).unwrap() < fm_loss(&init, &eval).unwrap());
    assert_eq!(losses.len(), 300);

    let path = std::env::temp_dir().join(format!("flowlab-field-{}.flf", std::process::id()));
    field.save(&path).unwrap();
    let loaded = MlpField::load(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(loaded, field);
}
