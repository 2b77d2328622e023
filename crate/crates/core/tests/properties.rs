use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rksindy::baseline::{estimate_derivatives, stlsq, DerivativeMethod};
use rksindy::benchmarks::Benchmark;
use rksindy::preprocess::{
    add_gaussian_noise, denormalize_model, normalize_model, savgol_derivative, savgol_filter, NormalizationRecord,
};
use rksindy::regression::{data_loss, LossConfig, OptimizerConfig, TrainingData};
use rksindy::rk4::rk4_step;
use rksindy::sparsify::{degree_assessment, fixed_cutoff_discover, iterative_cutoff_discover};
use rksindy::trajectory::{simulate_reference, uniform_times};
use rksindy::{CoefficientMatrix, Dictionary, ModelForm, ModelPart, Tolerance, Trajectory, TrajectorySet};

fn binomial(n: u64, k: u64) -> u64 {
    (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
}

fn lsq_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn rk4_local_error_has_order_five() {
    // x' = x^2 has the flow x0 / (1 - x0 t).
    let field = |_t: f64, x: &[f64], dx: &mut [f64]| dx[0] = x[0] * x[0];
    let x0 = 0.5;
    let hs = [0.1, 0.05, 0.025, 0.0125];
    let errs: Vec<f64> = hs
        .iter()
        .map(|&h| (rk4_step(&field, &[x0], h).unwrap()[0] - x0 / (1.0 - x0 * h)).abs())
        .collect();
    let slope = lsq_slope(&hs.map(f64::ln), &errs.iter().map(|e| e.ln()).collect::<Vec<_>>());
    assert!((slope - 5.0).abs() <= 0.3, "slope {slope}");
}

fn damped_pendulum(_t: f64, x: &[f64], dx: &mut [f64]) {
    dx[0] = x[1];
    dx[1] = -x[0].sin() - 0.2 * x[1];
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_backward_composition(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let h = 0.01;
        let f = rk4_step(&damped_pendulum, &[a, b], h).unwrap();
        let back = rk4_step(&damped_pendulum, &f, -h).unwrap();
        prop_assert!((back[0] - a).abs() < 1e-9 && (back[1] - b).abs() < 1e-9);
    }

    #[test]
    fn dictionary_size_is_binomial(q in 1usize..5, d in 1u32..6) {
        let dict = Dictionary::polynomial(q, d, true).unwrap();
        prop_assert_eq!(dict.len() as u64, binomial(q as u64 + d as u64, d as u64));
    }

    #[test]
    fn savgol_reproduces_polynomials(
        half in 2usize..10,
        order_gap in 1usize..4,
        coeffs in prop::collection::vec(-2.0f64..2.0, 6),
        len_extra in 0usize..40,
    ) {
        let window = 2 * half + 1;
        let polyorder = (window - 1).saturating_sub(order_gap).min(5);
        let dt = 0.1;
        let n = window + len_extra;
        let p = |t: f64| coeffs[..=polyorder].iter().rev().fold(0.0, |acc, c| acc * t + c);
        let dp = |t: f64| (1..=polyorder).rev().fold(0.0, |acc, k| acc * t + k as f64 * coeffs[k]);
        let signal: Vec<f64> = (0..n).map(|k| p(k as f64 * dt)).collect();
        let smooth = savgol_filter(&signal, window, polyorder).unwrap();
        let deriv = savgol_derivative(&signal, window, polyorder, dt).unwrap();
        let scale = signal.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            prop_assert!((smooth[k] - signal[k]).abs() <= 1e-8 * scale, "k={} {} vs {}", k, smooth[k], signal[k]);
            let exact = dp(k as f64 * dt);
            prop_assert!((deriv[k] - exact).abs() <= 1e-6 * scale.max(exact.abs()), "k={} {} vs {}", k, deriv[k], exact);
        }
    }

    #[test]
    fn normalization_round_trip(
        shift in prop::collection::vec(-50.0f64..50.0, 3),
        scale in prop::collection::vec(0.01f64..20.0, 3),
        x in prop::collection::vec(-100.0f64..100.0, 3),
    ) {
        let r = NormalizationRecord::custom(shift, scale).unwrap();
        let back = r.invert(&r.apply(&x));
        for (a, b) in back.iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

fn random_plain(rng: &mut ChaCha8Rng, n: usize, degree: u32) -> ModelForm {
    let dict = Dictionary::polynomial(n, degree, true).unwrap();
    let values = DMatrix::from_fn(dict.len(), n, |_, _| rng.random_range(-1.0..1.0));
    ModelForm::from_parts(rksindy::FormKind::Plain, vec![ModelPart::new(dict, CoefficientMatrix::from_values(values)).unwrap()])
        .unwrap()
}

/// Right-hand side in original coordinates implied by a model fitted on
/// `(x - shift) / scale`.
fn implied_rhs(fitted: &ModelForm, r: &NormalizationRecord, x: &[f64]) -> Vec<f64> {
    let z = r.apply(x);
    let mut dz = vec![0.0; x.len()];
    fitted.eval(&z, &[], &mut dz);
    dz.iter().zip(&r.scale).map(|(d, s)| d * s).collect()
}

#[test]
fn denormalized_models_agree_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for form_seed in 0..4 {
        let fitted = random_plain(&mut rng, 2 + form_seed % 2, 3);
        let n = fitted.state_dim();
        let shift: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let scale: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..4.0)).collect();
        let r = NormalizationRecord::custom(shift, scale).unwrap();
        let original = denormalize_model(&fitted, &r).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..6.0)).collect();
            let want = implied_rhs(&fitted, &r, &x);
            let mut got = vec![0.0; n];
            original.eval(&x, &[], &mut got);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
        let again = normalize_model(&original, &r).unwrap();
        for (a, b) in again.pack().iter().zip(fitted.pack()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9);
        }
    }
}

#[test]
fn denormalized_rational_model_agrees() {
    let fitted = Benchmark::Mm.true_model(2).unwrap();
    let r = NormalizationRecord::custom(vec![0.374], vec![0.35]).unwrap();
    let original = denormalize_model(&fitted, &r).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let x = [rng.random_range(0.0..3.0)];
        let want = implied_rhs(&fitted, &r, &x);
        let mut got = [0.0];
        original.eval(&x, &[], &mut got);
        assert!((got[0] - want[0]).abs() <= 1e-9 * want[0].abs().max(1.0));
    }
}

#[test]
fn lorenz_transformed_coefficients() {
    let truth = Benchmark::Lorenz.true_model(2).unwrap();
    let r = NormalizationRecord::custom(vec![0.0, 0.0, 25.0], vec![8.0; 3]).unwrap();
    let t = normalize_model(&truth, &r).unwrap();
    let part = t.parts()[0].1;
    let c = |e: [u32; 3], j: usize| part.coefficients.get(part.dictionary.index_of_monomial(&e).unwrap(), j);
    let expected = [
        ([1, 0, 0], 0, -10.0),
        ([0, 1, 0], 0, 10.0),
        ([1, 0, 0], 1, 3.0),
        ([0, 1, 0], 1, -1.0),
        ([1, 0, 1], 1, -8.0),
        ([0, 0, 0], 2, -25.0 / 3.0),
        ([0, 0, 1], 2, -8.0 / 3.0),
        ([1, 1, 0], 2, 8.0),
    ];
    for (e, j, v) in expected {
        assert_abs_diff_eq!(c(e, j), v, epsilon = 1e-12);
    }
    assert_eq!(t.active_count(), expected.len());
}

#[test]
fn gaussian_noise_has_requested_std() {
    let times = uniform_times(0.0, 9999.0, 1.0);
    let rows: Vec<Vec<f64>> = times.iter().map(|t| vec![t.sin(), t.cos()]).collect();
    let clean = Trajectory::from_rows(times, &rows).unwrap();
    let noisy = add_gaussian_noise(&clean, 0.1, 5).unwrap();
    let d = noisy.states() - clean.states();
    let n = d.len() as f64;
    let mean = d.sum() / n;
    let std = (d.map(|v| (v - mean).powi(2)).sum() / (n - 1.0)).sqrt();
    assert!((std - 0.1).abs() <= 0.003, "std {std}");
}

#[test]
fn mm_training_statistics() {
    let set = Benchmark::Mm.preset().clean_data().unwrap();
    let r = NormalizationRecord::statistical(&set);
    assert!((r.shift[0] / 0.374 - 1.0).abs() < 5e-3, "mean {}", r.shift[0]);
    assert!((r.scale[0] / 0.350 - 1.0).abs() < 5e-3, "std {}", r.scale[0]);
}

fn self_generated(form: &ModelForm, x0: &[f64], dt: f64, t_final: f64) -> TrajectorySet {
    let field = |_t: f64, x: &[f64], dx: &mut [f64]| form.eval(x, &[], dx);
    TrajectorySet::single(simulate_reference(&field, x0, &uniform_times(0.0, t_final, dt), 1).unwrap())
}

#[test]
fn true_model_has_zero_loss_on_self_generated_data() {
    for b in [Benchmark::Linear2d, Benchmark::Cubic2d, Benchmark::Fhn, Benchmark::Mm] {
        let form = b.true_model(3).unwrap();
        let x0: Vec<f64> = b.preset().initial_conditions[0].clone();
        let data = TrainingData::new(&self_generated(&form, &x0, 0.05, 5.0)).unwrap();
        let l = data_loss(&form, &data, &LossConfig::default()).unwrap();
        assert!(l <= 1e-18, "{}: {l:e}", b.name());
    }
}

fn linear_data(dt: f64, t_final: f64) -> TrajectorySet {
    let p = Benchmark::Linear2d.preset();
    let field = |_t: f64, x: &[f64], dx: &mut [f64]| Benchmark::Linear2d.rhs(x, &[], dx);
    TrajectorySet::single(simulate_reference(&field, &p.initial_conditions[0], &uniform_times(0.0, t_final, dt), 100).unwrap())
}

fn named_plain(degree: u32) -> ModelForm {
    let dict = Dictionary::polynomial_named(vec!["x".into(), "y".into()], degree, true).unwrap();
    ModelForm::plain(dict, 2)
}

fn support(form: &ModelForm) -> Vec<(usize, usize)> {
    form.parts()[0].1.coefficients.active_entries()
}

#[test]
fn fixed_cutoff_counts_never_increase_and_removals_are_bounded() {
    let set = rksindy::preprocess::add_gaussian_noise_set(&linear_data(0.1, 10.0), 0.02, 1).unwrap();
    let data = TrainingData::new(&set).unwrap();
    let cfg = LossConfig::default();
    let model = fixed_cutoff_discover(&named_plain(3), &data, &cfg, &OptimizerConfig::default(), 5e-2).unwrap();
    assert!(model.pareto.len() >= 2);
    assert!(model.pareto.len() <= 20 * 2 + 1);
    for w in model.pareto.windows(2) {
        assert!(w[1].nonzero_count < w[0].nonzero_count);
        let mut masked = w[0].snapshot.clone();
        let keep = support(&w[1].snapshot);
        for (d, j) in support(&w[0].snapshot) {
            if !keep.contains(&(d, j)) {
                masked.parts_mut()[0].1.coefficients.deactivate(d, j);
            }
        }
        let removed = data_loss(&masked, &data, &cfg).unwrap() - w[0].loss;
        assert!(w[1].loss <= w[0].loss + 10.0 * removed.max(0.0) + 1e-15);
    }
}

#[test]
fn fixed_cutoff_masks_small_first_solve_entry() {
    // x' = 0.001 + x: the constant falls below the cutoff after the first solve.
    let dict = Dictionary::polynomial(1, 1, true).unwrap();
    let truth = ModelForm::from_parts(
        rksindy::FormKind::Plain,
        vec![ModelPart::new(dict.clone(), CoefficientMatrix::from_values(DMatrix::from_column_slice(2, 1, &[0.001, 1.0]))).unwrap()],
    )
    .unwrap();
    let data = TrainingData::new(&self_generated(&truth, &[0.5], 0.05, 1.0)).unwrap();
    let m = fixed_cutoff_discover(&ModelForm::plain(dict, 1), &data, &LossConfig::default(), &OptimizerConfig::default(), 0.05)
        .unwrap();
    let first = m.pareto[0].snapshot.parts()[0].1.coefficients.get(0, 0);
    assert!((first - 0.001).abs() < 1e-6);
    let part = m.form.parts()[0].1;
    assert!(!part.coefficients.is_active(0, 0));
    assert!((part.coefficients.get(1, 0) - 1.0).abs() < 0.01);
}

#[test]
fn iterative_cutoff_agrees_with_fixed_on_clean_linear_data() {
    let data = TrainingData::new(&linear_data(0.1, 25.0)).unwrap();
    let cfg = LossConfig::default();
    let opt = OptimizerConfig::default();
    let fixed = fixed_cutoff_discover(&named_plain(5), &data, &cfg, &opt, 5e-2).unwrap();
    let iter = iterative_cutoff_discover(&named_plain(5), &data, &cfg, &opt, Tolerance::Absolute(1e-6)).unwrap();
    assert_eq!(support(&fixed.form), support(&iter.form));
    for w in iter.pareto.windows(2) {
        assert!(w[1].nonzero_count < w[0].nonzero_count);
    }
    let sel = iter.selected_index.unwrap();
    for w in iter.pareto[..=sel].windows(2) {
        assert!(w[1].loss >= w[0].loss - 1e-14, "{} then {}", w[0].loss, w[1].loss);
    }
}

#[test]
fn iterative_cutoff_keeps_last_needed_feature() {
    let dict = Dictionary::polynomial(1, 1, false).unwrap();
    let truth = ModelForm::from_parts(
        rksindy::FormKind::Plain,
        vec![ModelPart::new(dict.clone(), CoefficientMatrix::from_values(DMatrix::from_element(1, 1, -1.0))).unwrap()],
    )
    .unwrap();
    let data = TrainingData::new(&self_generated(&truth, &[1.0], 0.1, 3.0)).unwrap();
    let m = iterative_cutoff_discover(
        &ModelForm::plain(dict, 1),
        &data,
        &LossConfig::default(),
        &OptimizerConfig::default(),
        Tolerance::Absolute(1e-8),
    )
    .unwrap();
    assert_eq!(m.pareto.len(), 2);
    assert!(m.pareto[1].loss > 1e-8);
    assert_eq!(m.form.active_count(), 1);
}

#[test]
fn degree_assessment_on_linear_and_zero_data() {
    let names = vec!["x".to_string(), "y".to_string()];
    let cfg = LossConfig::default();
    let opt = OptimizerConfig::default();
    let data = TrainingData::new(&linear_data(0.1, 10.0)).unwrap();
    let rows = degree_assessment(&data, &names, 3, &cfg, &opt).unwrap();
    assert!(rows.iter().all(|(_, l)| *l < 1e-12), "{rows:?}");
    let times = uniform_times(0.0, 5.0, 0.1);
    let zeros = Trajectory::from_rows(times.clone(), &vec![vec![0.0, 0.0]; times.len()]).unwrap();
    let data = TrainingData::new(&TrajectorySet::single(zeros)).unwrap();
    let rows = degree_assessment(&data, &names, 3, &cfg, &opt).unwrap();
    assert!(rows.iter().all(|(_, l)| *l < 1e-20), "{rows:?}");
}

fn baseline_linear(dt: f64, lambda: f64) -> (CoefficientMatrix, Dictionary) {
    let set = linear_data(dt, 25.0);
    let est = estimate_derivatives(&set.trajectories()[0], DerivativeMethod::CentralDifference).unwrap();
    let dict = Dictionary::polynomial_named(vec!["x".into(), "y".into()], 5, true).unwrap();
    let mut phi = vec![0.0; dict.len()];
    let features = DMatrix::from_fn(est.len(), dict.len(), |r, c| {
        dict.eval_into(&[est.states[(r, 0)], est.states[(r, 1)]], &mut phi);
        phi[c]
    });
    let (c, _) = stlsq(&features, &est.values, lambda, 20).unwrap();
    (c, dict)
}

fn linear_error(c: &CoefficientMatrix, dict: &Dictionary) -> f64 {
    let ix = dict.index_of_monomial(&[1, 0]).unwrap();
    let iy = dict.index_of_monomial(&[0, 1]).unwrap();
    let truth = [(ix, 0, -0.1), (iy, 0, 2.0), (ix, 1, -2.0), (iy, 1, -0.1)];
    let mut err: f64 = truth.iter().map(|&(d, j, v)| (c.get(d, j) - v).abs() / v.abs()).fold(0.0, f64::max);
    for (d, j) in c.active_entries() {
        if !truth.iter().any(|&(td, tj, _)| td == d && tj == j) {
            err = err.max(c.get(d, j).abs());
        }
    }
    err
}

#[test]
fn stlsq_on_dense_clean_linear_data() {
    let (c, dict) = baseline_linear(0.01, 0.05);
    assert_eq!(c.active_count(), 4);
    assert!(linear_error(&c, &dict) < 5e-3, "{}", linear_error(&c, &dict));
}

#[test]
fn baseline_error_grows_with_step() {
    let errs: Vec<f64> = [0.01, 0.1, 0.3, 0.5].iter().map(|&dt| {
        let (c, dict) = baseline_linear(dt, 0.05);
        linear_error(&c, &dict)
    }).collect();
    assert!(errs.windows(2).all(|w| w[1] > w[0]), "{errs:?}");
}

#[test]
fn stlsq_active_set_never_grows() {
    let set = rksindy::preprocess::add_gaussian_noise_set(&linear_data(0.05, 10.0), 0.05, 2).unwrap();
    let est = estimate_derivatives(&set.trajectories()[0], DerivativeMethod::CentralDifference).unwrap();
    let dict = Dictionary::polynomial(2, 3, true).unwrap();
    let mut phi = vec![0.0; dict.len()];
    let features = DMatrix::from_fn(est.len(), dict.len(), |r, c| {
        dict.eval_into(&[est.states[(r, 0)], est.states[(r, 1)]], &mut phi);
        phi[c]
    });
    let mut last = usize::MAX;
    for iters in 1..8 {
        let (c, _) = stlsq(&features, &est.values, 0.1, iters).unwrap();
        assert!(c.active_count() <= last);
        last = c.active_count();
    }
}
