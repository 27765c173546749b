use poroforest::ensemble::{fit_random_forest, oob_mse};
use poroforest::tuning::{
    bayes_optimize, expected_improvement, forest_params_from, kfold_cv_loss, kfold_partition,
    objective_gbt, objective_rf, write_trace_jsonl, Dimension, GpKernel, GpSurrogate, Scale,
};
use poroforest::{Dataset, HyperparamPoint, HyperparamSpace, Predictor, Result, Samples};
use proptest::prelude::*;

struct Constant(f64);

impl Predictor for Constant {
    fn predict_row(&self, _: &[f64]) -> f64 {
        self.0
    }
}

fn mean_learner(s: &Samples) -> Result<Constant> {
    Ok(Constant(s.targets().iter().sum::<f64>() / s.len() as f64))
}

#[test]
fn cv_zero_learner_on_zero_targets() {
    let s = Samples::numeric((0..10).map(|i| vec![i as f64]).collect(), vec![0.0; 10]).unwrap();
    assert_eq!(kfold_cv_loss(&s, |_| Ok(Constant(0.0)), 5, 1).unwrap(), 0.0);
}

#[test]
fn leave_one_out_of_two() {
    let s = Samples::numeric(vec![vec![0.0], vec![1.0]], vec![0.0, 2.0]).unwrap();
    assert_eq!(kfold_cv_loss(&s, mean_learner, 2, 9).unwrap(), 4.0);
}

#[test]
fn objective_rf_equals_external_refit() {
    let s = Dataset::embedded().to_samples();
    let point = HyperparamPoint::new(&[("min_leaf", 4.0), ("features_per_split", 5.0)]);
    let a = objective_rf(&s, &point, 13).unwrap();
    let b = objective_rf(&s, &point, 13).unwrap();
    assert_eq!(a, b);
    let model = fit_random_forest(&s, &forest_params_from(&point).unwrap(), 13).unwrap();
    assert_eq!(a, oob_mse(&model, &s).unwrap());
}

#[test]
fn objective_rf_rejects_out_of_space_points() {
    let s = Dataset::embedded().to_samples();
    let point = HyperparamPoint::new(&[("min_leaf", 4.0), ("features_per_split", 9.0)]);
    assert!(objective_rf(&s, &point, 1).is_err());
    let point = HyperparamPoint::new(&[("min_leaf", 2.5), ("features_per_split", 3.0)]);
    assert!(objective_rf(&s, &point, 1).is_err());
}

#[test]
fn objective_gbt_is_log_of_cv_loss() {
    let s = Dataset::embedded().training_part().to_samples();
    let point = HyperparamPoint::new(&[
        ("n_trees", 30.0),
        ("learning_rate", 0.2),
        ("max_splits", 4.0),
        ("min_leaf", 2.0),
    ]);
    let got = objective_gbt(&s, &point, 3).unwrap();
    let params = poroforest::tuning::boost_params_from(&point).unwrap();
    let loss = kfold_cv_loss(&s, |t| poroforest::ensemble::fit_lsboost(t, &params, 3), 10, 3).unwrap();
    assert_eq!(got, loss.ln_1p());
    assert!(((std::f64::consts::E - 1.0).ln_1p() - 1.0).abs() < 1e-15);
}

/// Posterior mean and variance by explicit Gaussian conditioning, solving the
/// 3x3 system with Cramer's rule.
fn conditioned(xs: [f64; 3], ys: [f64; 3], l: f64, sv: f64, noise: f64, mu: f64, q: f64) -> (f64, f64) {
    let k = |a: f64, b: f64| sv * (-0.5 * ((a - b) / l).powi(2)).exp();
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = k(xs[i], xs[j]) + if i == j { noise } else { 0.0 };
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let solve = |rhs: [f64; 3]| {
        let d = det(&m);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let mut mc = m;
            for r in 0..3 {
                mc[r][c] = rhs[r];
            }
            out[c] = det(&mc) / d;
        }
        out
    };
    let ks = [k(xs[0], q), k(xs[1], q), k(xs[2], q)];
    let a = solve([ys[0] - mu, ys[1] - mu, ys[2] - mu]);
    let v = solve(ks);
    let mean = mu + (0..3).map(|i| ks[i] * a[i]).sum::<f64>();
    let var = sv - (0..3).map(|i| ks[i] * v[i]).sum::<f64>();
    (mean, var)
}

#[test]
fn gp_three_point_posterior_matches_closed_form() {
    let xs = [0.1, 0.45, 0.8];
    let ys = [1.0, -0.5, 2.0];
    let kernel = GpKernel { length_scales: vec![0.25], signal_variance: 1.7, noise: 1e-4 };
    let gp = GpSurrogate::new(xs.iter().map(|x| vec![*x]).collect(), ys.to_vec(), kernel, 0.3).unwrap();
    for q in [0.0, 0.1, 0.3, 0.62, 0.99] {
        let (m, s) = gp.posterior(&[q]);
        let (em, ev) = conditioned(xs, ys, 0.25, 1.7, 1e-4, 0.3, q);
        assert!((m - em).abs() < 1e-9, "{q}: {m} vs {em}");
        assert!((s * s - ev).abs() < 1e-9, "{q}: {} vs {ev}", s * s);
    }
}

#[test]
fn gp_interpolates_and_reverts_to_prior() {
    let kernel = GpKernel { length_scales: vec![0.1], signal_variance: 2.0, noise: 1e-12 };
    let gp = GpSurrogate::new(vec![vec![0.2], vec![0.4]], vec![3.0, 5.0], kernel, 1.0).unwrap();
    let (m, s) = gp.posterior(&[0.2]);
    assert!((m - 3.0).abs() < 1e-6 && s < 1e-4);
    let (m, s) = gp.posterior(&[50.0]);
    assert!((m - 1.0).abs() < 1e-12);
    assert!((s - 2f64.sqrt()).abs() < 1e-12);
    // Observed point worse than the incumbent: no improvement left.
    assert!(gp.expected_improvement(&[0.4], 3.0) < 1e-6);
}

#[test]
fn expected_improvement_closed_forms() {
    assert_eq!(expected_improvement(5.0, 0.0, 4.0), 0.0);
    assert_eq!(expected_improvement(4.0, 0.0, 4.0), 0.0);
    assert_eq!(expected_improvement(2.0, 0.0, 4.0), 2.0);
    let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    assert!((expected_improvement(1.0, 1.0, 1.0) - phi0).abs() < 1e-15);
}

fn unit_line() -> HyperparamSpace {
    HyperparamSpace::new(vec![Dimension::continuous("x", 0.0, 1.0, Scale::Linear)]).unwrap()
}

#[test]
fn bo_finds_quadratic_minimum() {
    // Dense-grid oracle for the true minimizer.
    let grid_best = (0..=10_000)
        .map(|i| i as f64 / 10_000.0)
        .min_by(|a, b| (a - 0.3).powi(2).total_cmp(&(b - 0.3).powi(2)))
        .unwrap();
    let mut hits = 0;
    for seed in 0..10 {
        let r = bayes_optimize(&unit_line(), |p| Ok((p.get("x").unwrap() - 0.3).powi(2)), 30, seed).unwrap();
        assert_eq!(r.trace.len(), 30);
        if (r.best.get("x").unwrap() - grid_best).abs() <= 0.05 {
            hits += 1;
        }
    }
    assert!(hits >= 9, "{hits}/10");
}

#[test]
fn bo_constant_and_single_budget() {
    let r = bayes_optimize(&unit_line(), |_| Ok(2.5), 8, 1).unwrap();
    assert_eq!(r.best_value, 2.5);
    let r = bayes_optimize(&unit_line(), |p| Ok(p.get("x").unwrap()), 1, 1).unwrap();
    assert_eq!(r.trace.len(), 1);
    assert_eq!(r.best, r.trace[0].point);
}

#[test]
fn bo_records_failures_as_infinite() {
    let r = bayes_optimize(
        &unit_line(),
        |p| {
            let x = p.get("x").unwrap();
            if x > 0.5 { Err(poroforest::Error::Numerical("boom".into())) } else { Ok(x) }
        },
        12,
        4,
    )
    .unwrap();
    assert!(r.best_value.is_finite());
    let mut buf = Vec::new();
    write_trace_jsonl(&r.trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    for (line, e) in text.lines().zip(&r.trace) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["objective"].is_null(), e.objective.is_infinite());
    }
}

#[test]
fn bo_stops_when_integer_space_is_exhausted() {
    let space = HyperparamSpace::new(vec![Dimension::integer("k", 1, 4)]).unwrap();
    let r = bayes_optimize(&space, |p| Ok(p.get("k").unwrap()), 30, 0).unwrap();
    assert_eq!(r.trace.len(), 4);
    assert_eq!(r.best.get("k"), Some(1.0));
}

#[test]
fn bo_best_non_increasing_in_budget() {
    let space = HyperparamSpace::boosting();
    let f = |p: &HyperparamPoint| {
        Ok((p.get("learning_rate").unwrap().ln() + 2.0).powi(2) + (p.get("max_splits").unwrap() - 7.0).abs())
    };
    let mut last = f64::INFINITY;
    for budget in [5, 8, 12, 16, 20] {
        let r = bayes_optimize(&space, f, budget, 21).unwrap();
        assert!(r.best_value <= last);
        last = r.best_value;
        for e in &r.trace {
            space.check(&e.point).unwrap();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn folds_partition_indices(n in 2usize..200, k in 2usize..20, seed in any::<u64>()) {
        let k = k.min(n);
        let folds = kfold_partition(n, k, seed).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn ei_is_non_negative(mean in -10.0f64..10.0, std in 0.0f64..5.0, f_min in -10.0f64..10.0) {
        prop_assert!(expected_improvement(mean, std, f_min) >= 0.0);
    }

    #[test]
    fn ei_on_observed_points_above_incumbent_vanishes(x in 0.0f64..1.0, y in 0.1f64..5.0) {
        let kernel = GpKernel { length_scales: vec![0.3], signal_variance: 1.0, noise: 1e-12 };
        let gp = GpSurrogate::new(vec![vec![x]], vec![y], kernel, 0.0).unwrap();
        prop_assert!(gp.expected_improvement(&[x], y - 0.1) < 1e-6);
    }
}
