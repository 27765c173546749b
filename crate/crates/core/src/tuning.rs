//! Hyperparameter search: k-fold cross-validation, the forest and boosting
//! objectives, and Bayesian optimization with a Gaussian-process surrogate and
//! expected-improvement acquisition.

use std::io::Write;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::ensemble::{fit_lsboost, fit_random_forest, oob_mse, BoostParams, ForestParams};
use crate::error::{Error, Result};
use crate::samples::{Predictor, Samples};

/// Hold-out folds for k-fold CV: indices shuffled with `seed`, then dealt
/// round-robin. Each fold is sorted.
pub fn kfold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::param(format!("k = {k} folds needs 2 <= k <= n = {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (pos, i) in idx.into_iter().enumerate() {
        folds[pos % k].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Mean over folds of the hold-out MSE of models fitted on the other folds.
pub fn kfold_cv_loss<M, F>(train: &Samples, learner: F, k: usize, seed: u64) -> Result<f64>
where
    M: Predictor,
    F: Fn(&Samples) -> Result<M> + Sync,
{
    let folds = kfold_partition(train.len(), k, seed)?;
    let losses: Vec<f64> = folds
        .par_iter()
        .map(|hold| {
            let keep: Vec<usize> = (0..train.len())
                .filter(|i| hold.binary_search(i).is_err())
                .collect();
            let model = learner(&train.subset(&keep))?;
            Ok(hold
                .iter()
                .map(|&i| (train.target(i) - model.predict_row(train.row(i))).powi(2))
                .sum::<f64>()
                / hold.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Integer,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub kind: ParamKind,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
}

impl Dimension {
    pub fn integer(name: &str, lower: i64, upper: i64) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Integer,
            lower: lower as f64,
            upper: upper as f64,
            scale: Scale::Linear,
        }
    }

    pub fn continuous(name: &str, lower: f64, upper: f64, scale: Scale) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Continuous,
            lower,
            upper,
            scale,
        }
    }

    /// Value for a unit-box coordinate; integers are rounded.
    fn value_at(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let v = match self.scale {
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log => (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp(),
        };
        let v = v.clamp(self.lower, self.upper);
        match self.kind {
            ParamKind::Integer => v.round(),
            ParamKind::Continuous => v,
        }
    }

    fn to_unit(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.lower) / (self.upper - self.lower),
            Scale::Log => (v.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln()),
        }
    }

    fn contains(&self, v: f64) -> bool {
        v >= self.lower
            && v <= self.upper
            && (self.kind == ParamKind::Continuous || v.fract() == 0.0)
    }
}

/// Box of hyperparameters searched by [`bayes_optimize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSpace {
    pub dims: Vec<Dimension>,
}

impl HyperparamSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::param("empty search space"));
        }
        for d in &dims {
            if !(d.lower.is_finite() && d.upper.is_finite() && d.lower < d.upper) {
                return Err(Error::param(format!("bad bounds for `{}`", d.name)));
            }
            if d.scale == Scale::Log && d.lower <= 0.0 {
                return Err(Error::param(format!("log-scaled `{}` needs a positive lower bound", d.name)));
            }
            if d.kind == ParamKind::Integer && (d.lower.fract() != 0.0 || d.upper.fract() != 0.0) {
                return Err(Error::param(format!("integer `{}` needs integral bounds", d.name)));
            }
        }
        Ok(Self { dims })
    }

    /// Random forest: leaf size in [1, 20], predictors per split in [1, 8].
    pub fn forest() -> Self {
        Self {
            dims: vec![
                Dimension::integer("min_leaf", 1, 20),
                Dimension::integer("features_per_split", 1, 8),
            ],
        }
    }

    /// Boosting: trees in [10, 500], learning rate in [0.001, 1] (log),
    /// splits in [1, 20], leaf size in [1, 90].
    pub fn boosting() -> Self {
        Self {
            dims: vec![
                Dimension::integer("n_trees", 10, 500),
                Dimension::continuous("learning_rate", 0.001, 1.0, Scale::Log),
                Dimension::integer("max_splits", 1, 20),
                Dimension::integer("min_leaf", 1, 90),
            ],
        }
    }

    pub fn n_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn point_from_unit(&self, u: &[f64]) -> HyperparamPoint {
        HyperparamPoint {
            entries: self
                .dims
                .iter()
                .zip(u)
                .map(|(d, &x)| (d.name.clone(), d.value_at(x)))
                .collect(),
        }
    }

    pub fn to_unit(&self, point: &HyperparamPoint) -> Result<Vec<f64>> {
        self.check(point)?;
        Ok(self
            .dims
            .iter()
            .zip(&point.entries)
            .map(|(d, (_, v))| d.to_unit(*v))
            .collect())
    }

    /// Every parameter present, in order, within bounds and integral where
    /// required.
    pub fn check(&self, point: &HyperparamPoint) -> Result<()> {
        if point.entries.len() != self.dims.len() {
            return Err(Error::param(format!(
                "point has {} parameters, space has {}",
                point.entries.len(),
                self.dims.len()
            )));
        }
        for (d, (name, v)) in self.dims.iter().zip(&point.entries) {
            if &d.name != name {
                return Err(Error::param(format!("expected `{}`, found `{name}`", d.name)));
            }
            if !d.contains(*v) {
                return Err(Error::param(format!(
                    "{name} = {v} outside [{}, {}]{}",
                    d.lower,
                    d.upper,
                    if d.kind == ParamKind::Integer { " or not integral" } else { "" }
                )));
            }
        }
        Ok(())
    }
}

/// One concrete configuration, parameters in space order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamPoint {
    pub entries: Vec<(String, f64)>,
}

impl HyperparamPoint {
    pub fn new(entries: &[(&str, f64)]) -> Self {
        Self {
            entries: entries.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    fn require(&self, name: &str) -> Result<f64> {
        self.get(name)
            .ok_or_else(|| Error::param(format!("missing hyperparameter `{name}`")))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map = self
            .entries
            .iter()
            .map(|(n, v)| (n.clone(), serde_json::json!(v)))
            .collect();
        serde_json::Value::Object(map)
    }
}

/// Number of trees of every tuned forest.
pub const FOREST_TREES: usize = 300;

/// Folds used by the boosting objective.
pub const BOOSTING_FOLDS: usize = 10;

pub fn forest_params_from(point: &HyperparamPoint) -> Result<ForestParams> {
    HyperparamSpace::forest().check(point)?;
    Ok(ForestParams {
        n_trees: FOREST_TREES,
        min_leaf: point.require("min_leaf")? as usize,
        features_per_split: point.require("features_per_split")? as usize,
        max_splits: None,
    })
}

pub fn boost_params_from(point: &HyperparamPoint) -> Result<BoostParams> {
    HyperparamSpace::boosting().check(point)?;
    Ok(BoostParams {
        n_trees: point.require("n_trees")? as usize,
        learning_rate: point.require("learning_rate")?,
        max_splits: point.require("max_splits")? as usize,
        min_leaf: point.require("min_leaf")? as usize,
    })
}

/// `ln(1 + 10-fold CV MSE)` of least-squares boosting.
pub fn objective_gbt(train: &Samples, point: &HyperparamPoint, seed: u64) -> Result<f64> {
    objective_gbt_folds(train, point, BOOSTING_FOLDS, seed)
}

/// `ln(1 + k-fold CV MSE)` of least-squares boosting.
pub fn objective_gbt_folds(train: &Samples, point: &HyperparamPoint, k: usize, seed: u64) -> Result<f64> {
    let params = boost_params_from(point)?;
    let loss = kfold_cv_loss(train, |s| fit_lsboost(s, &params, seed), k, seed)?;
    Ok(loss.ln_1p())
}

/// Out-of-bag MSE of a 300-tree forest.
pub fn objective_rf(train: &Samples, point: &HyperparamPoint, seed: u64) -> Result<f64> {
    let params = forest_params_from(point)?;
    let model = fit_random_forest(train, &params, seed)?;
    oob_mse(&model, train)
}

/// Squared-exponential kernel settings on the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct GpKernel {
    pub length_scales: Vec<f64>,
    pub signal_variance: f64,
    /// Diagonal jitter added to the kernel matrix.
    pub noise: f64,
}

impl GpKernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.length_scales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }
}

/// Default length scale on the unit box.
pub const DEFAULT_LENGTH_SCALE: f64 = 0.3;
/// Initial diagonal jitter, relative to the signal variance.
pub const DEFAULT_JITTER: f64 = 1e-6;
const JITTER_ESCALATIONS: usize = 6;
const HYPER_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Gaussian-process posterior over an objective observed at unit-box points.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    kernel: GpKernel,
    prior_mean: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GpSurrogate {
    /// Conditions a GP with the given kernel and constant prior mean. The
    /// jitter is multiplied by 10 on each failed factorization.
    pub fn new(points: Vec<Vec<f64>>, values: Vec<f64>, kernel: GpKernel, prior_mean: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("surrogate needs at least one observation".into()));
        }
        if points.len() != values.len() {
            return Err(Error::SizeMismatch("points and values differ in length".into()));
        }
        let n = points.len();
        let mut kernel = kernel;
        for _ in 0..=JITTER_ESCALATIONS {
            let k = DMatrix::from_fn(n, n, |i, j| {
                kernel.eval(&points[i], &points[j]) + if i == j { kernel.noise } else { 0.0 }
            });
            if let Some(chol) = Cholesky::new(k) {
                let centered = DVector::from_iterator(n, values.iter().map(|v| v - prior_mean));
                let alpha = chol.solve(&centered);
                return Ok(Self {
                    points,
                    values,
                    kernel,
                    prior_mean,
                    chol,
                    alpha,
                });
            }
            kernel.noise = if kernel.noise > 0.0 { kernel.noise * 10.0 } else { 1e-12 };
        }
        Err(Error::Numerical("kernel matrix is not positive definite after jitter escalation".into()))
    }

    /// Picks signal variance and a shared length-scale multiplier by log
    /// marginal likelihood over a small multiplicative grid.
    pub fn fit(points: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("surrogate needs at least one observation".into()));
        }
        let d = points[0].len();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let base_var = if var > 0.0 { var } else { 1.0 };
        let mut best: Option<(f64, GpSurrogate)> = None;
        for ls in HYPER_GRID {
            for sv in HYPER_GRID {
                let kernel = GpKernel {
                    length_scales: vec![DEFAULT_LENGTH_SCALE * ls; d],
                    signal_variance: base_var * sv,
                    noise: DEFAULT_JITTER * base_var * sv,
                };
                let Ok(gp) = GpSurrogate::new(points.clone(), values.clone(), kernel, mean) else {
                    continue;
                };
                let lml = gp.log_marginal_likelihood();
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((lml, gp));
                }
            }
        }
        best.map(|(_, gp)| gp)
            .ok_or_else(|| Error::Numerical("no kernel setting gave a positive definite matrix".into()))
    }

    pub fn kernel(&self) -> &GpKernel {
        &self.kernel
    }

    pub fn n_observations(&self) -> usize {
        self.values.len()
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.values.len() as f64;
        let centered = DVector::from_iterator(
            self.values.len(),
            self.values.iter().map(|v| v - self.prior_mean),
        );
        let log_det: f64 = self.chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * centered.dot(&self.alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Posterior mean and standard deviation at a unit-box query.
    pub fn posterior(&self, query: &[f64]) -> (f64, f64) {
        let k_star = DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| self.kernel.eval(p, query)),
        );
        let mean = self.prior_mean + k_star.dot(&self.alpha);
        let v = self.chol.solve(&k_star);
        let var = self.kernel.signal_variance - k_star.dot(&v);
        (mean, var.max(0.0).sqrt())
    }

    pub fn expected_improvement(&self, query: &[f64], f_min: f64) -> f64 {
        let (mean, std) = self.posterior(query);
        expected_improvement(mean, std, f_min)
    }
}

/// `E[max(f_min - f, 0)]` for `f ~ N(mean, std²)`.
pub fn expected_improvement(mean: f64, std: f64, f_min: f64) -> f64 {
    let gain = f_min - mean;
    if std <= 0.0 {
        return gain.max(0.0);
    }
    let z = gain / std;
    let normal = Normal::standard();
    (gain * normal.cdf(z) + std * normal.pdf(z)).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesOptions {
    pub n_init: usize,
    pub n_candidates: usize,
    pub n_local: usize,
    pub local_radius: f64,
}

impl Default for BayesOptions {
    fn default() -> Self {
        Self {
            n_init: 5,
            n_candidates: 2000,
            n_local: 200,
            local_radius: 0.05,
        }
    }
}

/// Default evaluation budget.
pub const DEFAULT_BUDGET: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub iteration: usize,
    pub point: HyperparamPoint,
    /// `+inf` for failed evaluations.
    pub objective: f64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: HyperparamPoint,
    pub best_value: f64,
    pub trace: Vec<Evaluation>,
    pub budget_used: usize,
}

impl TuneResult {
    /// Best objective after each evaluation.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.trace
            .iter()
            .map(|e| {
                best = best.min(e.objective);
                best
            })
            .collect()
    }
}

/// Minimizes `objective` over `space` with at most `budget` evaluations.
pub fn bayes_optimize<F>(space: &HyperparamSpace, objective: F, budget: usize, seed: u64) -> Result<TuneResult>
where
    F: FnMut(&HyperparamPoint) -> Result<f64>,
{
    bayes_optimize_with(space, objective, budget, seed, &BayesOptions::default())
}

pub fn bayes_optimize_with<F>(
    space: &HyperparamSpace,
    mut objective: F,
    budget: usize,
    seed: u64,
    options: &BayesOptions,
) -> Result<TuneResult>
where
    F: FnMut(&HyperparamPoint) -> Result<f64>,
{
    if budget < 1 {
        return Err(Error::param("budget must be >= 1"));
    }
    let d = space.n_dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace: Vec<Evaluation> = Vec::with_capacity(budget);
    let mut seen: Vec<Vec<f64>> = Vec::new();

    let mut evaluate = |point: HyperparamPoint, trace: &mut Vec<Evaluation>, seen: &mut Vec<Vec<f64>>| {
        let start = Instant::now();
        let value = objective(&point).unwrap_or(f64::INFINITY);
        let value = if value.is_nan() { f64::INFINITY } else { value };
        seen.push(point.entries.iter().map(|e| e.1).collect());
        trace.push(Evaluation {
            iteration: trace.len() + 1,
            point,
            objective: value,
            elapsed_ms: start.elapsed().as_millis() as u64,
        });
    };
    let is_seen = |seen: &[Vec<f64>], p: &HyperparamPoint| {
        seen.iter()
            .any(|s| s.iter().zip(&p.entries).all(|(a, (_, b))| a == b))
    };

    // Stratified uniform initial design.
    let n_init = options.n_init.clamp(1, budget);
    let strata: Vec<Vec<usize>> = (0..d)
        .map(|_| {
            let mut s: Vec<usize> = (0..n_init).collect();
            s.shuffle(&mut rng);
            s
        })
        .collect();
    for k in 0..n_init {
        let u: Vec<f64> = (0..d)
            .map(|j| (strata[j][k] as f64 + rng.random::<f64>()) / n_init as f64)
            .collect();
        let mut point = space.point_from_unit(&u);
        for _ in 0..100 {
            if !is_seen(&seen, &point) {
                break;
            }
            let u: Vec<f64> = (0..d).map(|_| rng.random()).collect();
            point = space.point_from_unit(&u);
        }
        if is_seen(&seen, &point) {
            break;
        }
        evaluate(point, &mut trace, &mut seen);
    }

    while trace.len() < budget {
        let finite: Vec<&Evaluation> = trace.iter().filter(|e| e.objective.is_finite()).collect();
        let surrogate = if finite.is_empty() {
            None
        } else {
            let x = finite
                .iter()
                .map(|e| space.to_unit(&e.point))
                .collect::<Result<Vec<_>>>()?;
            let y = finite.iter().map(|e| e.objective).collect();
            Some(GpSurrogate::fit(x, y)?)
        };

        let mut candidates: Vec<Vec<f64>> = (0..options.n_candidates)
            .map(|_| (0..d).map(|_| rng.random::<f64>()).collect())
            .collect();
        let incumbent = trace
            .iter()
            .filter(|e| e.objective.is_finite())
            .min_by(|a, b| a.objective.total_cmp(&b.objective));
        if let Some(inc) = incumbent {
            let center = space.to_unit(&inc.point)?;
            for _ in 0..options.n_local {
                candidates.push(
                    center
                        .iter()
                        .map(|c| (c + options.local_radius * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0))
                        .collect(),
                );
            }
        }

        let next = match (&surrogate, incumbent) {
            (Some(gp), Some(inc)) => {
                let f_min = inc.objective;
                let mut scored: Vec<(f64, usize, HyperparamPoint)> = candidates
                    .iter()
                    .enumerate()
                    .map(|(i, u)| {
                        let point = space.point_from_unit(u);
                        let snapped = space.to_unit(&point).expect("snapped point is in range");
                        (gp.expected_improvement(&snapped, f_min), i, point)
                    })
                    .collect();
                scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                scored.into_iter().map(|s| s.2).find(|p| !is_seen(&seen, p))
            }
            _ => candidates
                .iter()
                .map(|u| space.point_from_unit(u))
                .find(|p| !is_seen(&seen, p)),
        };
        let Some(point) = next else {
            // Every candidate was already evaluated: the grid is exhausted.
            break;
        };
        evaluate(point, &mut trace, &mut seen);
    }

    let best = trace
        .iter()
        .filter(|e| e.objective.is_finite())
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.iteration.cmp(&b.iteration)))
        .ok_or_else(|| Error::Numerical("every objective evaluation failed".into()))?;
    Ok(TuneResult {
        best: best.point.clone(),
        best_value: best.objective,
        budget_used: trace.len(),
        trace,
    })
}

/// Writes one JSON object per evaluation:
/// `{"iteration", "point", "objective", "elapsed_ms"}`. Failed evaluations
/// carry `"objective": null`.
pub fn write_trace_jsonl<W: Write>(trace: &[Evaluation], mut out: W) -> Result<()> {
    for e in trace {
        let line = serde_json::json!({
            "iteration": e.iteration,
            "point": e.point.to_json(),
            "objective": if e.objective.is_finite() { serde_json::json!(e.objective) } else { serde_json::Value::Null },
            "elapsed_ms": e.elapsed_ms,
        });
        writeln!(out, "{line}").map_err(|source| Error::Io {
            path: "<trace>".into(),
            source,
        })?;
    }
    Ok(())
}
