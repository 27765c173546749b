//! Bagged / random-forest and least-squares boosted tree ensembles.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{fit_tree, fit_tree_all_features, RegressionTree, TreeParams};
use crate::error::{Error, Result};
use crate::samples::{order_free_mean, Predictor, Samples};
use crate::tuning::kfold_partition;

/// Independent random stream for tree `b` of a run seeded with `seed`.
pub fn tree_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// Uniform draw of `n` indices from `0..n` with replacement, sorted.
pub fn bootstrap_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
    /// `None` means `n - 1` for a training set of size `n`.
    pub max_splits: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            min_leaf: 5,
            features_per_split: 3,
            max_splits: None,
        }
    }
}

impl ForestParams {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::param("a forest needs at least one tree"));
        }
        if !(1..=20).contains(&self.min_leaf) {
            return Err(Error::param(format!("forest min_leaf {} outside [1, 20]", self.min_leaf)));
        }
        if self.features_per_split < 1 || self.features_per_split > n_features {
            return Err(Error::param(format!(
                "features_per_split {} outside [1, {n_features}]",
                self.features_per_split
            )));
        }
        Ok(())
    }

    fn tree_params(&self, n: usize) -> TreeParams {
        TreeParams {
            max_splits: self.max_splits.unwrap_or(n.saturating_sub(1)),
            min_leaf: self.min_leaf,
            features_per_split: self.features_per_split,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<RegressionTree>,
    /// Bootstrap sample of each tree as a sorted multiset of training indices.
    pub in_bag: Vec<Vec<usize>>,
    pub params: ForestParams,
    pub seed: u64,
    pub n_train: usize,
}

impl ForestModel {
    /// Assembles a forest from explicit parts.
    pub fn from_parts(
        trees: Vec<RegressionTree>,
        mut in_bag: Vec<Vec<usize>>,
        params: ForestParams,
        seed: u64,
        n_train: usize,
    ) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Empty("forest without trees".into()));
        }
        if trees.len() != in_bag.len() {
            return Err(Error::SizeMismatch(format!(
                "{} trees but {} bootstrap samples",
                trees.len(),
                in_bag.len()
            )));
        }
        for bag in &mut in_bag {
            if bag.iter().any(|&i| i >= n_train) {
                return Err(Error::param("bootstrap index beyond training size"));
            }
            bag.sort_unstable();
        }
        Ok(Self {
            trees,
            in_bag,
            params,
            seed,
            n_train,
        })
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn is_out_of_bag(&self, tree: usize, i: usize) -> bool {
        self.in_bag[tree].binary_search(&i).is_err()
    }

    /// Distinct training indices missing from the bootstrap sample of `tree`.
    pub fn out_of_bag(&self, tree: usize) -> Vec<usize> {
        (0..self.n_train).filter(|&i| self.is_out_of_bag(tree, i)).collect()
    }

    /// Unweighted mean of all tree predictions.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(row)).collect();
        order_free_mean(preds)
    }

    fn check_train(&self, train: &Samples) -> Result<()> {
        if train.len() != self.n_train {
            return Err(Error::SizeMismatch(format!(
                "model was fitted on {} observations, got {}",
                self.n_train,
                train.len()
            )));
        }
        Ok(())
    }
}

impl Predictor for ForestModel {
    fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict(row)
    }
}

/// Random forest: bootstrap replicas plus a random predictor subset per node.
pub fn fit_random_forest(train: &Samples, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    if train.is_empty() {
        return Err(Error::Empty("cannot fit a forest on zero observations".into()));
    }
    params.validate(train.n_features())?;
    let n = train.len();
    let tree_params = params.tree_params(n);
    let fitted: Vec<(RegressionTree, Vec<usize>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = tree_rng(seed, b);
            let bag = bootstrap_indices(n, &mut rng);
            fit_tree(train, &bag, &tree_params, &mut rng).map(|t| (t, bag))
        })
        .collect::<Result<_>>()?;
    let (trees, in_bag) = fitted.into_iter().unzip();
    Ok(ForestModel {
        trees,
        in_bag,
        params: *params,
        seed,
        n_train: n,
    })
}

/// Plain bagging: bootstrap replicas, every predictor considered at every node.
pub fn fit_bagging(
    train: &Samples,
    n_trees: usize,
    min_leaf: usize,
    max_splits: Option<usize>,
    seed: u64,
) -> Result<ForestModel> {
    let params = ForestParams {
        n_trees,
        min_leaf,
        features_per_split: train.n_features(),
        max_splits,
    };
    if train.is_empty() {
        return Err(Error::Empty("cannot fit a forest on zero observations".into()));
    }
    params.validate(train.n_features())?;
    let n = train.len();
    let max_splits = max_splits.unwrap_or(n - 1);
    let fitted: Vec<(RegressionTree, Vec<usize>)> = (0..n_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = tree_rng(seed, b);
            let bag = bootstrap_indices(n, &mut rng);
            fit_tree_all_features(train, &bag, max_splits, min_leaf).map(|t| (t, bag))
        })
        .collect::<Result<_>>()?;
    let (trees, in_bag) = fitted.into_iter().unzip();
    Ok(ForestModel {
        trees,
        in_bag,
        params,
        seed,
        n_train: n,
    })
}

/// Per-observation mean over the trees for which it is out of bag; `None`
/// when it is in every bootstrap sample.
pub fn oob_predictions(model: &ForestModel, train: &Samples) -> Result<Vec<Option<f64>>> {
    model.check_train(train)?;
    Ok((0..train.len())
        .map(|i| {
            let row = train.row(i);
            let (sum, count) = (0..model.n_trees())
                .filter(|&b| model.is_out_of_bag(b, i))
                .fold((0.0, 0usize), |(s, c), b| (s + model.trees[b].predict(row), c + 1));
            (count > 0).then(|| sum / count as f64)
        })
        .collect())
}

/// Mean squared error of the averaged out-of-bag predictions over every
/// observation that is out of bag for at least one tree.
pub fn oob_mse(model: &ForestModel, train: &Samples) -> Result<f64> {
    let preds = oob_predictions(model, train)?;
    let (sum, count) = preds
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| (train.target(i) - p).powi(2)))
        .fold((0.0, 0usize), |(s, c), e| (s + e, c + 1));
    if count == 0 {
        return Err(Error::Empty("no observation is out of bag for any tree".into()));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_splits: usize,
    pub min_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            learning_rate: 0.1,
            max_splits: 10,
            min_leaf: 5,
        }
    }
}

impl BoostParams {
    /// Checks the tuning ranges: trees in [10, 500], learning rate in
    /// [0.001, 1], max splits in [1, 20], min leaf in [1, 90].
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        if !(10..=500).contains(&self.n_trees) {
            return Err(Error::param(format!("n_trees {} outside [10, 500]", self.n_trees)));
        }
        if !(0.001..=1.0).contains(&self.learning_rate) {
            return Err(Error::param(format!(
                "learning_rate {} outside [0.001, 1]",
                self.learning_rate
            )));
        }
        if !(1..=20).contains(&self.max_splits) {
            return Err(Error::param(format!("max_splits {} outside [1, 20]", self.max_splits)));
        }
        if !(1..=90).contains(&self.min_leaf) {
            return Err(Error::param(format!("min_leaf {} outside [1, 90]", self.min_leaf)));
        }
        Ok(())
    }

    /// Minimal well-formedness: at least one tree, learning rate in (0, 1],
    /// min leaf at least 1.
    pub fn validate_structure(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::param("boosting needs at least one tree"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::param(format!("learning_rate {} outside (0, 1]", self.learning_rate)));
        }
        if self.min_leaf < 1 {
            return Err(Error::param("min_leaf must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub params: BoostParams,
    pub seed: u64,
}

impl BoostedModel {
    /// Shrunken sum of tree outputs, starting from zero.
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(0.0, |acc, t| acc + self.learning_rate * t.predict(row))
    }

    /// Predictions after each of the first `trees.len()` rounds.
    pub fn staged_predict(&self, row: &[f64]) -> Vec<f64> {
        let mut acc = 0.0;
        self.trees
            .iter()
            .map(|t| {
                acc += self.learning_rate * t.predict(row);
                acc
            })
            .collect()
    }
}

impl Predictor for BoostedModel {
    fn predict_row(&self, row: &[f64]) -> f64 {
        self.predict(row)
    }
}

/// Least-squares boosting with parameters restricted to the tuning ranges.
pub fn fit_lsboost(train: &Samples, params: &BoostParams, seed: u64) -> Result<BoostedModel> {
    params.validate()?;
    fit_lsboost_unbounded(train, params, seed).map(|(m, _)| m)
}

/// Least-squares boosting with only structural parameter checks.
///
/// Returns the model and the fitted training values after every round.
pub fn fit_lsboost_unbounded(
    train: &Samples,
    params: &BoostParams,
    seed: u64,
) -> Result<(BoostedModel, Vec<Vec<f64>>)> {
    params.validate_structure()?;
    if train.is_empty() {
        return Err(Error::Empty("cannot boost on zero observations".into()));
    }
    let n = train.len();
    let all: Vec<usize> = (0..n).collect();
    let mut residual = train.targets().to_vec();
    let mut fitted = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut stages = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let stage = train.with_targets(residual.clone())?;
        let tree = fit_tree_all_features(&stage, &all, params.max_splits, params.min_leaf)?;
        for i in 0..n {
            let step = params.learning_rate * tree.predict(train.row(i));
            fitted[i] += step;
            residual[i] -= step;
        }
        trees.push(tree);
        stages.push(fitted.clone());
    }
    Ok((
        BoostedModel {
            trees,
            learning_rate: params.learning_rate,
            params: *params,
            seed,
        },
        stages,
    ))
}

/// One point of an error-versus-ensemble-size curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub n_trees: usize,
    pub train_mse: f64,
    /// Out-of-bag MSE for forests, k-fold CV MSE for boosting.
    pub validation_mse: Option<f64>,
    pub test_mse: Option<f64>,
}

fn mse(actual: &[f64], predicted: &[f64]) -> f64 {
    actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p).powi(2))
        .sum::<f64>()
        / actual.len() as f64
}

/// Training, out-of-bag and optional test MSE of the first `b` trees, for
/// every `b` in `1..=B`.
pub fn forest_error_trace(
    model: &ForestModel,
    train: &Samples,
    test: Option<&Samples>,
) -> Result<Vec<TracePoint>> {
    model.check_train(train)?;
    let n = train.len();
    let mut train_sum = vec![0.0; n];
    let mut oob_sum = vec![0.0; n];
    let mut oob_count = vec![0usize; n];
    let mut test_sum = test.map(|t| vec![0.0; t.len()]);
    let mut out = Vec::with_capacity(model.n_trees());
    for (b, tree) in model.trees.iter().enumerate() {
        for i in 0..n {
            let p = tree.predict(train.row(i));
            train_sum[i] += p;
            if model.is_out_of_bag(b, i) {
                oob_sum[i] += p;
                oob_count[i] += 1;
            }
        }
        let k = (b + 1) as f64;
        let train_pred: Vec<f64> = train_sum.iter().map(|s| s / k).collect();
        let (sq, m) = (0..n)
            .filter(|&i| oob_count[i] > 0)
            .fold((0.0, 0usize), |(s, c), i| {
                (s + (train.target(i) - oob_sum[i] / oob_count[i] as f64).powi(2), c + 1)
            });
        let test_mse = match (test, test_sum.as_mut()) {
            (Some(t), Some(sums)) => {
                for (j, s) in sums.iter_mut().enumerate() {
                    *s += tree.predict(t.row(j));
                }
                let pred: Vec<f64> = sums.iter().map(|s| s / k).collect();
                Some(mse(t.targets(), &pred))
            }
            _ => None,
        };
        out.push(TracePoint {
            n_trees: b + 1,
            train_mse: mse(train.targets(), &train_pred),
            validation_mse: (m > 0).then(|| sq / m as f64),
            test_mse,
        });
    }
    Ok(out)
}

/// Training, k-fold CV and optional test MSE of boosting after every round.
pub fn boosting_error_trace(
    train: &Samples,
    params: &BoostParams,
    k: usize,
    seed: u64,
    test: Option<&Samples>,
) -> Result<Vec<TracePoint>> {
    let (model, stages) = fit_lsboost_unbounded(train, params, seed)?;
    let folds = kfold_partition(train.len(), k, seed)?;
    let fold_curves: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|hold| {
            let keep: Vec<usize> = (0..train.len()).filter(|i| !hold.contains(i)).collect();
            let (m, _) = fit_lsboost_unbounded(&train.subset(&keep), params, seed)?;
            let staged: Vec<Vec<f64>> = hold.iter().map(|&i| m.staged_predict(train.row(i))).collect();
            Ok((0..params.n_trees)
                .map(|b| {
                    hold.iter()
                        .zip(&staged)
                        .map(|(&i, s)| (train.target(i) - s[b]).powi(2))
                        .sum::<f64>()
                        / hold.len() as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let test_staged: Option<Vec<Vec<f64>>> =
        test.map(|t| t.rows().iter().map(|r| model.staged_predict(r)).collect());
    Ok((0..params.n_trees)
        .map(|b| TracePoint {
            n_trees: b + 1,
            train_mse: mse(train.targets(), &stages[b]),
            validation_mse: Some(fold_curves.iter().map(|c| c[b]).sum::<f64>() / k as f64),
            test_mse: match (test, &test_staged) {
                (Some(t), Some(staged)) => {
                    let pred: Vec<f64> = staged.iter().map(|s| s[b]).collect();
                    Some(mse(t.targets(), &pred))
                }
                _ => None,
            },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceEntry {
    pub feature: String,
    /// Mean over trees of the OOB error increase after permutation.
    pub mean_delta: f64,
    /// Sample standard deviation of that increase over trees.
    pub std_delta: f64,
    /// `mean_delta / std_delta`, or 0 when the deviation is 0.
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceReport {
    pub entries: Vec<ImportanceEntry>,
    pub trees_used: usize,
}

/// Out-of-bag permuted predictor importance.
///
/// For each tree, every predictor is permuted among that tree's OOB rows and
/// the increase of the tree's OOB MSE is recorded (averaged over `n_repeats`
/// permutations). Trees without OOB rows are skipped.
pub fn permutation_importance(
    model: &ForestModel,
    train: &Samples,
    n_repeats: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if model.n_trees() < 2 {
        return Err(Error::param("permutation importance needs at least two trees"));
    }
    if n_repeats < 1 {
        return Err(Error::param("n_repeats must be >= 1"));
    }
    model.check_train(train)?;
    let p = train.n_features();
    let deltas: Vec<Option<Vec<f64>>> = (0..model.n_trees())
        .into_par_iter()
        .map(|b| {
            let oob = model.out_of_bag(b);
            if oob.is_empty() {
                return None;
            }
            let tree = &model.trees[b];
            let mut rng = tree_rng(seed, b);
            let oob_error = |rows: &[Vec<f64>]| -> f64 {
                rows.iter()
                    .zip(&oob)
                    .map(|(r, &i)| (train.target(i) - tree.predict(r)).powi(2))
                    .sum::<f64>()
                    / oob.len() as f64
            };
            let mut rows: Vec<Vec<f64>> = oob.iter().map(|&i| train.row(i).to_vec()).collect();
            let base = oob_error(&rows);
            let mut out = vec![0.0; p];
            for (j, delta) in out.iter_mut().enumerate() {
                let original: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                for _ in 0..n_repeats {
                    let mut permuted = original.clone();
                    permuted.shuffle(&mut rng);
                    for (r, v) in rows.iter_mut().zip(&permuted) {
                        r[j] = *v;
                    }
                    *delta += (oob_error(&rows) - base) / n_repeats as f64;
                }
                for (r, v) in rows.iter_mut().zip(&original) {
                    r[j] = *v;
                }
            }
            Some(out)
        })
        .collect();
    let used: Vec<Vec<f64>> = deltas.into_iter().flatten().collect();
    if used.len() < 2 {
        return Err(Error::Empty(format!(
            "{} tree(s) with out-of-bag observations; need at least two",
            used.len()
        )));
    }
    let m = used.len() as f64;
    let entries = (0..p)
        .map(|j| {
            let mean = used.iter().map(|d| d[j]).sum::<f64>() / m;
            let var = used.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let std = var.sqrt();
            ImportanceEntry {
                feature: train.names()[j].clone(),
                mean_delta: mean,
                std_delta: std,
                importance: if std > 0.0 { mean / std } else { 0.0 },
            }
        })
        .collect();
    Ok(ImportanceReport {
        entries,
        trees_used: used.len(),
    })
}
