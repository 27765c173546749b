//! Numeric design matrix shared by the tree learners.
//!
//! Categorical predictors are stored as integral level codes in `0..levels`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical { levels: u32 },
}

impl FeatureKind {
    pub fn is_categorical(self) -> bool {
        matches!(self, FeatureKind::Categorical { .. })
    }
}

/// Row-major predictors plus one response per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
    kinds: Vec<FeatureKind>,
    names: Vec<String>,
}

impl Samples {
    pub fn new(
        rows: Vec<Vec<f64>>,
        targets: Vec<f64>,
        kinds: Vec<FeatureKind>,
        names: Vec<String>,
    ) -> Result<Self> {
        if rows.len() != targets.len() {
            return Err(Error::SizeMismatch(format!(
                "{} rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        if names.len() != kinds.len() {
            return Err(Error::SizeMismatch(format!(
                "{} feature names for {} features",
                names.len(),
                kinds.len()
            )));
        }
        if kinds.is_empty() {
            return Err(Error::Empty("no predictors".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != kinds.len() {
                return Err(Error::SizeMismatch(format!(
                    "row {i} has {} values, expected {}",
                    row.len(),
                    kinds.len()
                )));
            }
            for (j, (&v, kind)) in row.iter().zip(&kinds).enumerate() {
                if !v.is_finite() {
                    return Err(Error::param(format!("row {i} feature {j} is not finite")));
                }
                if let FeatureKind::Categorical { levels } = kind {
                    if v.fract() != 0.0 || v < 0.0 || v >= f64::from(*levels) {
                        return Err(Error::param(format!(
                            "row {i} feature {j}: {v} is not a level code below {levels}"
                        )));
                    }
                }
            }
        }
        if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::param(format!("target {i} is not finite")));
        }
        Ok(Self {
            rows,
            targets,
            kinds,
            names,
        })
    }

    /// All-numeric samples with generated names `x0, x1, ...`.
    pub fn numeric(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(1, Vec::len);
        let names = (0..p).map(|j| format!("x{j}")).collect();
        Self::new(rows, targets, vec![FeatureKind::Numeric; p], names)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.kinds.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn value(&self, i: usize, feature: usize) -> f64 {
        self.rows[i][feature]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn kind(&self, feature: usize) -> FeatureKind {
        self.kinds[feature]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    /// Copy of the selected rows, in the given order (duplicates allowed).
    pub fn subset(&self, indices: &[usize]) -> Samples {
        Samples {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            kinds: self.kinds.clone(),
            names: self.names.clone(),
        }
    }

    /// Same predictors with a replacement response vector.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Samples> {
        if targets.len() != self.len() {
            return Err(Error::SizeMismatch(format!(
                "{} targets for {} rows",
                targets.len(),
                self.len()
            )));
        }
        Ok(Samples {
            rows: self.rows.clone(),
            targets,
            kinds: self.kinds.clone(),
            names: self.names.clone(),
        })
    }

    /// Overwrites one predictor in every row.
    pub fn fill_feature(&mut self, feature: usize, value: f64) {
        for row in &mut self.rows {
            row[feature] = value;
        }
    }
}

/// Mean that does not depend on the order of its inputs.
pub(crate) fn order_free_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Anything that maps one predictor row to a response estimate.
pub trait Predictor {
    fn predict_row(&self, row: &[f64]) -> f64;

    fn predict_samples(&self, samples: &Samples) -> Vec<f64> {
        samples.rows().iter().map(|r| self.predict_row(r)).collect()
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict_row(&self, row: &[f64]) -> f64 {
        (**self).predict_row(row)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict_row(&self, row: &[f64]) -> f64 {
        (**self).predict_row(row)
    }
}
