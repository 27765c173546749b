//! Partial dependence of a fitted model on one or two predictors.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::samples::{order_free_mean, FeatureKind, Predictor, Samples};

/// Number of points in a default numeric grid.
pub const DEFAULT_GRID_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdpCurve {
    pub feature: String,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub n_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdpSurface {
    pub feature_a: String,
    pub feature_b: String,
    pub grid_a: Vec<f64>,
    pub grid_b: Vec<f64>,
    /// `values[i][j]` is the dependence at `(grid_a[i], grid_b[j])`.
    pub values: Vec<Vec<f64>>,
    pub n_records: usize,
}

/// Evenly spaced points over the observed range of a numeric predictor, or
/// every level of a categorical one.
pub fn default_grid(data: &Samples, feature: usize, points: usize) -> Result<Vec<f64>> {
    check_feature(data, feature)?;
    if data.is_empty() {
        return Err(Error::Empty("no records to span a grid".into()));
    }
    if let FeatureKind::Categorical { levels } = data.kind(feature) {
        return Ok((0..levels).map(f64::from).collect());
    }
    let (lo, hi) = (0..data.len())
        .map(|i| data.value(i, feature))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if points < 2 || lo == hi {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|k| if k == points - 1 { hi } else { lo + step * k as f64 })
        .collect())
}

fn check_feature(data: &Samples, feature: usize) -> Result<()> {
    if feature >= data.n_features() {
        return Err(Error::UnknownFeature(format!("#{feature}")));
    }
    Ok(())
}

fn normalize_grid(data: &Samples, feature: usize, grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Empty("partial dependence grid is empty".into()));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("grid values must be finite"));
    }
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    if let FeatureKind::Categorical { levels } = data.kind(feature) {
        if g.iter().any(|&v| v.fract() != 0.0 || v < 0.0 || v >= f64::from(levels)) {
            return Err(Error::param(format!(
                "grid for `{}` must hold level codes below {levels}",
                data.names()[feature]
            )));
        }
    }
    Ok(g)
}

fn clamped_mean<P: Predictor + ?Sized>(model: &P, data: &Samples, fixed: &[(usize, f64)]) -> f64 {
    let preds = data
        .rows()
        .iter()
        .map(|r| {
            let mut row = r.clone();
            for &(f, v) in fixed {
                row[f] = v;
            }
            model.predict_row(&row)
        })
        .collect();
    order_free_mean(preds)
}

/// Mean prediction over `data` with `feature` clamped to each grid value.
pub fn partial_dependence_1d<P: Predictor + Sync + ?Sized>(
    model: &P,
    data: &Samples,
    feature: usize,
    grid: &[f64],
) -> Result<PdpCurve> {
    check_feature(data, feature)?;
    if data.is_empty() {
        return Err(Error::Empty("no records to average over".into()));
    }
    let grid = normalize_grid(data, feature, grid)?;
    let values = grid
        .par_iter()
        .map(|&v| clamped_mean(model, data, &[(feature, v)]))
        .collect();
    Ok(PdpCurve {
        feature: data.names()[feature].clone(),
        grid,
        values,
        n_records: data.len(),
    })
}

/// Mean prediction over `data` with two predictors clamped jointly.
pub fn partial_dependence_2d<P: Predictor + Sync + ?Sized>(
    model: &P,
    data: &Samples,
    feature_a: usize,
    feature_b: usize,
    grid_a: &[f64],
    grid_b: &[f64],
) -> Result<PdpSurface> {
    check_feature(data, feature_a)?;
    check_feature(data, feature_b)?;
    if feature_a == feature_b {
        return Err(Error::param("two-variable partial dependence needs distinct features"));
    }
    if data.is_empty() {
        return Err(Error::Empty("no records to average over".into()));
    }
    let grid_a = normalize_grid(data, feature_a, grid_a)?;
    let grid_b = normalize_grid(data, feature_b, grid_b)?;
    let values = grid_a
        .par_iter()
        .map(|&a| {
            grid_b
                .iter()
                .map(|&b| clamped_mean(model, data, &[(feature_a, a), (feature_b, b)]))
                .collect()
        })
        .collect();
    Ok(PdpSurface {
        feature_a: data.names()[feature_a].clone(),
        feature_b: data.names()[feature_b].clone(),
        grid_a,
        grid_b,
        values,
        n_records: data.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart::RegressionTree;

    fn data() -> Samples {
        Samples::new(
            vec![
                vec![1.0, 0.0, 5.0],
                vec![2.0, 1.0, 3.0],
                vec![4.0, 1.0, 9.0],
            ],
            vec![0.0; 3],
            vec![
                FeatureKind::Numeric,
                FeatureKind::Categorical { levels: 2 },
                FeatureKind::Numeric,
            ],
            vec!["a".into(), "c".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn constant_model_is_flat() {
        let m = RegressionTree::constant(4.5, 1);
        let c = partial_dependence_1d(&m, &data(), 0, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.values, vec![4.5; 3]);
    }

    #[test]
    fn categorical_grid_is_level_set() {
        let g = default_grid(&data(), 1, 50).unwrap();
        assert_eq!(g, vec![0.0, 1.0]);
        let m = RegressionTree::constant(1.0, 1);
        assert_eq!(partial_dependence_1d(&m, &data(), 1, &g).unwrap().values.len(), 2);
        assert!(partial_dependence_1d(&m, &data(), 1, &[2.0]).is_err());
    }

    #[test]
    fn default_numeric_grid_spans_range() {
        let g = default_grid(&data(), 0, DEFAULT_GRID_POINTS).unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[49], 4.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn error_cases() {
        let m = RegressionTree::constant(1.0, 1);
        assert!(matches!(
            partial_dependence_1d(&m, &data(), 7, &[1.0]),
            Err(Error::UnknownFeature(_))
        ));
        assert!(partial_dependence_1d(&m, &data(), 0, &[]).is_err());
        assert!(partial_dependence_2d(&m, &data(), 0, 0, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn pdp_ignores_record_order() {
        let m = |r: &[f64]| r[0] * 0.1 + r[2] * 0.7 + r[1];
        struct F<G>(G);
        impl<G: Fn(&[f64]) -> f64> Predictor for F<G> {
            fn predict_row(&self, row: &[f64]) -> f64 {
                (self.0)(row)
            }
        }
        let d = data();
        let rev = d.subset(&[2, 1, 0]);
        let a = partial_dependence_1d(&F(m), &d, 0, &[0.3, 1.7]).unwrap();
        let b = partial_dependence_1d(&F(m), &rev, 0, &[0.3, 1.7]).unwrap();
        assert_eq!(a.values, b.values);
    }
}
