//! Prediction accuracy: RMSE, MAPE (percent) and R².

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub rmse: f64,
    /// Mean absolute percentage error as a percentage (5.77 means 5.77 %).
    pub mape: f64,
    pub r2: f64,
    pub m: usize,
}

/// Same statistics with the undefined ones left out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartialReport {
    pub rmse: f64,
    pub mape: Option<f64>,
    pub r2: Option<f64>,
    pub m: usize,
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    Ok((sse / actual.len() as f64).sqrt())
}

pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    if actual.contains(&0.0) {
        return Err(Error::Numerical("MAPE is undefined when an actual value is 0".into()));
    }
    let total: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| ((a - p) / a).abs())
        .sum();
    Ok(total / actual.len() as f64 * 100.0)
}

/// Coefficient of determination against the mean of `actual`.
pub fn r2(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual, predicted)?;
    if actual.len() < 2 {
        return Err(Error::Numerical("R² needs at least two observations".into()));
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Numerical("R² is undefined for constant actual values".into()));
    }
    let ss_res: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn evaluate(actual: &[f64], predicted: &[f64]) -> Result<EvalReport> {
    Ok(EvalReport {
        rmse: rmse(actual, predicted)?,
        mape: mape(actual, predicted)?,
        r2: r2(actual, predicted)?,
        m: actual.len(),
    })
}

pub fn evaluate_partial(actual: &[f64], predicted: &[f64]) -> Result<PartialReport> {
    Ok(PartialReport {
        rmse: rmse(actual, predicted)?,
        mape: mape(actual, predicted).ok(),
        r2: r2(actual, predicted).ok(),
        m: actual.len(),
    })
}

fn check_lengths(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::SizeMismatch(format!(
            "{} actual values vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Empty("no observations to evaluate".into()));
    }
    Ok(())
}
