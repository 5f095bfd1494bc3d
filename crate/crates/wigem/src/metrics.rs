//! Shared error statistics: RMSE, MAE, ME, SD of errors, R².
//!
//! Errors follow the `actual - prediction` sign convention throughout; the
//! same convention is printed in report headers. `sd_e` uses the n-1
//! divisor, and R² is `1 - SS_res / SS_tot` (not squared correlation).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction and actual vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("error statistics require at least one observation")]
    Empty,
}

/// Summary error statistics for one prediction vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub rmse: f64,
    pub mae: f64,
    /// Mean of (actual - prediction).
    pub me: f64,
    /// Sample standard deviation of (actual - prediction), n-1 divisor.
    pub sd_e: f64,
    /// `None` when the actuals have zero variance.
    pub r2: Option<f64>,
    pub n: usize,
}

pub fn error_report(predictions: &[f64], actuals: &[f64]) -> Result<ErrorReport, MetricsError> {
    if predictions.len() != actuals.len() {
        return Err(MetricsError::LengthMismatch(predictions.len(), actuals.len()));
    }
    let n = predictions.len();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let nf = n as f64;

    let mut sum_sq = 0.0;
    let mut sum_abs = 0.0;
    let mut sum_err = 0.0;
    for (p, a) in predictions.iter().zip(actuals) {
        let e = a - p;
        sum_sq += e * e;
        sum_abs += e.abs();
        sum_err += e;
    }
    let me = sum_err / nf;
    let sd_e = if n > 1 {
        let ss: f64 = predictions
            .iter()
            .zip(actuals)
            .map(|(p, a)| {
                let d = (a - p) - me;
                d * d
            })
            .sum();
        (ss / (nf - 1.0)).sqrt()
    } else {
        0.0
    };

    let mean_actual = actuals.iter().sum::<f64>() / nf;
    let ss_tot: f64 = actuals.iter().map(|a| (a - mean_actual) * (a - mean_actual)).sum();
    let r2 = if ss_tot > 0.0 { Some(1.0 - sum_sq / ss_tot) } else { None };

    Ok(ErrorReport {
        rmse: (sum_sq / nf).sqrt(),
        mae: sum_abs / nf,
        me,
        sd_e,
        r2,
        n,
    })
}

/// Root mean square error of `predictions` against `actuals`.
pub fn rmse(predictions: &[f64], actuals: &[f64]) -> f64 {
    assert_eq!(predictions.len(), actuals.len());
    assert!(!predictions.is_empty());
    let sum_sq: f64 = predictions
        .iter()
        .zip(actuals)
        .map(|(p, a)| (a - p) * (a - p))
        .sum();
    (sum_sq / predictions.len() as f64).sqrt()
}

/// Mean absolute error of `predictions` against `actuals`.
pub fn mae(predictions: &[f64], actuals: &[f64]) -> f64 {
    assert_eq!(predictions.len(), actuals.len());
    assert!(!predictions.is_empty());
    let sum_abs: f64 = predictions.iter().zip(actuals).map(|(p, a)| (a - p).abs()).sum();
    sum_abs / predictions.len() as f64
}
