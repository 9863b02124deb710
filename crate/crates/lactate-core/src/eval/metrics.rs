//! Regression metrics on raw-unit predictions.

use crate::error::{Error, Result};

fn check(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::data(format!(
            "metric inputs must be equal-length and non-empty ({} vs {})",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true
        .iter()
        .chain(y_pred.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::data("metric inputs contain non-finite entries"));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check(y_true, y_pred)?;
    Ok(y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p).abs())
        .sum::<f64>()
        / y_true.len() as f64)
}

/// Root mean squared error.
pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check(y_true, y_pred)?;
    Ok((y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / y_true.len() as f64)
        .sqrt())
}

/// R-squared: 1 - SSE/SST with SST about the mean of `y_true`; the score of
/// a model relative to the naive mean predictor. A constant `y_true` makes
/// SST zero: the result is 0 when the predictions reproduce it exactly and
/// negative infinity (undefined) otherwise.
pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check(y_true, y_pred)?;
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let sst: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum();
    let sse: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    if sst == 0.0 {
        return Ok(if sse == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - sse / sst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [1.0, 2.0, 3.5];
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn mean_predictor_scores_exactly_zero_r2() {
        let y = [1.0, 2.0, 3.0, 6.0];
        let mean = y.iter().sum::<f64>() / 4.0;
        let pred = [mean; 4];
        assert_eq!(r2(&y, &pred).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_example() {
        let y_true = [0.0, 2.0];
        let y_pred = [1.0, 1.0];
        assert_eq!(mae(&y_true, &y_pred).unwrap(), 1.0);
        assert_eq!(rmse(&y_true, &y_pred).unwrap(), 1.0);
        // SST = 2, SSE = 2.
        assert_eq!(r2(&y_true, &y_pred).unwrap(), 0.0);
    }

    #[test]
    fn constant_truth_edge_cases() {
        let y = [4.0, 4.0, 4.0];
        assert_eq!(r2(&y, &y).unwrap(), 0.0);
        assert_eq!(r2(&y, &[4.0, 4.0, 5.0]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(mae(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(r2(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }
}
