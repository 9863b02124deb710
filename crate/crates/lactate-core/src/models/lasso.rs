//! Lasso regression by cyclic coordinate descent with soft thresholding.
//!
//! Objective: (2n)^-1 * ||y - Xw - b||^2 + lambda * ||w||_1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_finite_matrix, LassoParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// The lasso objective; exposed for monotonicity checks.
pub fn lasso_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &[f64],
    intercept: f64,
    l1_penalty: f64,
) -> f64 {
    let n = x.nrows() as f64;
    let w = DVector::from_column_slice(weights);
    let resid = y - x * &w - DVector::from_element(y.len(), intercept);
    resid.norm_squared() / (2.0 * n) + l1_penalty * weights.iter().map(|v| v.abs()).sum::<f64>()
}

pub fn lasso_fit(x: &DMatrix<f64>, y: &DVector<f64>, params: &LassoParams) -> Result<LassoModel> {
    params.validate()?;
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::data(format!(
            "lasso_fit: {} rows vs {} targets",
            x.nrows(),
            y.len()
        )));
    }
    check_finite_matrix(x, "lasso design matrix")?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("lasso targets contain non-finite entries"));
    }

    let n = x.nrows();
    let p = x.ncols();
    let inv_n = 1.0 / n as f64;
    // Per-coordinate curvature: n^-1 * ||X_j||^2.
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() * inv_n).collect();

    let mut w = vec![0.0; p];
    let mut b = if params.intercept { y.mean() } else { 0.0 };
    // residual = y - Xw - b
    let mut resid = y.clone();
    resid.add_scalar_mut(-b);

    for _sweep in 0..params.max_sweeps {
        let mut max_change = 0.0f64;
        if params.intercept {
            let delta = resid.mean();
            b += delta;
            resid.add_scalar_mut(-delta);
            max_change = max_change.max(delta.abs());
        }
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let old = w[j];
            // rho = n^-1 * X_j . (residual + X_j * w_j)
            let rho = x.column(j).dot(&resid) * inv_n + col_sq[j] * old;
            let new = soft_threshold(rho, params.l1_penalty) / col_sq[j];
            if new != old {
                resid.axpy(old - new, &x.column(j), 1.0);
                w[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change < params.tolerance {
            break;
        }
    }
    Ok(LassoModel {
        weights: w,
        intercept: b,
    })
}

pub fn lasso_predict(model: &LassoModel, x: &DMatrix<f64>) -> DVector<f64> {
    let w = DVector::from_column_slice(&model.weights);
    let mut out = x * w;
    out.add_scalar_mut(model.intercept);
    out
}
