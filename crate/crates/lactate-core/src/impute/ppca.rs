//! Probabilistic PCA imputation: EM over the factor model
//! x = mu + W z + eps, eps ~ N(0, sigma^2 I), with missing entries filled
//! from the posterior mean of z given each row's observed coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::flat::FlatView;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpcaState {
    pub mean: Vec<f64>,
    /// `[n_features, k]` factor loadings.
    pub loadings: DMatrix<f64>,
    pub noise_variance: f64,
    pub iterations_run: usize,
}

const SIGMA_FLOOR: f64 = 1e-12;

/// Closed-form ML parameters from a completed, centered matrix.
fn ml_from_completed(centered: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, f64) {
    let n = centered.nrows() as f64;
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut eigs: Vec<f64> = svd.singular_values.iter().map(|s| s * s / n).collect();
    eigs.resize(v_t.nrows().max(k), 0.0);
    let d_rank = svd.singular_values.len();
    let trailing = if d_rank > k {
        eigs[k..d_rank].iter().sum::<f64>() / (d_rank - k) as f64
    } else {
        0.0
    };
    let sigma2 = trailing.max(SIGMA_FLOOR);
    let d = centered.ncols();
    let mut w = DMatrix::zeros(d, k);
    for j in 0..k.min(d_rank) {
        let scale = (eigs[j] - sigma2).max(0.0).sqrt();
        for r in 0..d {
            w[(r, j)] = v_t[(j, r)] * scale;
        }
    }
    (w, sigma2)
}

/// Posterior mean of z for one row given its observed coordinates.
fn posterior_z(
    w: &DMatrix<f64>,
    sigma2: f64,
    row: &[f64],
    mask_row: &[bool],
    mean: &[f64],
) -> Option<DVector<f64>> {
    let k = w.ncols();
    let obs: Vec<usize> = (0..row.len()).filter(|&j| mask_row[j]).collect();
    if obs.is_empty() {
        return None;
    }
    let mut m = DMatrix::from_diagonal_element(k, k, sigma2.max(SIGMA_FLOOR));
    let mut rhs = DVector::zeros(k);
    for &j in &obs {
        let wj = w.row(j);
        for a in 0..k {
            rhs[a] += wj[a] * (row[j] - mean[j]);
            for b in 0..k {
                m[(a, b)] += wj[a] * wj[b];
            }
        }
    }
    m.clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| m.lu().solve(&rhs))
}

pub(crate) fn fit_ppca(
    flat: &FlatView,
    k: usize,
    tolerance: f64,
    max_iter: usize,
    names: &[String],
) -> Result<(PpcaState, Vec<String>)> {
    let d = flat.values.ncols();
    let n = flat.values.nrows();
    if n == 0 || d == 0 {
        return Err(Error::data("ppca: empty training matrix"));
    }
    let k = k.clamp(1, d.min(n).saturating_sub(1).max(1));
    let (mut mean, warnings) = super::flat::observed_means(flat, names);

    // Start from the mean-completed matrix.
    let mut x = flat.values.clone();
    for r in 0..n {
        for j in 0..d {
            if !flat.mask[(r, j)] {
                x[(r, j)] = mean[j];
            }
        }
    }

    let mut w = DMatrix::zeros(d, k);
    let mut sigma2 = 1.0;
    let mut iterations_run = 0;
    for iter in 0..max_iter {
        let mean_v = DVector::from_column_slice(&mean);
        let centered = DMatrix::from_fn(n, d, |r, c| x[(r, c)] - mean_v[c]);
        let (w_new, s_new) = ml_from_completed(&centered, k);
        w = w_new;
        sigma2 = s_new;

        // E-step: refill missing entries from the per-row posterior.
        let mut change = 0.0f64;
        let mut norm = 0.0f64;
        for r in 0..n {
            let row: Vec<f64> = (0..d).map(|j| x[(r, j)]).collect();
            let mrow: Vec<bool> = (0..d).map(|j| flat.mask[(r, j)]).collect();
            let z = posterior_z(&w, sigma2, &row, &mrow, &mean);
            for j in 0..d {
                if !flat.mask[(r, j)] {
                    let filled = match &z {
                        Some(z) => mean[j] + w.row(j).transpose().dot(z),
                        None => mean[j],
                    };
                    change += (filled - x[(r, j)]).powi(2);
                    norm += x[(r, j)].powi(2);
                    x[(r, j)] = filled;
                }
            }
        }
        // M-step mean update from the completed matrix.
        for j in 0..d {
            mean[j] = x.column(j).mean();
        }
        iterations_run = iter + 1;
        if change.sqrt() <= tolerance * (norm.sqrt() + 1e-12) {
            break;
        }
    }

    Ok((
        PpcaState {
            mean,
            loadings: w,
            noise_variance: sigma2,
            iterations_run,
        },
        warnings,
    ))
}

pub(crate) fn transform_ppca(flat: &FlatView, state: &PpcaState) -> DMatrix<f64> {
    let n = flat.values.nrows();
    let d = flat.values.ncols();
    let mut filled = flat.values.clone();
    for r in 0..n {
        let row: Vec<f64> = (0..d).map(|j| flat.values[(r, j)]).collect();
        let mrow: Vec<bool> = (0..d).map(|j| flat.mask[(r, j)]).collect();
        let z = posterior_z(
            &state.loadings,
            state.noise_variance,
            &row,
            &mrow,
            &state.mean,
        );
        for j in 0..d {
            if !flat.mask[(r, j)] {
                filled[(r, j)] = match &z {
                    Some(z) => state.mean[j] + state.loadings.row(j).transpose().dot(z),
                    None => state.mean[j],
                };
            }
        }
    }
    filled
}

/// Reconstruction of every entry from the fitted subspace (posterior mean),
/// used by the rank-recovery checks.
pub fn ppca_reconstruct(state: &PpcaState, row: &[f64], mask_row: &[bool]) -> Vec<f64> {
    let d = row.len();
    match posterior_z(
        &state.loadings,
        state.noise_variance,
        row,
        mask_row,
        &state.mean,
    ) {
        Some(z) => (0..d)
            .map(|j| state.mean[j] + state.loadings.row(j).transpose().dot(&z))
            .collect(),
        None => state.mean.clone(),
    }
}
