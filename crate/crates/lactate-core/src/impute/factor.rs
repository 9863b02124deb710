//! Matrix-factorization imputation: alternating ridge least squares on the
//! observed entries, factorizing the incomplete matrix directly into
//! row factors and feature factors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::flat::FlatView;
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorState {
    /// `[n_features, rank]` feature factors.
    pub feature_factors: DMatrix<f64>,
    pub ridge: f64,
    /// Fallback for rows with no observed coordinates.
    pub fallback_means: Vec<f64>,
}

/// Ridge solve (G + ridge I) beta = rhs for a small k-by-k system.
fn ridge_solve(mut gram: DMatrix<f64>, rhs: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    gram.clone()
        .cholesky()
        .map(|ch| ch.solve(rhs))
        .or_else(|| gram.lu().solve(rhs))
}

/// Solves the latent coordinates of one row against fixed feature factors
/// using its observed coordinates only.
fn solve_row(
    factors: &DMatrix<f64>,
    values: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    r: usize,
    ridge: f64,
) -> Option<DVector<f64>> {
    let k = factors.ncols();
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    let mut any = false;
    for j in 0..factors.nrows() {
        if !mask[(r, j)] {
            continue;
        }
        any = true;
        let fj = factors.row(j);
        for a in 0..k {
            rhs[a] += fj[a] * values[(r, j)];
            for b in 0..k {
                gram[(a, b)] += fj[a] * fj[b];
            }
        }
    }
    if !any {
        return None;
    }
    ridge_solve(gram, &rhs, ridge)
}

pub(crate) fn fit_factorization(
    flat: &FlatView,
    rank: usize,
    ridge: f64,
    sweeps: usize,
    seed: u64,
    names: &[String],
) -> Result<(FactorState, Vec<String>)> {
    let n = flat.values.nrows();
    let d = flat.values.ncols();
    if n == 0 || d == 0 {
        return Err(Error::data("matrix factorization: empty training matrix"));
    }
    let k = rank.clamp(1, n.min(d));
    let (fallback_means, warnings) = super::flat::observed_means(flat, names);

    let mut rng = seeding::rng_for(seed, &[0x6d66, 0]);
    let mut b = DMatrix::from_fn(d, k, |_, _| rng.random_range(-0.1..0.1));
    let mut a = DMatrix::zeros(n, k);

    for _ in 0..sweeps {
        for r in 0..n {
            if let Some(sol) = solve_row(&b, &flat.values, &flat.mask, r, ridge) {
                a.row_mut(r).copy_from(&sol.transpose());
            }
        }
        let mut max_shift = 0.0f64;
        for j in 0..d {
            let k_dim = k;
            let mut gram = DMatrix::zeros(k_dim, k_dim);
            let mut rhs = DVector::zeros(k_dim);
            let mut any = false;
            for r in 0..n {
                if !flat.mask[(r, j)] {
                    continue;
                }
                any = true;
                for p in 0..k_dim {
                    rhs[p] += a[(r, p)] * flat.values[(r, j)];
                    for q in 0..k_dim {
                        gram[(p, q)] += a[(r, p)] * a[(r, q)];
                    }
                }
            }
            if !any {
                continue;
            }
            if let Some(sol) = ridge_solve(gram, &rhs, ridge) {
                for p in 0..k_dim {
                    max_shift = max_shift.max((b[(j, p)] - sol[p]).abs());
                    b[(j, p)] = sol[p];
                }
            }
        }
        if max_shift < 1e-10 {
            break;
        }
    }

    Ok((
        FactorState {
            feature_factors: b,
            ridge,
            fallback_means,
        },
        warnings,
    ))
}

pub(crate) fn transform_factorization(flat: &FlatView, state: &FactorState) -> DMatrix<f64> {
    let n = flat.values.nrows();
    let d = flat.values.ncols();
    let mut filled = flat.values.clone();
    for r in 0..n {
        match solve_row(&state.feature_factors, &flat.values, &flat.mask, r, state.ridge) {
            Some(coords) => {
                for j in 0..d {
                    if !flat.mask[(r, j)] {
                        filled[(r, j)] = state.feature_factors.row(j).transpose().dot(&coords);
                    }
                }
            }
            None => {
                for j in 0..d {
                    if !flat.mask[(r, j)] {
                        filled[(r, j)] = state.fallback_means[j];
                    }
                }
            }
        }
    }
    filled
}
