//! SoftImpute: iterative soft-thresholded SVD completion over a geometric
//! shrinkage schedule, warm-started from step to step.
//!
//! The fitted state keeps the feature-space basis of the final completion;
//! transforming a grid projects each row onto that basis through its
//! observed coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::flat::FlatView;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftImputeState {
    /// `[n_features, rank]` orthonormal feature-space basis.
    pub basis: DMatrix<f64>,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub fallback_means: Vec<f64>,
    /// Regularized objective value per inner iteration, grouped by schedule
    /// step; non-increasing within each step.
    pub objective_log: Vec<Vec<f64>>,
}

/// Rank-capped soft-thresholded reconstruction and its nuclear norm.
/// Singular values come back sorted descending, so capping keeps the top
/// `max_rank` components before shrinkage.
fn soft_svd(m: &DMatrix<f64>, lambda: f64, max_rank: usize) -> (DMatrix<f64>, f64) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut nuclear = 0.0;
    let shrunk: Vec<f64> = svd
        .singular_values
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if i >= max_rank {
                return 0.0;
            }
            let t = (s - lambda).max(0.0);
            nuclear += t;
            t
        })
        .collect();
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, &s) in shrunk.iter().enumerate() {
        if s > 0.0 {
            out.ger(s, &u.column(i).into_owned(), &v_t.row(i).transpose(), 1.0);
        }
    }
    (out, nuclear)
}

/// 0.5 * ||P_obs(X - Z)||_F^2 + lambda * ||Z||_*
fn objective(flat: &FlatView, z: &DMatrix<f64>, lambda: f64, nuclear: f64) -> f64 {
    let mut fit = 0.0;
    for r in 0..flat.values.nrows() {
        for c in 0..flat.values.ncols() {
            if flat.mask[(r, c)] {
                fit += (flat.values[(r, c)] - z[(r, c)]).powi(2);
            }
        }
    }
    0.5 * fit + lambda * nuclear
}

pub(crate) fn fit_soft_impute(
    flat: &FlatView,
    steps: usize,
    tolerance: f64,
    lambda_floor_ratio: f64,
    max_rank: Option<usize>,
    names: &[String],
) -> Result<(SoftImputeState, Vec<String>)> {
    let n = flat.values.nrows();
    let d = flat.values.ncols();
    if n == 0 || d == 0 {
        return Err(Error::data("soft impute: empty training matrix"));
    }
    // Reference-implementation default: cap the working rank one below the
    // smaller dimension so the completion cannot degenerate to the identity.
    let max_rank = max_rank
        .unwrap_or_else(|| n.min(d).saturating_sub(1))
        .max(1);
    let (fallback_means, warnings) = super::flat::observed_means(flat, names);

    // Zero-filled observed matrix defines the top of the shrinkage grid.
    let zero_filled = DMatrix::from_fn(n, d, |r, c| {
        if flat.mask[(r, c)] {
            flat.values[(r, c)]
        } else {
            0.0
        }
    });
    let lambda_max = zero_filled
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max);
    if lambda_max == 0.0 {
        // All-zero observations: nothing to learn.
        return Ok((
            SoftImputeState {
                basis: DMatrix::zeros(d, 0),
                lambda_max,
                lambda_min: 0.0,
                fallback_means,
                objective_log: Vec::new(),
            },
            warnings,
        ));
    }

    let steps = steps.max(1);
    let lambda_min = lambda_max * lambda_floor_ratio;
    let mut z = DMatrix::zeros(n, d);
    let mut objective_log = Vec::with_capacity(steps);
    let mut final_lambda = lambda_min;
    for step in 0..steps {
        let frac = if steps == 1 {
            1.0
        } else {
            step as f64 / (steps - 1) as f64
        };
        let lambda = lambda_max * (lambda_min / lambda_max).powf(frac);
        final_lambda = lambda;
        let mut log = Vec::new();
        for _ in 0..200 {
            let mut filled = zero_filled.clone();
            for r in 0..n {
                for c in 0..d {
                    if !flat.mask[(r, c)] {
                        filled[(r, c)] = z[(r, c)];
                    }
                }
            }
            let (z_new, nuclear) = soft_svd(&filled, lambda, max_rank);
            log.push(objective(flat, &z_new, lambda, nuclear));
            let delta = (&z_new - &z).norm();
            let scale = z.norm().max(1e-9);
            z = z_new;
            if delta / scale < tolerance {
                break;
            }
        }
        objective_log.push(log);
    }

    // Debias: the shrinkage path selects the rank; refit that fixed rank
    // without shrinkage until the completion stabilizes.
    let rank_kept = z
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > final_lambda.max(1e-10))
        .count()
        .clamp(1, max_rank);
    let mut refine_log = Vec::new();
    for _ in 0..300 {
        let mut filled = zero_filled.clone();
        for r in 0..n {
            for c in 0..d {
                if !flat.mask[(r, c)] {
                    filled[(r, c)] = z[(r, c)];
                }
            }
        }
        let (z_new, _) = soft_svd(&filled, 0.0, rank_kept);
        refine_log.push(objective(flat, &z_new, 0.0, 0.0));
        let delta = (&z_new - &z).norm();
        let scale = z.norm().max(1e-9);
        z = z_new;
        if delta / scale < 1e-10 {
            break;
        }
    }
    objective_log.push(refine_log);

    // Feature-space basis of the completion: right singular vectors whose
    // singular values survived the final shrinkage level.
    let svd = z.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > final_lambda.max(1e-10))
        .count()
        .min(rank_kept);
    let mut basis = DMatrix::zeros(d, rank);
    let mut kept = 0;
    for i in 0..svd.singular_values.len() {
        if svd.singular_values[i] > final_lambda.max(1e-10) && kept < rank {
            for r in 0..d {
                basis[(r, kept)] = v_t[(i, r)];
            }
            kept += 1;
        }
    }

    Ok((
        SoftImputeState {
            basis,
            lambda_max,
            lambda_min: final_lambda,
            fallback_means,
            objective_log,
        },
        warnings,
    ))
}

pub(crate) fn transform_soft_impute(flat: &FlatView, state: &SoftImputeState) -> DMatrix<f64> {
    let n = flat.values.nrows();
    let d = flat.values.ncols();
    let rank = state.basis.ncols();
    let mut filled = flat.values.clone();
    for r in 0..n {
        let obs: Vec<usize> = (0..d).filter(|&j| flat.mask[(r, j)]).collect();
        if obs.is_empty() || rank == 0 {
            for j in 0..d {
                if !flat.mask[(r, j)] {
                    filled[(r, j)] = state.fallback_means[j];
                }
            }
            continue;
        }
        // Least squares of observed coords onto the basis (tiny ridge for
        // under-determined rows).
        let mut gram = DMatrix::zeros(rank, rank);
        let mut rhs = DVector::zeros(rank);
        for &j in &obs {
            let bj = state.basis.row(j);
            for a in 0..rank {
                rhs[a] += bj[a] * flat.values[(r, j)];
                for b in 0..rank {
                    gram[(a, b)] += bj[a] * bj[b];
                }
            }
        }
        for i in 0..rank {
            gram[(i, i)] += 1e-9;
        }
        let coords = gram
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .or_else(|| gram.lu().solve(&rhs));
        match coords {
            Some(coords) => {
                for j in 0..d {
                    if !flat.mask[(r, j)] {
                        filled[(r, j)] = state.basis.row(j).transpose().dot(&coords);
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
