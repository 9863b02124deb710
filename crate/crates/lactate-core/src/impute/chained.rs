//! Multiple imputation by chained equations: per-feature ridge regressions
//! cycled in ascending-missingness order. Several chains are fitted with
//! stochastic initialization and residual noise; the transform applies each
//! chain's final-round models deterministically and averages the chains.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::flat::FlatView;
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// Coefficients over the other features, in feature order with the
    /// target feature skipped.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub residual_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiceState {
    pub visit_order: Vec<usize>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// `[chain][feature]`; None where the feature had no observed entries.
    pub chains: Vec<Vec<Option<RidgeModel>>>,
    pub rounds: usize,
    /// Frobenius change of the imputed entries per round, per chain.
    pub round_deltas: Vec<Vec<f64>>,
}

/// Ascending-missingness visit order, ties by feature index.
pub(crate) fn visit_order_by_missingness(mask: &DMatrix<bool>) -> Vec<usize> {
    let d = mask.ncols();
    let mut order: Vec<usize> = (0..d).collect();
    let missing_count: Vec<usize> = (0..d)
        .map(|j| (0..mask.nrows()).filter(|&r| !mask[(r, j)]).count())
        .collect();
    order.sort_by_key(|&j| (missing_count[j], j));
    order
}

fn observed_stds(flat: &FlatView, means: &[f64]) -> Vec<f64> {
    let d = flat.values.ncols();
    (0..d)
        .map(|j| {
            let (mut sum, mut n) = (0.0, 0usize);
            for r in 0..flat.values.nrows() {
                if flat.mask[(r, j)] {
                    let dv = flat.values[(r, j)] - means[j];
                    sum += dv * dv;
                    n += 1;
                }
            }
            if n > 0 && sum > 0.0 {
                (sum / n as f64).sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

/// Ridge regression of feature `target` on all other features over the rows
/// where `target` is observed, using the current completed matrix.
fn fit_ridge_for_feature(
    x: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    target: usize,
    ridge: f64,
) -> Option<RidgeModel> {
    let n = x.nrows();
    let d = x.ncols();
    let rows: Vec<usize> = (0..n).filter(|&r| mask[(r, target)]).collect();
    if rows.is_empty() {
        return None;
    }
    let p = d - 1;
    let other: Vec<usize> = (0..d).filter(|&j| j != target).collect();

    // Center predictors and target over the regression rows; ridge on the
    // centered system leaves the intercept unpenalized.
    let mut x_mean = vec![0.0; p];
    let mut y_mean = 0.0;
    for &r in &rows {
        for (a, &j) in other.iter().enumerate() {
            x_mean[a] += x[(r, j)];
        }
        y_mean += x[(r, target)];
    }
    let nr = rows.len() as f64;
    for m in x_mean.iter_mut() {
        *m /= nr;
    }
    y_mean /= nr;

    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for &r in &rows {
        for (a, &ja) in other.iter().enumerate() {
            let xa = x[(r, ja)] - x_mean[a];
            rhs[a] += xa * (x[(r, target)] - y_mean);
            for (b, &jb) in other.iter().enumerate() {
                gram[(a, b)] += xa * (x[(r, jb)] - x_mean[b]);
            }
        }
    }
    for i in 0..p {
        gram[(i, i)] += ridge * nr.max(1.0);
    }
    let beta = gram
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| gram.lu().solve(&rhs))?;
    let intercept = y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();

    let mut sse = 0.0;
    for &r in &rows {
        let pred = intercept
            + other
                .iter()
                .enumerate()
                .map(|(a, &j)| beta[a] * x[(r, j)])
                .sum::<f64>();
        sse += (x[(r, target)] - pred).powi(2);
    }
    Some(RidgeModel {
        coefficients: beta.iter().copied().collect(),
        intercept,
        residual_std: (sse / nr).sqrt(),
    })
}

fn predict_ridge(model: &RidgeModel, x: &DMatrix<f64>, row: usize, target: usize) -> f64 {
    let d = x.ncols();
    let mut acc = model.intercept;
    let mut a = 0;
    for j in 0..d {
        if j == target {
            continue;
        }
        acc += model.coefficients[a] * x[(row, j)];
        a += 1;
    }
    acc
}

pub(crate) fn fit_mice(
    flat: &FlatView,
    rounds: usize,
    n_chains: usize,
    ridge: f64,
    seed: u64,
    names: &[String],
) -> Result<(MiceState, Vec<String>)> {
    let n = flat.values.nrows();
    let d = flat.values.ncols();
    if n == 0 || d == 0 {
        return Err(Error::data("mice: empty training matrix"));
    }
    if d < 2 {
        return Err(Error::config(
            "mice needs at least 2 features to form chained regressions",
        ));
    }
    let (means, warnings) = super::flat::observed_means(flat, names);
    let stds = observed_stds(flat, &means);
    let visit_order = visit_order_by_missingness(&flat.mask);

    let mut chains = Vec::with_capacity(n_chains);
    let mut round_deltas = Vec::with_capacity(n_chains);
    for chain in 0..n_chains {
        let mut rng = seeding::rng_for(seed, &[0x6d69_6365, chain as u64]);
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let mut x = flat.values.clone();
        for r in 0..n {
            for j in 0..d {
                if !flat.mask[(r, j)] {
                    x[(r, j)] = means[j] + stds[j] * noise.sample(&mut rng);
                }
            }
        }
        let mut models: Vec<Option<RidgeModel>> = vec![None; d];
        let mut deltas = Vec::with_capacity(rounds);
        for _round in 0..rounds {
            let mut delta = 0.0;
            for &j in &visit_order {
                let model = fit_ridge_for_feature(&x, &flat.mask, j, ridge);
                if let Some(ref m) = model {
                    for r in 0..n {
                        if !flat.mask[(r, j)] {
                            let draw: f64 = noise.sample(&mut rng);
                            let new = predict_ridge(m, &x, r, j) + m.residual_std * draw;
                            delta += (new - x[(r, j)]).powi(2);
                            x[(r, j)] = new;
                        }
                    }
                }
                models[j] = model;
            }
            deltas.push(delta.sqrt());
        }
        chains.push(models);
        round_deltas.push(deltas);
    }

    Ok((
        MiceState {
            visit_order,
            means,
            stds,
            chains,
            rounds,
            round_deltas,
        },
        warnings,
    ))
}

/// Applies each chain's fitted models for the fitted number of rounds
/// (mean initialization, no noise) and averages the chains.
pub(crate) fn transform_mice(flat: &FlatView, state: &MiceState) -> DMatrix<f64> {
    let n = flat.values.nrows();
    let d = flat.values.ncols();
    let mut acc = DMatrix::zeros(n, d);
    for models in &state.chains {
        let mut x = flat.values.clone();
        for r in 0..n {
            for j in 0..d {
                if !flat.mask[(r, j)] {
                    x[(r, j)] = state.means[j];
                }
            }
        }
        for _ in 0..state.rounds {
            for &j in &state.visit_order {
                if let Some(ref m) = models[j] {
                    for r in 0..n {
                        if !flat.mask[(r, j)] {
                            x[(r, j)] = predict_ridge(m, &x, r, j);
                        }
                    }
                }
            }
        }
        acc += x;
    }
    acc /= state.chains.len() as f64;
    // Observed entries are restored bit-exactly by write_back; the average
    // only matters on imputed cells.
    acc
}
