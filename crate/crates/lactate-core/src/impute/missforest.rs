//! MissForest-style imputation: iteratively regress each feature on the
//! others with a random forest, updating imputed cells round by round, and
//! stop when the round-to-round change increases (keeping the previous
//! round's models) or at the round cap.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::chained::visit_order_by_missingness;
use super::flat::FlatView;
use crate::error::{Error, Result};
use crate::models::forest::{forest_fit, forest_predict, ForestModel};
use crate::models::ForestParams;
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissForestState {
    pub visit_order: Vec<usize>,
    pub means: Vec<f64>,
    /// Per-feature forests from the last accepted round.
    pub forests: Vec<Option<ForestModel>>,
    pub rounds_used: usize,
    /// Normalized Frobenius change of imputed entries per round.
    pub round_deltas: Vec<f64>,
}

fn drop_column(x: &DMatrix<f64>, col: usize) -> DMatrix<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    DMatrix::from_fn(n, d - 1, |r, c| x[(r, if c < col { c } else { c + 1 })])
}

pub(crate) fn fit_missforest(
    flat: &FlatView,
    max_rounds: usize,
    n_trees: usize,
    seed: u64,
    names: &[String],
) -> Result<(MissForestState, Vec<String>)> {
    let n = flat.values.nrows();
    let d = flat.values.ncols();
    if n == 0 || d < 2 {
        return Err(Error::data(
            "missforest: needs a non-empty matrix with at least 2 features",
        ));
    }
    let (means, warnings) = super::flat::observed_means(flat, names);
    let visit_order = visit_order_by_missingness(&flat.mask);

    let mut x = flat.values.clone();
    for r in 0..n {
        for j in 0..d {
            if !flat.mask[(r, j)] {
                x[(r, j)] = means[j];
            }
        }
    }

    let mut accepted: Vec<Option<ForestModel>> = vec![None; d];
    let mut rounds_used = 0;
    let mut round_deltas = Vec::new();
    let mut prev_delta = f64::INFINITY;
    for round in 0..max_rounds {
        let x_before = x.clone();
        let mut round_models: Vec<Option<ForestModel>> = vec![None; d];
        for &j in &visit_order {
            let obs_rows: Vec<usize> = (0..n).filter(|&r| flat.mask[(r, j)]).collect();
            let miss_rows: Vec<usize> = (0..n).filter(|&r| !flat.mask[(r, j)]).collect();
            if obs_rows.is_empty() {
                continue;
            }
            let predictors = drop_column(&x, j);
            let x_train = DMatrix::from_fn(obs_rows.len(), d - 1, |a, c| {
                predictors[(obs_rows[a], c)]
            });
            let y_train = DVector::from_fn(obs_rows.len(), |a, _| x[(obs_rows[a], j)]);
            let params = ForestParams {
                n_trees,
                min_samples_leaf: 5.min(obs_rows.len().max(1)),
                rng_seed: seeding::mix(seed, &[0x6d66_6f72, round as u64, j as u64]),
                ..ForestParams::default()
            };
            let forest = forest_fit(&x_train, &y_train, &params)?;
            if !miss_rows.is_empty() {
                let x_miss = DMatrix::from_fn(miss_rows.len(), d - 1, |a, c| {
                    predictors[(miss_rows[a], c)]
                });
                let preds = forest_predict(&forest, &x_miss);
                for (a, &r) in miss_rows.iter().enumerate() {
                    x[(r, j)] = preds[a];
                }
            }
            round_models[j] = Some(forest);
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for r in 0..n {
            for j in 0..d {
                if !flat.mask[(r, j)] {
                    num += (x[(r, j)] - x_before[(r, j)]).powi(2);
                    den += x[(r, j)].powi(2);
                }
            }
        }
        let delta = (num / den.max(1e-12)).sqrt();
        round_deltas.push(delta);
        if round > 0 && delta > prev_delta {
            // Change grew: keep the previous round's models.
            break;
        }
        accepted = round_models;
        rounds_used = round + 1;
        prev_delta = delta;
        if delta == 0.0 {
            break;
        }
    }

    Ok((
        MissForestState {
            visit_order,
            means,
            forests: accepted,
            rounds_used,
            round_deltas,
        },
        warnings,
    ))
}

pub(crate) fn transform_missforest(flat: &FlatView, state: &MissForestState) -> DMatrix<f64> {
    let n = flat.values.nrows();
    let d = flat.values.ncols();
    let mut x = flat.values.clone();
    for r in 0..n {
        for j in 0..d {
            if !flat.mask[(r, j)] {
                x[(r, j)] = state.means[j];
            }
        }
    }
    for _ in 0..state.rounds_used.max(1) {
        for &j in &state.visit_order {
            let Some(ref forest) = state.forests[j] else {
                continue;
            };
            let miss_rows: Vec<usize> = (0..n).filter(|&r| !flat.mask[(r, j)]).collect();
            if miss_rows.is_empty() {
                continue;
            }
            let predictors = drop_column(&x, j);
            let x_miss = DMatrix::from_fn(miss_rows.len(), d - 1, |a, c| {
                predictors[(miss_rows[a], c)]
            });
            let preds = forest_predict(forest, &x_miss);
            for (a, &r) in miss_rows.iter().enumerate() {
                x[(r, j)] = preds[a];
            }
        }
    }
    x
}
