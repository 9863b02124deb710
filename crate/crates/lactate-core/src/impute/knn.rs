//! K-nearest-neighbour imputation against the training rows. Distance is
//! Euclidean over co-observed coordinates, scaled by the number of
//! co-observed coordinates; ties break on training row index.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::flat::FlatView;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnState {
    pub k: usize,
    pub train_values: DMatrix<f64>,
    pub train_mask: DMatrix<bool>,
    pub fallback_means: Vec<f64>,
}

pub(crate) fn fit_knn(
    flat: &FlatView,
    k: usize,
    names: &[String],
) -> Result<(KnnState, Vec<String>)> {
    if k == 0 {
        return Err(Error::config("knn: k must be >= 1"));
    }
    let (fallback_means, warnings) = super::flat::observed_means(flat, names);
    Ok((
        KnnState {
            k,
            train_values: flat.values.clone(),
            train_mask: flat.mask.clone(),
            fallback_means,
        },
        warnings,
    ))
}

/// Mean squared difference over co-observed coordinates; None when none.
fn distance_sq(
    a_vals: &DMatrix<f64>,
    a_mask: &DMatrix<bool>,
    a_row: usize,
    b_vals: &DMatrix<f64>,
    b_mask: &DMatrix<bool>,
    b_row: usize,
) -> Option<f64> {
    let d = a_vals.ncols();
    let mut sum = 0.0;
    let mut co = 0usize;
    for j in 0..d {
        if a_mask[(a_row, j)] && b_mask[(b_row, j)] {
            let diff = a_vals[(a_row, j)] - b_vals[(b_row, j)];
            sum += diff * diff;
            co += 1;
        }
    }
    if co == 0 {
        None
    } else {
        Some(sum / co as f64)
    }
}

pub(crate) fn transform_knn(flat: &FlatView, state: &KnnState) -> DMatrix<f64> {
    let n = flat.values.nrows();
    let d = flat.values.ncols();
    let n_train = state.train_values.nrows();
    let mut filled = flat.values.clone();

    for r in 0..n {
        let missing: Vec<usize> = (0..d).filter(|&j| !flat.mask[(r, j)]).collect();
        if missing.is_empty() {
            continue;
        }
        // One distance pass per query row, shared across its missing features.
        let dists: Vec<Option<f64>> = (0..n_train)
            .map(|t| {
                distance_sq(
                    &flat.values,
                    &flat.mask,
                    r,
                    &state.train_values,
                    &state.train_mask,
                    t,
                )
            })
            .collect();
        for &j in &missing {
            // Keep the k closest training rows that observe feature j.
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(state.k + 1);
            for t in 0..n_train {
                if !state.train_mask[(t, j)] {
                    continue;
                }
                let Some(dist) = dists[t] else { continue };
                let pos = best
                    .iter()
                    .position(|&(bd, bt)| (dist, t) < (bd, bt))
                    .unwrap_or(best.len());
                best.insert(pos, (dist, t));
                if best.len() > state.k {
                    best.pop();
                }
            }
            filled[(r, j)] = if best.is_empty() {
                state.fallback_means[j]
            } else {
                best.iter()
                    .map(|&(_, t)| state.train_values[(t, j)])
                    .sum::<f64>()
                    / best.len() as f64
            };
        }
    }
    filled
}
