//! Autoencoder imputation: an hourglass network (input -> 1/2 -> 1/4 -> 1/2
//! -> input widths, tanh hidden layers, linear output) trained to
//! reconstruct the pre-imputed training matrix. Training gaps are pre-filled
//! with training means, inference gaps with zeros, before internal
//! standardization.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::flat::FlatView;
use crate::error::{Error, Result};
use crate::models::adam::{Adam, AdamParams};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeState {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Pre-imputed raw training matrix: gaps take the per-feature training mean.
pub(crate) fn preimpute_with_means(flat: &FlatView, means: &[f64]) -> DMatrix<f64> {
    let mut x = flat.values.clone();
    for r in 0..x.nrows() {
        for j in 0..x.ncols() {
            if !flat.mask[(r, j)] {
                x[(r, j)] = means[j];
            }
        }
    }
    x
}

/// Pre-imputed raw inference matrix: gaps take zero.
pub(crate) fn preimpute_with_zeros(flat: &FlatView) -> DMatrix<f64> {
    let mut x = flat.values.clone();
    for r in 0..x.nrows() {
        for j in 0..x.ncols() {
            if !flat.mask[(r, j)] {
                x[(r, j)] = 0.0;
            }
        }
    }
    x
}

fn layer_widths(d: usize) -> [usize; 5] {
    let h1 = d.div_ceil(2).max(1);
    let h2 = d.div_ceil(4).max(1);
    [d, h1, h2, h1, d]
}

struct Workspace {
    /// Activations per layer, columns = batch items.
    acts: Vec<DMatrix<f64>>,
}

/// Forward pass on standardized inputs (columns = rows of the flat matrix).
fn forward(state_w: &[DMatrix<f64>], state_b: &[DVector<f64>], input: &DMatrix<f64>) -> Workspace {
    let mut acts = Vec::with_capacity(state_w.len() + 1);
    acts.push(input.clone());
    for (l, (w, b)) in state_w.iter().zip(state_b).enumerate() {
        let mut z = w * acts.last().unwrap();
        for mut col in z.column_iter_mut() {
            col += b;
        }
        if l + 1 < state_w.len() {
            z.apply(|v| *v = v.tanh());
        }
        acts.push(z);
    }
    Workspace { acts }
}

pub(crate) fn fit_ae(
    flat: &FlatView,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
    names: &[String],
) -> Result<(AeState, Vec<String>)> {
    let n = flat.values.nrows();
    let d = flat.values.ncols();
    if n == 0 || d == 0 {
        return Err(Error::data("autoencoder: empty training matrix"));
    }
    let (means, warnings) = super::flat::observed_means(flat, names);
    let stds: Vec<f64> = (0..d)
        .map(|j| {
            let (mut sum, mut cnt) = (0.0, 0usize);
            for r in 0..n {
                if flat.mask[(r, j)] {
                    let dv = flat.values[(r, j)] - means[j];
                    sum += dv * dv;
                    cnt += 1;
                }
            }
            if cnt > 0 && sum > 0.0 {
                (sum / cnt as f64).sqrt()
            } else {
                1.0
            }
        })
        .collect();

    let raw = preimpute_with_means(flat, &means);
    let std_mat = DMatrix::from_fn(n, d, |r, j| (raw[(r, j)] - means[j]) / stds[j]);

    let widths = layer_widths(d);
    let mut rng = seeding::rng_for(seed, &[0x6165, 0]);
    let mut weights: Vec<DMatrix<f64>> = Vec::with_capacity(4);
    let mut biases: Vec<DVector<f64>> = Vec::with_capacity(4);
    for l in 0..4 {
        let (rows, cols) = (widths[l + 1], widths[l]);
        let glorot = Normal::new(0.0, (2.0 / (rows + cols) as f64).sqrt()).expect("positive std");
        weights.push(DMatrix::from_fn(rows, cols, |_, _| glorot.sample(&mut rng)));
        biases.push(DVector::zeros(rows));
    }

    let n_params: usize = weights.iter().map(|w| w.len()).sum::<usize>()
        + biases.iter().map(|b| b.len()).sum::<usize>();
    let mut adam = Adam::new(
        n_params,
        AdamParams {
            learning_rate,
            ..AdamParams::default()
        },
    );
    let mut shuffle_rng = seeding::rng_for(seed, &[0x6165, 1]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(epochs);

    let flatten_params = |ws: &[DMatrix<f64>], bs: &[DVector<f64>]| -> Vec<f64> {
        let mut out = Vec::with_capacity(n_params);
        for w in ws {
            out.extend_from_slice(w.as_slice());
        }
        for b in bs {
            out.extend_from_slice(b.as_slice());
        }
        out
    };
    let unflatten = |theta: &[f64], ws: &mut [DMatrix<f64>], bs: &mut [DVector<f64>]| {
        let mut at = 0;
        for w in ws.iter_mut() {
            let len = w.len();
            w.as_mut_slice().copy_from_slice(&theta[at..at + len]);
            at += len;
        }
        for b in bs.iter_mut() {
            let len = b.len();
            b.as_mut_slice().copy_from_slice(&theta[at..at + len]);
            at += len;
        }
    };

    let mut theta = flatten_params(&weights, &biases);
    for _epoch in 0..epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(batch_size) {
            let input = DMatrix::from_fn(d, batch.len(), |j, c| std_mat[(batch[c], j)]);
            let ws = forward(&weights, &biases, &input);
            let output = ws.acts.last().unwrap();
            let b_n = (batch.len() * d) as f64;
            let mut delta = (output - &input) * (2.0 / b_n);
            let loss = (output - &input).norm_squared() / b_n;
            if !loss.is_finite() {
                return Err(Error::data(
                    "autoencoder: non-finite reconstruction loss; lower the learning rate",
                ));
            }
            epoch_loss += loss * batch.len() as f64;

            let mut grad_w = vec![DMatrix::zeros(0, 0); 4];
            let mut grad_b = vec![DVector::zeros(0); 4];
            for l in (0..4).rev() {
                grad_w[l] = &delta * ws.acts[l].transpose();
                grad_b[l] = DVector::from_fn(delta.nrows(), |r, _| delta.row(r).sum());
                if l > 0 {
                    let mut back = weights[l].transpose() * &delta;
                    // Hidden activations are tanh.
                    for (b_e, a_e) in back.iter_mut().zip(ws.acts[l].iter()) {
                        *b_e *= 1.0 - a_e * a_e;
                    }
                    delta = back;
                }
            }
            let grad_flat = flatten_params(&grad_w, &grad_b);
            adam.step(&mut theta, &grad_flat);
            unflatten(&theta, &mut weights, &mut biases);
        }
        epoch_losses.push(epoch_loss / n as f64);
    }

    Ok((
        AeState {
            weights,
            biases,
            means,
            stds,
            epoch_losses,
        },
        warnings,
    ))
}

pub(crate) fn transform_ae(flat: &FlatView, state: &AeState) -> DMatrix<f64> {
    let n = flat.values.nrows();
    let d = flat.values.ncols();
    // Inference gaps are pre-imputed with zeros before standardization.
    let raw = preimpute_with_zeros(flat);
    let std_in = DMatrix::from_fn(d, n, |j, r| (raw[(r, j)] - state.means[j]) / state.stds[j]);
    let ws = forward(&state.weights, &state.biases, &std_in);
    let recon = ws.acts.last().unwrap();
    let mut filled = flat.values.clone();
    for r in 0..n {
        for j in 0..d {
            if !flat.mask[(r, j)] {
                filled[(r, j)] = recon[(j, r)] * state.stds[j] + state.means[j];
            }
        }
    }
    filled
}
