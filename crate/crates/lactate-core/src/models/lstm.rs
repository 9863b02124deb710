//! Stacked LSTM sequence regression trained by backpropagation through time
//! with Adam on mean squared error.
//!
//! Cells are the standard input/forget/output-gate formulation with a tanh
//! candidate; the final hidden state feeds a linear head. Variable-length
//! sequences are handled by skipping padded steps out of the recurrence and
//! the loss, so appending padded steps never changes a prediction. Dropout
//! acts on layer outputs during training only.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamParams};
use super::LstmParams;
use crate::error::{Error, Result};
use crate::seeding;

/// Gate block order within the packed weight matrices.
const GATES: usize = 4; // input, forget, candidate, output

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LstmLayer {
    /// `[4H, n_in]` input weights, gate-major blocks.
    w: DMatrix<f64>,
    /// `[4H, H]` recurrent weights.
    u: DMatrix<f64>,
    /// `[4H]` biases.
    b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmNetwork {
    input_size: usize,
    hidden: usize,
    layers: Vec<LstmLayer>,
    head_w: DVector<f64>,
    head_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub network: LstmNetwork,
    pub params: LstmParams,
    /// Mean training loss per epoch, in the (possibly standardized) target scale.
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct StepCache {
    input: DVector<f64>,
    h_prev: DVector<f64>,
    c_prev: DVector<f64>,
    i: DVector<f64>,
    f: DVector<f64>,
    g: DVector<f64>,
    o: DVector<f64>,
    tanh_c: DVector<f64>,
    /// Inverted-dropout scale applied to this step's output (ones at inference).
    drop_scale: DVector<f64>,
}

struct ForwardCache {
    layers: Vec<Vec<StepCache>>,
    /// Dropped output of the top layer at the final valid step.
    top_last: DVector<f64>,
    prediction: f64,
}

impl LstmNetwork {
    pub fn new(input_size: usize, params: &LstmParams, rng: &mut impl Rng) -> LstmNetwork {
        let h = params.hidden_units;
        let glorot = |rows: usize, cols: usize, rng: &mut dyn RngCore| {
            let std = (2.0 / (rows + cols) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("positive std");
            DMatrix::from_fn(rows, cols, |_, _| dist.sample(rng))
        };
        let mut layers = Vec::with_capacity(params.layers);
        for l in 0..params.layers {
            let n_in = if l == 0 { input_size } else { h };
            layers.push(LstmLayer {
                w: glorot(GATES * h, n_in, rng),
                u: glorot(GATES * h, h, rng),
                b: DVector::zeros(GATES * h),
            });
        }
        let head_std = (2.0 / (h + 1) as f64).sqrt();
        let head_dist = Normal::new(0.0, head_std).expect("positive std");
        LstmNetwork {
            input_size,
            hidden: h,
            layers,
            head_w: DVector::from_fn(h, |_, _| head_dist.sample(rng)),
            head_b: 0.0,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.len() + l.u.len() + l.b.len())
            .sum::<usize>()
            + self.head_w.len()
            + 1
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.u.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out.extend_from_slice(self.head_w.as_slice());
        out.push(self.head_b);
        out
    }

    pub fn set_params_flat(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.n_params());
        let mut at = 0;
        for l in &mut self.layers {
            let (wn, un, bn) = (l.w.len(), l.u.len(), l.b.len());
            l.w.as_mut_slice().copy_from_slice(&theta[at..at + wn]);
            at += wn;
            l.u.as_mut_slice().copy_from_slice(&theta[at..at + un]);
            at += un;
            l.b.as_mut_slice().copy_from_slice(&theta[at..at + bn]);
            at += bn;
        }
        let hw = self.head_w.len();
        self.head_w
            .as_mut_slice()
            .copy_from_slice(&theta[at..at + hw]);
        self.head_b = theta[at + hw];
    }

    fn zeros_like(&self) -> LstmNetwork {
        LstmNetwork {
            input_size: self.input_size,
            hidden: self.hidden,
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                    u: DMatrix::zeros(l.u.nrows(), l.u.ncols()),
                    b: DVector::zeros(l.b.len()),
                })
                .collect(),
            head_w: DVector::zeros(self.head_w.len()),
            head_b: 0.0,
        }
    }

    /// Runs the recurrence over the valid steps of `seq` (`[input_size, T]`).
    ///
    /// `dropout` is the training-time drop probability; `None` disables it.
    fn forward(
        &self,
        seq: &DMatrix<f64>,
        valid: Option<&[bool]>,
        dropout: Option<(f64, &mut dyn RngCore)>,
        want_cache: bool,
    ) -> ForwardCache {
        let h = self.hidden;
        let steps: Vec<usize> = match valid {
            Some(v) => (0..seq.ncols()).filter(|&t| v[t]).collect(),
            None => (0..seq.ncols()).collect(),
        };
        let (drop_p, mut drop_rng) = match dropout {
            Some((p, rng)) if p > 0.0 => (p, Some(rng)),
            _ => (0.0, None),
        };

        let mut caches: Vec<Vec<StepCache>> = Vec::with_capacity(self.layers.len());
        // Post-dropout outputs of the previous layer, one per valid step.
        let mut inputs: Vec<DVector<f64>> = steps
            .iter()
            .map(|&t| seq.column(t).into_owned())
            .collect();

        for layer in &self.layers {
            let mut layer_cache = Vec::with_capacity(inputs.len());
            let mut h_prev = DVector::zeros(h);
            let mut c_prev = DVector::zeros(h);
            let mut outputs = Vec::with_capacity(inputs.len());
            for x in &inputs {
                let mut z = layer.b.clone();
                z.gemv(1.0, &layer.w, x, 1.0);
                z.gemv(1.0, &layer.u, &h_prev, 1.0);
                let i = DVector::from_fn(h, |k, _| sigmoid(z[k]));
                let f = DVector::from_fn(h, |k, _| sigmoid(z[h + k]));
                let g = DVector::from_fn(h, |k, _| z[2 * h + k].tanh());
                let o = DVector::from_fn(h, |k, _| sigmoid(z[3 * h + k]));
                let c = f.component_mul(&c_prev) + i.component_mul(&g);
                let tanh_c = c.map(f64::tanh);
                let h_t = o.component_mul(&tanh_c);

                let drop_scale = if let Some(rng) = drop_rng.as_deref_mut() {
                    let keep = 1.0 - drop_p;
                    DVector::from_fn(h, |_, _| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                } else {
                    DVector::from_element(h, 1.0)
                };
                outputs.push(h_t.component_mul(&drop_scale));

                if want_cache {
                    layer_cache.push(StepCache {
                        input: x.clone(),
                        h_prev: h_prev.clone(),
                        c_prev: c_prev.clone(),
                        i,
                        f: f.clone(),
                        g,
                        o,
                        tanh_c,
                        drop_scale,
                    });
                }
                h_prev = h_t;
                c_prev = c;
            }
            caches.push(layer_cache);
            inputs = outputs;
        }

        let top_last = inputs
            .last()
            .cloned()
            .unwrap_or_else(|| DVector::zeros(h));
        let prediction = self.head_w.dot(&top_last) + self.head_b;
        ForwardCache {
            layers: caches,
            top_last,
            prediction,
        }
    }

    pub fn predict(&self, seq: &DMatrix<f64>) -> f64 {
        self.forward(seq, None, None, false).prediction
    }

    pub fn predict_masked(&self, seq: &DMatrix<f64>, valid: &[bool]) -> f64 {
        self.forward(seq, Some(valid), None, false).prediction
    }

    /// Accumulates dLoss/dTheta into `grads` given dLoss/dPrediction.
    fn backward(&self, cache: &ForwardCache, d_pred: f64, grads: &mut LstmNetwork) {
        let h = self.hidden;
        grads.head_b += d_pred;
        grads.head_w.axpy(d_pred, &cache.top_last, 1.0);

        let n_steps = cache.layers.first().map_or(0, |l| l.len());
        if n_steps == 0 {
            return;
        }
        // Gradient wrt each layer's post-dropout output per step.
        let mut d_out: Vec<DVector<f64>> = vec![DVector::zeros(h); n_steps];
        d_out[n_steps - 1] = &self.head_w * d_pred;

        for (l_idx, layer) in self.layers.iter().enumerate().rev() {
            let steps = &cache.layers[l_idx];
            let g_layer = &mut grads.layers[l_idx];
            let n_in = layer.w.ncols();
            let mut d_input: Vec<DVector<f64>> = vec![DVector::zeros(n_in); n_steps];
            let mut dh_rec = DVector::zeros(h);
            let mut dc_next = DVector::zeros(h);
            for t in (0..n_steps).rev() {
                let s = &steps[t];
                // Through dropout, then combine with the recurrent flow.
                let mut dh = d_out[t].component_mul(&s.drop_scale);
                dh += &dh_rec;
                let mut dc = dc_next.clone();
                for k in 0..h {
                    dc[k] += dh[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
                }
                let mut dz = DVector::zeros(GATES * h);
                for k in 0..h {
                    let di = dc[k] * s.g[k];
                    let df = dc[k] * s.c_prev[k];
                    let dg = dc[k] * s.i[k];
                    let do_ = dh[k] * s.tanh_c[k];
                    dz[k] = di * s.i[k] * (1.0 - s.i[k]);
                    dz[h + k] = df * s.f[k] * (1.0 - s.f[k]);
                    dz[2 * h + k] = dg * (1.0 - s.g[k] * s.g[k]);
                    dz[3 * h + k] = do_ * s.o[k] * (1.0 - s.o[k]);
                }
                g_layer.w.ger(1.0, &dz, &s.input, 1.0);
                g_layer.u.ger(1.0, &dz, &s.h_prev, 1.0);
                g_layer.b += &dz;
                dh_rec.gemv_tr(1.0, &layer.u, &dz, 0.0);
                d_input[t].gemv_tr(1.0, &layer.w, &dz, 0.0);
                dc_next = dc.component_mul(&s.f);
            }
            d_out = d_input;
        }
    }
}

/// Squared-error loss of a single (sequence, target) pair; the quantity the
/// finite-difference gradient check differentiates.
pub fn lstm_loss_single(net: &LstmNetwork, seq: &DMatrix<f64>, target: f64) -> f64 {
    let pred = net.predict(seq);
    (pred - target).powi(2)
}

/// Analytic gradient of [`lstm_loss_single`] as a flat vector.
pub fn lstm_grad_single(net: &LstmNetwork, seq: &DMatrix<f64>, target: f64) -> Vec<f64> {
    let cache = net.forward(seq, None, None, true);
    let mut grads = net.zeros_like();
    net.backward(&cache, 2.0 * (cache.prediction - target), &mut grads);
    grads.params_flat()
}

pub fn lstm_fit(
    sequences: &[DMatrix<f64>],
    targets: &[f64],
    input_size: usize,
    params: &LstmParams,
) -> Result<LstmModel> {
    params.validate()?;
    if sequences.is_empty() || sequences.len() != targets.len() {
        return Err(Error::data(format!(
            "lstm_fit: {} sequences vs {} targets",
            sequences.len(),
            targets.len()
        )));
    }
    for (k, s) in sequences.iter().enumerate() {
        if s.nrows() != input_size {
            return Err(Error::data(format!(
                "sequence {k} has {} rows, expected {input_size}",
                s.nrows()
            )));
        }
    }

    let mut init_rng = seeding::rng_for(params.rng_seed, &[0x6c73_746d, 0]);
    let mut net = LstmNetwork::new(input_size, params, &mut init_rng);
    let mut shuffle_rng = seeding::rng_for(params.rng_seed, &[0x6c73_746d, 1]);
    let mut drop_rng = seeding::rng_for(params.rng_seed, &[0x6c73_746d, 2]);

    let mut theta = net.params_flat();
    let mut adam = Adam::new(
        theta.len(),
        AdamParams {
            learning_rate: params.learning_rate,
            ..AdamParams::default()
        },
    );

    let n = sequences.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(params.batch_size).enumerate() {
            let mut grads = net.zeros_like();
            let mut batch_loss = 0.0;
            for &k in batch {
                let dropout = if params.dropout > 0.0 {
                    Some((params.dropout, &mut drop_rng as &mut dyn RngCore))
                } else {
                    None
                };
                let cache = net.forward(&sequences[k], None, dropout, true);
                let err = cache.prediction - targets[k];
                batch_loss += err * err;
                net.backward(&cache, 2.0 * err / batch.len() as f64, &mut grads);
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::data(format!(
                    "lstm_fit: non-finite loss at epoch {epoch} batch {batch_idx} \
                     (learning_rate {:.3e}, hidden {}, layers {}; check input scaling \
                     or lower the learning rate)",
                    params.learning_rate, params.hidden_units, params.layers
                )));
            }
            epoch_loss += batch_loss * batch.len() as f64;
            let grad_flat = grads.params_flat();
            adam.step(&mut theta, &grad_flat);
            net.set_params_flat(&theta);
        }
        epoch_losses.push(epoch_loss / n as f64);
    }

    Ok(LstmModel {
        network: net,
        params: params.clone(),
        epoch_losses,
    })
}

pub fn lstm_predict(model: &LstmModel, seq: &DMatrix<f64>) -> f64 {
    model.network.predict(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn small_net(seed: u64, input: usize, hidden: usize, layers: usize) -> LstmNetwork {
        let params = LstmParams {
            layers,
            hidden_units: hidden,
            dropout: 0.0,
            ..LstmParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LstmNetwork::new(input, &params, &mut rng)
    }

    fn max_rel_grad_error(net: &mut LstmNetwork, seq: &DMatrix<f64>, target: f64) -> f64 {
        let analytic = lstm_grad_single(net, seq, target);
        let mut theta = net.params_flat();
        let step = 1e-5;
        let mut worst = 0.0f64;
        for p in 0..theta.len() {
            let orig = theta[p];
            theta[p] = orig + step;
            net.set_params_flat(&theta);
            let up = lstm_loss_single(net, seq, target);
            theta[p] = orig - step;
            net.set_params_flat(&theta);
            let down = lstm_loss_single(net, seq, target);
            theta[p] = orig;
            net.set_params_flat(&theta);
            let numeric = (up - down) / (2.0 * step);
            let denom = analytic[p].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[p] - numeric).abs() / denom);
        }
        worst
    }

    #[test]
    fn gradient_check_single_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for draw in 0..5 {
            let mut net = small_net(draw, 3, 2, 1);
            let t_len = 2 + (draw as usize % 4);
            let seq = DMatrix::from_fn(3, t_len, |_, _| rng.random_range(-1.5..1.5));
            let target = rng.random_range(-2.0..2.0);
            let err = max_rel_grad_error(&mut net, &seq, target);
            assert!(err < 1e-4, "draw {draw}: max rel grad error {err}");
        }
    }

    #[test]
    fn gradient_check_two_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = small_net(21, 2, 3, 2);
        let seq = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
        let err = max_rel_grad_error(&mut net, &seq, 0.7);
        assert!(err < 1e-4, "max rel grad error {err}");
    }

    #[test]
    fn zero_input_at_initialization_outputs_head_bias() {
        let net = small_net(4, 5, 8, 2);
        let seq = DMatrix::zeros(5, 6);
        assert_eq!(net.predict(&seq), net.head_b);
        assert_eq!(net.head_b, 0.0);
    }

    #[test]
    fn padded_steps_do_not_change_prediction() {
        let net = small_net(12, 3, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seq = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let plain = net.predict(&seq);

        let mut padded = DMatrix::zeros(3, 5);
        padded.view_mut((0, 2), (3, 3)).copy_from(&seq);
        let valid = [false, false, true, true, true];
        let masked = net.predict_masked(&padded, &valid);
        assert_eq!(plain.to_bits(), masked.to_bits());
    }

    #[test]
    fn inference_is_deterministic_even_after_dropout_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sequences: Vec<DMatrix<f64>> = (0..12)
            .map(|_| DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let targets: Vec<f64> = sequences
            .iter()
            .map(|s| s[(0, 2)] + 0.5 * s[(1, 1)])
            .collect();
        let params = LstmParams {
            layers: 2,
            hidden_units: 4,
            dropout: 0.5,
            learning_rate: 1e-2,
            epochs: 3,
            batch_size: 4,
            rng_seed: 9,
        };
        let model = lstm_fit(&sequences, &targets, 2, &params).unwrap();
        let a = lstm_predict(&model, &sequences[0]);
        let b = lstm_predict(&model, &sequences[0]);
        assert_eq!(a.to_bits(), b.to_bits());

        let again = lstm_fit(&sequences, &targets, 2, &params).unwrap();
        assert_eq!(model.network, again.network);
    }

    // Toy linear task: full-batch training must descend over early epochs.
    #[test]
    fn training_loss_non_increasing_on_toy_task() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sequences: Vec<DMatrix<f64>> = (0..32)
            .map(|_| DMatrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let targets: Vec<f64> = sequences
            .iter()
            .map(|s| 0.8 * s[(0, 3)] - 0.3 * s[(1, 3)] + 0.2 * s[(0, 0)])
            .collect();
        let params = LstmParams {
            layers: 1,
            hidden_units: 8,
            dropout: 0.0,
            learning_rate: 5e-3,
            epochs: 6,
            batch_size: 32,
            rng_seed: 0,
        };
        let model = lstm_fit(&sequences, &targets, 2, &params).unwrap();
        for w in model.epoch_losses.windows(2).take(5) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "loss rose: {:?}",
                model.epoch_losses
            );
        }
    }
}
