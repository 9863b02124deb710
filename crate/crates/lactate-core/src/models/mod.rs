//! The three regressors of the pipeline (lasso, random forest, LSTM) plus
//! the shared sample preprocessing: zero-padding/flattening for the static
//! models and per-feature standardization for the recurrent one.

pub mod adam;
pub mod forest;
pub mod lasso;
pub mod lstm;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One regression instance: a history window of grid columns ending at the
/// anchor bin, static covariates, and the lactate value `beta` ahead.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub stay_id: String,
    /// Anchor bin; the target is the lactate value at `t_index + beta_bins`.
    pub t_index: usize,
    /// `[feature, window_bin]`, oldest bin first.
    pub history: DMatrix<f64>,
    /// Encoded static covariates, appended after the windowed features.
    pub statics: Vec<f64>,
    /// Raw mmol/L; never standardized.
    pub target: f64,
}

impl Sample {
    pub fn window_len(&self) -> usize {
        self.history.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.history.nrows()
    }
}

/// Flattens samples into a design matrix `[n_samples, features * max_window_bins
/// + n_statics]`. Shorter histories are left-padded with zeros on the oldest
/// side; flattening is time-major then feature (bin 0's features first);
/// statics follow the windowed block.
pub fn pad_and_flatten(samples: &[Sample], max_window_bins: usize) -> Result<DMatrix<f64>> {
    if samples.is_empty() {
        return Err(Error::data("pad_and_flatten: no samples"));
    }
    let n_feat = samples[0].n_features();
    let n_statics = samples[0].statics.len();
    let width = n_feat * max_window_bins + n_statics;
    let mut x = DMatrix::zeros(samples.len(), width);
    for (i, s) in samples.iter().enumerate() {
        if s.n_features() != n_feat || s.statics.len() != n_statics {
            return Err(Error::data(format!(
                "sample {} has inconsistent feature layout",
                s.stay_id
            )));
        }
        let w = s.window_len();
        if w > max_window_bins {
            return Err(Error::data(format!(
                "sample {}@{} window {} exceeds max {}",
                s.stay_id, s.t_index, w, max_window_bins
            )));
        }
        let pad = max_window_bins - w;
        for t in 0..w {
            for f in 0..n_feat {
                x[(i, (pad + t) * n_feat + f)] = s.history[(f, t)];
            }
        }
        for (k, v) in s.statics.iter().enumerate() {
            x[(i, n_feat * max_window_bins + k)] = *v;
        }
    }
    Ok(x)
}

/// Per-feature affine transform learned from training samples only.
///
/// The feature axis is the history rows followed by the statics; history
/// statistics pool over every (sample, bin) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    n_history_features: usize,
}

pub fn standardize_fit(samples: &[Sample]) -> Result<Standardizer> {
    if samples.len() < 2 {
        return Err(Error::data(format!(
            "standardize_fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n_feat = samples[0].n_features();
    let n_statics = samples[0].statics.len();
    let mut mean = vec![0.0; n_feat + n_statics];
    let mut count = vec![0usize; n_feat + n_statics];
    for s in samples {
        for t in 0..s.window_len() {
            for f in 0..n_feat {
                mean[f] += s.history[(f, t)];
                count[f] += 1;
            }
        }
        for (k, v) in s.statics.iter().enumerate() {
            mean[n_feat + k] += v;
            count[n_feat + k] += 1;
        }
    }
    for (m, c) in mean.iter_mut().zip(&count) {
        *m /= (*c).max(1) as f64;
    }
    let mut var = vec![0.0; n_feat + n_statics];
    for s in samples {
        for t in 0..s.window_len() {
            for f in 0..n_feat {
                let d = s.history[(f, t)] - mean[f];
                var[f] += d * d;
            }
        }
        for (k, v) in s.statics.iter().enumerate() {
            let d = v - mean[n_feat + k];
            var[n_feat + k] += d * d;
        }
    }
    let std = var
        .iter()
        .zip(&count)
        .map(|(v, c)| {
            let s = (v / (*c).max(1) as f64).sqrt();
            // Constant features standardize to zero with a unit scale.
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    Ok(Standardizer {
        mean,
        std,
        n_history_features: n_feat,
    })
}

pub fn standardize_apply(std: &Standardizer, samples: &[Sample]) -> Vec<Sample> {
    let n_feat = std.n_history_features;
    samples
        .iter()
        .map(|s| {
            let mut out = s.clone();
            for t in 0..out.window_len() {
                for f in 0..n_feat {
                    out.history[(f, t)] = (out.history[(f, t)] - std.mean[f]) / std.std[f];
                }
            }
            for (k, v) in out.statics.iter_mut().enumerate() {
                *v = (*v - std.mean[n_feat + k]) / std.std[n_feat + k];
            }
            out
        })
        .collect()
}

/// Scalar standardizer for optional target normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarStandardizer {
    pub mean: f64,
    pub std: f64,
}

impl ScalarStandardizer {
    pub fn fit(values: &[f64]) -> ScalarStandardizer {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        ScalarStandardizer { mean, std }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

pub(crate) fn check_finite_matrix(x: &DMatrix<f64>, what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::data(format!("{what} contains non-finite entries")));
    }
    Ok(())
}

pub const MODEL_FILE_VERSION: u32 = 1;

/// Versioned envelope for persisted model state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile<M> {
    pub version: u32,
    pub kind: String,
    pub model: M,
}

/// Persists any of the three fitted models to a versioned JSON state file.
pub fn save_model<M: Serialize>(model: &M, kind: &str, path: &std::path::Path) -> Result<()> {
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        kind: kind.to_string(),
        model,
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_model<M: serde::de::DeserializeOwned>(
    kind: &str,
    path: &std::path::Path,
) -> Result<M> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile<M> = serde_json::from_str(&raw)?;
    if file.version != MODEL_FILE_VERSION {
        return Err(Error::data(format!(
            "model file version {} unsupported (expected {})",
            file.version, MODEL_FILE_VERSION
        )));
    }
    if file.kind != kind {
        return Err(Error::data(format!(
            "model file holds a '{}' model, expected '{kind}'",
            file.kind
        )));
    }
    Ok(file.model)
}

#[cfg(test)]
pub(crate) fn toy_sample(
    stay: &str,
    t: usize,
    history: DMatrix<f64>,
    statics: Vec<f64>,
    target: f64,
) -> Sample {
    Sample {
        stay_id: stay.to_string(),
        t_index: t,
        history,
        statics,
        target,
    }
}

pub use self::types::{ForestParams, LassoParams, LstmParams};

mod types {
    use serde::{Deserialize, Serialize};

    use crate::error::{Error, Result};

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    pub struct LassoParams {
        pub l1_penalty: f64,
        pub max_sweeps: usize,
        pub tolerance: f64,
        pub intercept: bool,
    }

    impl Default for LassoParams {
        fn default() -> Self {
            LassoParams {
                l1_penalty: 1e-3,
                max_sweeps: 1000,
                tolerance: 1e-8,
                intercept: true,
            }
        }
    }

    impl LassoParams {
        pub fn validate(&self) -> Result<()> {
            if !(self.l1_penalty >= 0.0 && self.l1_penalty.is_finite()) {
                return Err(Error::config(format!(
                    "l1_penalty must be finite and >= 0, got {}",
                    self.l1_penalty
                )));
            }
            if self.max_sweeps == 0 {
                return Err(Error::config("max_sweeps must be >= 1"));
            }
            Ok(())
        }
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    pub struct ForestParams {
        pub n_trees: usize,
        pub max_depth: Option<usize>,
        pub min_samples_leaf: usize,
        /// Fraction of features considered at each split.
        pub features_per_split: f64,
        pub bootstrap: bool,
        pub rng_seed: u64,
    }

    impl Default for ForestParams {
        fn default() -> Self {
            ForestParams {
                n_trees: 100,
                max_depth: None,
                min_samples_leaf: 5,
                features_per_split: 1.0 / 3.0,
                bootstrap: true,
                rng_seed: 0,
            }
        }
    }

    impl ForestParams {
        pub fn validate(&self) -> Result<()> {
            if self.n_trees < 1 {
                return Err(Error::config("n_trees must be >= 1"));
            }
            if self.min_samples_leaf < 1 {
                return Err(Error::config("min_samples_leaf must be >= 1"));
            }
            if !(self.features_per_split > 0.0 && self.features_per_split <= 1.0) {
                return Err(Error::config(format!(
                    "features_per_split must be in (0, 1], got {}",
                    self.features_per_split
                )));
            }
            Ok(())
        }
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    pub struct LstmParams {
        pub layers: usize,
        pub hidden_units: usize,
        pub dropout: f64,
        pub learning_rate: f64,
        pub epochs: usize,
        pub batch_size: usize,
        pub rng_seed: u64,
    }

    impl Default for LstmParams {
        fn default() -> Self {
            LstmParams {
                layers: 2,
                hidden_units: 64,
                dropout: 0.6,
                learning_rate: 1e-4,
                epochs: 20,
                batch_size: 100,
                rng_seed: 0,
            }
        }
    }

    impl LstmParams {
        pub fn validate(&self) -> Result<()> {
            if self.layers < 1 || self.hidden_units < 1 {
                return Err(Error::config("layers and hidden_units must be >= 1"));
            }
            if !(0.0..1.0).contains(&self.dropout) {
                return Err(Error::config(format!(
                    "dropout must be in [0, 1), got {}",
                    self.dropout
                )));
            }
            if self.batch_size < 1 || self.epochs < 1 {
                return Err(Error::config("epochs and batch_size must be >= 1"));
            }
            if !(self.learning_rate > 0.0) {
                return Err(Error::config("learning_rate must be > 0"));
            }
            Ok(())
        }
    }
}
