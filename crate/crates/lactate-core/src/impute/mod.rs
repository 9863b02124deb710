//! Twelve imputation methods behind one fit/transform contract: `fit` learns
//! state from training-fold data only; `transform` fills the missing entries
//! of any grid without touching observed entries.

pub mod ae;
mod chained;
mod factor;
mod flat;
mod knn;
mod missforest;
mod ppca;
mod simple;
mod softimpute;

pub use chained::{MiceState, RidgeModel};
pub use factor::FactorState;
pub use knn::KnnState;
pub use missforest::MissForestState;
pub use ppca::{ppca_reconstruct, PpcaState};
pub use simple::{FeedForwardState, GroupMeanState, PerFeatureState};
pub use softimpute::SoftImputeState;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

use crate::data::AlignedGrid;
use crate::error::{Error, Result};
use flat::{flatten, write_back};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMethod {
    Mean,
    Median,
    GroupMean,
    FeedForward,
    IndicatorMean,
    Ppca,
    Mf,
    SoftImpute,
    Knn,
    MissForest,
    Mice,
    Ae,
}

impl ImputeMethod {
    pub const ALL: [ImputeMethod; 12] = [
        ImputeMethod::Mean,
        ImputeMethod::Median,
        ImputeMethod::GroupMean,
        ImputeMethod::FeedForward,
        ImputeMethod::IndicatorMean,
        ImputeMethod::Ppca,
        ImputeMethod::Mf,
        ImputeMethod::SoftImpute,
        ImputeMethod::Knn,
        ImputeMethod::MissForest,
        ImputeMethod::Mice,
        ImputeMethod::Ae,
    ];

    /// Config-file name.
    pub fn as_str(&self) -> &'static str {
        match self {
            ImputeMethod::Mean => "mean",
            ImputeMethod::Median => "median",
            ImputeMethod::GroupMean => "group_mean",
            ImputeMethod::FeedForward => "feed_forward",
            ImputeMethod::IndicatorMean => "indicator_mean",
            ImputeMethod::Ppca => "ppca",
            ImputeMethod::Mf => "mf",
            ImputeMethod::SoftImpute => "soft_impute",
            ImputeMethod::Knn => "knn",
            ImputeMethod::MissForest => "miss_forest",
            ImputeMethod::Mice => "mice",
            ImputeMethod::Ae => "ae",
        }
    }

    /// Human label used in report tables.
    pub fn label(&self) -> &'static str {
        match self {
            ImputeMethod::Mean => "Mean",
            ImputeMethod::Median => "Median",
            ImputeMethod::GroupMean => "GroupMean",
            ImputeMethod::FeedForward => "FeedForward",
            ImputeMethod::IndicatorMean => "Indicator",
            ImputeMethod::Ppca => "PPCA",
            ImputeMethod::Mf => "MF",
            ImputeMethod::SoftImpute => "SoftImpute",
            ImputeMethod::Knn => "KNN",
            ImputeMethod::MissForest => "MissForest",
            ImputeMethod::Mice => "MICE",
            ImputeMethod::Ae => "AE",
        }
    }

    pub fn parse(name: &str) -> Result<ImputeMethod> {
        Self::ALL
            .iter()
            .find(|m| m.as_str() == name)
            .copied()
            .ok_or_else(|| {
                let legal: Vec<&str> = Self::ALL.iter().map(|m| m.as_str()).collect();
                Error::config(format!(
                    "unknown imputer '{}'; legal names: {}",
                    name,
                    legal.join(", ")
                ))
            })
    }
}

impl fmt::Display for ImputeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Method hyperparameters; every field has a documented default and only the
/// fields of the chosen method are read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputeParams {
    pub ppca_components: usize,
    pub ppca_tolerance: f64,
    pub ppca_max_iter: usize,
    pub mf_rank: usize,
    pub mf_ridge: f64,
    pub mf_sweeps: usize,
    pub soft_steps: usize,
    pub soft_tolerance: f64,
    /// lambda_min = lambda_max * this ratio.
    pub soft_lambda_floor_ratio: f64,
    /// Working-rank cap; None means min(n_rows, n_features) - 1.
    pub soft_max_rank: Option<usize>,
    pub knn_k: usize,
    pub mice_rounds: usize,
    pub mice_chains: usize,
    pub mice_ridge: f64,
    pub missforest_max_rounds: usize,
    pub missforest_trees: usize,
    pub ae_epochs: usize,
    pub ae_learning_rate: f64,
    pub ae_batch_size: usize,
}

impl Default for ImputeParams {
    fn default() -> Self {
        ImputeParams {
            ppca_components: 10,
            ppca_tolerance: 1e-5,
            ppca_max_iter: 200,
            mf_rank: 10,
            mf_ridge: 1e-2,
            mf_sweeps: 100,
            soft_steps: 10,
            soft_tolerance: 1e-4,
            soft_lambda_floor_ratio: 1e-4,
            soft_max_rank: None,
            knn_k: 5,
            mice_rounds: 10,
            mice_chains: 3,
            mice_ridge: 1e-2,
            missforest_max_rounds: 10,
            missforest_trees: 50,
            ae_epochs: 50,
            ae_learning_rate: 1e-3,
            ae_batch_size: 32,
        }
    }
}

impl ImputeParams {
    pub fn validate(&self) -> Result<()> {
        if self.ppca_components < 1 || self.mf_rank < 1 || self.knn_k < 1 {
            return Err(Error::config(
                "ppca_components, mf_rank and knn_k must be >= 1",
            ));
        }
        if self.soft_steps < 1
            || !(self.soft_lambda_floor_ratio > 0.0)
            || self.soft_lambda_floor_ratio >= 1.0
        {
            return Err(Error::config(
                "soft_steps must be >= 1 and soft_lambda_floor_ratio in (0, 1)",
            ));
        }
        if self.mice_rounds < 1 || self.mice_chains < 1 {
            return Err(Error::config("mice_rounds and mice_chains must be >= 1"));
        }
        if self.missforest_max_rounds < 1 || self.missforest_trees < 1 {
            return Err(Error::config(
                "missforest_max_rounds and missforest_trees must be >= 1",
            ));
        }
        if self.ae_epochs < 1 || self.ae_batch_size < 1 || !(self.ae_learning_rate > 0.0) {
            return Err(Error::config(
                "ae_epochs and ae_batch_size must be >= 1 with positive learning rate",
            ));
        }
        if !(self.mf_ridge >= 0.0 && self.mice_ridge >= 0.0) {
            return Err(Error::config("ridge penalties must be >= 0"));
        }
        Ok(())
    }
}

/// Declarative imputer choice: method, hyperparameters, seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerSpec {
    pub method: ImputeMethod,
    #[serde(default)]
    pub params: ImputeParams,
    #[serde(default)]
    pub seed: u64,
}

impl ImputerSpec {
    pub fn new(method: ImputeMethod) -> ImputerSpec {
        ImputerSpec {
            method,
            params: ImputeParams::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> ImputerSpec {
        self.seed = seed;
        self
    }
}

/// A complete grid (mask all-true) plus the pre-imputation observation mask
/// retained as provenance, one matrix per stay over the original features.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedGrid {
    pub grid: AlignedGrid,
    pub original_mask: Vec<DMatrix<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum State {
    PerFeature(PerFeatureState),
    GroupMean(GroupMeanState),
    FeedForward(FeedForwardState),
    IndicatorMean(PerFeatureState),
    Ppca(PpcaState),
    Factor(FactorState),
    SoftImpute(SoftImputeState),
    Knn(KnnState),
    MissForest(MissForestState),
    Mice(MiceState),
    Ae(ae::AeState),
}

/// Learned imputer state; fit on training folds, applied to any grid with
/// the same feature set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedImputer {
    pub version: u32,
    pub spec: ImputerSpec,
    pub feature_names: Vec<String>,
    pub warnings: Vec<String>,
    state: State,
}

pub const STATE_FILE_VERSION: u32 = 1;

pub fn fit(spec: &ImputerSpec, train: &AlignedGrid) -> Result<FittedImputer> {
    spec.params.validate()?;
    let names: Vec<String> = train.features.iter().map(|f| f.name.clone()).collect();
    let fv = flatten(train);
    let p = &spec.params;
    let (state, warnings) = match spec.method {
        ImputeMethod::Mean => {
            let (s, w) = simple::fit_means(&fv, &names);
            (State::PerFeature(s), w)
        }
        ImputeMethod::Median => {
            let (s, w) = simple::fit_medians(&fv, &names);
            (State::PerFeature(s), w)
        }
        ImputeMethod::GroupMean => {
            let (s, w) = simple::fit_group_means(train, &fv, &names);
            (State::GroupMean(s), w)
        }
        ImputeMethod::FeedForward => {
            let (means, w) = flat::observed_means(&fv, &names);
            (State::FeedForward(FeedForwardState { fallback: means }), w)
        }
        ImputeMethod::IndicatorMean => {
            let (s, w) = simple::fit_means(&fv, &names);
            (State::IndicatorMean(s), w)
        }
        ImputeMethod::Ppca => {
            let (s, w) = ppca::fit_ppca(
                &fv,
                p.ppca_components,
                p.ppca_tolerance,
                p.ppca_max_iter,
                &names,
            )?;
            (State::Ppca(s), w)
        }
        ImputeMethod::Mf => {
            let (s, w) = factor::fit_factorization(
                &fv,
                p.mf_rank,
                p.mf_ridge,
                p.mf_sweeps,
                spec.seed,
                &names,
            )?;
            (State::Factor(s), w)
        }
        ImputeMethod::SoftImpute => {
            let (s, w) = softimpute::fit_soft_impute(
                &fv,
                p.soft_steps,
                p.soft_tolerance,
                p.soft_lambda_floor_ratio,
                p.soft_max_rank,
                &names,
            )?;
            (State::SoftImpute(s), w)
        }
        ImputeMethod::Knn => {
            let (s, w) = knn::fit_knn(&fv, p.knn_k, &names)?;
            (State::Knn(s), w)
        }
        ImputeMethod::MissForest => {
            let (s, w) = missforest::fit_missforest(
                &fv,
                p.missforest_max_rounds,
                p.missforest_trees,
                spec.seed,
                &names,
            )?;
            (State::MissForest(s), w)
        }
        ImputeMethod::Mice => {
            let (s, w) = chained::fit_mice(
                &fv,
                p.mice_rounds,
                p.mice_chains,
                p.mice_ridge,
                spec.seed,
                &names,
            )?;
            (State::Mice(s), w)
        }
        ImputeMethod::Ae => {
            let (s, w) = ae::fit_ae(
                &fv,
                p.ae_epochs,
                p.ae_learning_rate,
                p.ae_batch_size,
                spec.seed,
                &names,
            )?;
            (State::Ae(s), w)
        }
    };
    Ok(FittedImputer {
        version: STATE_FILE_VERSION,
        spec: spec.clone(),
        feature_names: names,
        warnings,
        state,
    })
}

impl FittedImputer {
    pub fn method(&self) -> ImputeMethod {
        self.spec.method
    }

    /// Fills every missing entry of `grid`; observed entries pass through
    /// bit-identically and the result's mask is all-true. IndicatorMean
    /// additionally appends one 0/1 feature row per original feature, equal
    /// to the original mask.
    pub fn transform(&self, grid: &AlignedGrid) -> Result<ImputedGrid> {
        let grid_names: Vec<&str> = grid.features.iter().map(|f| f.name.as_str()).collect();
        if grid_names.len() != self.feature_names.len()
            || grid_names
                .iter()
                .zip(&self.feature_names)
                .any(|(a, b)| *a != b.as_str())
        {
            return Err(Error::data(format!(
                "feature set mismatch: imputer was fitted on [{}], grid has [{}]",
                self.feature_names.join(", "),
                grid_names.join(", ")
            )));
        }
        let original_mask: Vec<DMatrix<bool>> =
            grid.stays.iter().map(|s| s.mask.clone()).collect();
        let out = match &self.state {
            State::PerFeature(s) => simple::transform_constant(grid, &s.values)?,
            State::GroupMean(s) => simple::transform_group_means(grid, s)?,
            State::FeedForward(s) => simple::transform_feed_forward(grid, s)?,
            State::IndicatorMean(s) => simple::transform_indicator_mean(grid, &s.values)?,
            State::Ppca(s) => {
                let fv = flatten(grid);
                let filled = ppca::transform_ppca(&fv, s);
                write_back(grid, &fv, &filled)?
            }
            State::Factor(s) => {
                let fv = flatten(grid);
                let filled = factor::transform_factorization(&fv, s);
                write_back(grid, &fv, &filled)?
            }
            State::SoftImpute(s) => {
                let fv = flatten(grid);
                let filled = softimpute::transform_soft_impute(&fv, s);
                write_back(grid, &fv, &filled)?
            }
            State::Knn(s) => {
                let fv = flatten(grid);
                let filled = knn::transform_knn(&fv, s);
                write_back(grid, &fv, &filled)?
            }
            State::MissForest(s) => {
                let fv = flatten(grid);
                let filled = missforest::transform_missforest(&fv, s);
                write_back(grid, &fv, &filled)?
            }
            State::Mice(s) => {
                let fv = flatten(grid);
                let filled = chained::transform_mice(&fv, s);
                write_back(grid, &fv, &filled)?
            }
            State::Ae(s) => {
                let fv = flatten(grid);
                let filled = ae::transform_ae(&fv, s);
                write_back(grid, &fv, &filled)?
            }
        };
        Ok(ImputedGrid {
            grid: out,
            original_mask,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<FittedImputer> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let imp: FittedImputer = serde_json::from_str(&raw)?;
        if imp.version != STATE_FILE_VERSION {
            return Err(Error::data(format!(
                "imputer state file version {} unsupported (expected {})",
                imp.version, STATE_FILE_VERSION
            )));
        }
        Ok(imp)
    }

    /// Per-iteration regularized objective values of the soft-impute path,
    /// grouped by shrinkage step.
    pub fn soft_impute_objective_log(&self) -> Option<&Vec<Vec<f64>>> {
        match &self.state {
            State::SoftImpute(s) => Some(&s.objective_log),
            _ => None,
        }
    }

    pub fn missforest_round_deltas(&self) -> Option<&Vec<f64>> {
        match &self.state {
            State::MissForest(s) => Some(&s.round_deltas),
            _ => None,
        }
    }

    pub fn mice_round_deltas(&self) -> Option<&Vec<Vec<f64>>> {
        match &self.state {
            State::Mice(s) => Some(&s.round_deltas),
            _ => None,
        }
    }

    pub fn ppca_state(&self) -> Option<&PpcaState> {
        match &self.state {
            State::Ppca(s) => Some(s),
            _ => None,
        }
    }

    pub fn per_feature_values(&self) -> Option<&[f64]> {
        match &self.state {
            State::PerFeature(s) | State::IndicatorMean(s) => Some(&s.values),
            _ => None,
        }
    }

    pub fn group_mean_state(&self) -> Option<&GroupMeanState> {
        match &self.state {
            State::GroupMean(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureQuality {
    pub feature: String,
    pub n_cells: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub per_feature: Vec<FeatureQuality>,
    pub overall_rmse: f64,
    pub n_cells: usize,
}

/// RMSE of imputed values against the pre-corruption sidecar, computed only
/// over cells that were observed pre-corruption and masked afterwards.
pub fn impute_quality(truth: &AlignedGrid, imputed: &ImputedGrid) -> Result<QualityReport> {
    let d = truth.n_features();
    if truth.stays.len() != imputed.grid.stays.len()
        || imputed.original_mask.len() != truth.stays.len()
    {
        return Err(Error::data(format!(
            "impute_quality: {} truth stays vs {} imputed",
            truth.stays.len(),
            imputed.grid.stays.len()
        )));
    }
    if imputed.grid.n_features() < d {
        return Err(Error::data(
            "impute_quality: imputed grid has fewer features than the sidecar",
        ));
    }
    let mut sq = vec![0.0f64; d];
    let mut counts = vec![0usize; d];
    for ((t_stay, i_stay), mask) in truth
        .stays
        .iter()
        .zip(&imputed.grid.stays)
        .zip(&imputed.original_mask)
    {
        if t_stay.n_bins() != i_stay.n_bins() || mask.ncols() != t_stay.n_bins() {
            return Err(Error::data(format!(
                "impute_quality: bin mismatch for stay {}",
                t_stay.descriptor.stay_id
            )));
        }
        for f in 0..d {
            for b in 0..t_stay.n_bins() {
                if t_stay.mask[(f, b)] && !mask[(f, b)] {
                    let diff = i_stay.values[(f, b)] - t_stay.values[(f, b)];
                    sq[f] += diff * diff;
                    counts[f] += 1;
                }
            }
        }
    }
    let mut per_feature = Vec::new();
    let (mut total_sq, mut total_n) = (0.0, 0usize);
    for f in 0..d {
        total_sq += sq[f];
        total_n += counts[f];
        if counts[f] > 0 {
            per_feature.push(FeatureQuality {
                feature: truth.features[f].name.clone(),
                n_cells: counts[f],
                rmse: (sq[f] / counts[f] as f64).sqrt(),
            });
        }
    }
    Ok(QualityReport {
        per_feature,
        overall_rmse: if total_n > 0 {
            (total_sq / total_n as f64).sqrt()
        } else {
            0.0
        },
        n_cells: total_n,
    })
}

#[cfg(test)]
mod tests;
