//! Cross-validated experiment over the imputer-by-model grid. Every
//! (imputer, fold) pair is an independent job with RNG streams derived from
//! (seed, imputer index, fold), so results are byte-identical regardless of
//! job scheduling or thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::folds::{kfold, FoldAssignment};
use super::metrics::{mae, r2, rmse};
use super::samples::{build_samples, StaticEncoder};
use crate::data::{AlignedGrid, TaskParams};
use crate::error::{Error, Result};
use crate::impute::{self, ImputerSpec};
use crate::models::{
    forest::{forest_fit, forest_predict},
    lasso::{lasso_fit, lasso_predict},
    lstm::{lstm_fit, lstm_predict},
    pad_and_flatten, standardize_apply, standardize_fit, ForestParams, LassoParams, LstmParams,
    Sample, ScalarStandardizer,
};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lasso,
    Forest,
    Lstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Lasso, ModelKind::Forest, ModelKind::Lstm];

    /// Report-table label.
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Lasso => "LR",
            ModelKind::Forest => "RF",
            ModelKind::Lstm => "LSTM",
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Lasso => "lasso",
            ModelKind::Forest => "forest",
            ModelKind::Lstm => "lstm",
        }
    }

    pub fn parse(name: &str) -> Result<ModelKind> {
        Self::ALL
            .iter()
            .find(|m| m.as_str() == name || m.label().eq_ignore_ascii_case(name))
            .copied()
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown model '{name}'; legal names: lasso, forest, lstm"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: TaskParams,
    pub imputers: Vec<ImputerSpec>,
    pub models: Vec<ModelKind>,
    pub folds: usize,
    pub rng_seed: u64,
    /// Histories are truncated to this many most recent bins.
    pub max_window_bins: usize,
    pub max_dx_categories: usize,
    pub lasso: LassoParams,
    /// Optional inner-validation grid for the l1 penalty: when non-empty,
    /// each fold holds out one fifth of its training stays, picks the
    /// penalty with the lowest validation MSE, then refits on the full
    /// training fold.
    pub lasso_lambda_grid: Vec<f64>,
    pub forest: ForestParams,
    pub lstm: LstmParams,
    /// Standardize inputs for the static models too (the recurrent model is
    /// always standardized).
    pub standardize_for_all: bool,
    /// Train the recurrent model on standardized targets and invert its
    /// predictions back to raw units.
    pub standardize_targets_for_lstm: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskParams::default(),
            imputers: Vec::new(),
            models: Vec::new(),
            folds: 5,
            rng_seed: 0,
            max_window_bins: 48,
            max_dx_categories: 32,
            lasso: LassoParams::default(),
            lasso_lambda_grid: Vec::new(),
            forest: ForestParams::default(),
            lstm: LstmParams::default(),
            standardize_for_all: false,
            standardize_targets_for_lstm: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, bin_width_minutes: u32) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::config("model list is empty"));
        }
        if self.imputers.is_empty() {
            return Err(Error::config("imputer list is empty"));
        }
        if self.folds < 2 {
            return Err(Error::config("folds must be >= 2"));
        }
        self.task.validate(bin_width_minutes)?;
        if self.max_window_bins < self.task.alpha_bins(bin_width_minutes) {
            return Err(Error::config(
                "max_window_bins must cover the history horizon",
            ));
        }
        self.lasso.validate()?;
        self.forest.validate()?;
        self.lstm.validate()?;
        for imp in &self.imputers {
            imp.params.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FoldOutcome {
    Ok(FoldMetrics),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub per_fold: Vec<FoldOutcome>,
}

impl CellResult {
    pub fn ok_values(&self, metric: &str) -> Vec<f64> {
        self.per_fold
            .iter()
            .filter_map(|f| match f {
                FoldOutcome::Ok(m) => Some(match metric {
                    "mae" => m.mae,
                    "rmse" => m.rmse,
                    "r2" => m.r2,
                    _ => unreachable!("unknown metric {metric}"),
                }),
                FoldOutcome::Failed(_) => None,
            })
            .collect()
    }

    pub fn all_ok(&self) -> bool {
        self.per_fold
            .iter()
            .all(|f| matches!(f, FoldOutcome::Ok(_)))
    }

    pub fn failures(&self) -> Vec<(usize, &str)> {
        self.per_fold
            .iter()
            .enumerate()
            .filter_map(|(i, f)| match f {
                FoldOutcome::Failed(msg) => Some((i, msg.as_str())),
                _ => None,
            })
            .collect()
    }
}

/// Mean and sample standard deviation over the fold values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const METRICS: [&str; 3] = ["mae", "rmse", "r2"];

/// Per-(imputer, model) fold metrics with per-fold raw values retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub imputer_labels: Vec<String>,
    pub model_labels: Vec<String>,
    pub folds: usize,
    /// Keyed by (imputer label, model label).
    pub cells: BTreeMap<(String, String), CellResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub stay_id: String,
    pub t_index: usize,
    pub y_true: f64,
    pub y_pred: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    pub fold_assignment: FoldAssignment,
    /// Keyed by (imputer label, model label, fold).
    pub predictions: BTreeMap<(String, String, usize), Vec<PredictionRow>>,
}

struct FoldJobResult {
    imputer_idx: usize,
    fold: usize,
    per_model: Vec<std::result::Result<(FoldMetrics, Vec<PredictionRow>), String>>,
}

fn model_seed(cfg: &ExperimentConfig, imputer_idx: usize, fold: usize, model_idx: usize) -> u64 {
    seeding::mix(
        cfg.rng_seed,
        &[0x6d6f_64_65, imputer_idx as u64, fold as u64, model_idx as u64],
    )
}

/// Stay-level inner validation over the configured penalty grid; ties take
/// the earliest grid entry.
fn select_lasso_penalty(
    cfg: &ExperimentConfig,
    samples: &[Sample],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    seed: u64,
) -> Result<LassoParams> {
    let mut stays: Vec<&str> = Vec::new();
    for s in samples {
        if stays.last() != Some(&s.stay_id.as_str()) && !stays.contains(&s.stay_id.as_str()) {
            stays.push(&s.stay_id);
        }
    }
    let mut order: Vec<usize> = (0..stays.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut crate::seeding::rng_for(seed, &[0x6c31]));
    let n_val_stays = (stays.len() / 5).max(1);
    let val_stays: std::collections::HashSet<&str> = order[..n_val_stays]
        .iter()
        .map(|&i| stays[i])
        .collect();
    let val_rows: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| val_stays.contains(s.stay_id.as_str()))
        .map(|(i, _)| i)
        .collect();
    let fit_rows: Vec<usize> = (0..samples.len()).filter(|i| !val_rows.contains(i)).collect();
    if val_rows.is_empty() || fit_rows.is_empty() {
        return Ok(cfg.lasso.clone());
    }
    let take = |rows: &[usize]| -> (DMatrix<f64>, DVector<f64>) {
        (
            DMatrix::from_fn(rows.len(), x.ncols(), |r, c| x[(rows[r], c)]),
            DVector::from_fn(rows.len(), |r, _| y[rows[r]]),
        )
    };
    let (x_fit, y_fit) = take(&fit_rows);
    let (x_val, y_val) = take(&val_rows);
    let mut best: Option<(f64, f64)> = None; // (mse, lambda)
    for &lambda in &cfg.lasso_lambda_grid {
        let params = LassoParams {
            l1_penalty: lambda,
            ..cfg.lasso.clone()
        };
        let model = lasso_fit(&x_fit, &y_fit, &params)?;
        let pred = lasso_predict(&model, &x_val);
        let mse = (&pred - &y_val).norm_squared() / y_val.len() as f64;
        if best.map_or(true, |(m, _)| mse < m) {
            best = Some((mse, lambda));
        }
    }
    Ok(LassoParams {
        l1_penalty: best.map(|(_, l)| l).unwrap_or(cfg.lasso.l1_penalty),
        ..cfg.lasso.clone()
    })
}

fn sequences_for_lstm(samples: &[Sample]) -> Vec<DMatrix<f64>> {
    samples
        .iter()
        .map(|s| {
            let n_feat = s.n_features();
            let n_statics = s.statics.len();
            let t = s.window_len();
            DMatrix::from_fn(n_feat + n_statics, t, |r, c| {
                if r < n_feat {
                    s.history[(r, c)]
                } else {
                    s.statics[r - n_feat]
                }
            })
        })
        .collect()
}

fn run_fold_models(
    cfg: &ExperimentConfig,
    imputer_idx: usize,
    fold: usize,
    train_samples: &[Sample],
    test_samples: &[Sample],
) -> Vec<std::result::Result<(FoldMetrics, Vec<PredictionRow>), String>> {
    let y_true: Vec<f64> = test_samples.iter().map(|s| s.target).collect();
    let eval_metrics = |y_pred: &[f64]| -> Result<FoldMetrics> {
        Ok(FoldMetrics {
            mae: mae(&y_true, y_pred)?,
            rmse: rmse(&y_true, y_pred)?,
            r2: r2(&y_true, y_pred)?,
            n_samples: y_true.len(),
        })
    };
    let rows = |y_pred: &[f64]| -> Vec<PredictionRow> {
        test_samples
            .iter()
            .zip(y_pred)
            .map(|(s, &p)| PredictionRow {
                stay_id: s.stay_id.clone(),
                t_index: s.t_index,
                y_true: s.target,
                y_pred: p,
            })
            .collect()
    };

    cfg.models
        .iter()
        .enumerate()
        .map(|(model_idx, kind)| {
            let seed = model_seed(cfg, imputer_idx, fold, model_idx);
            let run = || -> Result<(FoldMetrics, Vec<PredictionRow>)> {
                if train_samples.is_empty() || test_samples.is_empty() {
                    return Err(Error::data(format!(
                        "fold {fold}: {} train / {} test samples",
                        train_samples.len(),
                        test_samples.len()
                    )));
                }
                match kind {
                    ModelKind::Lasso | ModelKind::Forest => {
                        let (train_view, test_view);
                        let (train_std, test_std);
                        if cfg.standardize_for_all {
                            let st = standardize_fit(train_samples)?;
                            train_std = standardize_apply(&st, train_samples);
                            test_std = standardize_apply(&st, test_samples);
                            train_view = &train_std[..];
                            test_view = &test_std[..];
                        } else {
                            train_view = train_samples;
                            test_view = test_samples;
                        }
                        let x_train = pad_and_flatten(train_view, cfg.max_window_bins)?;
                        let x_test = pad_and_flatten(test_view, cfg.max_window_bins)?;
                        let y_train =
                            DVector::from_iterator(train_view.len(), train_view.iter().map(|s| s.target));
                        let y_pred: Vec<f64> = match kind {
                            ModelKind::Lasso => {
                                let params = if cfg.lasso_lambda_grid.is_empty() {
                                    cfg.lasso.clone()
                                } else {
                                    select_lasso_penalty(cfg, train_view, &x_train, &y_train, seed)?
                                };
                                let model = lasso_fit(&x_train, &y_train, &params)?;
                                lasso_predict(&model, &x_test).iter().copied().collect()
                            }
                            ModelKind::Forest => {
                                let params = ForestParams {
                                    rng_seed: seed,
                                    ..cfg.forest.clone()
                                };
                                let model = forest_fit(&x_train, &y_train, &params)?;
                                forest_predict(&model, &x_test).iter().copied().collect()
                            }
                            ModelKind::Lstm => unreachable!(),
                        };
                        Ok((eval_metrics(&y_pred)?, rows(&y_pred)))
                    }
                    ModelKind::Lstm => {
                        // Inputs are always standardized for the recurrent model.
                        let st = standardize_fit(train_samples)?;
                        let train_std = standardize_apply(&st, train_samples);
                        let test_std = standardize_apply(&st, test_samples);
                        let train_seqs = sequences_for_lstm(&train_std);
                        let test_seqs = sequences_for_lstm(&test_std);
                        let input_size = train_seqs[0].nrows();
                        let target_std = if cfg.standardize_targets_for_lstm {
                            let ys: Vec<f64> = train_std.iter().map(|s| s.target).collect();
                            Some(ScalarStandardizer::fit(&ys))
                        } else {
                            None
                        };
                        let targets: Vec<f64> = train_std
                            .iter()
                            .map(|s| target_std.map_or(s.target, |t| t.apply(s.target)))
                            .collect();
                        let params = LstmParams {
                            rng_seed: seed,
                            ..cfg.lstm.clone()
                        };
                        let model = lstm_fit(&train_seqs, &targets, input_size, &params)?;
                        let y_pred: Vec<f64> = test_seqs
                            .iter()
                            .map(|seq| {
                                let raw = lstm_predict(&model, seq);
                                target_std.map_or(raw, |t| t.invert(raw))
                            })
                            .collect();
                        Ok((eval_metrics(&y_pred)?, rows(&y_pred)))
                    }
                }
            };
            run().map_err(|e| e.to_string())
        })
        .collect()
}

fn run_one_job(
    grid: &AlignedGrid,
    cfg: &ExperimentConfig,
    assignment: &FoldAssignment,
    imputer_idx: usize,
    fold: usize,
) -> FoldJobResult {
    let run = || -> Result<Vec<std::result::Result<(FoldMetrics, Vec<PredictionRow>), String>>> {
        let in_fold = |stay_id: &str| assignment.fold_of.get(stay_id).copied() == Some(fold);
        let train_grid = grid.subset_by(|_, s| !in_fold(&s.descriptor.stay_id));
        let test_grid = grid.subset_by(|_, s| in_fold(&s.descriptor.stay_id));

        // Imputer state depends on training-fold entries only.
        let mut spec = cfg.imputers[imputer_idx].clone();
        spec.seed = seeding::mix(
            cfg.rng_seed,
            &[0x696d_70, spec.seed, imputer_idx as u64, fold as u64],
        );
        let fitted = impute::fit(&spec, &train_grid)?;
        let train_imputed = fitted.transform(&train_grid)?;
        let test_imputed = fitted.transform(&test_grid)?;

        let encoder = StaticEncoder::fit(
            train_grid.stays.iter().map(|s| &s.descriptor.statics),
            cfg.max_dx_categories,
        );
        let train_built = build_samples(
            &train_imputed.grid,
            &train_grid,
            &cfg.task,
            cfg.max_window_bins,
            &encoder,
        )?;
        let test_built = build_samples(
            &test_imputed.grid,
            &test_grid,
            &cfg.task,
            cfg.max_window_bins,
            &encoder,
        )?;
        Ok(run_fold_models(
            cfg,
            imputer_idx,
            fold,
            &train_built.samples,
            &test_built.samples,
        ))
    };
    let per_model = match run() {
        Ok(results) => results,
        Err(e) => vec![Err(e.to_string()); cfg.models.len()],
    };
    FoldJobResult {
        imputer_idx,
        fold,
        per_model,
    }
}

/// Runs the full grid. `jobs` bounds (imputer, fold) parallelism; any value
/// yields byte-identical results.
pub fn run_experiment(
    grid: &AlignedGrid,
    cfg: &ExperimentConfig,
    jobs: Option<usize>,
) -> Result<ExperimentOutput> {
    cfg.validate(grid.bin_width_minutes)?;
    let stay_ids = grid.stay_ids();
    let assignment = kfold(&stay_ids, cfg.folds, seeding::mix(cfg.rng_seed, &[0x6376]))?;

    let job_keys: Vec<(usize, usize)> = (0..cfg.imputers.len())
        .flat_map(|i| (0..cfg.folds).map(move |f| (i, f)))
        .collect();
    let run_all = || -> Vec<FoldJobResult> {
        job_keys
            .par_iter()
            .map(|&(i, f)| run_one_job(grid, cfg, &assignment, i, f))
            .collect()
    };
    let results: Vec<FoldJobResult> = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::data(format!("thread pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };

    let imputer_labels: Vec<String> = cfg
        .imputers
        .iter()
        .map(|s| s.method.label().to_string())
        .collect();
    let model_labels: Vec<String> = cfg.models.iter().map(|m| m.label().to_string()).collect();

    let mut cells: BTreeMap<(String, String), CellResult> = BTreeMap::new();
    let mut predictions = BTreeMap::new();
    for (imp_label, _) in imputer_labels.iter().zip(&cfg.imputers) {
        for model_label in &model_labels {
            cells.insert(
                (imp_label.clone(), model_label.clone()),
                CellResult {
                    per_fold: vec![FoldOutcome::Failed("missing".into()); cfg.folds],
                },
            );
        }
    }
    for job in results {
        let imp_label = &imputer_labels[job.imputer_idx];
        for (model_idx, outcome) in job.per_model.into_iter().enumerate() {
            let model_label = &model_labels[model_idx];
            let cell = cells
                .get_mut(&(imp_label.clone(), model_label.clone()))
                .expect("cell pre-filled");
            match outcome {
                Ok((metrics, rows)) => {
                    cell.per_fold[job.fold] = FoldOutcome::Ok(metrics);
                    predictions.insert(
                        (imp_label.clone(), model_label.clone(), job.fold),
                        rows,
                    );
                }
                Err(msg) => {
                    cell.per_fold[job.fold] = FoldOutcome::Failed(msg);
                }
            }
        }
    }

    Ok(ExperimentOutput {
        table: ResultTable {
            imputer_labels,
            model_labels,
            folds: cfg.folds,
            cells,
        },
        fold_assignment: assignment,
        predictions,
    })
}
