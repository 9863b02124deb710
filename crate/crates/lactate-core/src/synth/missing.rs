//! Parameterized missingness mechanisms applied to observed cells.
//! Masking never perturbs a value that stays observed; newly masked cells
//! take the sentinel, with ground truth kept in a sidecar by the caller.

use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{categorize_lactate, AlignedGrid, LACTATE, MISSING};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    pub mechanism: Mechanism,
    /// Target marginal missing probability over the targeted observed cells.
    pub rate: f64,
    /// MAR only: the observed feature that drives masking.
    #[serde(default)]
    pub conditioning_feature: Option<String>,
    /// MAR only: logistic slope on the standardized conditioning value.
    #[serde(default = "MissingnessSpec::default_slope")]
    pub mar_slope: f64,
    /// MNAR only: masking-probability multipliers per severity band
    /// (Normal, Mild, Moderate, Severe). Non-lactate features use their own
    /// quartile bands with the same multipliers.
    #[serde(default = "MissingnessSpec::default_multipliers")]
    pub self_multipliers: [f64; 4],
    /// Restrict to these features; None targets every feature.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl MissingnessSpec {
    fn default_slope() -> f64 {
        1.5
    }

    /// Normal-band values 3x more likely masked than Severe.
    fn default_multipliers() -> [f64; 4] {
        [3.0, 2.0, 1.5, 1.0]
    }

    pub fn mcar(rate: f64, seed: u64) -> MissingnessSpec {
        MissingnessSpec {
            mechanism: Mechanism::Mcar,
            rate,
            conditioning_feature: None,
            mar_slope: Self::default_slope(),
            self_multipliers: Self::default_multipliers(),
            features: None,
            rng_seed: seed,
        }
    }

    pub fn mnar(rate: f64, seed: u64) -> MissingnessSpec {
        MissingnessSpec {
            mechanism: Mechanism::Mnar,
            ..Self::mcar(rate, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::config(format!(
                "missingness rate must be in [0, 1), got {}",
                self.rate
            )));
        }
        if self.mechanism == Mechanism::Mar && self.conditioning_feature.is_none() {
            return Err(Error::config(
                "MAR missingness needs a conditioning_feature",
            ));
        }
        if self.self_multipliers.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::config("self multipliers must be positive"));
        }
        Ok(())
    }
}

const PROB_CAP: f64 = 0.95;

/// Targeted cell: (stay, feature row, bin) that is currently observed and
/// belongs to a targeted feature.
struct Targets {
    cells: Vec<(usize, usize, usize)>,
}

fn collect_targets(grid: &AlignedGrid, spec: &MissingnessSpec) -> Result<Targets> {
    let targeted: Vec<bool> = match &spec.features {
        None => vec![true; grid.n_features()],
        Some(names) => {
            for n in names {
                if grid.feature_index(n).is_none() {
                    return Err(Error::config(format!(
                        "missingness spec names feature '{n}' absent from the grid"
                    )));
                }
            }
            grid.features
                .iter()
                .map(|f| names.iter().any(|n| *n == f.name))
                .collect()
        }
    };
    let mut cells = Vec::new();
    for (si, stay) in grid.stays.iter().enumerate() {
        for f in 0..grid.n_features() {
            if !targeted[f] {
                continue;
            }
            for b in 0..stay.n_bins() {
                if stay.mask[(f, b)] {
                    cells.push((si, f, b));
                }
            }
        }
    }
    Ok(Targets { cells })
}

/// Solves `mean(clamp(transform(base), 0, cap)) = rate` for `base` by
/// bisection; `probs` maps a base parameter to per-cell probabilities.
fn calibrate<F: Fn(f64, usize) -> f64>(n_cells: usize, rate: f64, prob_at: F) -> f64 {
    if n_cells == 0 || rate == 0.0 {
        return f64::NEG_INFINITY;
    }
    let mean_prob = |base: f64| -> f64 {
        (0..n_cells).map(|i| prob_at(base, i)).sum::<f64>() / n_cells as f64
    };
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Masks observed cells per the mechanism. Values of cells that remain
/// observed are untouched; newly masked cells hold the sentinel.
pub fn apply_missingness(grid: &AlignedGrid, spec: &MissingnessSpec) -> Result<AlignedGrid> {
    spec.validate()?;
    let targets = collect_targets(grid, spec)?;
    let mut out = grid.clone();
    if spec.rate == 0.0 || targets.cells.is_empty() {
        return Ok(out);
    }

    // Per-cell masking probabilities, calibrated to the marginal rate.
    let probs: Vec<f64> = match spec.mechanism {
        Mechanism::Mcar => vec![spec.rate; targets.cells.len()],
        Mechanism::Mar => {
            let cond_name = spec.conditioning_feature.as_deref().expect("validated");
            let Some(cond_row) = grid.feature_index(cond_name) else {
                return Err(Error::config(format!(
                    "MAR conditioning feature '{cond_name}' absent from the grid"
                )));
            };
            // Standardize the conditioning feature over its observed cells.
            let mut vals = Vec::new();
            for stay in &grid.stays {
                for b in 0..stay.n_bins() {
                    if stay.mask[(cond_row, b)] {
                        vals.push(stay.values[(cond_row, b)]);
                    }
                }
            }
            let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / vals.len().max(1) as f64;
            let std = var.sqrt().max(1e-12);
            // Conditioning value at the cell's own bin; unobserved -> 0.
            let drivers: Vec<f64> = targets
                .cells
                .iter()
                .map(|&(si, _, b)| {
                    let stay = &grid.stays[si];
                    if stay.mask[(cond_row, b)] {
                        (stay.values[(cond_row, b)] - mean) / std
                    } else {
                        0.0
                    }
                })
                .collect();
            let intercept = calibrate(targets.cells.len(), spec.rate, |a, i| {
                sigmoid(a + spec.mar_slope * drivers[i]).min(PROB_CAP)
            });
            drivers
                .iter()
                .map(|d| sigmoid(intercept + spec.mar_slope * d).min(PROB_CAP))
                .collect()
        }
        Mechanism::Mnar => {
            // Band of each cell's own value: severity categories for
            // lactate, per-feature quartiles otherwise.
            let lactate_row = grid.feature_index(LACTATE);
            let mut quartiles: Vec<Option<[f64; 3]>> = vec![None; grid.n_features()];
            for f in 0..grid.n_features() {
                if Some(f) == lactate_row {
                    continue;
                }
                let mut vals: Vec<f64> = grid
                    .stays
                    .iter()
                    .flat_map(|s| {
                        (0..s.n_bins())
                            .filter(move |&b| s.mask[(f, b)])
                            .map(move |b| s.values[(f, b)])
                    })
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let q = |p: f64| vals[((vals.len() - 1) as f64 * p).round() as usize];
                quartiles[f] = Some([q(0.25), q(0.5), q(0.75)]);
            }
            let bands: Vec<usize> = targets
                .cells
                .iter()
                .map(|&(si, f, b)| {
                    let v = grid.stays[si].values[(f, b)];
                    if Some(f) == lactate_row {
                        categorize_lactate(v).map(|c| c.index()).unwrap_or(0)
                    } else {
                        match quartiles[f] {
                            Some(q) => {
                                if v <= q[0] {
                                    0
                                } else if v <= q[1] {
                                    1
                                } else if v <= q[2] {
                                    2
                                } else {
                                    3
                                }
                            }
                            None => 0,
                        }
                    }
                })
                .collect();
            let mult = spec.self_multipliers;
            // base is log-scaled so bisection stays well conditioned.
            let base = calibrate(targets.cells.len(), spec.rate, |logb, i| {
                (logb.exp() * mult[bands[i]]).min(PROB_CAP)
            });
            bands
                .iter()
                .map(|&b| (base.exp() * mult[b]).min(PROB_CAP))
                .collect()
        }
    };

    // Per-stay RNG streams keyed by stay index; iteration order is fixed.
    let mut rngs: Vec<_> = (0..grid.stays.len())
        .map(|si| seeding::rng_for(spec.rng_seed, &[0x6d69_7373, si as u64]))
        .collect();
    for (idx, &(si, f, b)) in targets.cells.iter().enumerate() {
        if rngs[si].random::<f64>() < probs[idx] {
            out.stays[si].values[(f, b)] = MISSING;
            out.stays[si].mask[(f, b)] = false;
        }
    }
    Ok(out)
}

/// A corrupted cohort plus its pre-corruption ground truth for
/// imputation-quality scoring.
#[derive(Debug, Clone)]
pub struct CorruptedCohort {
    pub corrupted: AlignedGrid,
    pub truth: AlignedGrid,
}

/// Applies the specs in order; the composition's mask is the conjunction of
/// per-mechanism survivals.
pub fn corrupt(grid: &AlignedGrid, specs: &[MissingnessSpec]) -> Result<CorruptedCohort> {
    let mut corrupted = grid.clone();
    for spec in specs {
        corrupted = apply_missingness(&corrupted, spec)?;
    }
    Ok(CorruptedCohort {
        corrupted,
        truth: grid.clone(),
    })
}
