//! Single-value imputers: overall mean/median, severity-grouped mean,
//! forward fill, and mean-with-indicator-columns.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::flat::{flatten, observed_means, FlatView};
use crate::data::{categorize_lactate, AlignedGrid, FeatureSpec, SeverityCategory, LACTATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerFeatureState {
    pub values: Vec<f64>,
}

pub(crate) fn fit_means(flat: &FlatView, names: &[String]) -> (PerFeatureState, Vec<String>) {
    let (means, warnings) = observed_means(flat, names);
    (PerFeatureState { values: means }, warnings)
}

pub(crate) fn fit_medians(flat: &FlatView, names: &[String]) -> (PerFeatureState, Vec<String>) {
    let d = flat.values.ncols();
    let mut med = vec![0.0; d];
    let mut warnings = Vec::new();
    for f in 0..d {
        let mut obs: Vec<f64> = (0..flat.values.nrows())
            .filter(|&r| flat.mask[(r, f)])
            .map(|r| flat.values[(r, f)])
            .collect();
        if obs.is_empty() {
            med[f] = 0.0;
            warnings.push(format!(
                "feature '{}' has no observed training entries; falling back to 0.0",
                names[f]
            ));
            continue;
        }
        obs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = obs.len();
        med[f] = if n % 2 == 1 {
            obs[n / 2]
        } else {
            0.5 * (obs[n / 2 - 1] + obs[n / 2])
        };
    }
    (PerFeatureState { values: med }, warnings)
}

pub(crate) fn transform_constant(grid: &AlignedGrid, fill: &[f64]) -> crate::Result<AlignedGrid> {
    let flat = flatten(grid);
    let mut filled = flat.values.clone();
    for r in 0..filled.nrows() {
        for f in 0..filled.ncols() {
            if !flat.mask[(r, f)] {
                filled[(r, f)] = fill[f];
            }
        }
    }
    super::flat::write_back(grid, &flat, &filled)
}

/// Group means keyed by the severity category of the most recent observed
/// lactate strictly before the cell's bin within the same stay. Cells with
/// no preceding lactate fall back to the overall mean per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeanState {
    pub overall: Vec<f64>,
    /// `[feature][severity]`, NaN where the group had no training data.
    pub groups: Vec<[f64; 4]>,
    pub lactate_present: bool,
}

/// Severity of the most recent observed lactate strictly before `bin`.
fn preceding_category(
    stay: &crate::data::StayBlock,
    lactate_row: usize,
    bin: usize,
) -> Option<SeverityCategory> {
    (0..bin).rev().find_map(|b| {
        if stay.mask[(lactate_row, b)] {
            categorize_lactate(stay.values[(lactate_row, b)]).ok()
        } else {
            None
        }
    })
}

pub(crate) fn fit_group_means(
    grid: &AlignedGrid,
    flat: &FlatView,
    names: &[String],
) -> (GroupMeanState, Vec<String>) {
    let (overall, mut warnings) = observed_means(flat, names);
    let d = grid.n_features();
    let Some(lactate_row) = grid.feature_index(LACTATE) else {
        warnings.push(format!(
            "grid has no '{LACTATE}' feature; group means fall back to overall means"
        ));
        return (
            GroupMeanState {
                overall,
                groups: vec![[f64::NAN; 4]; d],
                lactate_present: false,
            },
            warnings,
        );
    };

    let mut sums = vec![[0.0f64; 4]; d];
    let mut counts = vec![[0usize; 4]; d];
    for stay in &grid.stays {
        for b in 0..stay.n_bins() {
            let Some(cat) = preceding_category(stay, lactate_row, b) else {
                continue;
            };
            let g = cat.index();
            for f in 0..d {
                if stay.mask[(f, b)] {
                    sums[f][g] += stay.values[(f, b)];
                    counts[f][g] += 1;
                }
            }
        }
    }
    let groups = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| {
            let mut row = [f64::NAN; 4];
            for g in 0..4 {
                if c[g] > 0 {
                    row[g] = s[g] / c[g] as f64;
                }
            }
            row
        })
        .collect();
    (
        GroupMeanState {
            overall,
            groups,
            lactate_present: true,
        },
        warnings,
    )
}

pub(crate) fn transform_group_means(
    grid: &AlignedGrid,
    state: &GroupMeanState,
) -> crate::Result<AlignedGrid> {
    let flat = flatten(grid);
    let mut filled = flat.values.clone();
    let lactate_row = if state.lactate_present {
        grid.feature_index(LACTATE)
    } else {
        None
    };
    for (r, &(si, b)) in flat.rows.iter().enumerate() {
        let cat = lactate_row.and_then(|lr| preceding_category(&grid.stays[si], lr, b));
        for f in 0..filled.ncols() {
            if flat.mask[(r, f)] {
                continue;
            }
            let fill = match cat {
                Some(c) if state.groups[f][c.index()].is_finite() => state.groups[f][c.index()],
                _ => state.overall[f],
            };
            filled[(r, f)] = fill;
        }
    }
    super::flat::write_back(grid, &flat, &filled)
}

/// Forward fill within each stay; leading gaps are backfilled from the first
/// observation; features never observed in a stay take the training mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardState {
    pub fallback: Vec<f64>,
}

pub(crate) fn transform_feed_forward(
    grid: &AlignedGrid,
    state: &FeedForwardState,
) -> crate::Result<AlignedGrid> {
    let mut out = grid.clone();
    for stay in &mut out.stays {
        let n_bins = stay.n_bins();
        for f in 0..stay.values.nrows() {
            let first_obs = (0..n_bins).find(|&b| stay.mask[(f, b)]);
            let mut last: Option<f64> = None;
            for b in 0..n_bins {
                if stay.mask[(f, b)] {
                    last = Some(stay.values[(f, b)]);
                } else {
                    let fill = match (last, first_obs) {
                        (Some(v), _) => v,
                        // Leading gap: backfill from the first observation.
                        (None, Some(fb)) => stay.values[(f, fb)],
                        (None, None) => state.fallback[f],
                    };
                    stay.values[(f, b)] = fill;
                }
            }
            for b in 0..n_bins {
                stay.mask[(f, b)] = true;
            }
        }
    }
    Ok(out)
}

/// Mean imputation plus, per feature, an appended 0/1 row equal to the
/// original observation mask.
pub(crate) fn transform_indicator_mean(
    grid: &AlignedGrid,
    means: &[f64],
) -> crate::Result<AlignedGrid> {
    let base = transform_constant(grid, means)?;
    let d = grid.n_features();
    let mut features = base.features.clone();
    for f in &grid.features {
        features.push(FeatureSpec::numeric(&format!("{}__obs", f.name), 0.0, 1.0));
    }
    let stays = base
        .stays
        .iter()
        .zip(&grid.stays)
        .map(|(filled, orig)| {
            let n_bins = filled.n_bins();
            let mut values = DMatrix::zeros(2 * d, n_bins);
            let mut mask = DMatrix::from_element(2 * d, n_bins, true);
            values.view_mut((0, 0), (d, n_bins)).copy_from(&filled.values);
            for f in 0..d {
                for b in 0..n_bins {
                    values[(d + f, b)] = if orig.mask[(f, b)] { 1.0 } else { 0.0 };
                }
            }
            mask.view_mut((0, 0), (d, n_bins)).copy_from(&filled.mask);
            crate::data::StayBlock {
                descriptor: filled.descriptor.clone(),
                values,
                mask,
            }
        })
        .collect();
    Ok(AlignedGrid {
        bin_width_minutes: base.bin_width_minutes,
        features,
        stays,
    })
}
