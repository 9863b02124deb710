//! Core domain types shared by all modules: events, grids, masks, severity
//! categories, and feature metadata.
//!
//! All types here are immutable after construction and safe to share across
//! concurrent readers; construction is single-threaded per grid.

mod io;

pub use io::{read_grid, read_values_csv, write_grid, write_values_csv, GridMetadata};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};

/// Marker for an unobserved grid entry. The mask is authoritative; values
/// under a false mask hold this sentinel until imputation.
pub const MISSING: f64 = f64::NAN;

/// True if a stored value is the missing sentinel.
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// One entry of the feature dictionary: a canonical measurement identity,
/// the source names it may appear under, and its physically valid range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub valid_min: Option<f64>,
    #[serde(default)]
    pub valid_max: Option<f64>,
    #[serde(default = "FeatureSpec::default_kind")]
    pub kind: FeatureKind,
}

impl FeatureSpec {
    fn default_kind() -> FeatureKind {
        FeatureKind::Numeric
    }

    pub fn numeric(name: &str, valid_min: f64, valid_max: f64) -> Self {
        FeatureSpec {
            name: name.to_string(),
            aliases: Vec::new(),
            valid_min: Some(valid_min),
            valid_max: Some(valid_max),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn with_aliases(mut self, aliases: &[&str]) -> Self {
        self.aliases = aliases.iter().map(|s| s.to_string()).collect();
        self
    }
}

/// Validated collection of feature specs with an alias lookup.
///
/// Canonical names are unique and no alias maps to two canonical names.
#[derive(Debug, Clone)]
pub struct FeatureDictionary {
    features: Vec<FeatureSpec>,
    by_name: HashMap<String, usize>,
}

impl FeatureDictionary {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let mut by_name: HashMap<String, usize> = HashMap::new();
        for (i, f) in features.iter().enumerate() {
            if f.kind == FeatureKind::Numeric {
                if let (Some(lo), Some(hi)) = (f.valid_min, f.valid_max) {
                    if !(lo < hi) {
                        return Err(Error::config(format!(
                            "feature '{}': valid_min {} must be < valid_max {}",
                            f.name, lo, hi
                        )));
                    }
                }
            }
            if by_name.insert(f.name.clone(), i).is_some() {
                return Err(Error::config(format!(
                    "duplicate canonical feature name '{}'",
                    f.name
                )));
            }
        }
        // Alias table must be injective into canonical names.
        let mut alias_to: HashMap<&str, &str> = HashMap::new();
        for f in &features {
            for a in &f.aliases {
                if by_name.contains_key(a.as_str()) && a != &f.name {
                    return Err(Error::config(format!(
                        "alias '{}' of '{}' collides with another canonical name",
                        a, f.name
                    )));
                }
                if let Some(prev) = alias_to.insert(a.as_str(), f.name.as_str()) {
                    if prev != f.name {
                        return Err(Error::config(format!(
                            "alias '{}' maps to both '{}' and '{}'",
                            a, prev, f.name
                        )));
                    }
                }
            }
        }
        Ok(FeatureDictionary { features, by_name })
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn index_of(&self, canonical: &str) -> Option<usize> {
        self.by_name.get(canonical).copied()
    }

    /// Resolve a source name (canonical or alias) to its canonical name.
    pub fn canonical_of(&self, source: &str) -> Option<&str> {
        if self.by_name.contains_key(source) {
            return Some(self.features[self.by_name[source]].name.as_str());
        }
        self.features
            .iter()
            .find(|f| f.aliases.iter().any(|a| a == source))
            .map(|f| f.name.as_str())
    }
}

/// One timestamped clinical measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub patient_id: String,
    pub stay_id: String,
    pub feature: String,
    /// Minutes from ICU admission; non-negative after ingestion.
    pub offset_minutes: i64,
    pub value: f64,
}

/// Static per-stay features; categorical ones remain raw strings until
/// design matrices are assembled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StayStatics {
    pub age: Option<f64>,
    pub gender: Option<String>,
    pub ethnicity: Option<String>,
    pub admission_weight: Option<f64>,
    pub admission_dx: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayDescriptor {
    pub patient_id: String,
    pub stay_id: String,
    #[serde(default)]
    pub statics: StayStatics,
}

/// One stay's slice of an aligned grid: a features-by-bins value matrix and
/// its parallel observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct StayBlock {
    pub descriptor: StayDescriptor,
    /// `[feature, bin]`, same dimensions as `mask`.
    pub values: DMatrix<f64>,
    /// True where the entry was observed.
    pub mask: DMatrix<bool>,
}

impl StayBlock {
    pub fn n_bins(&self) -> usize {
        self.values.ncols()
    }
}

/// Per-patient-stay feature-by-time-bin matrices with observation masks;
/// the central interchange type of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedGrid {
    pub bin_width_minutes: u32,
    /// Row order of every stay's matrices.
    pub features: Vec<FeatureSpec>,
    pub stays: Vec<StayBlock>,
}

impl AlignedGrid {
    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn stay_ids(&self) -> Vec<String> {
        self.stays
            .iter()
            .map(|s| s.descriptor.stay_id.clone())
            .collect()
    }

    /// Total number of (feature, bin) cells across stays.
    pub fn n_cells(&self) -> usize {
        self.stays.iter().map(|s| s.values.len()).sum()
    }

    pub fn n_observed(&self) -> usize {
        self.stays
            .iter()
            .map(|s| s.mask.iter().filter(|&&m| m).count())
            .sum()
    }

    /// Checks the structural invariants: per-stay dimension agreement,
    /// feature-row count, unique stay ids, and sentinel placement under
    /// false masks.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, stay) in self.stays.iter().enumerate() {
            if let Some(prev) = seen.insert(&stay.descriptor.stay_id, i) {
                return Err(Error::data(format!(
                    "duplicate stay_id '{}' at positions {} and {}",
                    stay.descriptor.stay_id, prev, i
                )));
            }
            if stay.values.shape() != stay.mask.shape() {
                return Err(Error::data(format!(
                    "stay '{}': values {:?} and mask {:?} differ in shape",
                    stay.descriptor.stay_id,
                    stay.values.shape(),
                    stay.mask.shape()
                )));
            }
            if stay.values.nrows() != self.features.len() {
                return Err(Error::data(format!(
                    "stay '{}': {} feature rows, dictionary has {}",
                    stay.descriptor.stay_id,
                    stay.values.nrows(),
                    self.features.len()
                )));
            }
            for (v, m) in stay.values.iter().zip(stay.mask.iter()) {
                if !*m && !is_missing(*v) {
                    return Err(Error::data(format!(
                        "stay '{}': unmasked sentinel violation (mask=false holds {})",
                        stay.descriptor.stay_id, v
                    )));
                }
            }
        }
        Ok(())
    }

    /// True once every entry is finite (post-imputation state).
    pub fn is_complete(&self) -> bool {
        self.stays
            .iter()
            .all(|s| s.values.iter().all(|v| v.is_finite()))
    }

    /// New grid containing only the stays whose index satisfies `keep`,
    /// preserving order.
    pub fn subset_by<F: Fn(usize, &StayBlock) -> bool>(&self, keep: F) -> AlignedGrid {
        AlignedGrid {
            bin_width_minutes: self.bin_width_minutes,
            features: self.features.clone(),
            stays: self
                .stays
                .iter()
                .enumerate()
                .filter(|(i, s)| keep(*i, s))
                .map(|(_, s)| s.clone())
                .collect(),
        }
    }
}

/// Lactate severity bands in mmol/L. The bands partition (0, inf):
/// Normal (0, 2.00], Mild (2.00, 4.00], Moderate (4.00, 6.00], Severe (6.00, inf).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeverityCategory {
    Normal,
    Mild,
    Moderate,
    Severe,
}

impl SeverityCategory {
    pub const ALL: [SeverityCategory; 4] = [
        SeverityCategory::Normal,
        SeverityCategory::Mild,
        SeverityCategory::Moderate,
        SeverityCategory::Severe,
    ];

    pub fn index(self) -> usize {
        match self {
            SeverityCategory::Normal => 0,
            SeverityCategory::Mild => 1,
            SeverityCategory::Moderate => 2,
            SeverityCategory::Severe => 3,
        }
    }
}

/// Maps a lactate concentration to its severity band.
///
/// Boundary values 2.00, 4.00 and 6.00 belong to the lower band.
pub fn categorize_lactate(value: f64) -> Result<SeverityCategory> {
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::domain(format!(
            "lactate value must be finite and positive, got {value}"
        )));
    }
    Ok(if value <= 2.00 {
        SeverityCategory::Normal
    } else if value <= 4.00 {
        SeverityCategory::Mild
    } else if value <= 6.00 {
        SeverityCategory::Moderate
    } else {
        SeverityCategory::Severe
    })
}

/// History and prediction horizons of the forecasting task, in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskParams {
    /// History horizon; a sample needs at least this much elapsed stay time.
    #[serde(default = "TaskParams::default_alpha")]
    pub alpha_minutes: u32,
    /// Prediction horizon: the target is the lactate value this far ahead.
    #[serde(default = "TaskParams::default_beta")]
    pub beta_minutes: u32,
}

impl TaskParams {
    fn default_alpha() -> u32 {
        360
    }

    fn default_beta() -> u32 {
        120
    }

    pub fn validate(&self, bin_width_minutes: u32) -> Result<()> {
        for (name, v) in [("alpha", self.alpha_minutes), ("beta", self.beta_minutes)] {
            if v == 0 || v % bin_width_minutes != 0 {
                return Err(Error::config(format!(
                    "{name}_minutes = {v} must be a positive multiple of the bin width {bin_width_minutes}"
                )));
            }
        }
        Ok(())
    }

    pub fn alpha_bins(&self, bin_width_minutes: u32) -> usize {
        (self.alpha_minutes / bin_width_minutes) as usize
    }

    pub fn beta_bins(&self, bin_width_minutes: u32) -> usize {
        (self.beta_minutes / bin_width_minutes) as usize
    }
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams {
            alpha_minutes: Self::default_alpha(),
            beta_minutes: Self::default_beta(),
        }
    }
}

/// Canonical name of the prediction target in every feature dictionary.
pub const LACTATE: &str = "lactate";
