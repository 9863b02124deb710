//! Builds regression samples: one per (stay, anchor bin) where the target
//! lactate β ahead was observed and at least α of history has elapsed.
//! History comes from the imputed grid; eligibility and targets come from
//! the pre-imputation grid.

use std::collections::HashMap;

use crate::data::{AlignedGrid, StayStatics, TaskParams, LACTATE};
use crate::error::{Error, Result};
use crate::models::Sample;

/// One-hot encoder for categorical statics, fitted on training stays only.
/// Admission diagnoses are truncated to the most frequent codes plus an
/// "other" bucket to bound dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticEncoder {
    gender_vocab: Vec<String>,
    ethnicity_vocab: Vec<String>,
    dx_vocab: Vec<String>,
}

impl StaticEncoder {
    pub fn fit<'a, I: Iterator<Item = &'a StayStatics>>(train: I, max_dx: usize) -> StaticEncoder {
        let mut genders = Vec::new();
        let mut ethnicities = Vec::new();
        let mut dx_counts: HashMap<&str, usize> = HashMap::new();
        for s in train {
            if let Some(g) = &s.gender {
                if !genders.contains(g) {
                    genders.push(g.clone());
                }
            }
            if let Some(e) = &s.ethnicity {
                if !ethnicities.contains(e) {
                    ethnicities.push(e.clone());
                }
            }
            if let Some(d) = &s.admission_dx {
                *dx_counts.entry(d.as_str()).or_insert(0) += 1;
            }
        }
        genders.sort();
        ethnicities.sort();
        let mut dx: Vec<(&str, usize)> = dx_counts.into_iter().collect();
        dx.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let dx_vocab = dx
            .into_iter()
            .take(max_dx)
            .map(|(n, _)| n.to_string())
            .collect();
        StaticEncoder {
            gender_vocab: genders,
            ethnicity_vocab: ethnicities,
            dx_vocab,
        }
    }

    /// [age, weight, gender one-hot, ethnicity one-hot, dx one-hot + other].
    pub fn encode(&self, s: &StayStatics) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        out.push(s.age.unwrap_or(0.0));
        out.push(s.admission_weight.unwrap_or(0.0));
        for g in &self.gender_vocab {
            out.push((s.gender.as_deref() == Some(g.as_str())) as u8 as f64);
        }
        for e in &self.ethnicity_vocab {
            out.push((s.ethnicity.as_deref() == Some(e.as_str())) as u8 as f64);
        }
        let mut matched = false;
        for d in &self.dx_vocab {
            let hit = s.admission_dx.as_deref() == Some(d.as_str());
            matched |= hit;
            out.push(hit as u8 as f64);
        }
        // "other" bucket: a diagnosis present but outside the vocabulary.
        out.push((s.admission_dx.is_some() && !matched) as u8 as f64);
        out
    }

    pub fn width(&self) -> usize {
        2 + self.gender_vocab.len() + self.ethnicity_vocab.len() + self.dx_vocab.len() + 1
    }
}

#[derive(Debug, Clone)]
pub struct SampleBuild {
    pub samples: Vec<Sample>,
    pub stays_without_samples: usize,
}

/// `imputed` supplies history features (possibly widened by indicators);
/// `original` supplies target eligibility and raw targets.
pub fn build_samples(
    imputed: &AlignedGrid,
    original: &AlignedGrid,
    task: &TaskParams,
    max_window_bins: usize,
    encoder: &StaticEncoder,
) -> Result<SampleBuild> {
    task.validate(original.bin_width_minutes)?;
    let alpha_bins = task.alpha_bins(original.bin_width_minutes);
    let beta_bins = task.beta_bins(original.bin_width_minutes);
    if max_window_bins < alpha_bins {
        return Err(Error::config(format!(
            "max_window_bins {max_window_bins} is below the history horizon of {alpha_bins} bins"
        )));
    }
    let lactate_row = original
        .feature_index(LACTATE)
        .ok_or_else(|| Error::data("grid has no lactate feature"))?;
    if imputed.stays.len() != original.stays.len() {
        return Err(Error::data("imputed and original grids differ in stays"));
    }

    let mut samples = Vec::new();
    let mut stays_without_samples = 0usize;
    for (imp, orig) in imputed.stays.iter().zip(&original.stays) {
        if imp.descriptor.stay_id != orig.descriptor.stay_id || imp.n_bins() != orig.n_bins() {
            return Err(Error::data(format!(
                "imputed grid misaligned at stay {}",
                orig.descriptor.stay_id
            )));
        }
        let n_bins = orig.n_bins();
        let statics = encoder.encode(&orig.descriptor.statics);
        let before = samples.len();
        for t in 0..n_bins {
            // At least alpha of history: t >= alpha_bins - 1.
            if t + 1 < alpha_bins {
                continue;
            }
            let target_bin = t + beta_bins;
            if target_bin >= n_bins || !orig.mask[(lactate_row, target_bin)] {
                continue;
            }
            let start = (t + 1).saturating_sub(max_window_bins);
            let history = imp.values.view((0, start), (imp.values.nrows(), t + 1 - start));
            samples.push(Sample {
                stay_id: orig.descriptor.stay_id.clone(),
                t_index: t,
                history: history.into_owned(),
                statics: statics.clone(),
                target: orig.values[(lactate_row, target_bin)],
            });
        }
        if samples.len() == before {
            stays_without_samples += 1;
        }
    }
    Ok(SampleBuild {
        samples,
        stays_without_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSpec, StayBlock, StayDescriptor, MISSING};
    use nalgebra::DMatrix;

    fn toy_grid(lactate_obs: &[(usize, f64)], n_bins: usize) -> AlignedGrid {
        let mut values = DMatrix::from_element(2, n_bins, MISSING);
        let mut mask = DMatrix::from_element(2, n_bins, false);
        for &(b, v) in lactate_obs {
            values[(0, b)] = v;
            mask[(0, b)] = true;
        }
        for b in 0..n_bins {
            values[(1, b)] = 10.0 + b as f64;
            mask[(1, b)] = true;
        }
        AlignedGrid {
            bin_width_minutes: 120,
            features: vec![
                FeatureSpec::numeric(LACTATE, 0.1, 30.0),
                FeatureSpec::numeric("heart_rate", 20.0, 300.0),
            ],
            stays: vec![StayBlock {
                descriptor: StayDescriptor {
                    patient_id: "p".into(),
                    stay_id: "s".into(),
                    statics: StayStatics::default(),
                },
                values,
                mask,
            }],
        }
    }

    fn complete(grid: &AlignedGrid) -> AlignedGrid {
        let mut out = grid.clone();
        for s in &mut out.stays {
            for v in s.values.iter_mut() {
                if v.is_nan() {
                    *v = 0.0;
                }
            }
            for m in s.mask.iter_mut() {
                *m = true;
            }
        }
        out
    }

    fn enc() -> StaticEncoder {
        StaticEncoder::fit(std::iter::empty(), 32)
    }

    #[test]
    fn anchor_and_history_follow_the_horizons() {
        // 2-hour bins, alpha = 6h (3 bins), beta = 2h (1 bin): lactate
        // observed at bin 4 anchors a sample at t = 3 with history bins 0-3.
        let grid = toy_grid(&[(0, 1.0), (4, 2.5)], 5);
        let task = TaskParams::default();
        let built = build_samples(&complete(&grid), &grid, &task, 48, &enc()).unwrap();
        assert_eq!(built.samples.len(), 1);
        let s = &built.samples[0];
        assert_eq!(s.t_index, 3);
        assert_eq!(s.window_len(), 4);
        assert_eq!(s.target, 2.5);
        // History is the imputed values of bins 0..=3.
        assert_eq!(s.history[(1, 0)], 10.0);
        assert_eq!(s.history[(1, 3)], 13.0);
    }

    #[test]
    fn no_eligible_target_yields_zero_samples() {
        // Lactate never observed after bin 2 in a 3-bin stay.
        let grid = toy_grid(&[(0, 1.0), (2, 2.0)], 3);
        let built =
            build_samples(&complete(&grid), &grid, &TaskParams::default(), 48, &enc()).unwrap();
        assert!(built.samples.is_empty());
        assert_eq!(built.stays_without_samples, 1);
    }

    #[test]
    fn insufficient_history_is_skipped() {
        // Lactate at bin 2 would anchor t = 1 < alpha_bins - 1 = 2.
        let grid = toy_grid(&[(2, 2.0)], 4);
        let built =
            build_samples(&complete(&grid), &grid, &TaskParams::default(), 48, &enc()).unwrap();
        assert!(built.samples.is_empty());
    }

    #[test]
    fn window_truncates_to_most_recent_bins() {
        let grid = toy_grid(&[(0, 1.0), (9, 3.0)], 10);
        let built =
            build_samples(&complete(&grid), &grid, &TaskParams::default(), 4, &enc()).unwrap();
        assert_eq!(built.samples.len(), 1);
        let s = &built.samples[0];
        assert_eq!(s.t_index, 8);
        assert_eq!(s.window_len(), 4);
        // Most recent 4 bins: 5..=8.
        assert_eq!(s.history[(1, 0)], 15.0);
        assert_eq!(s.history[(1, 3)], 18.0);
    }

    #[test]
    fn encoder_one_hot_layout_and_other_bucket() {
        let mk = |g: &str, dx: &str| StayStatics {
            age: Some(60.0),
            gender: Some(g.into()),
            ethnicity: None,
            admission_weight: Some(80.0),
            admission_dx: Some(dx.into()),
        };
        let train = [mk("F", "sepsis"), mk("M", "sepsis"), mk("F", "cardiac")];
        let enc = StaticEncoder::fit(train.iter(), 1);
        // dx vocab truncated to the single most frequent code.
        assert_eq!(enc.width(), 2 + 2 + 0 + 1 + 1);
        let v = enc.encode(&mk("F", "cardiac"));
        assert_eq!(v[0], 60.0);
        assert_eq!(v[1], 80.0);
        // gender one-hot (F, M sorted), then dx ("sepsis"), then other.
        assert_eq!(&v[2..], &[1.0, 0.0, 0.0, 1.0]);
    }
}
