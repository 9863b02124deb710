//! Synthetic cohort generation: a per-stay AR(1) latent state with linear
//! feature readouts (temporal autocorrelation plus cross-feature
//! correlation), a four-component log-normal lactate mixture calibrated to
//! target severity proportions, and per-feature sampling periods that mimic
//! mixed measurement frequencies.

mod missing;

pub use missing::{apply_missingness, corrupt, CorruptedCohort, Mechanism, MissingnessSpec};

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::data::{
    AlignedGrid, FeatureSpec, StayBlock, StayDescriptor, StayStatics, LACTATE, MISSING,
};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StayLengthDist {
    pub mean_bins: f64,
    pub std_bins: f64,
    pub min_bins: usize,
    pub max_bins: usize,
}

impl Default for StayLengthDist {
    fn default() -> Self {
        StayLengthDist {
            mean_bins: 16.0,
            std_bins: 5.0,
            min_bins: 6,
            max_bins: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFeature {
    pub name: String,
    /// Readout center and scale in the feature's units.
    pub offset: f64,
    pub scale: f64,
    /// Fraction of the readout variance that is idiosyncratic noise.
    pub noise: f64,
    /// Latent loading; None draws one from the seed.
    #[serde(default)]
    pub loading: Option<Vec<f64>>,
    /// Observed only at bins divisible by this period.
    pub period_bins: usize,
}

impl SynthFeature {
    fn new(name: &str, offset: f64, scale: f64, noise: f64, period_bins: usize) -> SynthFeature {
        SynthFeature {
            name: name.to_string(),
            offset,
            scale,
            noise,
            loading: None,
            period_bins,
        }
    }
}

/// Four-component log-normal mixture over severity bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureConfig {
    /// Target severity-category proportions (Normal, Mild, Moderate, Severe).
    pub target_weights: [f64; 4],
    pub log_medians: [f64; 4],
    pub log_sigmas: [f64; 4],
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig {
            target_weights: [0.531, 0.265, 0.089, 0.115],
            log_medians: [1.25, 2.80, 4.90, 9.00],
            log_sigmas: [0.30, 0.16, 0.10, 0.22],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LactateConfig {
    pub mixture: MixtureConfig,
    /// Correlation of the lactate driver with its latent readout; sets how
    /// predictable the target is from history.
    pub latent_link: f64,
    #[serde(default)]
    pub loading: Option<Vec<f64>>,
    pub period_bins: usize,
}

impl Default for LactateConfig {
    fn default() -> Self {
        LactateConfig {
            mixture: MixtureConfig::default(),
            latent_link: 0.85,
            loading: None,
            period_bins: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaticsConfig {
    pub age_mean: f64,
    pub age_std: f64,
    pub female_fraction: f64,
    pub weight_mean: f64,
    pub weight_std: f64,
    pub ethnicities: Vec<String>,
    pub diagnoses: Vec<(String, f64)>,
}

impl Default for StaticsConfig {
    fn default() -> Self {
        StaticsConfig {
            age_mean: 61.8,
            age_std: 15.7,
            female_fraction: 0.45,
            weight_mean: 82.0,
            weight_std: 20.0,
            ethnicities: vec![
                "Caucasian".into(),
                "African American".into(),
                "Hispanic".into(),
                "Asian".into(),
                "Other/Unknown".into(),
            ],
            diagnoses: vec![
                ("Sepsis, pulmonary".into(), 0.121),
                ("Cardiac arrest".into(), 0.085),
                ("Sepsis, renal/UTI".into(), 0.063),
                ("Sepsis, GI".into(), 0.053),
                ("Other".into(), 0.678),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// One stay per synthetic patient at desk scale.
    pub n_patients: usize,
    pub stay_length: StayLengthDist,
    pub latent_dim: usize,
    /// AR(1) coefficient of the latent state.
    pub latent_autocorr: f64,
    pub features: Vec<SynthFeature>,
    pub lactate: LactateConfig,
    pub statics: StaticsConfig,
    pub bin_width_minutes: u32,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 100,
            stay_length: StayLengthDist::default(),
            latent_dim: 3,
            latent_autocorr: 0.9,
            features: vec![
                SynthFeature::new("heart_rate", 85.0, 15.0, 0.30, 1),
                SynthFeature::new("respiratory_rate", 19.0, 5.0, 0.40, 1),
                SynthFeature::new("o2_saturation", 96.0, 2.5, 0.50, 1),
                SynthFeature::new("invasive_bp_mean", 78.0, 13.0, 0.35, 1),
                SynthFeature::new("ph", 7.38, 0.07, 0.40, 6),
                SynthFeature::new("bicarbonate", 24.0, 4.0, 0.40, 6),
                SynthFeature::new("creatinine", 1.4, 0.8, 0.50, 12),
            ],
            lactate: LactateConfig::default(),
            statics: StaticsConfig::default(),
            bin_width_minutes: 120,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn from_json(json: &str) -> Result<SynthConfig> {
        let cfg: SynthConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::config("n_patients must be >= 1"));
        }
        if self.bin_width_minutes == 0 {
            return Err(Error::config("bin_width_minutes must be positive"));
        }
        if !(0.0..1.0).contains(&self.latent_autocorr) {
            return Err(Error::config("latent_autocorr must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.lactate.latent_link) {
            return Err(Error::config("lactate latent_link must be in [0, 1]"));
        }
        let m = &self.lactate.mixture;
        let weight_sum: f64 = m.target_weights.iter().sum();
        if (weight_sum - 1.0).abs() > 1e-6 {
            return Err(Error::config(format!(
                "mixture target weights must sum to 1, got {weight_sum}"
            )));
        }
        if m.log_sigmas.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config(
                "degenerate mixture: every component needs positive variance",
            ));
        }
        if m.log_medians.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::config("mixture medians must be positive"));
        }
        if self.lactate.period_bins == 0 || self.features.iter().any(|f| f.period_bins == 0) {
            return Err(Error::config("sampling periods must be >= 1"));
        }
        if self.stay_length.min_bins == 0 || self.stay_length.min_bins > self.stay_length.max_bins
        {
            return Err(Error::config("invalid stay length bounds"));
        }
        for f in &self.features {
            if !(f.noise >= 0.0 && f.noise <= 1.0) {
                return Err(Error::config(format!(
                    "feature '{}': noise fraction must be in [0, 1]",
                    f.name
                )));
            }
            if f.name == LACTATE {
                return Err(Error::config(
                    "lactate is configured via the `lactate` block, not `features`",
                ));
            }
        }
        Ok(())
    }
}

/// The calibrated mixture: component weights solved so the expected
/// severity-band proportions hit the configured targets despite tail
/// leakage across band edges.
#[derive(Debug, Clone)]
pub struct CalibratedMixture {
    pub weights: [f64; 4],
    pub log_medians: [f64; 4],
    pub log_sigmas: [f64; 4],
}

fn std_normal_cdf(x: f64) -> f64 {
    statrs::distribution::Normal::new(0.0, 1.0)
        .expect("unit normal")
        .cdf(x)
}

impl CalibratedMixture {
    pub fn from_config(m: &MixtureConfig) -> Result<CalibratedMixture> {
        // Band-membership probabilities per component at edges 2, 4, 6.
        let edges = [2.0f64, 4.0, 6.0];
        let mut bands = [[0.0f64; 4]; 4]; // bands[b][c]
        for c in 0..4 {
            let mu = m.log_medians[c].ln();
            let s = m.log_sigmas[c];
            let cdf = |v: f64| std_normal_cdf((v.ln() - mu) / s);
            let e = [cdf(edges[0]), cdf(edges[1]), cdf(edges[2])];
            bands[0][c] = e[0];
            bands[1][c] = e[1] - e[0];
            bands[2][c] = e[2] - e[1];
            bands[3][c] = 1.0 - e[2];
        }
        let a = DMatrix::from_fn(4, 4, |b, c| bands[b][c]);
        let target = DVector::from_column_slice(&m.target_weights);
        let weights = match a.lu().solve(&target) {
            Some(w) if w.iter().all(|&v| v.is_finite()) => {
                let mut w: Vec<f64> = w.iter().map(|&v| v.max(0.0)).collect();
                let sum: f64 = w.iter().sum();
                if sum <= 0.0 {
                    m.target_weights.to_vec()
                } else {
                    w.iter_mut().for_each(|v| *v /= sum);
                    w
                }
            }
            _ => m.target_weights.to_vec(),
        };
        Ok(CalibratedMixture {
            weights: [weights[0], weights[1], weights[2], weights[3]],
            log_medians: m.log_medians,
            log_sigmas: m.log_sigmas,
        })
    }

    pub fn cdf(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        let lv = v.ln();
        (0..4)
            .map(|c| {
                self.weights[c] * std_normal_cdf((lv - self.log_medians[c].ln()) / self.log_sigmas[c])
            })
            .sum()
    }

    /// Inverse CDF by bisection on the log scale.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(1e-12, 1.0 - 1e-12);
        let (mut lo, mut hi) = (1e-4f64.ln(), 1e4f64.ln());
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid.exp()) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi)).exp()
    }
}

fn unit_loading(dim: usize, given: &Option<Vec<f64>>, rng: &mut impl Rng) -> Option<DVector<f64>> {
    if dim == 0 {
        return None;
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v = match given {
        Some(l) => {
            let mut v = DVector::zeros(dim);
            for (i, x) in l.iter().take(dim).enumerate() {
                v[i] = *x;
            }
            v
        }
        None => DVector::from_fn(dim, |_, _| normal.sample(rng)),
    };
    let n = v.norm();
    if n == 0.0 {
        v[0] = 1.0;
    } else {
        v /= n;
    }
    Some(v)
}

/// Generates a fully observed (at each feature's native period) cohort.
/// Deterministic given the config seed; per-stay RNG streams keyed by stay
/// index make generation order-independent.
pub fn generate_cohort(config: &SynthConfig) -> Result<AlignedGrid> {
    config.validate()?;
    let mixture = CalibratedMixture::from_config(&config.lactate.mixture)?;
    let q = config.latent_dim;
    let rho = config.latent_autocorr;
    let innovation_scale = (1.0 - rho * rho).sqrt();

    // Loadings are drawn once per cohort from their own stream.
    let mut loading_rng = seeding::rng_for(config.rng_seed, &[0x7379_6e74, 0]);
    let lactate_loading = unit_loading(q, &config.lactate.loading, &mut loading_rng);
    let feature_loadings: Vec<Option<DVector<f64>>> = config
        .features
        .iter()
        .map(|f| unit_loading(q, &f.loading, &mut loading_rng))
        .collect();

    let mut features = vec![FeatureSpec::numeric(LACTATE, 0.01, 1000.0)];
    for f in &config.features {
        let span = 8.0 * f.scale.max(1e-6);
        features.push(FeatureSpec::numeric(
            &f.name,
            f.offset - span,
            f.offset + span,
        ));
    }

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let link = config.lactate.latent_link;
    let link_noise = (1.0 - link * link).max(0.0).sqrt();

    let mut stays = Vec::with_capacity(config.n_patients);
    for i in 0..config.n_patients {
        let mut rng = seeding::rng_for(config.rng_seed, &[0x7379_6e74, 1, i as u64]);
        let len_raw = config.stay_length.mean_bins + config.stay_length.std_bins * normal.sample(&mut rng);
        let n_bins = (len_raw.round() as i64)
            .clamp(config.stay_length.min_bins as i64, config.stay_length.max_bins as i64)
            as usize;

        let statics = draw_statics(&config.statics, &mut rng);
        let n_feat = 1 + config.features.len();
        let mut values = DMatrix::from_element(n_feat, n_bins, MISSING);
        let mut mask = DMatrix::from_element(n_feat, n_bins, false);

        let mut z = DVector::from_fn(q, |_, _| normal.sample(&mut rng));
        for t in 0..n_bins {
            if t > 0 {
                for k in 0..q {
                    z[k] = rho * z[k] + innovation_scale * normal.sample(&mut rng);
                }
            }
            // Lactate driver: standard normal marginally, correlated with
            // the latent readout, mapped through the mixture quantile.
            let s = lactate_loading.as_ref().map_or(0.0, |l| l.dot(&z));
            let x = if q > 0 {
                link * s + link_noise * normal.sample(&mut rng)
            } else {
                normal.sample(&mut rng)
            };
            if t % config.lactate.period_bins == 0 {
                values[(0, t)] = mixture.quantile(std_normal_cdf(x));
                mask[(0, t)] = true;
            }
            for (j, f) in config.features.iter().enumerate() {
                if t % f.period_bins != 0 {
                    continue;
                }
                let r = feature_loadings[j].as_ref().map_or(0.0, |l| l.dot(&z));
                let signal = (1.0 - f.noise).max(0.0).sqrt();
                let noise = f.noise.sqrt();
                let draw: f64 = normal.sample(&mut rng);
                let v = if q > 0 {
                    f.offset + f.scale * (signal * r + noise * draw)
                } else {
                    f.offset + f.scale * draw
                };
                values[(1 + j, t)] = v;
                mask[(1 + j, t)] = true;
            }
        }
        stays.push(StayBlock {
            descriptor: StayDescriptor {
                patient_id: format!("synth-p{i:05}"),
                stay_id: format!("synth-s{i:05}"),
                statics,
            },
            values,
            mask,
        });
    }

    let grid = AlignedGrid {
        bin_width_minutes: config.bin_width_minutes,
        features,
        stays,
    };
    grid.validate()?;
    Ok(grid)
}

fn draw_statics(cfg: &StaticsConfig, rng: &mut impl Rng) -> StayStatics {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let age = (cfg.age_mean + cfg.age_std * normal.sample(rng)).clamp(19.0, 95.0);
    let weight = (cfg.weight_mean + cfg.weight_std * normal.sample(rng)).clamp(35.0, 250.0);
    let gender = if rng.random::<f64>() < cfg.female_fraction {
        "Female"
    } else {
        "Male"
    };
    let ethnicity = cfg.ethnicities[rng.random_range(0..cfg.ethnicities.len().max(1))].clone();
    let dx = {
        let total: f64 = cfg.diagnoses.iter().map(|(_, w)| w).sum();
        let mut draw = rng.random::<f64>() * total.max(1e-12);
        let mut chosen = cfg.diagnoses.last().map(|(n, _)| n.clone()).unwrap_or_default();
        for (name, w) in &cfg.diagnoses {
            if draw < *w {
                chosen = name.clone();
                break;
            }
            draw -= w;
        }
        chosen
    };
    StayStatics {
        age: Some(age),
        gender: Some(gender.to_string()),
        ethnicity: Some(ethnicity),
        admission_weight: Some(weight),
        admission_dx: Some(dx),
    }
}

#[cfg(test)]
mod tests;
