use super::*;
use crate::data::{categorize_lactate, read_grid, write_grid, SeverityCategory};

fn small_config(seed: u64, n: usize) -> SynthConfig {
    SynthConfig {
        n_patients: n,
        rng_seed: seed,
        ..SynthConfig::default()
    }
}

#[test]
fn generation_is_deterministic_given_seed() {
    let a = generate_cohort(&small_config(7, 10)).unwrap();
    let b = generate_cohort(&small_config(7, 10)).unwrap();
    assert_eq!(a.stays.len(), b.stays.len());
    for (x, y) in a.stays.iter().zip(&b.stays) {
        assert_eq!(x.descriptor, y.descriptor);
        assert_eq!(x.mask, y.mask);
        for (u, v) in x.values.iter().zip(y.values.iter()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }
    let c = generate_cohort(&small_config(8, 10)).unwrap();
    assert_ne!(a.stays[0].values, c.stays[0].values);
}

#[test]
fn lactate_category_proportions_track_targets() {
    // Smoke-scale version of the cohort calibration check.
    let mut cfg = small_config(3, 400);
    cfg.lactate.period_bins = 1;
    let grid = generate_cohort(&cfg).unwrap();
    let mut counts = [0usize; 4];
    let mut total = 0usize;
    for stay in &grid.stays {
        for b in 0..stay.n_bins() {
            if stay.mask[(0, b)] {
                counts[categorize_lactate(stay.values[(0, b)]).unwrap().index()] += 1;
                total += 1;
            }
        }
    }
    let targets = cfg.lactate.mixture.target_weights;
    for (i, &t) in targets.iter().enumerate() {
        let p = counts[i] as f64 / total as f64;
        assert!(
            (p - t).abs() < 0.04,
            "category {i}: {p:.3} vs target {t:.3}"
        );
    }
}

#[test]
fn native_periods_control_observation_pattern() {
    let cfg = small_config(5, 3);
    let grid = generate_cohort(&cfg).unwrap();
    let lac = grid.feature_index("lactate").unwrap();
    let cr = grid.feature_index("creatinine").unwrap();
    for stay in &grid.stays {
        for b in 0..stay.n_bins() {
            assert_eq!(stay.mask[(lac, b)], b % 3 == 0);
            assert_eq!(stay.mask[(cr, b)], b % 12 == 0);
        }
    }
}

#[test]
fn zero_latent_dim_gives_uncorrelated_features() {
    let mut cfg = small_config(11, 150);
    cfg.latent_dim = 0;
    for f in cfg.features.iter_mut() {
        f.period_bins = 1;
    }
    cfg.lactate.period_bins = 1;
    let grid = generate_cohort(&cfg).unwrap();
    // Empirical correlation between the first two vitals over all bins.
    let (f0, f1) = (1usize, 2usize);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for stay in &grid.stays {
        for b in 0..stay.n_bins() {
            xs.push(stay.values[(f0, b)]);
            ys.push(stay.values[(f1, b)]);
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
    let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n).sqrt();
    let corr = cov / (sx * sy);
    assert!(corr.abs() < 0.06, "corr {corr}");
}

#[test]
fn latent_state_induces_cross_feature_correlation() {
    let mut cfg = small_config(13, 150);
    cfg.latent_dim = 1; // all features load on one factor
    for f in cfg.features.iter_mut() {
        f.period_bins = 1;
        f.noise = 0.2;
    }
    let grid = generate_cohort(&cfg).unwrap();
    let (f0, f1) = (1usize, 2usize);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for stay in &grid.stays {
        for b in 0..stay.n_bins() {
            xs.push(stay.values[(f0, b)]);
            ys.push(stay.values[(f1, b)]);
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
    let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n).sqrt();
    assert!(
        (cov / (sx * sy)).abs() > 0.3,
        "expected correlation, got {}",
        cov / (sx * sy)
    );
}

#[test]
fn generated_grid_round_trips_through_interchange() {
    let grid = generate_cohort(&small_config(17, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_grid(&grid, dir.path()).unwrap();
    let back = read_grid(dir.path()).unwrap();
    assert_eq!(grid.stays.len(), back.stays.len());
    for (a, b) in grid.stays.iter().zip(&back.stays) {
        assert_eq!(a.descriptor, b.descriptor);
        assert_eq!(a.mask, b.mask);
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn config_validation_rejects_degenerate_mixture_and_bad_periods() {
    let mut cfg = small_config(1, 2);
    cfg.lactate.mixture.log_sigmas[2] = 0.0;
    assert!(generate_cohort(&cfg).is_err());

    let mut cfg = small_config(1, 2);
    cfg.features[0].period_bins = 0;
    assert!(generate_cohort(&cfg).is_err());

    let mut cfg = small_config(1, 2);
    cfg.lactate.mixture.target_weights = [0.5, 0.5, 0.5, 0.5];
    assert!(generate_cohort(&cfg).is_err());
}

#[test]
fn mcar_hits_marginal_rate_and_preserves_values() {
    let mut cfg = small_config(19, 60);
    cfg.lactate.period_bins = 1;
    for f in cfg.features.iter_mut() {
        f.period_bins = 1;
    }
    let grid = generate_cohort(&cfg).unwrap();
    let spec = MissingnessSpec::mcar(0.3, 5);
    let corrupted = apply_missingness(&grid, &spec).unwrap();

    let mut masked = 0usize;
    let mut total = 0usize;
    for (a, b) in grid.stays.iter().zip(&corrupted.stays) {
        for f in 0..grid.n_features() {
            for bin in 0..a.n_bins() {
                if a.mask[(f, bin)] {
                    total += 1;
                    if !b.mask[(f, bin)] {
                        masked += 1;
                    } else {
                        assert_eq!(
                            a.values[(f, bin)].to_bits(),
                            b.values[(f, bin)].to_bits()
                        );
                    }
                } else {
                    assert!(!b.mask[(f, bin)]);
                }
            }
        }
    }
    let rate = masked as f64 / total as f64;
    assert!((rate - 0.3).abs() < 0.02, "empirical rate {rate} over {total}");
}

#[test]
fn rate_zero_is_identity_on_mask() {
    let grid = generate_cohort(&small_config(23, 8)).unwrap();
    let out = apply_missingness(&grid, &MissingnessSpec::mcar(0.0, 1)).unwrap();
    for (a, b) in grid.stays.iter().zip(&out.stays) {
        assert_eq!(a.mask, b.mask);
    }
}

#[test]
fn mnar_masks_normal_band_more_than_severe() {
    let mut cfg = small_config(29, 250);
    cfg.lactate.period_bins = 1;
    let grid = generate_cohort(&cfg).unwrap();
    let mut spec = MissingnessSpec::mnar(0.25, 9);
    spec.features = Some(vec!["lactate".into()]);
    let corrupted = apply_missingness(&grid, &spec).unwrap();

    let mut masked = [0usize; 4];
    let mut totals = [0usize; 4];
    for (a, b) in grid.stays.iter().zip(&corrupted.stays) {
        for bin in 0..a.n_bins() {
            if a.mask[(0, bin)] {
                let cat = categorize_lactate(a.values[(0, bin)]).unwrap();
                totals[cat.index()] += 1;
                if !b.mask[(0, bin)] {
                    masked[cat.index()] += 1;
                }
            }
        }
    }
    let p_normal = masked[SeverityCategory::Normal.index()] as f64
        / totals[SeverityCategory::Normal.index()] as f64;
    let p_severe = masked[SeverityCategory::Severe.index()] as f64
        / totals[SeverityCategory::Severe.index()] as f64;
    let ratio = p_normal / p_severe;
    assert!(
        (ratio - 3.0).abs() / 3.0 < 0.25,
        "normal/severe masking ratio {ratio}"
    );
}

#[test]
fn mar_requires_and_uses_conditioning_feature() {
    let grid = generate_cohort(&small_config(31, 50)).unwrap();
    let mut spec = MissingnessSpec::mcar(0.3, 2);
    spec.mechanism = Mechanism::Mar;
    assert!(apply_missingness(&grid, &spec).is_err());

    spec.conditioning_feature = Some("absent".into());
    assert!(apply_missingness(&grid, &spec).is_err());

    spec.conditioning_feature = Some("heart_rate".into());
    let out = apply_missingness(&grid, &spec).unwrap();
    let (mut masked, mut total) = (0usize, 0usize);
    for (a, b) in grid.stays.iter().zip(&out.stays) {
        for f in 0..grid.n_features() {
            for bin in 0..a.n_bins() {
                if a.mask[(f, bin)] {
                    total += 1;
                    masked += (!b.mask[(f, bin)]) as usize;
                }
            }
        }
    }
    let rate = masked as f64 / total as f64;
    assert!((rate - 0.3).abs() < 0.03, "MAR marginal {rate}");
}

#[test]
fn mechanisms_compose_with_product_survival() {
    let mut cfg = small_config(37, 80);
    cfg.lactate.period_bins = 1;
    for f in cfg.features.iter_mut() {
        f.period_bins = 1;
    }
    let grid = generate_cohort(&cfg).unwrap();
    let cohort = corrupt(
        &grid,
        &[MissingnessSpec::mcar(0.2, 1), MissingnessSpec::mcar(0.25, 2)],
    )
    .unwrap();
    let (mut surviving, mut total) = (0usize, 0usize);
    for (a, b) in grid.stays.iter().zip(&cohort.corrupted.stays) {
        for f in 0..grid.n_features() {
            for bin in 0..a.n_bins() {
                if a.mask[(f, bin)] {
                    total += 1;
                    surviving += b.mask[(f, bin)] as usize;
                }
            }
        }
    }
    let survival = surviving as f64 / total as f64;
    let expected = 0.8 * 0.75;
    assert!(
        (survival - expected).abs() < 0.02,
        "survival {survival} vs {expected}"
    );
    // Ground truth sidecar carries every pre-corruption value.
    for (a, t) in grid.stays.iter().zip(&cohort.truth.stays) {
        assert_eq!(a.mask, t.mask);
    }
}
