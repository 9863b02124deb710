use super::*;
use crate::data::{FeatureSpec, StayBlock, StayDescriptor, StayStatics, MISSING};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Grid with one stay whose flat row space equals the given `n x d` matrix
/// (rows become bins, columns become features).
fn matrix_grid(rows: &[Vec<Option<f64>>]) -> AlignedGrid {
    let n = rows.len();
    let d = rows[0].len();
    let mut values = DMatrix::from_element(d, n, MISSING);
    let mut mask = DMatrix::from_element(d, n, false);
    for (b, row) in rows.iter().enumerate() {
        for (f, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                values[(f, b)] = *v;
                mask[(f, b)] = true;
            }
        }
    }
    AlignedGrid {
        bin_width_minutes: 120,
        features: (0..d)
            .map(|f| FeatureSpec::numeric(&format!("f{f}"), -1e9, 1e9))
            .collect(),
        stays: vec![StayBlock {
            descriptor: StayDescriptor {
                patient_id: "p0".into(),
                stay_id: "s0".into(),
                statics: StayStatics::default(),
            },
            values,
            mask,
        }],
    }
}

fn random_missing_grid(seed: u64, n_stays: usize, n_feat: usize, missing_rate: f64) -> AlignedGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features: Vec<FeatureSpec> = (0..n_feat)
        .map(|f| FeatureSpec::numeric(&format!("f{f}"), -1e9, 1e9))
        .collect();
    // Give the grid a lactate row so GroupMean has something to key on.
    features[0] = FeatureSpec::numeric(crate::data::LACTATE, 0.01, 1e9);
    let stays = (0..n_stays)
        .map(|s| {
            let n_bins = rng.random_range(3..9usize);
            let mut values = DMatrix::from_element(n_feat, n_bins, MISSING);
            let mut mask = DMatrix::from_element(n_feat, n_bins, false);
            for f in 0..n_feat {
                for b in 0..n_bins {
                    if rng.random::<f64>() >= missing_rate {
                        values[(f, b)] = if f == 0 {
                            rng.random_range(0.2..12.0)
                        } else {
                            rng.random_range(-3.0..3.0)
                        };
                        mask[(f, b)] = true;
                    }
                }
            }
            StayBlock {
                descriptor: StayDescriptor {
                    patient_id: format!("p{s}"),
                    stay_id: format!("s{s}"),
                    statics: StayStatics::default(),
                },
                values,
                mask,
            }
        })
        .collect();
    AlignedGrid {
        bin_width_minutes: 120,
        features,
        stays,
    }
}

fn fast_spec(method: ImputeMethod, seed: u64) -> ImputerSpec {
    let mut spec = ImputerSpec::new(method).with_seed(seed);
    // Small budgets keep the all-methods sweeps quick.
    spec.params.mice_rounds = 3;
    spec.params.mice_chains = 2;
    spec.params.missforest_max_rounds = 2;
    spec.params.missforest_trees = 8;
    spec.params.ae_epochs = 5;
    spec.params.mf_sweeps = 20;
    spec.params.ppca_max_iter = 30;
    spec
}

#[test]
fn mean_and_median_examples() {
    let grid = matrix_grid(&[
        vec![Some(1.0), Some(1.0)],
        vec![Some(3.0), Some(2.0)],
        vec![None, Some(100.0)],
    ]);
    let mean = fit(&ImputerSpec::new(ImputeMethod::Mean), &grid).unwrap();
    assert_eq!(mean.per_feature_values().unwrap()[0], 2.0);
    let median = fit(&ImputerSpec::new(ImputeMethod::Median), &grid).unwrap();
    assert_eq!(median.per_feature_values().unwrap()[1], 2.0);
}

#[test]
fn feed_forward_fills_forward_then_backfills_leading_gap() {
    let grid = matrix_grid(&[vec![None], vec![Some(5.0)], vec![None], vec![Some(7.0)]]);
    let imp = fit(&ImputerSpec::new(ImputeMethod::FeedForward), &grid).unwrap();
    let out = imp.transform(&grid).unwrap();
    let vals: Vec<f64> = (0..4).map(|b| out.grid.stays[0].values[(0, b)]).collect();
    assert_eq!(vals, vec![5.0, 5.0, 5.0, 7.0]);
}

#[test]
fn feed_forward_unobserved_feature_takes_training_mean() {
    // Feature 1 observed only in the training grid's other stay.
    let mut grid = random_missing_grid(5, 2, 2, 0.0);
    // Blank feature 1 of stay 0 entirely.
    for b in 0..grid.stays[0].n_bins() {
        grid.stays[0].values[(1, b)] = MISSING;
        grid.stays[0].mask[(1, b)] = false;
    }
    let imp = fit(&ImputerSpec::new(ImputeMethod::FeedForward), &grid).unwrap();
    let out = imp.transform(&grid).unwrap();
    let expected = {
        let (mut sum, mut n) = (0.0, 0);
        for s in &grid.stays {
            for b in 0..s.n_bins() {
                if s.mask[(1, b)] {
                    sum += s.values[(1, b)];
                    n += 1;
                }
            }
        }
        sum / n as f64
    };
    for b in 0..out.grid.stays[0].n_bins() {
        assert_eq!(out.grid.stays[0].values[(1, b)], expected);
    }
}

#[test]
fn group_mean_matches_brute_force_on_toy_grid() {
    // 5 stays, 2 features (lactate + one vital), hand-checkable sizes.
    let grid = random_missing_grid(11, 5, 2, 0.35);
    let imp = fit(&ImputerSpec::new(ImputeMethod::GroupMean), &grid).unwrap();
    let state = imp.group_mean_state().unwrap();

    // Brute-force oracle: rescan every cell for its preceding-lactate group.
    let lactate_row = 0usize;
    let mut sums = vec![[0.0f64; 4]; 2];
    let mut counts = vec![[0usize; 4]; 2];
    for stay in &grid.stays {
        for b in 0..stay.n_bins() {
            let mut cat = None;
            for prev in (0..b).rev() {
                if stay.mask[(lactate_row, prev)] {
                    cat = Some(
                        crate::data::categorize_lactate(stay.values[(lactate_row, prev)])
                            .unwrap(),
                    );
                    break;
                }
            }
            let Some(c) = cat else { continue };
            for f in 0..2 {
                if stay.mask[(f, b)] {
                    sums[f][c.index()] += stay.values[(f, b)];
                    counts[f][c.index()] += 1;
                }
            }
        }
    }
    for f in 0..2 {
        for g in 0..4 {
            if counts[f][g] > 0 {
                let expected = sums[f][g] / counts[f][g] as f64;
                assert!(
                    (state.groups[f][g] - expected).abs() < 1e-12,
                    "feature {f} group {g}"
                );
            } else {
                assert!(state.groups[f][g].is_nan());
            }
        }
    }

    // And the transform fills accordingly (fallback = overall mean).
    let out = imp.transform(&grid).unwrap();
    for (si, stay) in grid.stays.iter().enumerate() {
        for b in 0..stay.n_bins() {
            for f in 0..2 {
                if stay.mask[(f, b)] {
                    continue;
                }
                let mut cat = None;
                for prev in (0..b).rev() {
                    if stay.mask[(lactate_row, prev)] {
                        cat = Some(
                            crate::data::categorize_lactate(stay.values[(lactate_row, prev)])
                                .unwrap(),
                        );
                        break;
                    }
                }
                let expected = match cat {
                    Some(c) if counts[f][c.index()] > 0 => {
                        sums[f][c.index()] / counts[f][c.index()] as f64
                    }
                    _ => state.overall[f],
                };
                assert!(
                    (out.grid.stays[si].values[(f, b)] - expected).abs() < 1e-12,
                    "stay {si} bin {b} feature {f}"
                );
            }
        }
    }
}

#[test]
fn indicator_mean_appends_mask_columns() {
    let grid = matrix_grid(&[vec![Some(1.0), None], vec![None, Some(4.0)]]);
    let imp = fit(&ImputerSpec::new(ImputeMethod::IndicatorMean), &grid).unwrap();
    let out = imp.transform(&grid).unwrap();
    assert_eq!(out.grid.n_features(), 4);
    assert_eq!(out.grid.features[2].name, "f0__obs");
    let s = &out.grid.stays[0];
    // Indicator rows equal the original mask.
    assert_eq!(s.values[(2, 0)], 1.0);
    assert_eq!(s.values[(2, 1)], 0.0);
    assert_eq!(s.values[(3, 0)], 0.0);
    assert_eq!(s.values[(3, 1)], 1.0);

    // Complete grid: values untouched, indicators all-ones.
    let complete = matrix_grid(&[vec![Some(1.0), Some(2.0)], vec![Some(3.0), Some(4.0)]]);
    let imp = fit(&ImputerSpec::new(ImputeMethod::IndicatorMean), &complete).unwrap();
    let out = imp.transform(&complete).unwrap();
    for b in 0..2 {
        assert_eq!(out.grid.stays[0].values[(2, b)], 1.0);
        assert_eq!(out.grid.stays[0].values[(3, b)], 1.0);
    }
}

#[test]
fn ppca_rank_one_reconstruction_is_exact() {
    // Noiseless rank-1: x_rj = u_r * v_j.
    let u: Vec<f64> = (0..12).map(|r| 0.5 + 0.3 * r as f64).collect();
    let v = [1.0, -2.0, 0.5, 3.0];
    let rows: Vec<Vec<Option<f64>>> = u
        .iter()
        .map(|ur| v.iter().map(|vj| Some(ur * vj)).collect())
        .collect();
    let grid = matrix_grid(&rows);
    let mut spec = ImputerSpec::new(ImputeMethod::Ppca);
    spec.params.ppca_components = 1;
    let imp = fit(&spec, &grid).unwrap();
    let state = imp.ppca_state().unwrap();
    for (r, ur) in u.iter().enumerate() {
        let row: Vec<f64> = v.iter().map(|vj| ur * vj).collect();
        let mask = vec![true; 4];
        let recon = ppca_reconstruct(state, &row, &mask);
        for j in 0..4 {
            assert!(
                (recon[j] - row[j]).abs() < 1e-8,
                "row {r} col {j}: {} vs {}",
                recon[j],
                row[j]
            );
        }
    }
}

#[test]
fn soft_impute_completes_rank_one_two_by_two() {
    let grid = matrix_grid(&[vec![Some(1.0), Some(2.0)], vec![Some(2.0), None]]);
    let imp = fit(&ImputerSpec::new(ImputeMethod::SoftImpute), &grid).unwrap();
    let out = imp.transform(&grid).unwrap();
    let filled = out.grid.stays[0].values[(1, 1)];
    assert!((filled - 4.0).abs() < 1e-3, "missing entry -> {filled}");
}

#[test]
fn soft_impute_objective_non_increasing_within_each_step() {
    let grid = random_missing_grid(23, 6, 5, 0.3);
    let imp = fit(&ImputerSpec::new(ImputeMethod::SoftImpute), &grid).unwrap();
    let log = imp.soft_impute_objective_log().unwrap();
    assert!(!log.is_empty());
    for (step, objs) in log.iter().enumerate() {
        for w in objs.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0),
                "step {step}: objective rose {w:?}"
            );
        }
    }
}

#[test]
fn knn_single_neighbour_example() {
    let grid = matrix_grid(&[
        vec![Some(1.0), Some(2.0), None],
        vec![Some(1.0), Some(2.0), Some(9.0)],
    ]);
    let mut spec = ImputerSpec::new(ImputeMethod::Knn);
    spec.params.knn_k = 1;
    let imp = fit(&spec, &grid).unwrap();
    let out = imp.transform(&grid).unwrap();
    assert_eq!(out.grid.stays[0].values[(2, 0)], 9.0);
}

#[test]
fn knn_matches_exhaustive_brute_force() {
    let train = random_missing_grid(31, 8, 4, 0.3);
    let query = random_missing_grid(32, 4, 4, 0.4);
    let mut spec = ImputerSpec::new(ImputeMethod::Knn);
    spec.params.knn_k = 3;
    let imp = fit(&spec, &train).unwrap();
    let out = imp.transform(&query).unwrap();

    let tf = flatten(&train);
    let qf = flatten(&query);
    let k = 3usize;
    for r in 0..qf.values.nrows() {
        for j in 0..4 {
            if qf.mask[(r, j)] {
                continue;
            }
            // Exhaustive neighbour scan with the frozen distance definition.
            let mut cands: Vec<(f64, usize)> = Vec::new();
            for t in 0..tf.values.nrows() {
                if !tf.mask[(t, j)] {
                    continue;
                }
                let mut sum = 0.0;
                let mut co = 0;
                for c in 0..4 {
                    if qf.mask[(r, c)] && tf.mask[(t, c)] {
                        sum += (qf.values[(r, c)] - tf.values[(t, c)]).powi(2);
                        co += 1;
                    }
                }
                if co > 0 {
                    cands.push((sum / co as f64, t));
                }
            }
            cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected = if cands.is_empty() {
                imp.per_feature_values().map(|v| v[j]).unwrap_or(0.0)
            } else {
                let kk = k.min(cands.len());
                cands[..kk]
                    .iter()
                    .map(|&(_, t)| tf.values[(t, j)])
                    .sum::<f64>()
                    / kk as f64
            };
            let (si, b) = qf.rows[r];
            let got = out.grid.stays[si].values[(j, b)];
            assert!(
                (got - expected).abs() < 1e-12,
                "row {r} feature {j}: {got} vs {expected}"
            );
        }
    }
}

#[test]
fn missforest_records_round_deltas_and_stops() {
    let grid = random_missing_grid(41, 10, 4, 0.3);
    let spec = fast_spec(ImputeMethod::MissForest, 7);
    let imp = fit(&spec, &grid).unwrap();
    let deltas = imp.missforest_round_deltas().unwrap();
    assert!(!deltas.is_empty());
    assert!(deltas.len() <= spec.params.missforest_max_rounds);
    let out = imp.transform(&grid).unwrap();
    assert!(out.grid.is_complete());
}

#[test]
fn mice_records_round_deltas_per_chain() {
    let grid = random_missing_grid(43, 8, 4, 0.3);
    let spec = fast_spec(ImputeMethod::Mice, 7);
    let imp = fit(&spec, &grid).unwrap();
    let deltas = imp.mice_round_deltas().unwrap();
    assert_eq!(deltas.len(), spec.params.mice_chains);
    assert!(deltas.iter().all(|d| d.len() == spec.params.mice_rounds));
}

#[test]
fn ae_preimputes_train_with_means_and_inference_with_zeros() {
    let grid = matrix_grid(&[
        vec![Some(10.0), None],
        vec![None, Some(4.0)],
        vec![Some(20.0), Some(6.0)],
    ]);
    let fv = flatten(&grid);
    let (means, _) = flat::observed_means(&fv, &["f0".into(), "f1".into()]);
    let train_pre = ae::preimpute_with_means(&fv, &means);
    assert_eq!(train_pre[(1, 0)], 15.0); // mean of 10, 20
    assert_eq!(train_pre[(0, 1)], 5.0); // mean of 4, 6
    let infer_pre = ae::preimpute_with_zeros(&fv);
    assert_eq!(infer_pre[(1, 0)], 0.0);
    assert_eq!(infer_pre[(0, 1)], 0.0);
    // Observed cells pass through both pre-imputations unchanged.
    assert_eq!(train_pre[(0, 0)], 10.0);
    assert_eq!(infer_pre[(0, 0)], 10.0);
}

#[test]
fn zero_observed_feature_falls_back_to_zero_with_warning() {
    let grid = matrix_grid(&[vec![Some(1.0), None], vec![Some(2.0), None]]);
    let imp = fit(&ImputerSpec::new(ImputeMethod::Mean), &grid).unwrap();
    assert_eq!(imp.per_feature_values().unwrap()[1], 0.0);
    assert_eq!(imp.warnings.len(), 1);
    let out = imp.transform(&grid).unwrap();
    assert!(out.grid.is_complete());
    assert_eq!(out.grid.stays[0].values[(1, 0)], 0.0);
}

#[test]
fn transform_rejects_feature_mismatch() {
    let grid = matrix_grid(&[vec![Some(1.0), Some(2.0)]]);
    let imp = fit(&ImputerSpec::new(ImputeMethod::Mean), &grid).unwrap();
    let other = matrix_grid(&[vec![Some(1.0), Some(2.0), Some(3.0)]]);
    assert!(imp.transform(&other).is_err());
}

#[test]
fn single_value_methods_impute_within_training_range() {
    let grid = random_missing_grid(53, 8, 3, 0.35);
    let fv = flatten(&grid);
    for method in [
        ImputeMethod::Mean,
        ImputeMethod::Median,
        ImputeMethod::GroupMean,
        ImputeMethod::FeedForward,
        ImputeMethod::IndicatorMean,
    ] {
        let imp = fit(&ImputerSpec::new(method), &grid).unwrap();
        let out = imp.transform(&grid).unwrap();
        for f in 0..3 {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for r in 0..fv.values.nrows() {
                if fv.mask[(r, f)] {
                    lo = lo.min(fv.values[(r, f)]);
                    hi = hi.max(fv.values[(r, f)]);
                }
            }
            for (si, stay) in grid.stays.iter().enumerate() {
                for b in 0..stay.n_bins() {
                    if !stay.mask[(f, b)] {
                        let v = out.grid.stays[si].values[(f, b)];
                        assert!(
                            v >= lo - 1e-12 && v <= hi + 1e-12,
                            "{method:?} feature {f}: {v} outside [{lo}, {hi}]"
                        );
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]
    // Observed-entry preservation and completeness, across every method.
    #[test]
    fn preservation_and_completeness_all_methods(seed in 0u64..50) {
        let grid = random_missing_grid(seed, 6, 4, 0.3);
        for method in ImputeMethod::ALL {
            let spec = fast_spec(method, seed);
            let imp = fit(&spec, &grid).unwrap();
            let out = imp.transform(&grid).unwrap();
            prop_assert!(out.grid.is_complete(), "{method:?} left gaps");
            for (si, stay) in grid.stays.iter().enumerate() {
                for f in 0..grid.n_features() {
                    for b in 0..stay.n_bins() {
                        if stay.mask[(f, b)] {
                            prop_assert_eq!(
                                stay.values[(f, b)].to_bits(),
                                out.grid.stays[si].values[(f, b)].to_bits(),
                                "{:?} altered an observed entry", method
                            );
                        }
                        prop_assert!(out.grid.stays[si].mask[(f, b)]);
                    }
                }
            }
        }
    }

    // Transforming a fully observed grid is the identity on values.
    #[test]
    fn complete_grid_transform_is_identity(seed in 0u64..50) {
        let grid = random_missing_grid(seed, 4, 4, 0.0);
        for method in ImputeMethod::ALL {
            let spec = fast_spec(method, seed);
            let imp = fit(&spec, &grid).unwrap();
            let out = imp.transform(&grid).unwrap();
            for (si, stay) in grid.stays.iter().enumerate() {
                for f in 0..grid.n_features() {
                    for b in 0..stay.n_bins() {
                        prop_assert_eq!(
                            stay.values[(f, b)].to_bits(),
                            out.grid.stays[si].values[(f, b)].to_bits()
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn fitted_imputer_persists_and_reloads() {
    let grid = random_missing_grid(61, 6, 4, 0.3);
    for method in [
        ImputeMethod::Mean,
        ImputeMethod::SoftImpute,
        ImputeMethod::Mice,
    ] {
        let spec = fast_spec(method, 3);
        let imp = fit(&spec, &grid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        imp.save(&path).unwrap();
        let back = FittedImputer::load(&path).unwrap();
        assert_eq!(imp, back);
        let a = imp.transform(&grid).unwrap();
        let b = back.transform(&grid).unwrap();
        assert_eq!(a.grid, b.grid);
    }
}

#[test]
fn quality_examples() {
    // Perfect imputation -> RMSE 0.
    let truth = matrix_grid(&[vec![Some(2.0), Some(3.0)], vec![Some(4.0), Some(5.0)]]);
    let mut corrupted = truth.clone();
    corrupted.stays[0].values[(0, 1)] = MISSING;
    corrupted.stays[0].mask[(0, 1)] = false;
    let mut perfect = corrupted.clone();
    perfect.stays[0].values[(0, 1)] = 4.0;
    for b in 0..2 {
        for f in 0..2 {
            perfect.stays[0].mask[(f, b)] = true;
        }
    }
    let imputed = ImputedGrid {
        grid: perfect,
        original_mask: vec![corrupted.stays[0].mask.clone()],
    };
    let q = impute_quality(&truth, &imputed).unwrap();
    assert_eq!(q.overall_rmse, 0.0);
    assert_eq!(q.n_cells, 1);

    // Constant-0 imputation of constant-5 truth -> RMSE 5.
    let truth5 = matrix_grid(&[vec![Some(5.0); 3], vec![Some(5.0); 3], vec![Some(5.0); 3]]);
    let mut corrupted5 = truth5.clone();
    for b in 0..3 {
        corrupted5.stays[0].values[(1, b)] = MISSING;
        corrupted5.stays[0].mask[(1, b)] = false;
    }
    let mut zeros = corrupted5.clone();
    for b in 0..3 {
        zeros.stays[0].values[(1, b)] = 0.0;
        for f in 0..3 {
            zeros.stays[0].mask[(f, b)] = true;
        }
    }
    let imputed5 = ImputedGrid {
        grid: zeros,
        original_mask: vec![corrupted5.stays[0].mask.clone()],
    };
    let q5 = impute_quality(&truth5, &imputed5).unwrap();
    assert_eq!(q5.overall_rmse, 5.0);
}

#[test]
fn mean_imputation_rmse_approaches_unit_for_standard_normal_feature() {
    // Variance identity: imputing a zero-mean unit-variance feature with its
    // mean leaves RMSE -> 1 as n grows.
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let n = 40_000;
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<Option<f64>>> = (0..n)
        .map(|_| {
            vec![
                Some(normal.sample(&mut rng)),
                Some(normal.sample(&mut rng)),
            ]
        })
        .collect();
    let truth = matrix_grid(&rows);
    let mut corrupted = truth.clone();
    // MCAR at 30% on feature 0.
    for b in 0..n {
        if rng.random::<f64>() < 0.3 {
            corrupted.stays[0].values[(0, b)] = MISSING;
            corrupted.stays[0].mask[(0, b)] = false;
        }
    }
    let imp = fit(&ImputerSpec::new(ImputeMethod::Mean), &corrupted).unwrap();
    let out = imp.transform(&corrupted).unwrap();
    let q = impute_quality(&truth, &out).unwrap();
    assert!(
        (q.overall_rmse - 1.0).abs() < 0.03,
        "rmse {}",
        q.overall_rmse
    );
}

#[test]
fn unknown_method_name_lists_legal_names() {
    let err = ImputeMethod::parse("bogus").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("soft_impute") && msg.contains("mean"), "{msg}");
}
