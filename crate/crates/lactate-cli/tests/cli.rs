//! End-to-end tests of the `lactate` binary: exit codes, file outputs, and
//! rerun determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lactate"))
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/ingest")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_synth_config(seed: u64) -> String {
    format!(
        r#"{{
        "cohort": {{
            "n_patients": 24,
            "rng_seed": {seed},
            "stay_length": {{"mean_bins": 10.0, "std_bins": 2.0, "min_bins": 6, "max_bins": 14}},
            "features": [
                {{"name": "heart_rate", "offset": 85.0, "scale": 15.0, "noise": 0.3, "period_bins": 1}},
                {{"name": "respiratory_rate", "offset": 19.0, "scale": 5.0, "noise": 0.4, "period_bins": 1}}
            ],
            "lactate": {{"period_bins": 2}}
        }},
        "missingness": [
            {{"mechanism": "mcar", "rate": 0.2, "rng_seed": 1}}
        ]
    }}"#
    )
}

#[test]
fn synth_outputs_round_trip_and_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("synth.json");
    fs::write(&config, small_synth_config(42)).unwrap();

    let out_a = dir.path().join("a");
    let res = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);
    for f in ["metadata.json", "grid.csv", "ground_truth.csv", "manifest.json"] {
        assert!(out_a.join(f).exists(), "{f} missing");
    }
    // Round-trippable through the interchange reader.
    let grid = lactate_core::data::read_grid(&out_a).unwrap();
    assert_eq!(grid.stays.len(), 24);

    let out_b = dir.path().join("b");
    let res = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);
    assert_eq!(
        fs::read(out_a.join("grid.csv")).unwrap(),
        fs::read(out_b.join("grid.csv")).unwrap()
    );
    assert_eq!(
        fs::read(out_a.join("ground_truth.csv")).unwrap(),
        fs::read(out_b.join("ground_truth.csv")).unwrap()
    );
    // Exactly one manifest per output directory.
    let manifests = fs::read_dir(&out_a)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .contains("manifest")
        })
        .count();
    assert_eq!(manifests, 1);
}

#[test]
fn malformed_config_exits_2_with_position_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, "{\"cohort\": {\n  \"n_patients\": oops\n}}").unwrap();
    let res = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("line"), "{stderr}");
}

#[test]
fn ingest_fixture_produces_known_two_stay_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let fix = fixture_dir();
    let res = run(&[
        "ingest",
        "--data",
        fix.to_str().unwrap(),
        "--schema",
        fix.join("schema.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);

    let grid = lactate_core::data::read_grid(&out).unwrap();
    assert_eq!(grid.stay_ids(), vec!["s100".to_string(), "s400".to_string()]);
    let lac = grid.feature_index("lactate").unwrap();
    let hr = grid.feature_index("heart_rate").unwrap();
    let glucose = grid.feature_index("glucose").unwrap();

    let s100 = &grid.stays[0];
    assert_eq!(s100.n_bins(), 5);
    // Last record wins within bin 0 (offsets 10, 100).
    assert_eq!(s100.values[(lac, 0)], 1.8);
    // 45.0 is outside the valid lactate range and must be masked.
    assert!(!s100.mask[(lac, 1)]);
    assert_eq!(s100.values[(lac, 4)], 2.5);
    // Heart rate: 119 beats 40 in bin 0; 120 opens bin 1 (half-open bins).
    assert_eq!(s100.values[(hr, 0)], 88.0);
    assert_eq!(s100.values[(hr, 1)], 90.0);
    assert_eq!(s100.values[(glucose, 0)], 110.0);
    assert_eq!(s100.descriptor.patient_id, "p1");
    assert_eq!(s100.descriptor.statics.age, Some(61.8));

    let s400 = &grid.stays[1];
    assert_eq!(s400.n_bins(), 2);
    assert_eq!(s400.values[(lac, 0)], 3.0);
    assert_eq!(s400.values[(lac, 1)], 3.2);
    assert_eq!(s400.values[(hr, 0)], 100.0);

    // Exclusion report: s200 fails age (exactly 18), s300 fails LoS.
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("ingest_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["cohort"]["exclusions"]["age"], 1);
    assert_eq!(report["cohort"]["exclusions"]["length_of_stay"], 1);
    assert_eq!(report["cohort"]["exclusions"]["stays_retained"], 2);
    assert_eq!(report["outliers"]["total_masked"], 1);
    assert!(out.join("observed_percentages.csv").exists());
}

#[test]
fn ingest_empty_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&[
        "ingest",
        "--data",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&res, 2);
}

fn small_experiment_config(dir: &Path) -> PathBuf {
    let config = dir.join("experiment.json");
    let body = format!(
        r#"{{
        "data": {{"synth": {}}},
        "experiment": {{
            "imputers": [
                {{"method": "mean"}},
                {{"method": "indicator_mean"}}
            ],
            "models": ["lasso"],
            "folds": 4,
            "rng_seed": 9,
            "max_window_bins": 6
        }}
    }}"#,
        small_synth_config(7)
            .replace("\"cohort\"", "\"cohort\"")
            .trim()
    );
    // The synth section nests under data.synth with cohort/missingness keys.
    fs::write(&config, body).unwrap();
    config
}

#[test]
fn experiment_runs_and_job_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_experiment_config(dir.path());

    let out1 = dir.path().join("jobs1");
    let res = run(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
        "--jobs",
        "1",
    ]);
    assert_exit(&res, 0);
    let out8 = dir.path().join("jobs8");
    let res = run(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out8.to_str().unwrap(),
        "--jobs",
        "8",
    ]);
    assert_exit(&res, 0);

    for f in ["results.csv", "results_folds.csv"] {
        assert_eq!(
            fs::read(out1.join(f)).unwrap(),
            fs::read(out8.join(f)).unwrap(),
            "{f} differs between job counts"
        );
    }
    let results = fs::read_to_string(out1.join("results.csv")).unwrap();
    // 2 imputers x 1 model x 3 metrics + header.
    assert_eq!(results.lines().count(), 1 + 6);
    assert!(out1.join("predictions").read_dir().unwrap().count() >= 8);
}

#[test]
fn unknown_imputer_exits_2_listing_legal_names() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_experiment_config(dir.path());
    let res = run(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--imputers",
        "bogus",
    ]);
    assert_exit(&res, 2);
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("legal names"), "{stderr}");
    assert!(stderr.contains("soft_impute"), "{stderr}");
}

#[test]
fn report_renders_bolded_markdown_from_results() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_experiment_config(dir.path());
    let out = dir.path().join("exp");
    assert_exit(
        &run(&[
            "experiment",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        0,
    );
    let report_dir = dir.path().join("report");
    let res = run(&[
        "report",
        "--results",
        out.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
    ]);
    assert_exit(&res, 0);
    let md = fs::read_to_string(report_dir.join("results.md")).unwrap();
    assert!(md.contains("## MAE"));
    assert!(md.contains("**"), "best cell should be bolded:\n{md}");
    assert!(report_dir.join("plot_data.csv").exists());
}

#[test]
fn impute_fit_then_apply_completes_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("synth.json");
    fs::write(&config, small_synth_config(3)).unwrap();
    let grid_dir = dir.path().join("grid");
    assert_exit(
        &run(&[
            "synth",
            "--config",
            config.to_str().unwrap(),
            "--out",
            grid_dir.to_str().unwrap(),
        ]),
        0,
    );
    let state = dir.path().join("mean.json");
    assert_exit(
        &run(&[
            "impute",
            "fit",
            "--method",
            "mean",
            "--grid",
            grid_dir.to_str().unwrap(),
            "--out",
            state.to_str().unwrap(),
        ]),
        0,
    );
    let out = dir.path().join("completed");
    assert_exit(
        &run(&[
            "impute",
            "apply",
            "--state",
            state.to_str().unwrap(),
            "--grid",
            grid_dir.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]),
        0,
    );
    let grid = lactate_core::data::read_grid(&out).unwrap();
    assert!(grid.is_complete());
    assert!(grid
        .stays
        .iter()
        .all(|s| s.mask.iter().all(|&m| m)));
}

#[test]
fn version_prints_and_succeeds() {
    let res = run(&["version"]);
    assert_exit(&res, 0);
    assert!(String::from_utf8_lossy(&res.stdout).contains("lactate"));
}
