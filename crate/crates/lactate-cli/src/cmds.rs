//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use lactate_core::data::{read_grid, write_grid, write_values_csv};
use lactate_core::eval::{report, run_experiment, ExperimentConfig, ModelKind, ResultTable};
use lactate_core::eval::{CellResult, FoldOutcome};
use lactate_core::impute::{self, FittedImputer, ImputeMethod, ImputerSpec};
use lactate_core::ingest::{
    self, default_feature_dictionary, load_feature_dictionary, CohortCriteria, SchemaMap,
};
use lactate_core::synth::{corrupt, generate_cohort, MissingnessSpec, SynthConfig};
use lactate_core::{Error, Result};

use crate::manifest::ManifestBuilder;
use crate::Logger;

fn read_config(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::config(format!(
            "config file {} does not exist",
            path.display()
        )));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct SynthFile {
    cohort: SynthConfig,
    #[serde(default)]
    missingness: Vec<MissingnessSpec>,
}

pub fn cmd_synth(config_path: &Path, out_dir: &Path, log: &Logger) -> Result<()> {
    let raw = read_config(config_path)?;
    let file: SynthFile = serde_json::from_slice(&raw)?;
    file.cohort.validate()?;
    for spec in &file.missingness {
        spec.validate()?;
    }
    let mut manifest = ManifestBuilder::new("synth");
    manifest.config_bytes(&raw);
    manifest.seed("cohort", file.cohort.rng_seed);
    for (i, m) in file.missingness.iter().enumerate() {
        manifest.seed(&format!("missingness_{i}"), m.rng_seed);
    }

    manifest.begin_stage("generate");
    log.info("synth", "generating cohort");
    let truth = generate_cohort(&file.cohort)?;
    manifest.begin_stage("corrupt");
    let cohort = corrupt(&truth, &file.missingness)?;

    manifest.begin_stage("write");
    ensure_dir(out_dir)?;
    write_grid(&cohort.corrupted, out_dir)?;
    let truth_path = out_dir.join("ground_truth.csv");
    write_values_csv(&cohort.truth, &truth_path)?;
    manifest.output(&out_dir.join("metadata.json"));
    manifest.output(&out_dir.join("grid.csv"));
    manifest.output(&truth_path);
    manifest.write(out_dir)?;
    log.info(
        "synth",
        &format!(
            "{} stays, {} observed cells written to {}",
            cohort.corrupted.stays.len(),
            cohort.corrupted.n_observed(),
            out_dir.display()
        ),
    );
    Ok(())
}

pub fn cmd_ingest(
    data_dir: &Path,
    schema_path: Option<&Path>,
    features_path: Option<&Path>,
    cohort_path: Option<&Path>,
    bin_width_minutes: u32,
    out_dir: &Path,
    log: &Logger,
) -> Result<()> {
    let schema = match schema_path {
        Some(p) => SchemaMap::from_json(
            std::str::from_utf8(&read_config(p)?)
                .map_err(|_| Error::config("schema file is not UTF-8"))?,
        )?,
        None => SchemaMap::default_eicu(),
    };
    let dict = match features_path {
        Some(p) => load_feature_dictionary(
            std::str::from_utf8(&read_config(p)?)
                .map_err(|_| Error::config("feature file is not UTF-8"))?,
        )?,
        None => default_feature_dictionary(),
    };
    let criteria: CohortCriteria = match cohort_path {
        Some(p) => serde_json::from_slice(&read_config(p)?)?,
        None => CohortCriteria::default(),
    };

    // Missing inputs are a usage error, not a runtime failure.
    let mut missing: Vec<String> = Vec::new();
    let patient_path = data_dir.join(&schema.patient_table.file);
    if !patient_path.exists() {
        missing.push(schema.patient_table.file.clone());
    }
    for t in &schema.event_tables {
        if !data_dir.join(&t.file).exists() {
            missing.push(t.file.clone());
        }
    }
    if !missing.is_empty() {
        return Err(Error::config(format!(
            "{} lacks source tables: {}",
            data_dir.display(),
            missing.join(", ")
        )));
    }

    let mut manifest = ManifestBuilder::new("ingest");
    manifest.input(&patient_path)?;
    for t in &schema.event_tables {
        manifest.input(&data_dir.join(&t.file))?;
    }

    manifest.begin_stage("ingest");
    log.info("ingest", "loading and resampling");
    let (grid, report) = ingest::ingest_dir(data_dir, &schema, &dict, &criteria, bin_width_minutes)?;

    manifest.begin_stage("write");
    ensure_dir(out_dir)?;
    write_grid(&grid, out_dir)?;
    let report_path = out_dir.join("ingest_report.json");
    write_text(&report_path, &serde_json::to_string_pretty(&report)?)?;

    // Observed-percentage CSV over the ingested grid, one row per feature.
    let pct_path = out_dir.join("observed_percentages.csv");
    let mut pct = String::from("feature,observed_fraction\n");
    for (name, fraction) in ingest::observed_percentages(&grid) {
        pct.push_str(&format!("{name},{fraction:.6}\n"));
    }
    write_text(&pct_path, &pct)?;

    manifest.output(&out_dir.join("metadata.json"));
    manifest.output(&out_dir.join("grid.csv"));
    manifest.output(&report_path);
    manifest.output(&pct_path);
    manifest.write(out_dir)?;
    log.info(
        "ingest",
        &format!(
            "{} stays retained of {} considered",
            report.cohort.exclusions.stays_retained, report.cohort.exclusions.stays_considered
        ),
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum DataSource {
    Synth {
        cohort: SynthConfig,
        #[serde(default)]
        missingness: Vec<MissingnessSpec>,
    },
    GridDir {
        path: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
struct ExperimentFile {
    data: DataSource,
    experiment: ExperimentConfig,
}

pub struct ExperimentFlags<'a> {
    pub imputers: Option<&'a str>,
    pub models: Option<&'a str>,
    pub jobs: Option<usize>,
}

pub fn cmd_experiment(
    config_path: &Path,
    out_dir: &Path,
    flags: &ExperimentFlags,
    log: &Logger,
) -> Result<()> {
    let raw = read_config(config_path)?;
    let file: ExperimentFile = serde_json::from_slice(&raw)?;
    let mut cfg = file.experiment;

    if let Some(names) = flags.imputers {
        let mut keep = Vec::new();
        for name in names.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let method = ImputeMethod::parse(name)?;
            match cfg.imputers.iter().find(|s| s.method == method) {
                Some(spec) => keep.push(spec.clone()),
                None => keep.push(ImputerSpec::new(method)),
            }
        }
        cfg.imputers = keep;
    }
    if let Some(names) = flags.models {
        cfg.models = names
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(ModelKind::parse)
            .collect::<Result<Vec<_>>>()?;
    }

    let mut manifest = ManifestBuilder::new("experiment");
    manifest.config_bytes(&raw);
    manifest.seed("experiment", cfg.rng_seed);

    manifest.begin_stage("data");
    let grid = match &file.data {
        DataSource::Synth {
            cohort,
            missingness,
        } => {
            manifest.seed("cohort", cohort.rng_seed);
            log.info("experiment", "generating synthetic cohort");
            let truth = generate_cohort(cohort)?;
            corrupt(&truth, missingness)?.corrupted
        }
        DataSource::GridDir { path } => {
            if !path.join("metadata.json").exists() {
                return Err(Error::config(format!(
                    "{} is not a grid directory (metadata.json missing)",
                    path.display()
                )));
            }
            manifest.input(&path.join("grid.csv"))?;
            log.info("experiment", &format!("reading grid from {}", path.display()));
            read_grid(path)?
        }
    };

    manifest.begin_stage("experiment");
    log.info(
        "experiment",
        &format!(
            "{} imputers x {} models x {} folds over {} stays (jobs: {})",
            cfg.imputers.len(),
            cfg.models.len(),
            cfg.folds,
            grid.stays.len(),
            flags
                .jobs
                .map(|j| j.to_string())
                .unwrap_or_else(|| "auto".into())
        ),
    );
    let output = run_experiment(&grid, &cfg, flags.jobs)?;

    manifest.begin_stage("write");
    ensure_dir(out_dir)?;
    let results_path = out_dir.join("results.csv");
    write_text(&results_path, &report::results_csv(&output.table))?;
    let folds_path = out_dir.join("results_folds.csv");
    write_text(&folds_path, &report::folds_long_csv(&output.table))?;
    let md_path = out_dir.join("results.md");
    write_text(&md_path, &report::render_markdown(&output.table))?;
    let pred_dir = out_dir.join("predictions");
    ensure_dir(&pred_dir)?;
    for ((imp, model, fold), rows) in &output.predictions {
        let name = format!(
            "{}__{}__fold{}.csv",
            imp.to_lowercase(),
            model.to_lowercase(),
            fold
        );
        write_text(&pred_dir.join(name), &report::predictions_csv(rows))?;
    }
    manifest.output(&results_path);
    manifest.output(&folds_path);
    manifest.output(&md_path);
    manifest.output(&pred_dir);
    manifest.write(out_dir)?;
    log.info("experiment", &format!("results in {}", out_dir.display()));
    Ok(())
}

/// Rebuilds a ResultTable from the per-fold long CSV.
fn table_from_folds_csv(path: &Path) -> Result<ResultTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut imputers: Vec<String> = Vec::new();
    let mut models: Vec<String> = Vec::new();
    let mut folds = 0usize;
    // (imputer, model, fold) -> metric -> value
    let mut values: BTreeMap<(String, String, usize), BTreeMap<String, Option<f64>>> =
        BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let metric = rec[0].to_string();
        let imp = rec[1].to_string();
        let model = rec[2].to_string();
        let fold: usize = rec[3]
            .parse()
            .map_err(|_| Error::data(format!("bad fold '{}'", &rec[3])))?;
        let value: Option<f64> = if rec[4].is_empty() {
            None
        } else {
            Some(
                rec[4]
                    .parse()
                    .map_err(|_| Error::data(format!("bad value '{}'", &rec[4])))?,
            )
        };
        if !imputers.contains(&imp) {
            imputers.push(imp.clone());
        }
        if !models.contains(&model) {
            models.push(model.clone());
        }
        folds = folds.max(fold + 1);
        values.entry((imp, model, fold)).or_default().insert(metric, value);
    }
    if values.is_empty() {
        return Err(Error::data(format!("{} holds no results", path.display())));
    }

    let mut cells: BTreeMap<(String, String), CellResult> = BTreeMap::new();
    for imp in &imputers {
        for model in &models {
            let mut per_fold = Vec::with_capacity(folds);
            for fold in 0..folds {
                let entry = values.get(&(imp.clone(), model.clone(), fold));
                let outcome = match entry {
                    Some(metrics) => {
                        let get = |name: &str| metrics.get(name).copied().flatten();
                        match (get("mae"), get("rmse"), get("r2")) {
                            (Some(mae), Some(rmse), Some(r2)) => {
                                FoldOutcome::Ok(lactate_core::eval::FoldMetrics {
                                    mae,
                                    rmse,
                                    r2,
                                    n_samples: 0,
                                })
                            }
                            _ => FoldOutcome::Failed("value missing in results".into()),
                        }
                    }
                    None => FoldOutcome::Failed("row missing in results".into()),
                };
                per_fold.push(outcome);
            }
            cells.insert((imp.clone(), model.clone()), CellResult { per_fold });
        }
    }
    Ok(ResultTable {
        imputer_labels: imputers,
        model_labels: models,
        folds,
        cells,
    })
}

pub fn cmd_report(results_dir: &Path, out_dir: Option<&Path>, log: &Logger) -> Result<()> {
    let folds_path = results_dir.join("results_folds.csv");
    if !folds_path.exists() {
        return Err(Error::config(format!(
            "{} has no results_folds.csv",
            results_dir.display()
        )));
    }
    let table = table_from_folds_csv(&folds_path)?;
    let out = out_dir.unwrap_or(results_dir);
    ensure_dir(out)?;
    let md_path = out.join("results.md");
    write_text(&md_path, &report::render_markdown(&table))?;
    let plot_path = out.join("plot_data.csv");
    write_text(&plot_path, &report::folds_long_csv(&table))?;
    log.info(
        "report",
        &format!("wrote {} and {}", md_path.display(), plot_path.display()),
    );
    Ok(())
}

pub fn cmd_impute_fit(
    method: Option<&str>,
    spec_path: Option<&Path>,
    grid_dir: &Path,
    out_path: &Path,
    log: &Logger,
) -> Result<()> {
    let spec: ImputerSpec = match (method, spec_path) {
        (_, Some(p)) => serde_json::from_slice(&read_config(p)?)?,
        (Some(name), None) => ImputerSpec::new(ImputeMethod::parse(name)?),
        (None, None) => {
            return Err(Error::config(
                "impute fit needs --method NAME or --spec FILE",
            ))
        }
    };
    let grid = read_grid(grid_dir)?;
    log.info("impute", &format!("fitting {}", spec.method.label()));
    let fitted = impute::fit(&spec, &grid)?;
    for w in &fitted.warnings {
        log.info("impute", w);
    }
    fitted.save(out_path)?;
    log.info("impute", &format!("state written to {}", out_path.display()));
    Ok(())
}

pub fn cmd_impute_apply(
    state_path: &Path,
    grid_dir: &Path,
    out_dir: &Path,
    log: &Logger,
) -> Result<()> {
    if !state_path.exists() {
        return Err(Error::config(format!(
            "state file {} does not exist",
            state_path.display()
        )));
    }
    let fitted = FittedImputer::load(state_path)?;
    let grid = read_grid(grid_dir)?;
    let out = fitted.transform(&grid)?;
    ensure_dir(out_dir)?;
    write_grid(&out.grid, out_dir)?;
    log.info(
        "impute",
        &format!(
            "{} transform of {} stays written to {}",
            fitted.method().label(),
            out.grid.stays.len(),
            out_dir.display()
        ),
    );
    Ok(())
}
