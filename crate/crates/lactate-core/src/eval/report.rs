//! Result emission: CSV tables for tooling and a metric-major Markdown
//! table with the best cell per metric bolded.

use std::fmt::Write as _;

use super::experiment::{mean_std, PredictionRow, ResultTable, METRICS};

fn full(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

/// Long-format per-cell summary: one row per (imputer, model, metric).
pub fn results_csv(table: &ResultTable) -> String {
    let mut out = String::from("imputer,model,metric,mean,std,folds_ok,failures\n");
    for imp in &table.imputer_labels {
        for model in &table.model_labels {
            let cell = &table.cells[&(imp.clone(), model.clone())];
            let failures = cell.failures().len();
            for metric in METRICS {
                let values = cell.ok_values(metric);
                let (mean, std) = mean_std(&values);
                let _ = writeln!(
                    out,
                    "{imp},{model},{metric},{},{},{},{}",
                    full(mean),
                    full(std),
                    values.len(),
                    failures
                );
            }
        }
    }
    out
}

/// Per-fold long format for grouped-bar plotting:
/// metric, imputer, model, fold, value.
pub fn folds_long_csv(table: &ResultTable) -> String {
    let mut out = String::from("metric,imputer,model,fold,value\n");
    for metric in METRICS {
        for imp in &table.imputer_labels {
            for model in &table.model_labels {
                let cell = &table.cells[&(imp.clone(), model.clone())];
                for (fold, outcome) in cell.per_fold.iter().enumerate() {
                    match outcome {
                        super::experiment::FoldOutcome::Ok(m) => {
                            let v = match metric {
                                "mae" => m.mae,
                                "rmse" => m.rmse,
                                _ => m.r2,
                            };
                            let _ = writeln!(out, "{metric},{imp},{model},{fold},{}", full(v));
                        }
                        super::experiment::FoldOutcome::Failed(_) => {
                            let _ = writeln!(out, "{metric},{imp},{model},{fold},");
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut out = String::from("stay_id,t_index,y_true,y_pred\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.stay_id,
            r.t_index,
            full(r.y_true),
            full(r.y_pred)
        );
    }
    out
}

fn metric_heading(metric: &str) -> &'static str {
    match metric {
        "mae" => "MAE",
        "rmse" => "RMSE",
        _ => "R2",
    }
}

/// Lower is better for the error metrics, higher for R2.
fn better(metric: &str, a: f64, b: f64) -> bool {
    if metric == "r2" {
        a > b
    } else {
        a < b
    }
}

/// Metric-major Markdown: imputer rows, model columns, `mean ± std` cells,
/// the best cell per metric in bold, failed cells as an em-dash with notes.
pub fn render_markdown(table: &ResultTable) -> String {
    let mut out = String::new();
    let mut notes: Vec<String> = Vec::new();
    for metric in METRICS {
        let _ = writeln!(out, "## {}\n", metric_heading(metric));
        let _ = writeln!(out, "| Imputation | {} |", table.model_labels.join(" | "));
        let _ = writeln!(
            out,
            "|---|{}|",
            table.model_labels.iter().map(|_| "---").collect::<Vec<_>>().join("|")
        );
        // Global best across the metric section.
        let mut best: Option<(f64, String, String)> = None;
        for imp in &table.imputer_labels {
            for model in &table.model_labels {
                let cell = &table.cells[&(imp.clone(), model.clone())];
                let values = cell.ok_values(metric);
                if values.is_empty() {
                    continue;
                }
                let (mean, _) = mean_std(&values);
                if best
                    .as_ref()
                    .map_or(true, |(cur, _, _)| better(metric, mean, *cur))
                {
                    best = Some((mean, imp.clone(), model.clone()));
                }
            }
        }
        for imp in &table.imputer_labels {
            let mut row = format!("| {imp} |");
            for model in &table.model_labels {
                let cell = &table.cells[&(imp.clone(), model.clone())];
                let values = cell.ok_values(metric);
                if values.is_empty() {
                    row.push_str(" — |");
                    for (fold, msg) in cell.failures() {
                        let note = format!("{imp}/{model} fold {fold}: {msg}");
                        if !notes.contains(&note) {
                            notes.push(note);
                        }
                    }
                    continue;
                }
                let (mean, std) = mean_std(&values);
                let text = format!("{mean:.3} ± {std:.3}");
                let is_best = best
                    .as_ref()
                    .map_or(false, |(_, bi, bm)| bi == imp && bm == model);
                if is_best {
                    let _ = write!(row, " **{text}** |");
                } else {
                    let _ = write!(row, " {text} |");
                }
            }
            let _ = writeln!(out, "{row}");
        }
        out.push('\n');
    }
    if !notes.is_empty() {
        let _ = writeln!(out, "Failed cells:\n");
        for n in notes {
            let _ = writeln!(out, "- {n}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::experiment::{CellResult, FoldMetrics, FoldOutcome};
    use std::collections::BTreeMap;

    fn table_with(cells: Vec<(&str, &str, Vec<FoldOutcome>)>) -> ResultTable {
        let mut imputers = Vec::new();
        let mut models = Vec::new();
        let mut map = BTreeMap::new();
        for (i, m, folds) in cells {
            if !imputers.contains(&i.to_string()) {
                imputers.push(i.to_string());
            }
            if !models.contains(&m.to_string()) {
                models.push(m.to_string());
            }
            map.insert(
                (i.to_string(), m.to_string()),
                CellResult { per_fold: folds },
            );
        }
        ResultTable {
            imputer_labels: imputers,
            model_labels: models,
            folds: 2,
            cells: map,
        }
    }

    fn ok(mae: f64) -> FoldOutcome {
        FoldOutcome::Ok(FoldMetrics {
            mae,
            rmse: mae * 1.3,
            r2: 1.0 - mae,
            n_samples: 10,
        })
    }

    #[test]
    fn best_cell_is_bolded_per_metric() {
        let table = table_with(vec![
            ("Mean", "LSTM", vec![ok(0.8), ok(0.9)]),
            ("Indicator", "LSTM", vec![ok(0.6), ok(0.7)]),
        ]);
        let md = render_markdown(&table);
        assert!(md.contains("**0.650 ± 0.071**"), "{md}");
        assert!(!md.contains("**0.850"), "{md}");
    }

    #[test]
    fn single_cell_is_trivially_bolded() {
        let table = table_with(vec![("Mean", "LR", vec![ok(0.5), ok(0.5)])]);
        let md = render_markdown(&table);
        assert!(md.contains("**0.500 ± 0.000**"), "{md}");
    }

    #[test]
    fn failed_cell_renders_dash_with_note() {
        let table = table_with(vec![
            ("Mean", "LR", vec![ok(0.5), ok(0.6)]),
            (
                "KNN",
                "LR",
                vec![
                    FoldOutcome::Failed("boom".into()),
                    FoldOutcome::Failed("boom".into()),
                ],
            ),
        ]);
        let md = render_markdown(&table);
        assert!(md.contains(" — |"), "{md}");
        assert!(md.contains("KNN/LR fold 0: boom"), "{md}");
        let csv = results_csv(&table);
        assert!(csv.contains("KNN,LR,mae,,,0,2"), "{csv}");
    }

    #[test]
    fn long_csv_has_one_row_per_fold() {
        let table = table_with(vec![("Mean", "LR", vec![ok(0.5), ok(0.6)])]);
        let csv = folds_long_csv(&table);
        assert_eq!(csv.lines().count(), 1 + 3 * 2);
        assert!(csv.lines().any(|l| l.starts_with("mae,Mean,LR,0,")));
    }
}
