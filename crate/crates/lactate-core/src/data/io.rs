//! Grid interchange format: one metadata JSON file plus one wide CSV with
//! `stay_id, bin_index, <feature>..., <feature>__mask...` columns.
//!
//! Floats are serialized with 17 significant digits so a round trip
//! reproduces values bit-exactly; unobserved cells are written as empty
//! fields with a 0 mask.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{AlignedGrid, FeatureSpec, StayBlock, StayDescriptor, MISSING};
use crate::error::{Error, Result};

pub const METADATA_FILE: &str = "metadata.json";
pub const GRID_FILE: &str = "grid.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMetadata {
    pub bin_width_minutes: u32,
    pub features: Vec<FeatureSpec>,
    pub stays: Vec<StayDescriptor>,
}

/// 17 significant digits: enough to reproduce any f64 exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

/// Writes `metadata.json` and `grid.csv` into `dir`, creating it if needed.
pub fn write_grid(grid: &AlignedGrid, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = GridMetadata {
        bin_width_minutes: grid.bin_width_minutes,
        features: grid.features.clone(),
        stays: grid.stays.iter().map(|s| s.descriptor.clone()).collect(),
    };
    let meta_path = dir.join(METADATA_FILE);
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    write_values_csv(grid, &dir.join(GRID_FILE))
}

/// Writes the wide values+mask CSV for `grid` to `path`.
pub fn write_values_csv(grid: &AlignedGrid, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec!["stay_id".to_string(), "bin_index".to_string()];
    header.extend(grid.features.iter().map(|f| f.name.clone()));
    header.extend(grid.features.iter().map(|f| format!("{}__mask", f.name)));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;

    for stay in &grid.stays {
        for bin in 0..stay.n_bins() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(stay.descriptor.stay_id.clone());
            rec.push(bin.to_string());
            for f in 0..grid.features.len() {
                if stay.mask[(f, bin)] {
                    rec.push(fmt_f64(stay.values[(f, bin)]));
                } else {
                    rec.push(String::new());
                }
            }
            for f in 0..grid.features.len() {
                rec.push(if stay.mask[(f, bin)] { "1" } else { "0" }.to_string());
            }
            w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a grid previously written by [`write_grid`].
pub fn read_grid(dir: &Path) -> Result<AlignedGrid> {
    let meta_path = dir.join(METADATA_FILE);
    let raw = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: GridMetadata = serde_json::from_str(&raw)?;
    read_values_csv(&dir.join(GRID_FILE), &meta)
}

/// Reads a values+mask CSV whose stays and features are described by `meta`.
pub fn read_values_csv(path: &Path, meta: &GridMetadata) -> Result<AlignedGrid> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let n_feat = meta.features.len();
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let expected_cols = 2 + 2 * n_feat;
    if header.len() != expected_cols {
        return Err(Error::data(format!(
            "{}: expected {} columns, found {}",
            path.display(),
            expected_cols,
            header.len()
        )));
    }

    // Collect rows per stay, then assemble matrices in metadata stay order.
    let mut per_stay: std::collections::HashMap<String, Vec<(usize, Vec<f64>, Vec<bool>)>> =
        std::collections::HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let stay_id = rec[0].to_string();
        let bin: usize = rec[1]
            .parse()
            .map_err(|_| Error::data(format!("bad bin_index '{}'", &rec[1])))?;
        let mut vals = Vec::with_capacity(n_feat);
        let mut mask = Vec::with_capacity(n_feat);
        for f in 0..n_feat {
            let cell = &rec[2 + f];
            let m = &rec[2 + n_feat + f];
            let observed = match m {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::data(format!(
                        "bad mask cell '{}' in {}",
                        other,
                        path.display()
                    )))
                }
            };
            if observed {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::data(format!("bad value cell '{cell}'")))?;
                vals.push(v);
                mask.push(true);
            } else {
                vals.push(MISSING);
                mask.push(false);
            }
        }
        per_stay.entry(stay_id).or_default().push((bin, vals, mask));
    }

    let mut stays = Vec::with_capacity(meta.stays.len());
    for desc in &meta.stays {
        let mut rows = per_stay.remove(&desc.stay_id).ok_or_else(|| {
            Error::data(format!(
                "stay '{}' present in metadata but absent from {}",
                desc.stay_id,
                path.display()
            ))
        })?;
        rows.sort_by_key(|(bin, _, _)| *bin);
        let n_bins = rows.last().map(|(b, _, _)| b + 1).unwrap_or(0);
        if rows.len() != n_bins || rows.iter().enumerate().any(|(i, (b, _, _))| i != *b) {
            return Err(Error::data(format!(
                "stay '{}': bin indices are not contiguous from 0",
                desc.stay_id
            )));
        }
        let mut values = DMatrix::from_element(n_feat, n_bins, MISSING);
        let mut mask = DMatrix::from_element(n_feat, n_bins, false);
        for (bin, vals, m) in rows {
            for f in 0..n_feat {
                values[(f, bin)] = vals[f];
                mask[(f, bin)] = m[f];
            }
        }
        stays.push(StayBlock {
            descriptor: desc.clone(),
            values,
            mask,
        });
    }
    if !per_stay.is_empty() {
        let mut extra: Vec<_> = per_stay.keys().cloned().collect();
        extra.sort();
        return Err(Error::data(format!(
            "{}: stays missing from metadata: {}",
            path.display(),
            extra.join(", ")
        )));
    }

    let grid = AlignedGrid {
        bin_width_minutes: meta.bin_width_minutes,
        features: meta.features.clone(),
        stays,
    };
    grid.validate()?;
    Ok(grid)
}
