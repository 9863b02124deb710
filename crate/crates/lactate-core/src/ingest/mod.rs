//! Raw-extract ingestion: schema-mapped CSV loading, alias
//! canonicalization, cohort selection, fixed-width resampling with
//! last-record-wins, and valid-interval outlier masking.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{
    AlignedGrid, EventRecord, FeatureDictionary, FeatureSpec, StayBlock, StayDescriptor,
    StayStatics, LACTATE, MISSING,
};
use crate::error::{Error, Result};

/// Shipped default feature dictionary (canonical names, aliases, valid
/// ranges); a data file users can override.
pub const DEFAULT_FEATURES_JSON: &str = include_str!("../../configs/features.json");
/// Shipped default schema map matching eICU column names.
pub const DEFAULT_SCHEMA_JSON: &str = include_str!("../../configs/eicu_schema.json");

#[derive(Debug, Clone, Deserialize)]
struct FeatureFile {
    features: Vec<FeatureSpec>,
}

/// Parses a feature-dictionary JSON document.
pub fn load_feature_dictionary(json: &str) -> Result<FeatureDictionary> {
    let file: FeatureFile = serde_json::from_str(json)?;
    FeatureDictionary::new(file.features)
}

pub fn default_feature_dictionary() -> FeatureDictionary {
    load_feature_dictionary(DEFAULT_FEATURES_JSON).expect("shipped dictionary is valid")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientTableMap {
    pub file: String,
    pub stay_id: String,
    pub patient_id: String,
    pub age: String,
    pub gender: String,
    pub ethnicity: String,
    pub admission_weight: String,
    pub admission_dx: String,
    pub los_minutes: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableLayout {
    /// One (feature, value) pair per row.
    Long { feature: String, value: String },
    /// One value column per feature; the column name is the source feature name.
    Wide { value_columns: Vec<String> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventTableMap {
    pub file: String,
    pub stay_id: String,
    pub offset: String,
    pub layout: TableLayout,
}

/// Column bindings for every source table plus an extra alias table merged
/// over the feature dictionary's own aliases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaMap {
    #[serde(default, skip_serializing)]
    #[allow(dead_code)]
    comment: Option<String>,
    pub patient_table: PatientTableMap,
    pub event_tables: Vec<EventTableMap>,
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
}

impl SchemaMap {
    pub fn from_json(json: &str) -> Result<SchemaMap> {
        let schema: SchemaMap = serde_json::from_str(json)?;
        Ok(schema)
    }

    pub fn default_eicu() -> SchemaMap {
        Self::from_json(DEFAULT_SCHEMA_JSON).expect("shipped schema is valid")
    }

    /// Extra aliases must target canonical names and stay injective.
    pub fn validate_aliases(&self, dict: &FeatureDictionary) -> Result<()> {
        for (alias, canonical) in &self.aliases {
            if dict.index_of(canonical).is_none() {
                return Err(Error::config(format!(
                    "schema alias '{alias}' targets unknown canonical feature '{canonical}'"
                )));
            }
            if let Some(existing) = dict.canonical_of(alias) {
                if existing != canonical {
                    return Err(Error::config(format!(
                        "schema alias '{alias}' conflicts with dictionary mapping to '{existing}'"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortCriteria {
    /// Exclusive lower bound.
    pub min_age_years: f64,
    pub min_lactate_count: usize,
    pub min_los_minutes: f64,
}

impl Default for CohortCriteria {
    fn default() -> Self {
        CohortCriteria {
            min_age_years: 18.0,
            min_lactate_count: 2,
            min_los_minutes: 1080.0,
        }
    }
}

impl CohortCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_age_years > 0.0 && self.min_los_minutes > 0.0) || self.min_lactate_count == 0
        {
            return Err(Error::config("cohort thresholds must all be positive"));
        }
        Ok(())
    }
}

/// Static per-stay facts from the patient table.
#[derive(Debug, Clone, PartialEq)]
pub struct StayInfo {
    pub patient_id: String,
    pub statics: StayStatics,
    pub los_minutes: Option<f64>,
}

pub type StaticTable = HashMap<String, StayInfo>;

#[derive(Debug, Clone, Default, Serialize)]
pub struct TableLoadReport {
    pub file: String,
    pub rows_read: usize,
    pub events_emitted: usize,
    /// Non-empty cells that failed to parse as numbers.
    pub cells_skipped: usize,
    pub negative_offsets_dropped: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadReport {
    pub tables: Vec<TableLoadReport>,
    pub total_events: usize,
}

/// eICU writes "> 89" for the capped elderly bucket.
fn parse_age(raw: &str) -> Option<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return None;
    }
    if let Some(stripped) = trimmed.strip_prefix('>') {
        return stripped.trim().parse::<f64>().ok().map(|v| v + 1.0);
    }
    trimmed.parse::<f64>().ok()
}

fn non_empty(raw: &str) -> Option<String> {
    let t = raw.trim();
    if t.is_empty() {
        None
    } else {
        Some(t.to_string())
    }
}

fn header_index(header: &csv::StringRecord, column: &str, file: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::data(format!("{file}: header lacks bound column '{column}'")))
}

/// Loads the patient table into a per-stay static table.
pub fn load_static_table(data_dir: &Path, schema: &SchemaMap) -> Result<StaticTable> {
    let map = &schema.patient_table;
    let path = data_dir.join(&map.file);
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    let header = rdr.headers().map_err(|e| Error::csv(&path, e))?.clone();
    let idx = |col: &str| header_index(&header, col, &map.file);
    let (i_stay, i_pat, i_age, i_gender, i_eth, i_weight, i_dx, i_los) = (
        idx(&map.stay_id)?,
        idx(&map.patient_id)?,
        idx(&map.age)?,
        idx(&map.gender)?,
        idx(&map.ethnicity)?,
        idx(&map.admission_weight)?,
        idx(&map.admission_dx)?,
        idx(&map.los_minutes)?,
    );
    let mut out = StaticTable::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(&path, e))?;
        let stay_id = rec[i_stay].trim().to_string();
        if stay_id.is_empty() {
            continue;
        }
        out.insert(
            stay_id,
            StayInfo {
                patient_id: rec[i_pat].trim().to_string(),
                statics: StayStatics {
                    age: parse_age(&rec[i_age]),
                    gender: non_empty(&rec[i_gender]),
                    ethnicity: non_empty(&rec[i_eth]),
                    admission_weight: rec[i_weight].trim().parse().ok(),
                    admission_dx: non_empty(&rec[i_dx]),
                },
                los_minutes: rec[i_los].trim().parse().ok(),
            },
        );
    }
    Ok(out)
}

/// Loads every bound event table. Unparseable value cells are skipped and
/// counted; pre-admission (negative-offset) records are dropped; a table
/// whose skip ratio exceeds one half is a hard error.
pub fn load_events(
    data_dir: &Path,
    schema: &SchemaMap,
    statics: &StaticTable,
) -> Result<(Vec<EventRecord>, LoadReport)> {
    let mut events = Vec::new();
    let mut report = LoadReport::default();
    for table in &schema.event_tables {
        let path = data_dir.join(&table.file);
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        let header = rdr.headers().map_err(|e| Error::csv(&path, e))?.clone();
        let i_stay = header_index(&header, &table.stay_id, &table.file)?;
        let i_offset = header_index(&header, &table.offset, &table.file)?;
        let mut t_report = TableLoadReport {
            file: table.file.clone(),
            ..TableLoadReport::default()
        };
        let columns: Vec<(String, usize)> = match &table.layout {
            TableLayout::Long { feature, value } => {
                let i_feat = header_index(&header, feature, &table.file)?;
                let i_val = header_index(&header, value, &table.file)?;
                vec![(String::new(), i_feat), ("__value".into(), i_val)]
            }
            TableLayout::Wide { value_columns } => value_columns
                .iter()
                .map(|c| Ok((c.clone(), header_index(&header, c, &table.file)?)))
                .collect::<Result<Vec<_>>>()?,
        };
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(&path, e))?;
            t_report.rows_read += 1;
            let stay_id = rec[i_stay].trim().to_string();
            let offset: i64 = match rec[i_offset].trim().parse() {
                Ok(v) => v,
                Err(_) => {
                    t_report.cells_skipped += 1;
                    continue;
                }
            };
            if offset < 0 {
                t_report.negative_offsets_dropped += 1;
                continue;
            }
            let patient_id = statics
                .get(&stay_id)
                .map(|s| s.patient_id.clone())
                .unwrap_or_default();
            match &table.layout {
                TableLayout::Long { .. } => {
                    let feature = rec[columns[0].1].trim().to_string();
                    let raw = rec[columns[1].1].trim();
                    match raw.parse::<f64>() {
                        Ok(value) if value.is_finite() => {
                            events.push(EventRecord {
                                patient_id,
                                stay_id,
                                feature,
                                offset_minutes: offset,
                                value,
                            });
                            t_report.events_emitted += 1;
                        }
                        _ => t_report.cells_skipped += 1,
                    }
                }
                TableLayout::Wide { .. } => {
                    for (col_name, col_idx) in &columns {
                        let raw = rec[*col_idx].trim();
                        if raw.is_empty() {
                            // Sparse wide rows are structural, not errors.
                            continue;
                        }
                        match raw.parse::<f64>() {
                            Ok(value) if value.is_finite() => {
                                events.push(EventRecord {
                                    patient_id: patient_id.clone(),
                                    stay_id: stay_id.clone(),
                                    feature: col_name.clone(),
                                    offset_minutes: offset,
                                    value,
                                });
                                t_report.events_emitted += 1;
                            }
                            _ => t_report.cells_skipped += 1,
                        }
                    }
                }
            }
        }
        let attempted = t_report.events_emitted + t_report.cells_skipped;
        if attempted > 0 && t_report.cells_skipped * 2 > attempted {
            return Err(Error::data(format!(
                "{}: {} of {} value cells unparseable (> 50%)",
                table.file, t_report.cells_skipped, attempted
            )));
        }
        report.total_events += t_report.events_emitted;
        report.tables.push(t_report);
    }
    Ok((events, report))
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CanonReport {
    pub dropped_unknown: usize,
    pub per_source_name: BTreeMap<String, usize>,
}

/// Rewrites every record's feature name to its canonical form; records with
/// no dictionary or schema alias are dropped and counted.
pub fn canonicalize(
    events: Vec<EventRecord>,
    schema: &SchemaMap,
    dict: &FeatureDictionary,
) -> (Vec<EventRecord>, CanonReport) {
    let mut report = CanonReport::default();
    let mut out = Vec::with_capacity(events.len());
    for mut e in events {
        let canonical = dict
            .canonical_of(&e.feature)
            .map(str::to_string)
            .or_else(|| schema.aliases.get(&e.feature).cloned());
        match canonical {
            Some(name) => {
                e.feature = name;
                out.push(e);
            }
            None => {
                report.dropped_unknown += 1;
                *report.per_source_name.entry(e.feature).or_insert(0) += 1;
            }
        }
    }
    (out, report)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ExclusionCounts {
    pub age: usize,
    pub lactate_count: usize,
    pub length_of_stay: usize,
    pub stays_considered: usize,
    pub stays_retained: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CohortSelection {
    pub retained: BTreeSet<String>,
    pub exclusions: ExclusionCounts,
}

/// Applies the three inclusion criteria. A stay is retained iff
/// age > min_age AND lactate events >= min_count AND LoS >= min_los.
/// Event order never affects the outcome.
pub fn select_cohort(
    events: &[EventRecord],
    criteria: &CohortCriteria,
    statics: &StaticTable,
) -> Result<CohortSelection> {
    criteria.validate()?;
    let mut lactate_counts: HashMap<&str, usize> = HashMap::new();
    let mut event_stays: BTreeSet<&str> = BTreeSet::new();
    for e in events {
        event_stays.insert(e.stay_id.as_str());
        if e.feature == LACTATE {
            *lactate_counts.entry(e.stay_id.as_str()).or_insert(0) += 1;
        }
    }
    for stay in &event_stays {
        if !statics.contains_key(*stay) {
            return Err(Error::data(format!(
                "stay '{stay}' has events but is missing from the static table"
            )));
        }
    }

    let mut selection = CohortSelection {
        retained: BTreeSet::new(),
        exclusions: ExclusionCounts::default(),
    };
    let mut all_stays: Vec<&String> = statics.keys().collect();
    all_stays.sort();
    for stay in all_stays {
        let info = &statics[stay];
        selection.exclusions.stays_considered += 1;
        let age_ok = info.statics.age.map_or(false, |a| a > criteria.min_age_years);
        let lactate_ok =
            lactate_counts.get(stay.as_str()).copied().unwrap_or(0) >= criteria.min_lactate_count;
        let los_ok = info
            .los_minutes
            .map_or(false, |los| los >= criteria.min_los_minutes);
        if !age_ok {
            selection.exclusions.age += 1;
        }
        if !lactate_ok {
            selection.exclusions.lactate_count += 1;
        }
        if !los_ok {
            selection.exclusions.length_of_stay += 1;
        }
        if age_ok && lactate_ok && los_ok {
            selection.retained.insert(stay.clone());
        }
    }
    selection.exclusions.stays_retained = selection.retained.len();
    Ok(selection)
}

/// Bins canonical events into a grid. Bin b covers
/// [b*width, (b+1)*width) minutes; within a bin the record with the largest
/// offset wins, ties broken by source order (the later record wins). Each
/// stay spans bin 0 through the last bin holding any of its events.
pub fn resample(
    events: &[EventRecord],
    bin_width_minutes: u32,
    dict: &FeatureDictionary,
    statics: &StaticTable,
) -> Result<AlignedGrid> {
    if bin_width_minutes == 0 {
        return Err(Error::config("bin width must be positive"));
    }
    let features: Vec<FeatureSpec> = dict.features().to_vec();
    let n_feat = features.len();
    let width = bin_width_minutes as i64;

    // (feature_row, bin, offset, sequence) winners per stay.
    struct Cell {
        offset: i64,
        seq: usize,
        value: f64,
    }
    let mut per_stay: BTreeMap<&str, (i64, HashMap<(usize, usize), Cell>)> = BTreeMap::new();
    for (seq, e) in events.iter().enumerate() {
        if e.offset_minutes < 0 {
            return Err(Error::data(format!(
                "negative offset {} for stay '{}' reached resample",
                e.offset_minutes, e.stay_id
            )));
        }
        let Some(row) = dict.index_of(&e.feature) else {
            return Err(Error::data(format!(
                "non-canonical feature '{}' reached resample",
                e.feature
            )));
        };
        let bin = (e.offset_minutes / width) as usize;
        let entry = per_stay.entry(e.stay_id.as_str()).or_insert((-1, HashMap::new()));
        entry.0 = entry.0.max(e.offset_minutes);
        let cell = entry.1.entry((row, bin));
        match cell {
            std::collections::hash_map::Entry::Occupied(mut oc) => {
                let c = oc.get_mut();
                if (e.offset_minutes, seq) >= (c.offset, c.seq) {
                    *c = Cell {
                        offset: e.offset_minutes,
                        seq,
                        value: e.value,
                    };
                }
            }
            std::collections::hash_map::Entry::Vacant(vc) => {
                vc.insert(Cell {
                    offset: e.offset_minutes,
                    seq,
                    value: e.value,
                });
            }
        }
    }

    let mut stays = Vec::with_capacity(per_stay.len());
    for (stay_id, (max_offset, cells)) in per_stay {
        let info = statics.get(stay_id).ok_or_else(|| {
            Error::data(format!("stay '{stay_id}' missing from the static table"))
        })?;
        let n_bins = (max_offset / width) as usize + 1;
        let mut values = DMatrix::from_element(n_feat, n_bins, MISSING);
        let mut mask = DMatrix::from_element(n_feat, n_bins, false);
        for ((row, bin), cell) in cells {
            values[(row, bin)] = cell.value;
            mask[(row, bin)] = true;
        }
        stays.push(StayBlock {
            descriptor: StayDescriptor {
                patient_id: info.patient_id.clone(),
                stay_id: stay_id.to_string(),
                statics: info.statics.clone(),
            },
            values,
            mask,
        });
    }
    let grid = AlignedGrid {
        bin_width_minutes,
        features,
        stays,
    };
    grid.validate()?;
    Ok(grid)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OutlierReport {
    pub per_feature: BTreeMap<String, usize>,
    pub total_masked: usize,
}

/// Masks observed values outside their feature's closed valid interval.
/// Never changes an unobserved entry and never flips a mask back to true.
pub fn mask_outliers(grid: &AlignedGrid, dict: &FeatureDictionary) -> Result<(AlignedGrid, OutlierReport)> {
    let mut bounds = Vec::with_capacity(grid.n_features());
    for f in &grid.features {
        let Some(row) = dict.index_of(&f.name) else {
            return Err(Error::data(format!(
                "feature '{}' present in grid but absent from the valid-range table",
                f.name
            )));
        };
        let spec = &dict.features()[row];
        bounds.push((spec.valid_min, spec.valid_max));
    }
    let mut out = grid.clone();
    let mut report = OutlierReport::default();
    for stay in &mut out.stays {
        for f in 0..grid.n_features() {
            let (lo, hi) = bounds[f];
            for b in 0..stay.n_bins() {
                if !stay.mask[(f, b)] {
                    continue;
                }
                let v = stay.values[(f, b)];
                let below = lo.map_or(false, |lo| v < lo);
                let above = hi.map_or(false, |hi| v > hi);
                if below || above {
                    stay.values[(f, b)] = MISSING;
                    stay.mask[(f, b)] = false;
                    *report
                        .per_feature
                        .entry(grid.features[f].name.clone())
                        .or_insert(0) += 1;
                    report.total_masked += 1;
                }
            }
        }
    }
    Ok((out, report))
}

/// Fraction of observed cells per feature over the whole grid.
pub fn observed_percentages(grid: &AlignedGrid) -> Vec<(String, f64)> {
    let total: usize = grid.stays.iter().map(|s| s.n_bins()).sum();
    grid.features
        .iter()
        .enumerate()
        .map(|(f, spec)| {
            let observed: usize = grid
                .stays
                .iter()
                .map(|s| (0..s.n_bins()).filter(|&b| s.mask[(f, b)]).count())
                .sum();
            (
                spec.name.clone(),
                if total > 0 {
                    observed as f64 / total as f64
                } else {
                    0.0
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub load: LoadReport,
    pub canonicalization: CanonReport,
    pub cohort: CohortSelection,
    pub outliers: OutlierReport,
}

/// Full ingestion pipeline: load, canonicalize, select the cohort, filter,
/// resample at the given width, and mask outliers.
pub fn ingest_dir(
    data_dir: &Path,
    schema: &SchemaMap,
    dict: &FeatureDictionary,
    criteria: &CohortCriteria,
    bin_width_minutes: u32,
) -> Result<(AlignedGrid, IngestReport)> {
    schema.validate_aliases(dict)?;
    let statics = load_static_table(data_dir, schema)?;
    let (events, load) = load_events(data_dir, schema, &statics)?;
    let (events, canonicalization) = canonicalize(events, schema, dict);
    let cohort = select_cohort(&events, criteria, &statics)?;
    let retained_events: Vec<EventRecord> = events
        .into_iter()
        .filter(|e| cohort.retained.contains(&e.stay_id))
        .collect();
    let grid = resample(&retained_events, bin_width_minutes, dict, &statics)?;
    let (grid, outliers) = mask_outliers(&grid, dict)?;
    Ok((
        grid,
        IngestReport {
            load,
            canonicalization,
            cohort,
            outliers,
        },
    ))
}
