//! Tabular data model: typed columns, CSV ingestion with dtype inference,
//! cross-validation fold plans.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decomp::NodeId;
use crate::kg::UnitExpr;

/// Share of non-empty cells that must parse for a column to take a dtype.
pub const INFER_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: empty file or no data rows")]
    Empty { path: String },
    #[error("duplicate header {name:?}")]
    DuplicateHeader { name: String },
    #[error("target column {name:?} not found")]
    TargetMissing { name: String },
    #[error("column {name:?} has {got} rows, dataset has {want}")]
    LengthMismatch { name: String, got: usize, want: usize },
    #[error("fold count {k} invalid for {n} rows (need 2 <= k <= n)")]
    BadFoldCount { k: usize, n: usize },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema hints: {0}")]
    BadHints(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    Numeric,
    Categorical,
    Datetime,
    GeoLat,
    GeoLon,
    Boolean,
}

impl Dtype {
    /// Geo coordinates are stored as numbers but keep their own tag.
    pub fn is_numeric_like(self) -> bool {
        matches!(self, Dtype::Numeric | Dtype::GeoLat | Dtype::GeoLon)
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dtype::Numeric => "numeric",
            Dtype::Categorical => "categorical",
            Dtype::Datetime => "datetime",
            Dtype::GeoLat => "geo_lat",
            Dtype::GeoLon => "geo_lon",
            Dtype::Boolean => "boolean",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// Calendar timestamp: epoch seconds plus pre-split fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub epoch_s: i64,
    pub year: i32,
    pub month: u32,
    pub day: u32,
    pub hour: u32,
    pub minute: u32,
    /// 0 = Monday ... 6 = Sunday.
    pub weekday: u8,
}

impl Stamp {
    pub fn from_naive(dt: NaiveDateTime) -> Self {
        Stamp {
            epoch_s: dt.and_utc().timestamp(),
            year: dt.year(),
            month: dt.month(),
            day: dt.day(),
            hour: dt.hour(),
            minute: dt.minute(),
            weekday: dt.weekday().num_days_from_monday() as u8,
        }
    }

    pub fn iso(&self) -> String {
        format!(
            "{:04}-{:02}-{:02}T{:02}:{:02}:00",
            self.year, self.month, self.day, self.hour, self.minute
        )
    }
}

const DATETIME_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

pub fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in DATETIME_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0);
    }
    None
}

fn parse_number(s: &str) -> Option<f64> {
    let v: f64 = s.trim().parse().ok()?;
    v.is_finite().then_some(v)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

/// Column storage, homogeneous per dtype; `None` marks an absent cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
    Datetime(Vec<Option<Stamp>>),
    Boolean(Vec<Option<bool>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
            ColumnData::Datetime(v) => v.len(),
            ColumnData::Boolean(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_absent(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::Categorical(v) => v[row].is_none(),
            ColumnData::Datetime(v) => v[row].is_none(),
            ColumnData::Boolean(v) => v[row].is_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub dtype: Dtype,
    pub data: ColumnData,
    /// Concept name, filled in by column mapping (`Unknown` when unmapped).
    pub concept: Option<String>,
    pub unit: Option<UnitExpr>,
    /// Raw hints from `SchemaHints`, resolved during column mapping.
    pub concept_hint: Option<String>,
    pub unit_hint: Option<String>,
}

impl Column {
    pub fn new(name: impl Into<String>, dtype: Dtype, data: ColumnData) -> Self {
        Column {
            name: name.into(),
            dtype,
            data,
            concept: None,
            unit: None,
            concept_hint: None,
            unit_hint: None,
        }
    }

    pub fn numeric(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Column::new(name, Dtype::Numeric, ColumnData::Numeric(values))
    }

    pub fn categorical(name: impl Into<String>, values: Vec<Option<String>>) -> Self {
        Column::new(name, Dtype::Categorical, ColumnData::Categorical(values))
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Numeric view; geo columns count as numeric.
    pub fn as_numeric(&self) -> Option<&[Option<f64>]> {
        match &self.data {
            ColumnData::Numeric(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&[Option<String>]> {
        match &self.data {
            ColumnData::Categorical(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_datetime(&self) -> Option<&[Option<Stamp>]> {
        match &self.data {
            ColumnData::Datetime(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_boolean(&self) -> Option<&[Option<bool>]> {
        match &self.data {
            ColumnData::Boolean(v) => Some(v),
            _ => None,
        }
    }

    /// Cell rendered as a string, `None` when absent. Used for grouping keys
    /// and entity joins.
    pub fn cell_text(&self, row: usize) -> Option<String> {
        match &self.data {
            ColumnData::Numeric(v) => v[row].map(|x| format_float(x)),
            ColumnData::Categorical(v) => v[row].clone(),
            ColumnData::Datetime(v) => v[row].map(|s| s.iso()),
            ColumnData::Boolean(v) => v[row].map(|b| b.to_string()),
        }
    }
}

/// Shortest round-trip float formatting (Rust's default `Display`).
pub fn format_float(x: f64) -> String {
    format!("{x}")
}

/// Per-column overrides for ingestion: dtype plus semantic annotations that
/// take precedence over knowledge-base mapping patterns.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SchemaHints(pub BTreeMap<String, ColumnHint>);

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnHint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtype: Option<Dtype>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept: Option<String>,
}

impl SchemaHints {
    pub fn from_json(json: &str) -> Result<Self, DataError> {
        serde_json::from_str::<BTreeMap<String, ColumnHint>>(json)
            .map(SchemaHints)
            .map_err(|e| DataError::BadHints(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub columns: Vec<Column>,
    pub target: String,
    pub task: Task,
    pub n_rows: usize,
    /// Column name -> node in the decomposition graph.
    pub provenance: BTreeMap<String, NodeId>,
}

impl Dataset {
    pub fn new(columns: Vec<Column>, target: &str, task: Task) -> Result<Self, DataError> {
        let n_rows = columns.first().map(|c| c.len()).unwrap_or(0);
        for c in &columns {
            if c.len() != n_rows {
                return Err(DataError::LengthMismatch {
                    name: c.name.clone(),
                    got: c.len(),
                    want: n_rows,
                });
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.name.clone()) {
                return Err(DataError::DuplicateHeader {
                    name: c.name.clone(),
                });
            }
        }
        if !columns.iter().any(|c| c.name == target) {
            return Err(DataError::TargetMissing {
                name: target.to_string(),
            });
        }
        Ok(Dataset {
            columns,
            target: target.to_string(),
            task,
            n_rows,
            provenance: BTreeMap::new(),
        })
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_mut(&mut self, name: &str) -> Option<&mut Column> {
        self.columns.iter_mut().find(|c| c.name == name)
    }

    pub fn target_column(&self) -> &Column {
        self.column(&self.target).expect("target exists")
    }

    /// Feature columns: everything except the target.
    pub fn features(&self) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(move |c| c.name != self.target)
    }

    pub fn n_features(&self) -> usize {
        self.features().count()
    }

    /// Row-subset copy (used for bootstrapped reward evaluation).
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|c| {
                let data = match &c.data {
                    ColumnData::Numeric(v) => {
                        ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect())
                    }
                    ColumnData::Categorical(v) => {
                        ColumnData::Categorical(rows.iter().map(|&i| v[i].clone()).collect())
                    }
                    ColumnData::Datetime(v) => {
                        ColumnData::Datetime(rows.iter().map(|&i| v[i]).collect())
                    }
                    ColumnData::Boolean(v) => {
                        ColumnData::Boolean(rows.iter().map(|&i| v[i]).collect())
                    }
                };
                Column { data, ..c.clone() }
            })
            .collect();
        Dataset {
            columns,
            target: self.target.clone(),
            task: self.task,
            n_rows: rows.len(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Appends a feature column by value; on a name collision the stored name gets
/// a numeric suffix (`x` -> `x_2`). Returns the new dataset and the final name.
pub fn append_feature(
    d: &Dataset,
    col: Column,
    origin: NodeId,
) -> Result<(Dataset, String), DataError> {
    if col.len() != d.n_rows {
        return Err(DataError::LengthMismatch {
            name: col.name.clone(),
            got: col.len(),
            want: d.n_rows,
        });
    }
    let mut out = d.clone();
    let mut name = col.name.clone();
    if out.column(&name).is_some() {
        let mut i = 2usize;
        loop {
            let candidate = format!("{}_{}", col.name, i);
            if out.column(&candidate).is_none() {
                name = candidate;
                break;
            }
            i += 1;
        }
    }
    let mut col = col;
    col.name = name.clone();
    out.columns.push(col);
    out.provenance.insert(name.clone(), origin);
    Ok((out, name))
}

// ---------------------------------------------------------------------------
// CSV ingestion

fn geo_kind(name: &str) -> Option<Dtype> {
    let lower = name.to_ascii_lowercase();
    let tokens: Vec<&str> = lower
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.iter().any(|t| *t == "lat" || *t == "latitude") {
        Some(Dtype::GeoLat)
    } else if tokens
        .iter()
        .any(|t| *t == "lon" || *t == "lng" || *t == "long" || *t == "longitude")
    {
        Some(Dtype::GeoLon)
    } else {
        None
    }
}

fn infer_dtype(name: &str, raw: &[String]) -> Dtype {
    let nonempty: Vec<&str> = raw
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect();
    if nonempty.is_empty() {
        return Dtype::Categorical;
    }
    let total = nonempty.len() as f64;
    if nonempty.iter().all(|s| parse_bool(s).is_some()) {
        return Dtype::Boolean;
    }
    let numeric_ok = nonempty.iter().filter(|s| parse_number(s).is_some()).count() as f64;
    if numeric_ok / total >= INFER_THRESHOLD {
        if let Some(geo) = geo_kind(name) {
            let in_range = |lo: f64, hi: f64| {
                nonempty
                    .iter()
                    .filter_map(|s| parse_number(s))
                    .all(|v| v >= lo && v <= hi)
            };
            match geo {
                Dtype::GeoLat if in_range(-90.0, 90.0) => return Dtype::GeoLat,
                Dtype::GeoLon if in_range(-180.0, 180.0) => return Dtype::GeoLon,
                _ => {}
            }
        }
        return Dtype::Numeric;
    }
    let dt_ok = nonempty
        .iter()
        .filter(|s| parse_datetime(s).is_some())
        .count() as f64;
    if dt_ok / total >= INFER_THRESHOLD {
        return Dtype::Datetime;
    }
    Dtype::Categorical
}

fn build_column(name: &str, raw: Vec<String>, dtype: Dtype) -> Column {
    let data = match dtype {
        Dtype::Numeric | Dtype::GeoLat | Dtype::GeoLon => ColumnData::Numeric(
            raw.iter()
                .map(|s| {
                    if s.trim().is_empty() {
                        None
                    } else {
                        parse_number(s)
                    }
                })
                .collect(),
        ),
        Dtype::Datetime => ColumnData::Datetime(
            raw.iter()
                .map(|s| {
                    if s.trim().is_empty() {
                        None
                    } else {
                        parse_datetime(s).map(Stamp::from_naive)
                    }
                })
                .collect(),
        ),
        Dtype::Boolean => ColumnData::Boolean(
            raw.iter()
                .map(|s| {
                    if s.trim().is_empty() {
                        None
                    } else {
                        parse_bool(s)
                    }
                })
                .collect(),
        ),
        Dtype::Categorical => ColumnData::Categorical(
            raw.into_iter()
                .map(|s| if s.trim().is_empty() { None } else { Some(s) })
                .collect(),
        ),
    };
    Column::new(name, dtype, data)
}

/// Loads an RFC-4180 CSV with a mandatory header row. Dtypes are inferred
/// (95% rule for numeric/datetime) unless overridden by `hints`; cells that
/// fail the winning dtype's parse are recorded absent. Task defaults to
/// regression for a numeric target, classification otherwise.
pub fn load_csv(
    path: impl AsRef<Path>,
    hints: Option<&SchemaHints>,
    target: &str,
    task: Option<Task>,
) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(DataError::Empty {
            path: path.display().to_string(),
        });
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for h in &headers {
            if !seen.insert(h.clone()) {
                return Err(DataError::DuplicateHeader { name: h.clone() });
            }
        }
    }
    let mut raw: Vec<Vec<String>> = headers.iter().map(|_| Vec::new()).collect();
    for record in reader.records() {
        let record = record?;
        for (i, field) in record.iter().enumerate() {
            raw[i].push(field.to_string());
        }
    }
    if raw[0].is_empty() {
        return Err(DataError::Empty {
            path: path.display().to_string(),
        });
    }
    if !headers.iter().any(|h| h == target) {
        return Err(DataError::TargetMissing {
            name: target.to_string(),
        });
    }

    let mut columns = Vec::with_capacity(headers.len());
    for (name, values) in headers.iter().zip(raw) {
        let hint = hints.and_then(|h| h.0.get(name));
        let dtype = hint
            .and_then(|h| h.dtype)
            .unwrap_or_else(|| infer_dtype(name, &values));
        let mut col = build_column(name, values, dtype);
        if let Some(h) = hint {
            col.concept_hint = h.concept.clone();
            col.unit_hint = h.unit.clone();
        }
        columns.push(col);
    }
    let target_dtype = columns
        .iter()
        .find(|c| c.name == target)
        .map(|c| c.dtype)
        .unwrap();
    let task = task.unwrap_or(if target_dtype.is_numeric_like() {
        Task::Regression
    } else {
        Task::Classification
    });
    Dataset::new(columns, target, task)
}

/// Writes the dataset back out; `load_csv` on the result reproduces the
/// dataset cell-for-cell (floats use shortest round-trip formatting).
pub fn write_csv<W: std::io::Write>(d: &Dataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(d.columns.iter().map(|c| c.name.as_str()))
        .map_err(DataError::Csv)?;
    for row in 0..d.n_rows {
        let record: Vec<String> = d
            .columns
            .iter()
            .map(|c| match &c.data {
                ColumnData::Numeric(v) => v[row].map(format_float).unwrap_or_default(),
                ColumnData::Categorical(v) => v[row].clone().unwrap_or_default(),
                ColumnData::Datetime(v) => v[row].map(|s| s.iso()).unwrap_or_default(),
                ColumnData::Boolean(v) => v[row].map(|b| b.to_string()).unwrap_or_default(),
            })
            .collect();
        w.write_record(&record).map_err(DataError::Csv)?;
    }
    w.flush().map_err(|e| DataError::Unreadable {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn write_csv_file(d: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path.as_ref()).map_err(|source| DataError::Unreadable {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    write_csv(d, file)
}

// ---------------------------------------------------------------------------
// Fold plans

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<u32>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn rows_in_fold(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f as usize == fold)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &f)| f as usize != fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Deterministic k-fold assignment; classification targets are stratified when
/// every class has at least k members and no absent target cells.
pub fn make_folds(d: &Dataset, k: usize, seed: u64) -> Result<FoldPlan, DataError> {
    let n = d.n_rows;
    if k < 2 || k > n {
        return Err(DataError::BadFoldCount { k, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0u32; n];

    let stratified_groups: Option<Vec<Vec<usize>>> = if d.task == Task::Classification {
        let target = d.target_column();
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut all_present = true;
        for row in 0..n {
            match target.cell_text(row) {
                Some(label) => groups.entry(label).or_default().push(row),
                None => {
                    all_present = false;
                    break;
                }
            }
        }
        if all_present && groups.values().all(|g| g.len() >= k) {
            Some(groups.into_values().collect())
        } else {
            None
        }
    } else {
        None
    };

    match stratified_groups {
        Some(groups) => {
            let mut cursor = 0usize;
            for mut rows in groups {
                rows.shuffle(&mut rng);
                for row in rows {
                    assignments[row] = (cursor % k) as u32;
                    cursor += 1;
                }
            }
        }
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for (pos, row) in order.into_iter().enumerate() {
                assignments[row] = (pos % k) as u32;
            }
        }
    }

    Ok(FoldPlan {
        k,
        assignments,
        seed,
    })
}
