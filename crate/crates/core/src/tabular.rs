//! Column-oriented mixed-type tables, CSV ingestion, encodings and quantile
//! discretization.
//!
//! A [`Dataset`] is immutable once built. Categorical cells are stored as
//! level codes into the column's declared level list, numeric cells as `f64`.
//! The response (claim count) is a numeric column whose cells must be
//! non-negative integers.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },
    #[error("input has no data rows")]
    Empty,
    #[error("column `{column}` has length {len}, expected {expected}")]
    Length {
        column: String,
        len: usize,
        expected: usize,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("column `{column}` is {found}, expected {expected}")]
    Kind {
        column: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("unknown level `{level}` for column `{column}`")]
    UnknownLevel { column: String, level: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Numeric,
}

impl ColumnKind {
    fn as_str(self) -> &'static str {
        match self {
            ColumnKind::Categorical => "categorical",
            ColumnKind::Numeric => "numeric",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    #[default]
    Covariate,
    Exposure,
    Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    /// Header used in CSV files when it differs from `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
    #[serde(default)]
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn numeric(name: &str) -> Self {
        ColumnSpec {
            name: name.to_string(),
            source: None,
            kind: ColumnKind::Numeric,
            levels: Vec::new(),
            role: ColumnRole::Covariate,
        }
    }

    pub fn categorical<S: AsRef<str>>(name: &str, levels: &[S]) -> Self {
        ColumnSpec {
            name: name.to_string(),
            source: None,
            kind: ColumnKind::Categorical,
            levels: levels.iter().map(|l| l.as_ref().to_string()).collect(),
            role: ColumnRole::Covariate,
        }
    }

    pub fn with_role(mut self, role: ColumnRole) -> Self {
        self.role = role;
        self
    }

    pub fn with_source(mut self, source: &str) -> Self {
        self.source = Some(source.to_string());
        self
    }

    /// Header of this column in CSV files.
    pub fn header(&self) -> &str {
        self.source.as_deref().unwrap_or(&self.name)
    }

    pub fn level_index(&self, label: &str) -> Option<u32> {
        self.levels.iter().position(|l| l == label).map(|i| i as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    columns: Vec<ColumnSpec>,
    response: usize,
    exposure: Option<usize>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self, DataError> {
        let mut seen = HashMap::new();
        for (j, c) in columns.iter().enumerate() {
            if c.name.is_empty() {
                return Err(DataError::Schema(format!("column {j} has an empty name")));
            }
            if seen.insert(c.name.clone(), j).is_some() {
                return Err(DataError::Schema(format!("duplicate column `{}`", c.name)));
            }
            match c.kind {
                ColumnKind::Categorical => {
                    if c.levels.is_empty() {
                        return Err(DataError::Schema(format!(
                            "categorical column `{}` declares no levels",
                            c.name
                        )));
                    }
                    let mut lv = HashMap::new();
                    for l in &c.levels {
                        if l.is_empty() {
                            return Err(DataError::Schema(format!(
                                "column `{}` has an empty level label",
                                c.name
                            )));
                        }
                        if lv.insert(l.as_str(), ()).is_some() {
                            return Err(DataError::Schema(format!(
                                "column `{}` repeats level `{l}`",
                                c.name
                            )));
                        }
                    }
                    if c.role != ColumnRole::Covariate {
                        return Err(DataError::Schema(format!(
                            "{:?} column `{}` must be numeric",
                            c.role, c.name
                        )));
                    }
                }
                ColumnKind::Numeric => {
                    if !c.levels.is_empty() {
                        return Err(DataError::Schema(format!(
                            "numeric column `{}` declares levels",
                            c.name
                        )));
                    }
                }
            }
        }
        let responses: Vec<usize> = role_indices(&columns, ColumnRole::Response);
        let exposures: Vec<usize> = role_indices(&columns, ColumnRole::Exposure);
        if responses.len() != 1 {
            return Err(DataError::Schema(format!(
                "expected exactly one response column, found {}",
                responses.len()
            )));
        }
        if exposures.len() > 1 {
            return Err(DataError::Schema("more than one exposure column".into()));
        }
        Ok(Schema {
            response: responses[0],
            exposure: exposures.first().copied(),
            columns,
        })
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn column(&self, j: usize) -> &ColumnSpec {
        &self.columns[j]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize, DataError> {
        self.index_of(name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    }

    pub fn response(&self) -> usize {
        self.response
    }

    pub fn exposure(&self) -> Option<usize> {
        self.exposure
    }

    /// Columns that take part in generation and in dataset metrics: every
    /// column except the exposure.
    pub fn modelled_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&j| Some(j) != self.exposure)
            .collect()
    }

    pub fn covariates(&self) -> Vec<usize> {
        role_indices(&self.columns, ColumnRole::Covariate)
    }
}

fn role_indices(columns: &[ColumnSpec], role: ColumnRole) -> Vec<usize> {
    columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.role == role)
        .map(|(j, _)| j)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Categorical(Vec<u32>),
    Numeric(Vec<f64>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Categorical(c) => c.len(),
            Column::Numeric(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn kind_str(&self) -> &'static str {
        match self {
            Column::Categorical(_) => "categorical",
            Column::Numeric(_) => "numeric",
        }
    }

    pub fn value(&self, i: usize) -> Value {
        match self {
            Column::Categorical(c) => Value::Level(c[i]),
            Column::Numeric(v) => Value::Number(v[i]),
        }
    }

    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Categorical(c) => Column::Categorical(rows.iter().map(|&i| c[i]).collect()),
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// One cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Level(u32),
    Number(f64),
}

#[derive(Clone, PartialEq)]
pub struct Dataset {
    schema: Arc<Schema>,
    columns: Vec<Column>,
    n_rows: usize,
}

impl fmt::Debug for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dataset")
            .field("columns", &self.schema.columns.iter().map(|c| &c.name).collect::<Vec<_>>())
            .field("n_rows", &self.n_rows)
            .finish()
    }
}

impl Dataset {
    pub fn new(schema: Arc<Schema>, columns: Vec<Column>) -> Result<Self, DataError> {
        if columns.len() != schema.len() {
            return Err(DataError::SchemaMismatch(format!(
                "{} columns supplied for a {}-column schema",
                columns.len(),
                schema.len()
            )));
        }
        let n_rows = columns.first().map_or(0, Column::len);
        for (spec, col) in schema.columns().iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(DataError::Length {
                    column: spec.name.clone(),
                    len: col.len(),
                    expected: n_rows,
                });
            }
            match (spec.kind, col) {
                (ColumnKind::Categorical, Column::Categorical(codes)) => {
                    let m = spec.levels.len() as u32;
                    if let Some(i) = codes.iter().position(|&c| c >= m) {
                        return Err(DataError::Cell {
                            row: i + 1,
                            column: spec.name.clone(),
                            message: format!("level code {} out of range", codes[i]),
                        });
                    }
                }
                (ColumnKind::Numeric, Column::Numeric(values)) => {
                    for (i, &x) in values.iter().enumerate() {
                        if !x.is_finite() {
                            return Err(DataError::Cell {
                                row: i + 1,
                                column: spec.name.clone(),
                                message: format!("non-finite value {x}"),
                            });
                        }
                        if spec.role == ColumnRole::Response && (x < 0.0 || x.fract() != 0.0) {
                            return Err(DataError::Cell {
                                row: i + 1,
                                column: spec.name.clone(),
                                message: format!("response {x} is not a non-negative integer"),
                            });
                        }
                    }
                }
                _ => {
                    return Err(DataError::Kind {
                        column: spec.name.clone(),
                        expected: spec.kind.as_str(),
                        found: col.kind_str(),
                    })
                }
            }
        }
        Ok(Dataset {
            schema,
            columns,
            n_rows,
        })
    }

    pub(crate) fn from_parts_unchecked(schema: Arc<Schema>, columns: Vec<Column>) -> Self {
        let n_rows = columns.first().map_or(0, Column::len);
        Dataset {
            schema,
            columns,
            n_rows,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub(crate) fn columns_mut(&mut self) -> &mut [Column] {
        &mut self.columns
    }

    pub fn column(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    pub fn column_by_name(&self, name: &str) -> Result<&Column, DataError> {
        Ok(&self.columns[self.schema.require(name)?])
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64], DataError> {
        match self.column_by_name(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Categorical(_) => Err(DataError::Kind {
                column: name.to_string(),
                expected: "numeric",
                found: "categorical",
            }),
        }
    }

    pub fn categorical(&self, name: &str) -> Result<CategoricalView<'_>, DataError> {
        let j = self.schema.require(name)?;
        match &self.columns[j] {
            Column::Categorical(codes) => Ok(CategoricalView {
                levels: &self.schema.column(j).levels,
                codes,
            }),
            Column::Numeric(_) => Err(DataError::Kind {
                column: name.to_string(),
                expected: "categorical",
                found: "numeric",
            }),
        }
    }

    pub fn response(&self) -> &[f64] {
        match &self.columns[self.schema.response()] {
            Column::Numeric(v) => v,
            Column::Categorical(_) => unreachable!("schema forces a numeric response"),
        }
    }

    pub fn exposure(&self) -> Option<&[f64]> {
        self.schema.exposure().map(|j| match &self.columns[j] {
            Column::Numeric(v) => v.as_slice(),
            Column::Categorical(_) => unreachable!("schema forces a numeric exposure"),
        })
    }

    /// Label of cell `(i, j)` as written to CSV.
    pub fn label(&self, i: usize, j: usize) -> String {
        match &self.columns[j] {
            Column::Categorical(c) => self.schema.column(j).levels[c[i] as usize].clone(),
            Column::Numeric(v) => format_number(v[i]),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: Arc::clone(&self.schema),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n_rows: rows.len(),
        }
    }

    /// Replaces column `name`, re-validating it against the schema.
    pub fn with_column(&self, name: &str, column: Column) -> Result<Dataset, DataError> {
        let j = self.schema.require(name)?;
        let mut columns = self.columns.clone();
        columns[j] = column;
        Dataset::new(Arc::clone(&self.schema), columns)
    }

    /// Row-wise concatenation; every part must share the schema.
    pub fn vstack(parts: &[&Dataset]) -> Result<Dataset, DataError> {
        let first = parts
            .first()
            .ok_or_else(|| DataError::InvalidArgument("nothing to stack".into()))?;
        for p in &parts[1..] {
            if p.schema() != first.schema() {
                return Err(DataError::SchemaMismatch(
                    "stacked datasets have different schemas".into(),
                ));
            }
        }
        let columns = (0..first.n_cols())
            .map(|j| match first.column(j) {
                Column::Categorical(_) => Column::Categorical(
                    parts
                        .iter()
                        .flat_map(|p| match p.column(j) {
                            Column::Categorical(c) => c.iter().copied(),
                            Column::Numeric(_) => unreachable!(),
                        })
                        .collect(),
                ),
                Column::Numeric(_) => Column::Numeric(
                    parts
                        .iter()
                        .flat_map(|p| match p.column(j) {
                            Column::Numeric(v) => v.iter().copied(),
                            Column::Categorical(_) => unreachable!(),
                        })
                        .collect(),
                ),
            })
            .collect();
        Ok(Dataset::from_parts_unchecked(
            Arc::clone(first.schema_arc()),
            columns,
        ))
    }

    /// Uniform subsample of `k` rows without replacement, kept in original order.
    pub fn sample_rows(&self, k: usize, seed: u64) -> Result<Dataset, DataError> {
        if k > self.n_rows {
            return Err(DataError::InvalidArgument(format!(
                "cannot sample {k} rows from {}",
                self.n_rows
            )));
        }
        let mut rng = rng_from_seed(seed);
        let mut rows = rand::seq::index::sample(&mut rng, self.n_rows, k).into_vec();
        rows.sort_unstable();
        Ok(self.select_rows(&rows))
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_number(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, Copy)]
pub struct CategoricalView<'a> {
    pub levels: &'a [String],
    pub codes: &'a [u32],
}

impl CategoricalView<'_> {
    /// Most frequent level; ties go to the alphabetically smallest label.
    pub fn modal_level(&self) -> &str {
        let mut counts = vec![0usize; self.levels.len()];
        for &c in self.codes {
            counts[c as usize] += 1;
        }
        let best = (0..self.levels.len())
            .max_by(|&a, &b| {
                counts[a]
                    .cmp(&counts[b])
                    .then_with(|| self.levels[b].cmp(&self.levels[a]))
            })
            .expect("categorical column has levels");
        &self.levels[best]
    }
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { delimiter: b',' }
    }
}

fn clean_label(raw: &str) -> &str {
    let t = raw.trim();
    let t = t
        .strip_prefix('\'')
        .and_then(|s| s.strip_suffix('\''))
        .unwrap_or(t);
    t.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(t)
}

pub fn load_csv(path: &Path, schema: Arc<Schema>, opts: CsvOptions) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv(io::BufReader::new(file), schema, opts)
}

/// Reads a headered CSV. Columns absent from the schema are ignored.
pub fn read_csv<R: io::Read>(
    reader: R,
    schema: Arc<Schema>,
    opts: CsvOptions,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(DataError::Empty);
    }
    let positions: Vec<usize> = schema
        .columns()
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| clean_label(h) == c.header())
                .ok_or_else(|| DataError::MissingColumn(c.header().to_string()))
        })
        .collect::<Result<_, _>>()?;
    let lookups: Vec<HashMap<&str, u32>> = schema
        .columns()
        .iter()
        .map(|c| {
            c.levels
                .iter()
                .enumerate()
                .map(|(k, l)| (l.as_str(), k as u32))
                .collect()
        })
        .collect();

    let mut columns: Vec<Column> = schema
        .columns()
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Categorical => Column::Categorical(Vec::new()),
            ColumnKind::Numeric => Column::Numeric(Vec::new()),
        })
        .collect();

    let mut record = csv::StringRecord::new();
    let mut row = 0usize;
    while rdr.read_record(&mut record)? {
        row += 1;
        for (j, spec) in schema.columns().iter().enumerate() {
            let raw = record.get(positions[j]).unwrap_or("");
            let cell = clean_label(raw);
            match &mut columns[j] {
                Column::Categorical(codes) => match lookups[j].get(cell) {
                    Some(&k) => codes.push(k),
                    None => {
                        return Err(DataError::Cell {
                            row,
                            column: spec.name.clone(),
                            message: format!("undeclared level `{cell}`"),
                        })
                    }
                },
                Column::Numeric(values) => {
                    let x: f64 = cell.parse().map_err(|_| DataError::Cell {
                        row,
                        column: spec.name.clone(),
                        message: format!("cannot parse `{cell}` as a number"),
                    })?;
                    values.push(x);
                }
            }
        }
    }
    if row == 0 {
        return Err(DataError::Empty);
    }
    Dataset::new(schema, columns)
}

pub fn write_csv(ds: &Dataset, path: &Path, opts: CsvOptions) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = std::fs::File::create(path)?;
    write_csv_to(ds, io::BufWriter::new(file), opts)
}

pub fn write_csv_to<W: io::Write>(ds: &Dataset, writer: W, opts: CsvOptions) -> Result<(), DataError> {
    let mut wtr = csv::WriterBuilder::new()
        .delimiter(opts.delimiter)
        .from_writer(writer);
    wtr.write_record(ds.schema().columns().iter().map(ColumnSpec::header))?;
    let mut record = Vec::with_capacity(ds.n_cols());
    for i in 0..ds.n_rows() {
        record.clear();
        for j in 0..ds.n_cols() {
            record.push(ds.label(i, j));
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// `⌊n · fraction⌋`, robust to products like `0.57 · 100 = 56.999…`.
pub fn floor_fraction(n: usize, fraction: f64) -> usize {
    let x = n as f64 * fraction;
    (x + x.abs() * 1e-12).floor() as usize
}

/// Random row partition into `⌊n·fraction⌋` training rows and the rest.
/// Both parts keep the original row order.
pub fn split_train_test(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let (train, test) = split_indices(ds.n_rows(), train_fraction, seed);
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}

pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng_from_seed(seed));
    let k = floor_fraction(n, train_fraction);
    let mut train = rows[..k].to_vec();
    let mut test = rows[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

// ---------------------------------------------------------------------------
// Encodings
// ---------------------------------------------------------------------------

/// Dense 0/1 feature block, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub names: Vec<String>,
    width: usize,
    data: Vec<u8>,
}

impl FeatureBlock {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_rows(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.data.len() / self.width
        }
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

pub fn one_hot(col: CategoricalView<'_>) -> FeatureBlock {
    let width = col.levels.len();
    let mut data = vec![0u8; width * col.codes.len()];
    for (i, &c) in col.codes.iter().enumerate() {
        data[i * width + c as usize] = 1;
    }
    FeatureBlock {
        names: col.levels.to_vec(),
        width,
        data,
    }
}

/// One-hot encoding with the `reference` level dropped.
pub fn dummy_encode(col: CategoricalView<'_>, reference: &str) -> Result<FeatureBlock, DataError> {
    let r = col
        .levels
        .iter()
        .position(|l| l == reference)
        .ok_or_else(|| DataError::UnknownLevel {
            column: String::from("<categorical>"),
            level: reference.to_string(),
        })?;
    let width = col.levels.len() - 1;
    let mut data = vec![0u8; width * col.codes.len()];
    for (i, &c) in col.codes.iter().enumerate() {
        let c = c as usize;
        if c != r {
            let k = if c < r { c } else { c - 1 };
            data[i * width + k] = 1;
        }
    }
    let names = col
        .levels
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != r)
        .map(|(_, l)| l.clone())
        .collect();
    Ok(FeatureBlock { names, width, data })
}

// ---------------------------------------------------------------------------
// Quantile discretization
// ---------------------------------------------------------------------------

/// Bins of one numeric column: value `x` falls in bin `k` where `k` counts
/// the cutoffs strictly below `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericBins {
    pub cutoffs: Vec<f64>,
}

impl NumericBins {
    pub fn n_bins(&self) -> usize {
        self.cutoffs.len() + 1
    }

    pub fn bin_of(&self, x: f64) -> usize {
        self.cutoffs.partition_point(|&c| c < x)
    }
}

/// Near-equal-mass bins from nearest-rank quantiles of `values`.
///
/// Cutoffs sit halfway between adjacent distinct order statistics. A value
/// that is the nearest-rank quantile for two or more levels gets a bin of its
/// own.
pub fn quantile_bins(values: &[f64], n_bins: usize) -> Result<NumericBins, DataError> {
    if n_bins == 0 {
        return Err(DataError::InvalidArgument("n_bins must be at least 1".into()));
    }
    if values.is_empty() {
        return Err(DataError::Empty);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let n = sorted.len();

    let quantiles: Vec<f64> = (1..n_bins)
        .map(|k| {
            let rank = (k * n).div_ceil(n_bins).max(1);
            sorted[rank - 1]
        })
        .collect();

    let mut cutoffs = Vec::new();
    let after = |v: f64| -> Option<f64> {
        let p = distinct.partition_point(|&d| d <= v);
        distinct.get(p).map(|&next| v + (next - v) / 2.0)
    };
    let before = |v: f64| -> Option<f64> {
        let p = distinct.partition_point(|&d| d < v);
        (p > 0).then(|| distinct[p - 1] + (v - distinct[p - 1]) / 2.0)
    };
    let mut k = 0;
    while k < quantiles.len() {
        let q = quantiles[k];
        let mut run = 1;
        while k + run < quantiles.len() && quantiles[k + run] == q {
            run += 1;
        }
        if run >= 2 {
            cutoffs.extend(before(q));
        }
        cutoffs.extend(after(q));
        k += run;
    }
    cutoffs.sort_unstable_by(f64::total_cmp);
    cutoffs.dedup();
    Ok(NumericBins { cutoffs })
}

#[derive(Debug, Clone, PartialEq)]
pub enum VariableBinning {
    Categorical { levels: Vec<String> },
    Numeric(NumericBins),
}

/// Discretization of one original variable into its feature set `ℐ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableBins {
    pub name: String,
    pub binning: VariableBinning,
}

impl VariableBins {
    pub fn n_features(&self) -> usize {
        match &self.binning {
            VariableBinning::Categorical { levels } => levels.len(),
            VariableBinning::Numeric(b) => b.n_bins(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.binning, VariableBinning::Categorical { .. })
    }
}

/// Feature map fitted on training data, applied to training and synthetic data alike.
#[derive(Debug, Clone, PartialEq)]
pub struct BinMap {
    pub variables: Vec<VariableBins>,
    offsets: Vec<usize>,
}

impl BinMap {
    /// One entry per modelled column (all but the exposure), in schema order.
    pub fn fit(train: &Dataset, n_bins: usize) -> Result<BinMap, DataError> {
        let schema = train.schema();
        let mut variables = Vec::new();
        for j in schema.modelled_columns() {
            let spec = schema.column(j);
            let binning = match train.column(j) {
                Column::Categorical(_) => VariableBinning::Categorical {
                    levels: spec.levels.clone(),
                },
                Column::Numeric(v) => VariableBinning::Numeric(quantile_bins(v, n_bins)?),
            };
            variables.push(VariableBins {
                name: spec.name.clone(),
                binning,
            });
        }
        let mut offsets = Vec::with_capacity(variables.len() + 1);
        let mut acc = 0;
        for v in &variables {
            offsets.push(acc);
            acc += v.n_features();
        }
        offsets.push(acc);
        Ok(BinMap { variables, offsets })
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    /// Positions of variable `v`'s features in the concatenated feature vector.
    pub fn feature_range(&self, v: usize) -> Range<usize> {
        self.offsets[v]..self.offsets[v + 1]
    }

    /// Bin index of every row for every variable.
    pub fn assign(&self, ds: &Dataset) -> Result<Vec<Vec<u32>>, DataError> {
        self.variables
            .iter()
            .map(|var| {
                let col = ds.column_by_name(&var.name)?;
                match (&var.binning, col) {
                    (VariableBinning::Categorical { levels }, Column::Categorical(codes)) => {
                        let spec = &ds.schema().column(ds.schema().require(&var.name)?).levels;
                        if spec != levels {
                            return Err(DataError::SchemaMismatch(format!(
                                "levels of `{}` differ from the fitted map",
                                var.name
                            )));
                        }
                        Ok(codes.clone())
                    }
                    (VariableBinning::Numeric(bins), Column::Numeric(values)) => {
                        Ok(values.iter().map(|&x| bins.bin_of(x) as u32).collect())
                    }
                    _ => Err(DataError::Kind {
                        column: var.name.clone(),
                        expected: if var.is_categorical() { "categorical" } else { "numeric" },
                        found: col.kind_str(),
                    }),
                }
            })
            .collect()
    }
}
