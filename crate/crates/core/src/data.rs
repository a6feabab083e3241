//! Tabular ingestion and preprocessing.
//!
//! A [`Table`] holds typed raw columns as read from CSV. A [`Preprocessor`]
//! fitted on training rows turns tables into design matrices: categorical
//! columns are one-hot or ordinal encoded, numeric columns are z-scored.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, XrfmError};
use crate::leaf_rfm::Task;
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical { vocabulary: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }

    fn cell(&self, row: usize) -> String {
        match self {
            ColumnData::Numeric(v) => format!("{}", v[row]),
            ColumnData::Categorical(v) => v[row].clone(),
        }
    }
}

/// Raw typed columns plus an optional target column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: Vec<ColumnSchema>,
    pub columns: Vec<ColumnData>,
    pub target_name: Option<String>,
    pub target: Option<ColumnData>,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.columns
            .first()
            .or(self.target.as_ref())
            .map_or(0, ColumnData::len)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            target_name: self.target_name.clone(),
            target: self.target.as_ref().map(|t| t.select(rows)),
        }
    }

    /// Numeric table from a matrix, with an optional numeric target.
    pub fn from_numeric(names: &[String], x: &Matrix, target: Option<(&str, Vec<f64>)>) -> Table {
        Table {
            schema: names
                .iter()
                .map(|n| ColumnSchema {
                    name: n.clone(),
                    kind: ColumnKind::Numeric,
                })
                .collect(),
            columns: (0..x.cols()).map(|j| ColumnData::Numeric(x.column(j))).collect(),
            target_name: target.as_ref().map(|t| t.0.to_string()),
            target: target.map(|t| ColumnData::Numeric(t.1)),
        }
    }

    /// Target labels as strings (numbers are formatted).
    pub fn target_labels(&self) -> Option<Vec<String>> {
        self.target.as_ref().map(|t| (0..t.len()).map(|i| t.cell(i)).collect())
    }

    /// Writes the table (features then target) in the same CSV dialect
    /// [`load_csv`] reads.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self.schema.iter().map(|c| c.name.clone()).collect();
        if let Some(t) = &self.target_name {
            header.push(t.clone());
        }
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self.columns.iter().map(|c| c.cell(i)).collect();
            if let Some(t) = &self.target {
                rec.push(t.cell(i));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Overrides for column type inference.
#[derive(Debug, Clone, Default)]
pub struct SchemaHints {
    pub categorical: BTreeSet<String>,
    pub numeric: BTreeSet<String>,
    /// Read the target as class labels instead of numbers.
    pub target_is_label: bool,
}

impl SchemaHints {
    pub fn for_task(task: Task) -> Self {
        Self {
            target_is_label: task == Task::Classification,
            ..Default::default()
        }
    }
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn infer_column(name: &str, cells: Vec<String>, hints: &SchemaHints) -> Result<(ColumnSchema, ColumnData)> {
    let force_cat = hints.categorical.contains(name);
    let force_num = hints.numeric.contains(name);
    let all_numeric = cells
        .iter()
        .all(|c| c.trim().is_empty() || parse_number(c).is_some());
    if force_num && !all_numeric {
        return Err(XrfmError::InvalidParam {
            field: name.to_string(),
            reason: "column declared numeric contains non-numeric values".into(),
        });
    }
    if all_numeric && !force_cat {
        let mut present: Vec<f64> = cells.iter().filter_map(|c| parse_number(c)).collect();
        let fill = if present.is_empty() {
            0.0
        } else {
            crate::kernels::median(&mut present)
        };
        let values = cells.iter().map(|c| parse_number(c).unwrap_or(fill)).collect();
        Ok((
            ColumnSchema {
                name: name.to_string(),
                kind: ColumnKind::Numeric,
            },
            ColumnData::Numeric(values),
        ))
    } else {
        // empty cells become their own "" category
        let values: Vec<String> = cells.iter().map(|c| c.trim().to_string()).collect();
        let vocabulary: Vec<String> = values.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        Ok((
            ColumnSchema {
                name: name.to_string(),
                kind: ColumnKind::Categorical { vocabulary },
            },
            ColumnData::Categorical(values),
        ))
    }
}

/// Reads a headed, comma-separated table. Columns are numeric unless a cell
/// fails to parse as a number; missing numeric cells take the column median.
pub fn read_csv<R: Read>(reader: R, target_column: Option<&str>, hints: &SchemaHints) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(XrfmError::EmptyFile);
    }
    let width = header.len();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); width];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != width {
            return Err(XrfmError::RaggedRow {
                row: row + 1,
                found: rec.len(),
                expected: width,
            });
        }
        for (j, v) in rec.iter().enumerate() {
            cells[j].push(v.to_string());
        }
    }
    if cells[0].is_empty() {
        return Err(XrfmError::EmptyFile);
    }

    let target_idx = match target_column {
        Some(t) => Some(
            header
                .iter()
                .position(|h| h == t)
                .ok_or_else(|| XrfmError::MissingTarget(t.to_string()))?,
        ),
        None => None,
    };

    let mut schema = Vec::new();
    let mut columns = Vec::new();
    let mut target = None;
    for (j, (name, col)) in header.iter().zip(cells).enumerate() {
        if Some(j) == target_idx {
            target = Some(if hints.target_is_label {
                ColumnData::Categorical(col.iter().map(|c| c.trim().to_string()).collect())
            } else {
                let values = col
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        parse_number(c).ok_or_else(|| XrfmError::InvalidParam {
                            field: name.clone(),
                            reason: format!("target value `{c}` on row {} is not numeric", i + 1),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()?;
                ColumnData::Numeric(values)
            });
            continue;
        }
        let (s, c) = infer_column(name, col, hints)?;
        schema.push(s);
        columns.push(c);
    }
    Ok(Table {
        schema,
        columns,
        target_name: target_column.map(str::to_string),
        target,
    })
}

pub fn load_csv(path: impl AsRef<Path>, target_column: Option<&str>, hints: &SchemaHints) -> Result<Table> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| XrfmError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_csv(std::io::BufReader::new(file), target_column, hints)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalTransform {
    #[default]
    OneHot,
    #[serde(alias = "ordinal_encoding")]
    Ordinal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Standard,
    None,
}

/// Per-column z-score statistics (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Statistics of the columns of `x`; columns with `mask[j] == false` get
    /// mean 0 and std 1 so they pass through unchanged.
    pub fn fit_masked(x: &Matrix, mask: &[bool]) -> Self {
        let n = x.rows() as f64;
        let mut mean = vec![0.0; x.cols()];
        let mut std = vec![1.0; x.cols()];
        for j in 0..x.cols() {
            if !mask[j] || x.rows() == 0 {
                continue;
            }
            let col = x.column(j);
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt();
        }
        Self { mean, std }
    }

    pub fn fit(x: &Matrix) -> Self {
        Self::fit_masked(x, &vec![true; x.cols()])
    }

    /// `(x − mean)/std`; zero-variance columns become 0.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(XrfmError::SchemaMismatch(format!(
                "standardizer has {} columns, input has {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                let s = self.std[j];
                *v = if s > 0.0 { (*v - self.mean[j]) / s } else { 0.0 };
            }
        }
        Ok(out)
    }
}

/// Z-scores the columns of a training matrix.
pub fn standardize(train: &Matrix) -> (Matrix, Standardizer) {
    let stats = Standardizer::fit(train);
    let out = stats.apply(train).expect("same width");
    (out, stats)
}

/// Encoding fitted on a training table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub columns: Vec<ColumnSchema>,
    pub transform: CategoricalTransform,
    pub normalization: Normalization,
    pub stats: Standardizer,
}

impl Preprocessor {
    pub fn fit(table: &Table, transform: CategoricalTransform, normalization: Normalization) -> Result<Self> {
        // vocabularies come from the training rows only
        let columns: Vec<ColumnSchema> = table
            .schema
            .iter()
            .zip(&table.columns)
            .map(|(s, c)| match c {
                ColumnData::Numeric(_) => s.clone(),
                ColumnData::Categorical(v) => ColumnSchema {
                    name: s.name.clone(),
                    kind: ColumnKind::Categorical {
                        vocabulary: v.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
                    },
                },
            })
            .collect();
        let mut pre = Self {
            columns,
            transform,
            normalization,
            stats: Standardizer {
                mean: Vec::new(),
                std: Vec::new(),
            },
        };
        let raw = pre.encode(table)?;
        let mask = pre.scaled_mask();
        pre.stats = match normalization {
            Normalization::Standard => Standardizer::fit_masked(&raw, &mask),
            Normalization::None => Standardizer::fit_masked(&raw, &vec![false; raw.cols()]),
        };
        Ok(pre)
    }

    fn width_of(&self, col: &ColumnSchema) -> usize {
        match (&col.kind, self.transform) {
            (ColumnKind::Numeric, _) => 1,
            (ColumnKind::Categorical { .. }, CategoricalTransform::Ordinal) => 1,
            (ColumnKind::Categorical { vocabulary }, CategoricalTransform::OneHot) => vocabulary.len(),
        }
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(|c| self.width_of(c)).sum()
    }

    /// One-hot spans in the encoded matrix (empty for ordinal encoding).
    pub fn spans(&self) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut at = 0;
        for c in &self.columns {
            let w = self.width_of(c);
            if matches!(c.kind, ColumnKind::Categorical { .. }) && self.transform == CategoricalTransform::OneHot {
                spans.push(at..at + w);
            }
            at += w;
        }
        spans
    }

    /// Original column index of every encoded feature.
    pub fn source_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .flat_map(|(j, c)| std::iter::repeat(j).take(self.width_of(c)))
            .collect()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for c in &self.columns {
            match (&c.kind, self.transform) {
                (ColumnKind::Categorical { vocabulary }, CategoricalTransform::OneHot) => {
                    names.extend(vocabulary.iter().map(|v| format!("{}={v}", c.name)));
                }
                _ => names.push(c.name.clone()),
            }
        }
        names
    }

    fn scaled_mask(&self) -> Vec<bool> {
        let mut mask = Vec::new();
        for c in &self.columns {
            let scaled = !matches!(
                (&c.kind, self.transform),
                (ColumnKind::Categorical { .. }, CategoricalTransform::OneHot)
            );
            mask.extend(std::iter::repeat(scaled).take(self.width_of(c)));
        }
        mask
    }

    fn check_schema(&self, table: &Table) -> Result<()> {
        if table.schema.len() != self.columns.len() {
            return Err(XrfmError::SchemaMismatch(format!(
                "expected {} feature columns, found {}",
                self.columns.len(),
                table.schema.len()
            )));
        }
        for (want, got) in self.columns.iter().zip(&table.schema) {
            if want.name != got.name {
                return Err(XrfmError::SchemaMismatch(format!(
                    "expected column `{}`, found `{}`",
                    want.name, got.name
                )));
            }
        }
        Ok(())
    }

    /// Encoded matrix before standardization. Unknown categories encode as an
    /// all-zero one-hot row or ordinal index −1.
    pub fn encode(&self, table: &Table) -> Result<Matrix> {
        self.check_schema(table)?;
        let n = table.n_rows();
        let width = self.width();
        let mut out = Matrix::zeros(n, width);
        let mut at = 0;
        for (schema, data) in self.columns.iter().zip(&table.columns) {
            match (&schema.kind, data) {
                (ColumnKind::Numeric, ColumnData::Numeric(v)) => {
                    for (i, &x) in v.iter().enumerate() {
                        out[(i, at)] = x;
                    }
                    at += 1;
                }
                (ColumnKind::Numeric, ColumnData::Categorical(v)) => {
                    // a numeric training column read back as text
                    for (i, s) in v.iter().enumerate() {
                        out[(i, at)] = parse_number(s).ok_or_else(|| {
                            XrfmError::SchemaMismatch(format!(
                                "column `{}` expects numbers, found `{s}`",
                                schema.name
                            ))
                        })?;
                    }
                    at += 1;
                }
                (ColumnKind::Categorical { vocabulary }, data) => {
                    let index: BTreeMap<&str, usize> =
                        vocabulary.iter().enumerate().map(|(k, v)| (v.as_str(), k)).collect();
                    let lookup = |i: usize| -> Option<usize> {
                        match data {
                            ColumnData::Categorical(v) => index.get(v[i].as_str()).copied(),
                            ColumnData::Numeric(v) => index.get(format!("{}", v[i]).as_str()).copied(),
                        }
                    };
                    match self.transform {
                        CategoricalTransform::OneHot => {
                            for i in 0..n {
                                if let Some(k) = lookup(i) {
                                    out[(i, at + k)] = 1.0;
                                }
                            }
                            at += vocabulary.len();
                        }
                        CategoricalTransform::Ordinal => {
                            for i in 0..n {
                                out[(i, at)] = lookup(i).map_or(-1.0, |k| k as f64);
                            }
                            at += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Encoded and standardized design matrix.
    pub fn transform(&self, table: &Table) -> Result<Matrix> {
        self.stats.apply(&self.encode(table)?)
    }
}

/// Encoded design matrix with targets.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    /// `n × c` targets; one-hot indicator columns for classification.
    pub y: Matrix,
    pub task: Task,
    /// Class names in column order of `y` (classification only).
    pub classes: Vec<String>,
    /// One-hot column groups of `x`.
    pub spans: Vec<Range<usize>>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            task: self.task,
            classes: self.classes.clone(),
            spans: self.spans.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Unencoded numeric dataset with a single regression target.
    pub fn regression(x: Matrix, y: Vec<f64>) -> Dataset {
        let d = x.cols();
        Dataset {
            y: Matrix::column_vector(&y),
            x,
            task: Task::Regression,
            classes: Vec::new(),
            spans: Vec::new(),
            feature_names: (0..d).map(|k| format!("x{k}")).collect(),
        }
    }

    /// Class label of each row (argmax of the indicator targets).
    pub fn labels(&self) -> Vec<String> {
        crate::leaf_rfm::argmax_rows(&self.y)
            .into_iter()
            .map(|k| self.classes[k].clone())
            .collect()
    }
}

/// Target encoding fitted on training labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEncoder {
    pub task: Task,
    pub classes: Vec<String>,
}

impl TargetEncoder {
    pub fn fit(table: &Table, task: Task) -> Result<Self> {
        let target = table
            .target
            .as_ref()
            .ok_or_else(|| XrfmError::MissingTarget(table.target_name.clone().unwrap_or_default()))?;
        let classes = match task {
            Task::Regression => {
                if let ColumnData::Categorical(_) = target {
                    return Err(XrfmError::InvalidParam {
                        field: "task".into(),
                        reason: "regression needs a numeric target".into(),
                    });
                }
                Vec::new()
            }
            Task::Classification => table
                .target_labels()
                .unwrap_or_default()
                .into_iter()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        Ok(Self { task, classes })
    }

    pub fn encode(&self, table: &Table) -> Result<Matrix> {
        let target = table
            .target
            .as_ref()
            .ok_or_else(|| XrfmError::MissingTarget(table.target_name.clone().unwrap_or_default()))?;
        match self.task {
            Task::Regression => match target {
                ColumnData::Numeric(v) => Ok(Matrix::column_vector(v)),
                ColumnData::Categorical(v) => {
                    let parsed = v
                        .iter()
                        .map(|s| {
                            parse_number(s).ok_or_else(|| XrfmError::InvalidParam {
                                field: "target".into(),
                                reason: format!("`{s}` is not numeric"),
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    Ok(Matrix::column_vector(&parsed))
                }
            },
            Task::Classification => {
                let labels = table.target_labels().unwrap_or_default();
                let index: BTreeMap<&str, usize> =
                    self.classes.iter().enumerate().map(|(k, c)| (c.as_str(), k)).collect();
                let mut y = Matrix::zeros(labels.len(), self.classes.len());
                for (i, l) in labels.iter().enumerate() {
                    // unseen labels stay all-zero
                    if let Some(&k) = index.get(l.as_str()) {
                        y[(i, k)] = 1.0;
                    }
                }
                Ok(y)
            }
        }
    }
}

/// Encodes `table` with fitted encoders into a [`Dataset`].
pub fn build_dataset(table: &Table, pre: &Preprocessor, target: &TargetEncoder) -> Result<Dataset> {
    Ok(Dataset {
        x: pre.transform(table)?,
        y: target.encode(table)?,
        task: target.task,
        classes: target.classes.clone(),
        spans: pre.spans(),
        feature_names: pre.feature_names(),
    })
}

/// Encodes a table's features alone (no standardization) into a design
/// matrix and one-hot spans.
pub fn encode(table: &Table, transform: CategoricalTransform) -> Result<(Matrix, Vec<Range<usize>>)> {
    let pre = Preprocessor::fit(table, transform, Normalization::None)?;
    Ok((pre.encode(table)?, pre.spans()))
}

fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let mut counts = fractions.map(|f| (f * n as f64).round() as usize);
    let mut total: usize = counts.iter().sum();
    // rounding may overshoot by a row or two
    let mut k = 2;
    while total > n {
        if counts[k] > 0 {
            counts[k] -= 1;
            total -= 1;
        } else {
            k = k.saturating_sub(1);
        }
    }
    counts
}

/// Shuffled train/validation/test row indices. When `labels` is given the
/// split is stratified per label.
pub fn split_indices(
    n: usize,
    labels: Option<&[String]>,
    fractions: [f64; 3],
    seed: u64,
) -> Result<[Vec<usize>; 3]> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || sum > 1.0 + 1e-12 {
        return Err(XrfmError::FractionOverflow(fractions.to_vec()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match labels {
        Some(labels) => {
            let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, l) in labels.iter().enumerate() {
                by.entry(l.as_str()).or_default().push(i);
            }
            by.into_values().collect()
        }
        None => vec![(0..n).collect()],
    };
    let mut out: [Vec<usize>; 3] = Default::default();
    for mut g in groups {
        g.shuffle(&mut rng);
        let counts = split_counts(g.len(), fractions);
        let mut at = 0;
        for (part, &c) in out.iter_mut().zip(&counts) {
            part.extend_from_slice(&g[at..at + c]);
            at += c;
        }
    }
    for part in &mut out {
        part.shuffle(&mut rng);
    }
    Ok(out)
}

/// Splits a table into train/validation/test tables. Tables with a
/// categorical (label) target are stratified.
pub fn split_train_val_test(table: &Table, fractions: [f64; 3], seed: u64) -> Result<[Table; 3]> {
    let labels = match &table.target {
        Some(ColumnData::Categorical(v)) => Some(v.clone()),
        _ => None,
    };
    let parts = split_indices(table.n_rows(), labels.as_deref(), fractions, seed)?;
    Ok(parts.map(|rows| table.select_rows(&rows)))
}

/// Dimension of the local-features generator.
pub const LOCAL_FEATURES_DIM: usize = 16;

/// Target of the local-features generator: `x1·x3 + x5` when `x0 > 0`,
/// otherwise `x9·x11 + x13`.
pub fn local_features_target(x: &[f64]) -> f64 {
    if x[0] > 0.0 {
        x[1] * x[3] + x[5]
    } else {
        x[9] * x[11] + x[13]
    }
}

fn gaussian_matrix(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(n, d, |_, _| rng.sample(StandardNormal))
}

fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|k| format!("x{k}")).collect()
}

/// Standard normal inputs in 16 dimensions whose relevant coordinates depend
/// on the sign of `x0`; see [`local_features_target`].
pub fn synth_local_features(n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_matrix(n, LOCAL_FEATURES_DIM, &mut rng);
    let y = x.row_iter().map(local_features_target).collect();
    Table::from_numeric(&feature_names(LOCAL_FEATURES_DIM), &x, Some(("y", y)))
}

/// Fixed unit direction of the single-index generator for dimension `d`.
/// It does not depend on the data seed, so train and test draws share it.
pub fn single_index_direction(d: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x51D0_0000 ^ d as u64);
    let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= norm);
    u
}

/// `y = (u·x)²` for standard normal `x`.
pub fn synth_single_index(n: usize, d: usize, seed: u64) -> Table {
    let u = single_index_direction(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_matrix(n, d, &mut rng);
    let y = x
        .row_iter()
        .map(|row| {
            let s: f64 = row.iter().zip(&u).map(|(a, b)| a * b).sum();
            s * s
        })
        .collect();
    Table::from_numeric(&feature_names(d), &x, Some(("y", y)))
}
