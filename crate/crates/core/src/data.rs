// Copyright 2026 The Pipeforge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Tabular datasets, CSV ingestion, stratified splitting and scoring.
//!
//! Feature values are stored column-major together with a per-cell missing
//! mask. Categorical columns hold dense integer codes assigned in order of
//! first appearance; the code to string mapping lives on the [`Column`].
//! Class labels are coded `0..k` in sorted label order.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("target column `{0}` not found")]
    MissingTarget(String),
    #[error("target column contains missing values at row {0}")]
    MissingTargetValue(usize),
    #[error("target has fewer than 2 classes")]
    TooFewClasses,
    #[error("ragged row {row}: expected {expected} cells, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("unsplittable class `{0}`: needs at least 2 instances")]
    UnsplittableClass(String),
    #[error("validation fraction must lie in (0, 0.5), got {0}")]
    BadFraction(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("roc_auc requires binary target, got {0} classes")]
    RocAucNotBinary(usize),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("schema mismatch on columns: {}", .0.join(", "))]
    SchemaMismatch(Vec<String>),
    #[error("unknown class label `{0}`")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Code to string mapping for categorical columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl Column {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == ColumnKind::Numeric
    }
}

/// Immutable feature matrix plus class target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    values: Vec<Vec<f64>>,
    missing: Vec<Vec<bool>>,
    target: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        columns: Vec<Column>,
        values: Vec<Vec<f64>>,
        missing: Vec<Vec<bool>>,
        target: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self, DataError> {
        if columns.len() != values.len() || columns.len() != missing.len() {
            return Err(DataError::Shape(format!(
                "{} columns, {} value vectors, {} mask vectors",
                columns.len(),
                values.len(),
                missing.len()
            )));
        }
        let m = target.len();
        for (j, (v, mk)) in values.iter().zip(&missing).enumerate() {
            if v.len() != m || mk.len() != m {
                return Err(DataError::Shape(format!(
                    "column `{}` has {} values for {} rows",
                    columns[j].name,
                    v.len(),
                    m
                )));
            }
        }
        if let Some(&bad) = target.iter().find(|&&y| y >= class_names.len()) {
            return Err(DataError::Shape(format!(
                "label {bad} outside {} classes",
                class_names.len()
            )));
        }
        Ok(Self {
            columns,
            values,
            missing,
            target,
            class_names,
        })
    }

    /// All-numeric dataset without missing cells, from row-major features.
    pub fn from_rows(
        names: &[&str],
        rows: &[Vec<f64>],
        target: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self, DataError> {
        let d = names.len();
        let mut values = vec![Vec::with_capacity(rows.len()); d];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(DataError::Ragged {
                    row: i,
                    expected: d,
                    found: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                values[j].push(*v);
            }
        }
        let columns = names.iter().map(|n| Column::numeric(*n)).collect();
        let missing = vec![vec![false; rows.len()]; d];
        let class_names = (0..n_classes).map(|c| c.to_string()).collect();
        Self::new(columns, values, missing, target, class_names)
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    pub fn col_values(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn col_missing(&self, j: usize) -> &[bool] {
        &self.missing[j]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j][i]
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.missing[j][i]
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn missing_count(&self) -> usize {
        self.missing
            .iter()
            .map(|c| c.iter().filter(|&&b| b).count())
            .sum()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|c| c.iter().any(|&b| b))
    }

    pub fn column_has_missing(&self, j: usize) -> bool {
        self.missing[j].iter().any(|&b| b)
    }

    /// Approximate heap footprint, used for cache accounting.
    pub fn approx_bytes(&self) -> usize {
        let m = self.n_rows();
        let d = self.n_cols();
        let names: usize = self
            .columns
            .iter()
            .map(|c| c.name.len() + c.categories.iter().map(|s| s.len() + 24).sum::<usize>() + 64)
            .sum();
        m * d * (std::mem::size_of::<f64>() + 1) + m * std::mem::size_of::<usize>() + names
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &y in &self.target {
            counts[y] += 1;
        }
        counts
    }

    /// Dataset restricted to `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let values = self
            .values
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect();
        let missing = self
            .missing
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect();
        Self {
            columns: self.columns.clone(),
            values,
            missing,
            target: rows.iter().map(|&i| self.target[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// Same rows and target with a new feature block.
    pub fn with_features(
        &self,
        columns: Vec<Column>,
        values: Vec<Vec<f64>>,
        missing: Vec<Vec<bool>>,
    ) -> Result<Self, DataError> {
        Self::new(
            columns,
            values,
            missing,
            self.target.clone(),
            self.class_names.clone(),
        )
    }

    /// Row-major copy of one row (missing cells included as stored).
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|c| c[i]).collect()
    }

    /// Row-major feature matrix.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows()).map(|i| self.row(i)).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values
            .iter()
            .zip(&self.missing)
            .all(|(v, m)| v.iter().zip(m).all(|(x, miss)| *miss || x.is_finite()))
    }

    pub fn schema(&self) -> Schema {
        Schema {
            columns: self.columns.clone(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn write_csv(&self, path: &Path, target_name: &str) -> Result<(), DataError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        header.push(target_name);
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = Vec::with_capacity(self.n_cols() + 1);
            for (j, col) in self.columns.iter().enumerate() {
                if self.missing[j][i] {
                    rec.push(String::new());
                } else if col.is_numeric() {
                    rec.push(format!("{}", self.values[j][i]));
                } else {
                    rec.push(col.categories[self.values[j][i] as usize].clone());
                }
            }
            rec.push(self.class_names[self.target[i]].clone());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column layout and label vocabulary of a training dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub missing_tokens: BTreeSet<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            missing_tokens: ["", "?", "NA"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(DataError::Ragged {
                row: i,
                expected: header.len(),
                found: rec.len(),
            });
        }
        rows.push(rec.iter().map(|s| s.to_string()).collect());
    }
    Ok(RawTable { header, rows })
}

fn is_missing_token(cell: &str, opts: &CsvOptions) -> bool {
    opts.missing_tokens.contains(cell) || opts.missing_tokens.contains(cell.trim())
}

fn sorted_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<&str> = labels.collect();
    let mut out: Vec<String> = set.into_iter().map(str::to_string).collect();
    let numeric: Option<Vec<f64>> = out.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut paired: Vec<(f64, String)> = nums.into_iter().zip(out).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        out = paired.into_iter().map(|p| p.1).collect();
    }
    out
}

/// Reads a CSV file with a mandatory header row.
pub fn load_csv(path: &Path, target: &str, opts: &CsvOptions) -> Result<Dataset, DataError> {
    let table = read_table(path)?;
    let t_idx = table
        .header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| DataError::MissingTarget(target.to_string()))?;
    for (i, row) in table.rows.iter().enumerate() {
        if is_missing_token(&row[t_idx], opts) {
            return Err(DataError::MissingTargetValue(i));
        }
    }
    let class_names = sorted_labels(table.rows.iter().map(|r| r[t_idx].as_str()));
    if class_names.len() < 2 {
        return Err(DataError::TooFewClasses);
    }
    let label_index: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let target_vec: Vec<usize> = table
        .rows
        .iter()
        .map(|r| label_index[r[t_idx].as_str()])
        .collect();

    let mut columns = Vec::new();
    let mut values = Vec::new();
    let mut missing = Vec::new();
    for (j, name) in table.header.iter().enumerate() {
        if j == t_idx {
            continue;
        }
        let cells: Vec<&str> = table.rows.iter().map(|r| r[j].as_str()).collect();
        let mask: Vec<bool> = cells.iter().map(|c| is_missing_token(c, opts)).collect();
        let parsed: Option<Vec<f64>> = cells
            .iter()
            .zip(&mask)
            .map(|(c, &m)| {
                if m {
                    Some(0.0)
                } else {
                    c.trim().parse::<f64>().ok().filter(|v| v.is_finite())
                }
            })
            .collect();
        match parsed {
            Some(v) => {
                columns.push(Column::numeric(name.clone()));
                values.push(v);
            }
            None => {
                let mut cats: Vec<String> = Vec::new();
                let mut index: HashMap<String, usize> = HashMap::new();
                let mut codes = Vec::with_capacity(cells.len());
                for (c, &m) in cells.iter().zip(&mask) {
                    if m {
                        codes.push(0.0);
                        continue;
                    }
                    let code = *index.entry(c.to_string()).or_insert_with(|| {
                        cats.push(c.to_string());
                        cats.len() - 1
                    });
                    codes.push(code as f64);
                }
                columns.push(Column::categorical(name.clone(), cats));
                values.push(codes);
            }
        }
        missing.push(mask);
    }
    Dataset::new(columns, values, missing, target_vec, class_names)
}

/// Reads a CSV file against a training schema. The target column is
/// optional; when absent every label is 0. Categories unseen at training
/// time receive fresh codes past the training vocabulary.
pub fn load_csv_with_schema(
    path: &Path,
    schema: &Schema,
    target: &str,
    opts: &CsvOptions,
) -> Result<Dataset, DataError> {
    let table = read_table(path)?;
    let mut offending = Vec::new();
    let mut col_idx = Vec::with_capacity(schema.columns.len());
    for col in &schema.columns {
        match table.header.iter().position(|h| *h == col.name) {
            Some(j) => col_idx.push(j),
            None => offending.push(col.name.clone()),
        }
    }
    if !offending.is_empty() {
        return Err(DataError::SchemaMismatch(offending));
    }
    let m = table.rows.len();
    let mut values = Vec::new();
    let mut missing = Vec::new();
    let mut columns = Vec::new();
    for (col, &j) in schema.columns.iter().zip(&col_idx) {
        let mut v = Vec::with_capacity(m);
        let mut mk = Vec::with_capacity(m);
        let mut col = col.clone();
        let mut index: HashMap<String, usize> = col
            .categories
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        for row in &table.rows {
            let cell = row[j].as_str();
            if is_missing_token(cell, opts) {
                v.push(0.0);
                mk.push(true);
                continue;
            }
            mk.push(false);
            if col.is_numeric() {
                match cell.trim().parse::<f64>() {
                    Ok(x) if x.is_finite() => v.push(x),
                    _ => {
                        if !offending.contains(&col.name) {
                            offending.push(col.name.clone());
                        }
                        v.push(0.0);
                    }
                }
            } else {
                let next = index.len();
                let code = *index.entry(cell.to_string()).or_insert_with(|| {
                    col.categories.push(cell.to_string());
                    next
                });
                v.push(code as f64);
            }
        }
        values.push(v);
        missing.push(mk);
        columns.push(col);
    }
    if !offending.is_empty() {
        return Err(DataError::SchemaMismatch(offending));
    }
    let target_vec = match table.header.iter().position(|h| h == target) {
        Some(t) => {
            let idx: HashMap<&str, usize> = schema
                .class_names
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i))
                .collect();
            let mut out = Vec::with_capacity(m);
            for row in &table.rows {
                match idx.get(row[t].as_str()) {
                    Some(&y) => out.push(y),
                    None => return Err(DataError::UnknownLabel(row[t].clone())),
                }
            }
            out
        }
        None => vec![0; m],
    };
    Dataset::new(
        columns,
        values,
        missing,
        target_vec,
        schema.class_names.clone(),
    )
}

/// Splits `d` so that each class contributes `round(n_c * fraction)`
/// validation rows (at least one, leaving at least one for training).
pub fn stratified_split(
    d: &Dataset,
    valid_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(valid_fraction > 0.0 && valid_fraction < 0.5) {
        return Err(DataError::BadFraction(valid_fraction));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.n_classes()];
    for (i, &y) in d.target().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = rng::rng_for(seed, 0x5350_4c49);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (c, rows) in by_class.iter_mut().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(DataError::UnsplittableClass(d.class_names()[c].clone()));
        }
        rows.shuffle(&mut rng);
        let n_valid = ((rows.len() as f64 * valid_fraction).round() as usize).clamp(1, rows.len() - 1);
        valid.extend_from_slice(&rows[..n_valid]);
        train.extend_from_slice(&rows[n_valid..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok((d.select_rows(&train), d.select_rows(&valid)))
}

/// Row-major class probability matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proba {
    n_classes: usize,
    data: Vec<f64>,
}

impl Proba {
    pub fn new(n_classes: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if n_classes == 0 || data.len() % n_classes != 0 {
            return Err(DataError::Shape(format!(
                "{} entries for {} classes",
                data.len(),
                n_classes
            )));
        }
        Ok(Self { n_classes, data })
    }

    pub fn zeros(n_rows: usize, n_classes: usize) -> Self {
        Self {
            n_classes,
            data: vec![0.0; n_rows * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let k = rows.first().map(Vec::len).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * k);
        for r in rows {
            if r.len() != k {
                return Err(DataError::Shape("ragged probability rows".into()));
            }
            data.extend_from_slice(r);
        }
        Self::new(k, data)
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_classes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n_rows())
            .map(|i| {
                let r = self.row(i);
                let mut best = 0;
                for c in 1..r.len() {
                    if r[c] > r[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BalancedAccuracy,
    Accuracy,
    RocAuc,
    Logloss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::BalancedAccuracy => "balanced_accuracy",
            Metric::Accuracy => "accuracy",
            Metric::RocAuc => "roc_auc",
            Metric::Logloss => "logloss",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Metric::Logloss => Direction::Minimize,
            _ => Direction::Maximize,
        }
    }

    /// Checks that the metric is defined for a target with `n_classes`.
    pub fn check_target(self, n_classes: usize) -> Result<(), DataError> {
        if self == Metric::RocAuc && n_classes != 2 {
            return Err(DataError::RocAucNotBinary(n_classes));
        }
        Ok(())
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "balanced_accuracy" => Ok(Metric::BalancedAccuracy),
            "accuracy" => Ok(Metric::Accuracy),
            "roc_auc" => Ok(Metric::RocAuc),
            "logloss" => Ok(Metric::Logloss),
            other => Err(DataError::UnknownMetric(other.to_string())),
        }
    }
}

/// Search reward in `[0, 1]`, larger is better.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Reward(f64);

impl Reward {
    pub fn new(value: f64) -> Self {
        Self(if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) })
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn from_metric(metric: Metric, metric_value: f64) -> Self {
        match metric.direction() {
            Direction::Maximize => Self::new(metric_value),
            Direction::Minimize => Self::new(1.0 / (1.0 + metric_value)),
        }
    }
}

pub const PROBA_CLAMP: f64 = 1e-15;

fn balanced_accuracy(y: &[usize], pred: &[usize], k: usize) -> f64 {
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for (&t, &p) in y.iter().zip(pred) {
        totals[t] += 1;
        if t == p {
            hits[t] += 1;
        }
    }
    let present: Vec<f64> = totals
        .iter()
        .zip(&hits)
        .filter(|(t, _)| **t > 0)
        .map(|(t, h)| *h as f64 / *t as f64)
        .collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Mann-Whitney statistic with average ranks for ties.
fn roc_auc(y: &[usize], score: &[f64]) -> f64 {
    let n_pos = y.iter().filter(|&&t| t == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && score[order[j + 1]] == score[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if y[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}

/// Scores `y_proba` against `y_true`, returning the raw metric and reward.
pub fn evaluate(
    metric: Metric,
    y_true: &[usize],
    y_proba: &Proba,
) -> Result<(f64, Reward), DataError> {
    if y_true.len() != y_proba.n_rows() {
        return Err(DataError::Shape(format!(
            "{} labels vs {} probability rows",
            y_true.len(),
            y_proba.n_rows()
        )));
    }
    let k = y_proba.n_classes();
    if let Some(&bad) = y_true.iter().find(|&&t| t >= k) {
        return Err(DataError::Shape(format!("label {bad} outside {k} classes")));
    }
    metric.check_target(k)?;
    if y_true.is_empty() {
        return Err(DataError::Shape("empty evaluation set".into()));
    }
    let value = match metric {
        Metric::Accuracy => {
            let pred = y_proba.argmax();
            let hits = y_true.iter().zip(&pred).filter(|(a, b)| a == b).count();
            hits as f64 / y_true.len() as f64
        }
        Metric::BalancedAccuracy => balanced_accuracy(y_true, &y_proba.argmax(), k),
        Metric::RocAuc => {
            let scores: Vec<f64> = (0..y_proba.n_rows()).map(|i| y_proba.row(i)[1]).collect();
            roc_auc(y_true, &scores)
        }
        Metric::Logloss => {
            let total: f64 = y_true
                .iter()
                .enumerate()
                .map(|(i, &t)| -y_proba.row(i)[t].clamp(PROBA_CLAMP, 1.0 - PROBA_CLAMP).ln())
                .sum();
            total / y_true.len() as f64
        }
    };
    Ok((value, Reward::from_metric(metric, value)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn missing_token_is_flagged() {
        let f = write_tmp("a,b,y\n1,2,0\n?,3,1\n4,5,1\n");
        let d = load_csv(f.path(), "y", &CsvOptions::default()).unwrap();
        assert_eq!(d.n_rows(), 3);
        assert!(d.is_missing(1, 0));
        assert_eq!(d.missing_count(), 1);
        assert!(d.columns().iter().all(Column::is_numeric));
    }

    #[test]
    fn categorical_first_appearance_codes() {
        let f = write_tmp("c,y\na,0\nb,1\na,1\n");
        let d = load_csv(f.path(), "y", &CsvOptions::default()).unwrap();
        assert_eq!(d.column(0).kind, ColumnKind::Categorical);
        assert_eq!(d.col_values(0), &[0.0, 1.0, 0.0]);
        assert_eq!(d.column(0).categories, vec!["a", "b"]);
    }

    #[test]
    fn load_errors() {
        let opts = CsvOptions::default();
        let f = write_tmp("a,y\n1,0\n2,1\n");
        assert!(matches!(
            load_csv(f.path(), "z", &opts),
            Err(DataError::MissingTarget(_))
        ));
        let f = write_tmp("a,y\n1,0\n2,NA\n");
        assert!(matches!(
            load_csv(f.path(), "y", &opts),
            Err(DataError::MissingTargetValue(1))
        ));
        let f = write_tmp("a,y\n1,0\n2,0\n");
        assert!(matches!(
            load_csv(f.path(), "y", &opts),
            Err(DataError::TooFewClasses)
        ));
        let f = write_tmp("a,y\n1,0\n2,1,3\n");
        assert!(matches!(
            load_csv(f.path(), "y", &opts),
            Err(DataError::Ragged { .. })
        ));
    }

    #[test]
    fn quoted_fields_follow_rfc4180() {
        let f = write_tmp("name,y\n\"x, y\",0\n\"z\"\"q\",1\n");
        let d = load_csv(f.path(), "y", &CsvOptions::default()).unwrap();
        assert_eq!(d.column(0).categories, vec!["x, y", "z\"q"]);
    }

    fn two_class(n0: usize, n1: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n0 + n1).map(|i| vec![i as f64]).collect();
        let target = (0..n0 + n1).map(|i| usize::from(i >= n0)).collect();
        Dataset::from_rows(&["x"], &rows, target, 2).unwrap()
    }

    #[test]
    fn split_is_exactly_stratified() {
        let d = two_class(50, 50);
        let (train, valid) = stratified_split(&d, 0.2, 7).unwrap();
        assert_eq!(valid.class_counts(), vec![10, 10]);
        assert_eq!(train.class_counts(), vec![40, 40]);
        let (_, valid2) = stratified_split(&d, 0.2, 7).unwrap();
        assert_eq!(valid, valid2);
    }

    #[test]
    fn single_instance_class_is_unsplittable() {
        let d = two_class(99, 1);
        assert!(matches!(
            stratified_split(&d, 0.2, 0),
            Err(DataError::UnsplittableClass(_))
        ));
    }

    #[test]
    fn logloss_half() {
        let p = Proba::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let (v, r) = evaluate(Metric::Logloss, &[1], &p).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((r.value() - 0.590_616).abs() < 1e-6);
    }

    #[test]
    fn accuracy_perfect() {
        let p = Proba::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let (v, r) = evaluate(Metric::Accuracy, &[0, 1], &p).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(r.value(), 1.0);
    }

    /// Pairwise concordance over every positive/negative pair.
    fn auc_oracle(y: &[usize], s: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] == 1 && y[j] == 0 {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn roc_auc_matches_pair_counting() {
        let y = [0, 0, 1, 1];
        let s = [0.1, 0.4, 0.35, 0.8];
        let expected = auc_oracle(&y, &s);
        assert!((expected - 0.75).abs() < 1e-12);
        let p = Proba::from_rows(&s.iter().map(|&v| vec![1.0 - v, v]).collect::<Vec<_>>()).unwrap();
        let (v, _) = evaluate(Metric::RocAuc, &y, &p).unwrap();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn roc_auc_rejects_multiclass_and_shape_errors() {
        let p = Proba::from_rows(&[vec![0.2, 0.3, 0.5]]).unwrap();
        assert!(matches!(
            evaluate(Metric::RocAuc, &[0], &p),
            Err(DataError::RocAucNotBinary(3))
        ));
        assert!(matches!(
            evaluate(Metric::Accuracy, &[0, 1], &p),
            Err(DataError::Shape(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn proba_rows(k: usize, m: usize) -> impl Strategy<Value = (Vec<usize>, Vec<Vec<f64>>)> {
            (
                proptest::collection::vec(0..k, m),
                proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, k), m),
            )
                .prop_map(move |(y, raw)| {
                    let rows = raw
                        .into_iter()
                        .map(|r| {
                            let s: f64 = r.iter().sum::<f64>() + 1e-9;
                            r.into_iter().map(|v| (v + 1e-9 / k as f64) / s).collect()
                        })
                        .collect();
                    (y, rows)
                })
        }

        proptest! {
            #[test]
            fn reward_in_unit_interval((y, rows) in proba_rows(2, 12), metric_idx in 0usize..4) {
                let metric = [Metric::Accuracy, Metric::BalancedAccuracy, Metric::RocAuc, Metric::Logloss][metric_idx];
                let p = Proba::from_rows(&rows).unwrap();
                let (_, r) = evaluate(metric, &y, &p).unwrap();
                prop_assert!((0.0..=1.0).contains(&r.value()));
            }

            #[test]
            fn evaluate_is_permutation_invariant((y, rows) in proba_rows(3, 15), shift in 1usize..14, metric_idx in 0usize..3) {
                let metric = [Metric::Accuracy, Metric::BalancedAccuracy, Metric::Logloss][metric_idx];
                let p = Proba::from_rows(&rows).unwrap();
                let (a, _) = evaluate(metric, &y, &p).unwrap();
                let n = y.len();
                let perm: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
                let y2: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
                let rows2: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
                let (b, _) = evaluate(metric, &y2, &Proba::from_rows(&rows2).unwrap()).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }

            #[test]
            fn split_partitions_rows(n0 in 2usize..40, n1 in 2usize..40, frac in 0.05f64..0.45, seed in 0u64..1000) {
                let d = two_class(n0, n1);
                let (train, valid) = stratified_split(&d, frac, seed).unwrap();
                let mut all: Vec<f64> = train.col_values(0).iter().chain(valid.col_values(0)).copied().collect();
                all.sort_by(f64::total_cmp);
                let expected: Vec<f64> = (0..n0 + n1).map(|i| i as f64).collect();
                prop_assert_eq!(all, expected);
            }
        }
    }
}
