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

use serde::{Deserialize, Serialize};

use super::{fresh_name, StepError};
use crate::data::{Column, ColumnKind, Dataset};
use crate::metafeatures;

type Block = (Vec<Column>, Vec<Vec<f64>>, Vec<Vec<bool>>);

fn observed(d: &Dataset, j: usize) -> impl Iterator<Item = f64> + '_ {
    d.col_values(j)
        .iter()
        .zip(d.col_missing(j))
        .filter(|(_, &m)| !m)
        .map(|(v, _)| *v)
}

fn mean_and_var(d: &Dataset, j: usize) -> Option<(f64, f64)> {
    let vals: Vec<f64> = observed(d, j).collect();
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mu = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    Some((mu, var))
}

fn copy_block(d: &Dataset) -> Block {
    (
        d.columns().to_vec(),
        (0..d.n_cols()).map(|j| d.col_values(j).to_vec()).collect(),
        (0..d.n_cols()).map(|j| d.col_missing(j).to_vec()).collect(),
    )
}

fn rebuild(d: &Dataset, block: Block) -> Result<Dataset, StepError> {
    d.with_features(block.0, block.1, block.2)
        .map_err(|e| StepError::Inapplicable(e.to_string()))
}

/// Mean for numeric columns, mode (smallest code on ties) for categorical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub fill: Vec<f64>,
}

impl Imputer {
    pub fn fit(d: &Dataset) -> Self {
        let fill = (0..d.n_cols())
            .map(|j| match d.column(j).kind {
                ColumnKind::Numeric => mean_and_var(d, j).map(|(m, _)| m).unwrap_or(0.0),
                ColumnKind::Categorical => {
                    let n_cats = d.column(j).categories.len().max(1);
                    let mut counts = vec![0usize; n_cats];
                    for v in observed(d, j) {
                        if (v as usize) < n_cats {
                            counts[v as usize] += 1;
                        }
                    }
                    let mut best = 0;
                    for (c, &n) in counts.iter().enumerate() {
                        if n > counts[best] {
                            best = c;
                        }
                    }
                    best as f64
                }
            })
            .collect();
        Self { fill }
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset, StepError> {
        let (cols, mut values, mut missing) = copy_block(d);
        for j in 0..cols.len() {
            for i in 0..d.n_rows() {
                if missing[j][i] {
                    values[j][i] = self.fill[j];
                    missing[j][i] = false;
                }
            }
        }
        rebuild(d, (cols, values, missing))
    }
}

/// Affine per-column rescaling of numeric columns: `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub params: Vec<Option<(f64, f64)>>,
}

impl Scaler {
    /// Zero mean, unit population variance. Constant columns use scale 1.
    pub fn fit_standard(d: &Dataset) -> Self {
        let params = (0..d.n_cols())
            .map(|j| {
                if !d.column(j).is_numeric() {
                    return None;
                }
                let (mu, var) = mean_and_var(d, j).unwrap_or((0.0, 1.0));
                let sd = var.sqrt();
                Some((mu, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 }))
            })
            .collect();
        Self { params }
    }

    /// Maps the training range onto `[0, 1]`. Constant columns map to 0.
    pub fn fit_minmax(d: &Dataset) -> Self {
        let params = (0..d.n_cols())
            .map(|j| {
                if !d.column(j).is_numeric() {
                    return None;
                }
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for v in observed(d, j) {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                if !lo.is_finite() {
                    return Some((0.0, 1.0));
                }
                let range = hi - lo;
                Some((lo, if range > 0.0 { range } else { 1.0 }))
            })
            .collect();
        Self { params }
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset, StepError> {
        let (cols, mut values, missing) = copy_block(d);
        for (j, p) in self.params.iter().enumerate() {
            if let Some((shift, scale)) = p {
                for (i, v) in values[j].iter_mut().enumerate() {
                    if !missing[j][i] {
                        *v = (*v - shift) / scale;
                    }
                }
            }
        }
        rebuild(d, (cols, values, missing))
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and eigenvectors (as columns of the second result, stored
/// row-major `vecs[row][col]`).
pub(crate) fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-24 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Projection of the numeric columns onto their top-k principal axes.
/// Categorical columns pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub numeric: Vec<usize>,
    pub mean: Vec<f64>,
    /// `k` loading vectors over the numeric columns.
    pub components: Vec<Vec<f64>>,
}

impl Pca {
    pub fn fit(d: &Dataset, k: usize) -> Result<Self, StepError> {
        let numeric: Vec<usize> = (0..d.n_cols()).filter(|&j| d.column(j).is_numeric()).collect();
        let p = numeric.len();
        if k > p {
            return Err(StepError::Inapplicable(format!(
                "pca asks for {k} components of {p} numeric columns"
            )));
        }
        if k > d.n_rows() {
            return Err(StepError::Inapplicable(format!("pca asks for {k} components of {} rows", d.n_rows())));
        }
        if numeric.iter().any(|&j| d.column_has_missing(j)) {
            return Err(StepError::Inapplicable("pca on missing values".into()));
        }
        let m = d.n_rows() as f64;
        let mean: Vec<f64> = numeric.iter().map(|&j| d.col_values(j).iter().sum::<f64>() / m).collect();
        let mut cov = vec![vec![0.0; p]; p];
        for a in 0..p {
            for b in a..p {
                let (xa, xb) = (d.col_values(numeric[a]), d.col_values(numeric[b]));
                let s: f64 = xa
                    .iter()
                    .zip(xb)
                    .map(|(u, v)| (u - mean[a]) * (v - mean[b]))
                    .sum::<f64>()
                    / m;
                cov[a][b] = s;
                cov[b][a] = s;
            }
        }
        if cov.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StepError::Inapplicable("pca covariance not finite".into()));
        }
        let (vals, vecs) = jacobi_eigen(&cov);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
        let components = order[..k]
            .iter()
            .map(|&c| {
                let mut comp: Vec<f64> = (0..p).map(|r| vecs[r][c]).collect();
                let mut lead = 0;
                for i in 1..p {
                    if comp[i].abs() > comp[lead].abs() {
                        lead = i;
                    }
                }
                if comp[lead] < 0.0 {
                    comp.iter_mut().for_each(|v| *v = -*v);
                }
                comp
            })
            .collect();
        Ok(Self {
            numeric,
            mean,
            components,
        })
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset, StepError> {
        if self.numeric.iter().any(|&j| d.column_has_missing(j)) {
            return Err(StepError::Inapplicable("pca on missing values".into()));
        }
        let mut cols = Vec::new();
        let mut values = Vec::new();
        let mut missing = Vec::new();
        for j in 0..d.n_cols() {
            if !d.column(j).is_numeric() {
                cols.push(d.column(j).clone());
                values.push(d.col_values(j).to_vec());
                missing.push(d.col_missing(j).to_vec());
            }
        }
        for (c, comp) in self.components.iter().enumerate() {
            let name = fresh_name(&cols, &format!("pc{c}"));
            cols.push(Column::numeric(name));
            let proj: Vec<f64> = (0..d.n_rows())
                .map(|i| {
                    self.numeric
                        .iter()
                        .zip(comp)
                        .zip(&self.mean)
                        .map(|((&j, w), mu)| (d.value(i, j) - mu) * w)
                        .sum()
                })
                .collect();
            values.push(proj);
            missing.push(vec![false; d.n_rows()]);
        }
        rebuild(d, (cols, values, missing))
    }
}

/// Keeps a fixed subset of input columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSubset {
    pub keep: Vec<usize>,
}

impl ColumnSubset {
    /// Drops columns whose observed variance is at most `threshold`.
    pub fn fit_variance(d: &Dataset, threshold: f64) -> Result<Self, StepError> {
        let keep: Vec<usize> = (0..d.n_cols())
            .filter(|&j| mean_and_var(d, j).map(|(_, v)| v > threshold).unwrap_or(false))
            .collect();
        if keep.is_empty() {
            return Err(StepError::Inapplicable("variance threshold removes every column".into()));
        }
        Ok(Self { keep })
    }

    /// Keeps the `k` columns with highest discretized mutual information
    /// with the target; `k` is clipped to the column count.
    pub fn fit_k_best(d: &Dataset, k: usize) -> Result<Self, StepError> {
        if d.n_cols() == 0 {
            return Err(StepError::Inapplicable("no columns to select from".into()));
        }
        let k = k.clamp(1, d.n_cols());
        let mut scored: Vec<(f64, usize)> = (0..d.n_cols())
            .map(|j| (metafeatures::column_mutual_information(d, j), j))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut keep: Vec<usize> = scored[..k].iter().map(|s| s.1).collect();
        keep.sort_unstable();
        Ok(Self { keep })
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset, StepError> {
        let cols = self.keep.iter().map(|&j| d.column(j).clone()).collect();
        let values = self.keep.iter().map(|&j| d.col_values(j).to_vec()).collect();
        let missing = self.keep.iter().map(|&j| d.col_missing(j).to_vec()).collect();
        rebuild(d, (cols, values, missing))
    }
}

/// Equal-width binning of numeric columns into ordinal bin indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KBins {
    pub bins: usize,
    pub ranges: Vec<Option<(f64, f64)>>,
}

impl KBins {
    pub fn fit(d: &Dataset, bins: usize) -> Self {
        let ranges = (0..d.n_cols())
            .map(|j| {
                if !d.column(j).is_numeric() {
                    return None;
                }
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for v in observed(d, j) {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                if lo.is_finite() {
                    Some((lo, hi - lo))
                } else {
                    Some((0.0, 0.0))
                }
            })
            .collect();
        Self { bins, ranges }
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset, StepError> {
        let (cols, mut values, missing) = copy_block(d);
        let top = (self.bins - 1) as f64;
        for (j, r) in self.ranges.iter().enumerate() {
            if let Some((lo, width)) = r {
                for v in values[j].iter_mut() {
                    *v = if *width > 0.0 {
                        ((*v - lo) / width * self.bins as f64).floor().clamp(0.0, top)
                    } else {
                        0.0
                    };
                }
            }
        }
        rebuild(d, (cols, values, missing))
    }
}

/// Replaces each categorical column by one indicator column per category
/// known at fit time. Unseen codes produce an all-zero block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHot {
    /// Category count per input column, `None` for numeric columns.
    pub n_categories: Vec<Option<usize>>,
}

impl OneHot {
    pub fn fit(d: &Dataset) -> Self {
        Self {
            n_categories: d
                .columns()
                .iter()
                .map(|c| match c.kind {
                    ColumnKind::Numeric => None,
                    ColumnKind::Categorical => Some(c.categories.len()),
                })
                .collect(),
        }
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset, StepError> {
        let mut cols: Vec<Column> = Vec::new();
        let mut values = Vec::new();
        let mut missing = Vec::new();
        for (j, n_cats) in self.n_categories.iter().enumerate() {
            let src = d.column(j);
            match n_cats {
                None => {
                    cols.push(src.clone());
                    values.push(d.col_values(j).to_vec());
                    missing.push(d.col_missing(j).to_vec());
                }
                Some(n) => {
                    for c in 0..*n {
                        let label = src.categories.get(c).cloned().unwrap_or_else(|| c.to_string());
                        let name = fresh_name(&cols, &format!("{}={}", src.name, label));
                        cols.push(Column::numeric(name));
                        values.push(
                            d.col_values(j)
                                .iter()
                                .zip(d.col_missing(j))
                                .map(|(v, &m)| if !m && *v as usize == c && *v >= 0.0 { 1.0 } else { 0.0 })
                                .collect(),
                        );
                        missing.push(d.col_missing(j).to_vec());
                    }
                }
            }
        }
        rebuild(d, (cols, values, missing))
    }
}
