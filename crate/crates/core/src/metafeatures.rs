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

//! Dataset meta-features.
//!
//! Extraction has to run for every intermediate dataset the search visits,
//! so only cheap general, statistical, information-theoretic and landmark
//! descriptors are computed. All sums run over canonically ordered values,
//! which makes the vector exactly invariant under row permutations.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::rng::{self, StableHasher};

pub const N_META_FEATURES: usize = 22;
pub const SCHEMA_VERSION: u32 = 1;

const MAX_LANDMARK_ROWS: usize = 500;
const MAX_CORRELATION_PAIRS: usize = 20;
const ENTROPY_BINS: usize = 10;

/// Feature names in vector order. The order is part of the meta-base file
/// format.
pub const FEATURE_NAMES: [&str; N_META_FEATURES] = [
    "n_instances",
    "log_n_instances",
    "n_features",
    "log_n_features",
    "n_numeric",
    "n_categorical",
    "n_classes",
    "class_entropy_normalized",
    "minority_class_ratio",
    "majority_class_ratio",
    "missing_cell_ratio",
    "instances_per_feature",
    "mean_column_mean",
    "mean_column_std",
    "mean_skewness",
    "mean_kurtosis",
    "mean_column_entropy",
    "mean_abs_correlation",
    "mean_mutual_information",
    "landmark_stump",
    "landmark_1nn",
    "landmark_naive_bayes",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatureVector {
    pub schema_version: u32,
    pub values: [f64; N_META_FEATURES],
}

impl MetaFeatureVector {
    pub fn from_values(values: [f64; N_META_FEATURES]) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            values,
        }
    }

    pub fn zeros() -> Self {
        Self::from_values([0.0; N_META_FEATURES])
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }

    pub fn signature(&self) -> MetaFeatureSignature {
        signature(self)
    }
}

/// Coarse quantization of a meta-feature vector. Datasets with equal
/// signatures share hyperparameter optimizer instances.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetaFeatureSignature {
    pub buckets: [i64; N_META_FEATURES],
}

impl MetaFeatureSignature {
    pub fn stable_hash(&self) -> u64 {
        let mut h = StableHasher::new();
        for b in &self.buckets {
            h.write_u64(*b as u64);
        }
        h.finish()
    }

    pub fn l1_distance(&self, other: &Self) -> u64 {
        self.buckets
            .iter()
            .zip(&other.buckets)
            .map(|(a, b)| a.abs_diff(*b))
            .sum()
    }
}

pub fn signature(mf: &MetaFeatureVector) -> MetaFeatureSignature {
    let mut buckets = [0i64; N_META_FEATURES];
    for (b, v) in buckets.iter_mut().zip(&mf.values) {
        *b = (v.asinh() * 10.0).round() as i64;
    }
    MetaFeatureSignature { buckets }
}

fn finite_or_zero(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Moments of a sorted sample: (mean, std, skewness, excess kurtosis).
/// Degenerate moments are 0.
fn moments(sorted: &[f64]) -> (f64, f64, f64, f64) {
    let n = sorted.len();
    if n == 0 {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let mu = mean(sorted);
    let nf = n as f64;
    let m2 = sorted.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / nf;
    let std = m2.sqrt();
    if std <= 1e-12 * mu.abs().max(1.0) {
        return (mu, 0.0, 0.0, 0.0);
    }
    let skew = if n >= 3 {
        sorted.iter().map(|x| ((x - mu) / std).powi(3)).sum::<f64>() / nf
    } else {
        0.0
    };
    let kurt = if n >= 4 {
        sorted.iter().map(|x| ((x - mu) / std).powi(4)).sum::<f64>() / nf - 3.0
    } else {
        0.0
    };
    (mu, std, skew, kurt)
}

/// Bin index per row (`None` for missing cells). Numeric columns use equal
/// width bins over the observed range; categorical columns use their codes.
fn discretize(d: &Dataset, j: usize) -> (Vec<Option<usize>>, usize) {
    let vals = d.col_values(j);
    let miss = d.col_missing(j);
    if !d.column(j).is_numeric() {
        let n_bins = d.column(j).categories.len().max(1);
        let bins = vals
            .iter()
            .zip(miss)
            .map(|(v, &m)| if m { None } else { Some((*v as usize).min(n_bins - 1)) })
            .collect();
        return (bins, n_bins);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (v, &m) in vals.iter().zip(miss) {
        if !m && v.is_finite() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
    }
    let width = hi - lo;
    let bins = vals
        .iter()
        .zip(miss)
        .map(|(v, &m)| {
            if m || !v.is_finite() {
                None
            } else if !(width > 0.0) {
                Some(0)
            } else {
                Some((((v - lo) / width) * ENTROPY_BINS as f64).floor().min((ENTROPY_BINS - 1) as f64) as usize)
            }
        })
        .collect();
    (bins, ENTROPY_BINS)
}

fn mutual_information(bins: &[Option<usize>], n_bins: usize, target: &[usize], k: usize) -> f64 {
    let mut joint = vec![0usize; n_bins * k];
    let mut px = vec![0usize; n_bins];
    let mut py = vec![0usize; k];
    let mut n = 0usize;
    for (b, &y) in bins.iter().zip(target) {
        if let Some(b) = b {
            joint[b * k + y] += 1;
            px[*b] += 1;
            py[y] += 1;
            n += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for b in 0..n_bins {
        for y in 0..k {
            let c = joint[b * k + y];
            if c > 0 {
                let pxy = c as f64 / nf;
                mi += pxy * (pxy / ((px[b] as f64 / nf) * (py[y] as f64 / nf))).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Mutual information (nats) between column `j`, discretized into equal-width
/// bins, and the class label.
pub fn column_mutual_information(d: &Dataset, j: usize) -> f64 {
    let (bins, n_bins) = discretize(d, j);
    finite_or_zero(mutual_information(&bins, n_bins, d.target(), d.n_classes().max(1)))
}

fn pearson(pairs: &mut [(f64, f64)]) -> f64 {
    if pairs.len() < 2 {
        return 0.0;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in pairs.iter() {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    finite_or_zero(sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

fn row_hash(d: &Dataset, i: usize, seed: u64) -> u64 {
    let mut h = StableHasher::new();
    h.write_u64(seed);
    for j in 0..d.n_cols() {
        if d.is_missing(i, j) {
            h.write(&[1]);
        } else {
            h.write(&[0]);
            h.write_u64(d.value(i, j).to_bits());
        }
    }
    h.write_u64(d.target()[i] as u64);
    h.finish()
}

fn compare_rows(d: &Dataset, a: usize, b: usize) -> Ordering {
    for j in 0..d.n_cols() {
        let ord = d
            .is_missing(a, j)
            .cmp(&d.is_missing(b, j))
            .then_with(|| d.value(a, j).total_cmp(&d.value(b, j)));
        if ord != Ordering::Equal {
            return ord;
        }
    }
    d.target()[a].cmp(&d.target()[b])
}

/// Rows chosen for landmarking, in canonical (content-defined) order.
fn landmark_rows(d: &Dataset, seed: u64) -> Vec<usize> {
    let mut keyed: Vec<(u64, usize)> = (0..d.n_rows()).map(|i| (row_hash(d, i, seed), i)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| compare_rows(d, a.1, b.1)));
    keyed.truncate(MAX_LANDMARK_ROWS);
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Dense row-major matrix of the landmark sample with missing cells
/// replaced by the sample column mean.
fn landmark_matrix(d: &Dataset, rows: &[usize]) -> Vec<Vec<f64>> {
    let dcols = d.n_cols();
    let mut fill = vec![0.0; dcols];
    for (j, f) in fill.iter_mut().enumerate() {
        let mut vals: Vec<f64> = rows
            .iter()
            .filter(|&&i| !d.is_missing(i, j))
            .map(|&i| d.value(i, j))
            .collect();
        vals.sort_by(f64::total_cmp);
        *f = finite_or_zero(mean(&vals));
    }
    rows.iter()
        .map(|&i| {
            (0..dcols)
                .map(|j| {
                    let v = d.value(i, j);
                    if d.is_missing(i, j) || !v.is_finite() {
                        fill[j]
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect()
}

fn majority_count(counts: &[usize]) -> usize {
    counts.iter().copied().max().unwrap_or(0)
}

/// Resubstitution accuracy of the best single-threshold split.
fn stump_accuracy(x: &[Vec<f64>], y: &[usize], k: usize) -> f64 {
    let n = y.len();
    if n == 0 {
        return 0.0;
    }
    let mut total = vec![0usize; k];
    for &t in y {
        total[t] += 1;
    }
    let mut best = majority_count(&total);
    let d = x.first().map(Vec::len).unwrap_or(0);
    let mut order: Vec<usize> = (0..n).collect();
    for j in 0..d {
        order.sort_by(|&a, &b| x[a][j].total_cmp(&x[b][j]).then(y[a].cmp(&y[b])));
        let mut left = vec![0usize; k];
        for pos in 0..n - 1 {
            let i = order[pos];
            left[y[i]] += 1;
            if x[order[pos + 1]][j] == x[i][j] {
                continue;
            }
            let right_best = (0..k).map(|c| total[c] - left[c]).max().unwrap_or(0);
            best = best.max(majority_count(&left) + right_best);
        }
    }
    best as f64 / n as f64
}

/// Leave-one-out 1-NN accuracy (Euclidean, ties to the smaller label).
fn one_nn_accuracy(x: &[Vec<f64>], y: &[usize]) -> f64 {
    let n = y.len();
    if n < 2 {
        return 0.0;
    }
    let mut hits = 0usize;
    for i in 0..n {
        let mut best_d = f64::INFINITY;
        let mut best_y = usize::MAX;
        for j in 0..n {
            if i == j {
                continue;
            }
            let dist: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best_d || (dist == best_d && y[j] < best_y) {
                best_d = dist;
                best_y = y[j];
            }
        }
        if best_y == y[i] {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Resubstitution accuracy of Gaussian naive Bayes.
fn naive_bayes_accuracy(x: &[Vec<f64>], y: &[usize], k: usize) -> f64 {
    let n = y.len();
    if n == 0 {
        return 0.0;
    }
    let d = x[0].len();
    let mut count = vec![0usize; k];
    let mut mu = vec![vec![0.0; d]; k];
    let mut var = vec![vec![0.0; d]; k];
    for (row, &t) in x.iter().zip(y) {
        count[t] += 1;
        for j in 0..d {
            mu[t][j] += row[j];
        }
    }
    for c in 0..k {
        if count[c] > 0 {
            for v in mu[c].iter_mut() {
                *v /= count[c] as f64;
            }
        }
    }
    let mut max_var: f64 = 0.0;
    for (row, &t) in x.iter().zip(y) {
        for j in 0..d {
            var[t][j] += (row[j] - mu[t][j]).powi(2);
        }
    }
    for c in 0..k {
        if count[c] > 0 {
            for v in var[c].iter_mut() {
                *v /= count[c] as f64;
                max_var = max_var.max(*v);
            }
        }
    }
    let eps = 1e-9 * max_var.max(1e-12);
    let mut hits = 0usize;
    for (row, &t) in x.iter().zip(y) {
        let mut best_c = 0;
        let mut best_ll = f64::NEG_INFINITY;
        for c in 0..k {
            if count[c] == 0 {
                continue;
            }
            let mut ll = (count[c] as f64 / n as f64).ln();
            for j in 0..d {
                let v = var[c][j] + eps;
                ll -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (row[j] - mu[c][j]).powi(2) / v);
            }
            if ll > best_ll {
                best_ll = ll;
                best_c = c;
            }
        }
        if best_c == t {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Computes the 22 meta-features of `d`. `seed` only affects which rows are
/// subsampled for landmarking and which column pairs enter the correlation
/// estimate.
pub fn extract(d: &Dataset, seed: u64) -> MetaFeatureVector {
    let m = d.n_rows();
    let dcols = d.n_cols();
    let k = d.n_classes();
    let mut v = [0.0; N_META_FEATURES];

    v[0] = m as f64;
    v[1] = (m.max(1) as f64).ln();
    v[2] = dcols as f64;
    v[3] = (dcols.max(1) as f64).ln();
    let numeric: Vec<usize> = (0..dcols).filter(|&j| d.column(j).is_numeric()).collect();
    v[4] = numeric.len() as f64;
    v[5] = (dcols - numeric.len()) as f64;
    v[6] = k as f64;

    let counts = d.class_counts();
    v[7] = if k > 1 { entropy(&counts) / (k as f64).ln() } else { 0.0 };
    if m > 0 {
        let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
        v[8] = present.iter().copied().min().unwrap_or(0) as f64 / m as f64;
        v[9] = present.iter().copied().max().unwrap_or(0) as f64 / m as f64;
    }
    if m > 0 && dcols > 0 {
        v[10] = d.missing_count() as f64 / (m * dcols) as f64;
    }
    v[11] = m as f64 / dcols.max(1) as f64;

    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut skews = Vec::new();
    let mut kurts = Vec::new();
    for &j in &numeric {
        let mut vals: Vec<f64> = d
            .col_values(j)
            .iter()
            .zip(d.col_missing(j))
            .filter(|(x, &miss)| !miss && x.is_finite())
            .map(|(x, _)| *x)
            .collect();
        vals.sort_by(f64::total_cmp);
        let (mu, sd, sk, ku) = moments(&vals);
        means.push(finite_or_zero(mu));
        stds.push(finite_or_zero(sd));
        skews.push(finite_or_zero(sk));
        kurts.push(finite_or_zero(ku));
    }
    v[12] = mean(&means);
    v[13] = mean(&stds);
    v[14] = mean(&skews);
    v[15] = mean(&kurts);

    let mut entropies = Vec::with_capacity(dcols);
    let mut mis = Vec::with_capacity(dcols);
    for j in 0..dcols {
        let (bins, n_bins) = discretize(d, j);
        let mut c = vec![0usize; n_bins];
        for b in bins.iter().flatten() {
            c[*b] += 1;
        }
        entropies.push(entropy(&c));
        mis.push(mutual_information(&bins, n_bins, d.target(), k.max(1)));
    }
    v[16] = mean(&entropies);
    v[18] = mean(&mis);

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for a in 0..numeric.len() {
        for b in a + 1..numeric.len() {
            pairs.push((numeric[a], numeric[b]));
        }
    }
    if pairs.len() > MAX_CORRELATION_PAIRS {
        let mut r = rng::rng_for(seed, 0x434f_5252);
        pairs.shuffle(&mut r);
        pairs.truncate(MAX_CORRELATION_PAIRS);
    }
    let corrs: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| {
            let mut xy: Vec<(f64, f64)> = (0..m)
                .filter(|&i| !d.is_missing(i, a) && !d.is_missing(i, b))
                .map(|i| (d.value(i, a), d.value(i, b)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect();
            pearson(&mut xy).abs()
        })
        .collect();
    v[17] = mean(&corrs);

    if m > 0 && dcols > 0 {
        let rows = landmark_rows(d, seed);
        let x = landmark_matrix(d, &rows);
        let y: Vec<usize> = rows.iter().map(|&i| d.target()[i]).collect();
        v[19] = stump_accuracy(&x, &y, k.max(1));
        v[20] = one_nn_accuracy(&x, &y);
        v[21] = naive_bayes_accuracy(&x, &y, k.max(1));
    }

    for x in v.iter_mut() {
        *x = finite_or_zero(*x);
    }
    MetaFeatureVector::from_values(v)
}
