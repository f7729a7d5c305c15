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

//! Distance, linear and generative classifiers.

use serde::{Deserialize, Serialize};

use super::StepError;
use crate::data::Dataset;

/// Row-major feature matrix. Categorical codes are used as numbers.
pub fn feature_matrix(d: &Dataset, name: &str) -> Result<Vec<Vec<f64>>, StepError> {
    if d.n_cols() == 0 {
        return Err(StepError::Inapplicable(format!("`{name}` needs at least one feature")));
    }
    if d.has_missing() {
        return Err(StepError::Inapplicable(format!("`{name}` cannot handle missing values")));
    }
    if !d.all_finite() {
        return Err(StepError::Inapplicable(format!("`{name}` got non-finite features")));
    }
    Ok(d.to_rows())
}

pub fn warn_categorical(d: &Dataset, name: &str) {
    if d.columns().iter().any(|c| !c.is_numeric()) {
        log::debug!("`{name}` treats categorical codes as numeric values");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Euclidean,
    Manhattan,
}

impl Distance {
    fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Distance::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

/// Uniform-weight k nearest neighbours. Ties in distance go to the
/// earlier training row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub n_classes: usize,
    pub k: usize,
    pub metric: Distance,
}

impl Knn {
    pub fn fit(x: Vec<Vec<f64>>, y: &[usize], n_classes: usize, k: usize, metric: Distance) -> Self {
        Self {
            k: k.clamp(1, x.len().max(1)),
            x,
            y: y.to_vec(),
            n_classes: n_classes.max(1),
            metric,
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(self.x.len());
        x.iter()
            .map(|q| {
                dist.clear();
                dist.extend(self.x.iter().enumerate().map(|(i, r)| (self.metric.eval(q, r), i)));
                let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if self.k < dist.len() {
                    dist.select_nth_unstable_by(self.k - 1, by);
                }
                let mut p = vec![0.0; self.n_classes];
                for &(_, i) in &dist[..self.k] {
                    p[self.y[i]] += 1.0;
                }
                p.iter_mut().for_each(|v| *v /= self.k as f64);
                p
            })
            .collect()
    }
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

/// Multinomial logistic regression trained by full-batch gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    /// One row of `p + 1` weights per class; the last entry is the bias.
    pub weights: Vec<Vec<f64>>,
}

impl Logistic {
    pub fn fit(x: &[Vec<f64>], y: &[usize], k: usize, lr: f64, l2: f64, epochs: usize) -> Result<Self, StepError> {
        let p = x.first().map_or(0, |r| r.len());
        let k = k.max(1);
        let n = x.len() as f64;
        let mut w = vec![vec![0.0; p + 1]; k];
        let mut grad = vec![vec![0.0; p + 1]; k];
        let mut z = vec![0.0; k];
        for _ in 0..epochs {
            grad.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
            for (row, &label) in x.iter().zip(y) {
                for (c, zc) in z.iter_mut().enumerate() {
                    *zc = w[c][p] + w[c][..p].iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                }
                softmax(&mut z);
                for c in 0..k {
                    let err = z[c] - if c == label { 1.0 } else { 0.0 };
                    for (g, v) in grad[c][..p].iter_mut().zip(row) {
                        *g += err * v;
                    }
                    grad[c][p] += err;
                }
            }
            for c in 0..k {
                for j in 0..=p {
                    let reg = if j < p { l2 * w[c][j] } else { 0.0 };
                    w[c][j] -= lr * (grad[c][j] / n + reg);
                }
            }
        }
        if w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StepError::Inapplicable("logistic regression diverged".into()));
        }
        Ok(Self { weights: w })
    }

    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = self
            .weights
            .iter()
            .map(|w| {
                let p = w.len() - 1;
                w[p] + w[..p].iter().zip(row).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        softmax(&mut z);
        z
    }
}

/// Gaussian naive Bayes. `smoothing` times the largest feature variance is
/// added to every variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub log_prior: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl GaussianNb {
    pub fn fit(x: &[Vec<f64>], y: &[usize], k: usize, smoothing: f64) -> Self {
        let p = x.first().map_or(0, |r| r.len());
        let k = k.max(1);
        let mut count = vec![0usize; k];
        let mut mean = vec![vec![0.0; p]; k];
        let mut var = vec![vec![0.0; p]; k];
        for (row, &c) in x.iter().zip(y) {
            count[c] += 1;
            for (m, v) in mean[c].iter_mut().zip(row) {
                *m += v;
            }
        }
        for c in 0..k {
            if count[c] > 0 {
                mean[c].iter_mut().for_each(|m| *m /= count[c] as f64);
            }
        }
        for (row, &c) in x.iter().zip(y) {
            for j in 0..p {
                var[c][j] += (row[j] - mean[c][j]).powi(2);
            }
        }
        let n = x.len() as f64;
        let mut max_var: f64 = 0.0;
        for j in 0..p {
            let mu = x.iter().map(|r| r[j]).sum::<f64>() / n;
            max_var = max_var.max(x.iter().map(|r| (r[j] - mu).powi(2)).sum::<f64>() / n);
        }
        let eps = (smoothing * max_var).max(f64::MIN_POSITIVE);
        for c in 0..k {
            for v in var[c].iter_mut() {
                *v = if count[c] > 0 { *v / count[c] as f64 } else { 0.0 } + eps;
            }
        }
        let log_prior = count
            .iter()
            .map(|&c| if c == 0 { f64::NEG_INFINITY } else { (c as f64 / n).ln() })
            .collect();
        Self { log_prior, mean, var }
    }

    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.log_prior.len())
            .map(|c| {
                if self.log_prior[c] == f64::NEG_INFINITY {
                    return f64::NEG_INFINITY;
                }
                self.log_prior[c]
                    + row
                        .iter()
                        .zip(&self.mean[c])
                        .zip(&self.var[c])
                        .map(|((x, m), v)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v))
                        .sum::<f64>()
            })
            .collect();
        softmax(&mut z);
        z
    }
}
