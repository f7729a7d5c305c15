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

//! Greedy forward ensemble selection with replacement.

use serde::{Deserialize, Serialize};

use crate::data::{evaluate, DataError, Dataset, Metric, Proba};
use crate::pipeline::{PipelineError, PipelineModel};

pub const DEFAULT_ROUNDS: usize = 10;
pub const DEFAULT_POOL_SIZE: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error("ensemble pool is empty")]
    EmptyPool,
    #[error("pool member {0} has no cached validation probabilities")]
    MissingValidation(usize),
    #[error("pool member {index} has {rows}x{classes} validation probabilities, expected {expected_rows}x{expected_classes}")]
    Misaligned {
        index: usize,
        rows: usize,
        classes: usize,
        expected_rows: usize,
        expected_classes: usize,
    },
    #[error("every ensemble member failed to predict; last error: {0}")]
    AllMembersFailed(PipelineError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub model: PipelineModel,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub members: Vec<EnsembleMember>,
    pub metric: Metric,
    /// Validation reward of the selected mixture.
    pub valid_reward: f64,
    pub valid_metric_value: f64,
}

fn weighted_mean(parts: &[(&Proba, usize)]) -> Proba {
    let (first, _) = parts[0];
    let mut out = Proba::zeros(first.n_rows(), first.n_classes());
    let total: usize = parts.iter().map(|(_, m)| m).sum();
    for (p, m) in parts {
        let w = *m as f64 / total as f64;
        for i in 0..out.n_rows() {
            for (o, v) in out.row_mut(i).iter_mut().zip(p.row(i)) {
                *o += w * v;
            }
        }
    }
    out
}

/// Starts from the best single pool member and, for up to `rounds` rounds,
/// adds the member whose inclusion most improves the validation reward.
/// Stops at the first round without strict improvement.
pub fn select(pool: &[PipelineModel], y_valid: &[usize], rounds: usize, metric: Metric) -> Result<EnsembleModel, EnsembleError> {
    if pool.is_empty() {
        return Err(EnsembleError::EmptyPool);
    }
    let mut matrices = Vec::with_capacity(pool.len());
    for (i, m) in pool.iter().enumerate() {
        let p = m.valid_proba.as_ref().ok_or(EnsembleError::MissingValidation(i))?;
        let (r0, c0) = matrices.first().map_or((p.n_rows(), p.n_classes()), |q: &&Proba| (q.n_rows(), q.n_classes()));
        if p.n_rows() != r0 || p.n_classes() != c0 || p.n_rows() != y_valid.len() {
            return Err(EnsembleError::Misaligned {
                index: i,
                rows: p.n_rows(),
                classes: p.n_classes(),
                expected_rows: y_valid.len(),
                expected_classes: c0,
            });
        }
        matrices.push(p);
    }
    let score = |p: &Proba| evaluate(metric, y_valid, p).map(|(v, r)| (v, r.value()));
    let mut best = (0, score(matrices[0])?);
    for (i, p) in matrices.iter().enumerate().skip(1) {
        let s = score(p)?;
        if s.1 > best.1 .1 {
            best = (i, s);
        }
    }
    let mut counts = vec![0usize; pool.len()];
    let mut order = vec![best.0];
    counts[best.0] = 1;
    let (mut metric_value, mut reward) = best.1;
    for _ in 0..rounds {
        let mut round_best: Option<(usize, f64, f64)> = None;
        for i in 0..pool.len() {
            let mut parts: Vec<(&Proba, usize)> = counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(j, &c)| (matrices[j], c + (j == i) as usize))
                .collect();
            if counts[i] == 0 {
                parts.push((matrices[i], 1));
            }
            let (v, r) = score(&weighted_mean(&parts))?;
            if round_best.map_or(true, |(_, _, br)| r > br) {
                round_best = Some((i, v, r));
            }
        }
        match round_best {
            Some((i, v, r)) if r > reward => {
                if counts[i] == 0 {
                    order.push(i);
                }
                counts[i] += 1;
                metric_value = v;
                reward = r;
            }
            _ => break,
        }
    }
    let members = order
        .into_iter()
        .map(|i| EnsembleMember {
            model: pool[i].clone(),
            multiplicity: counts[i],
        })
        .collect();
    Ok(EnsembleModel {
        members,
        metric,
        valid_reward: reward,
        valid_metric_value: metric_value,
    })
}

impl EnsembleModel {
    pub fn len(&self) -> usize {
        self.members.iter().map(|m| m.multiplicity).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Multiplicity-weighted mean of the member probabilities. A member
    /// that fails to predict is dropped and its weight spread over the rest.
    pub fn predict_proba(&self, d: &Dataset) -> Result<Proba, EnsembleError> {
        let mut outputs = Vec::with_capacity(self.members.len());
        let mut last_err = None;
        for m in &self.members {
            match m.model.predict_proba(d) {
                Ok(p) => outputs.push((p, m.multiplicity)),
                Err(e) => {
                    log::warn!("ensemble member `{}` failed to predict: {e}", m.model.candidate);
                    last_err = Some(e);
                }
            }
        }
        if outputs.is_empty() {
            return Err(EnsembleError::AllMembersFailed(last_err.unwrap_or(PipelineError::Empty)));
        }
        let parts: Vec<(&Proba, usize)> = outputs.iter().map(|(p, m)| (p, *m)).collect();
        Ok(weighted_mean(&parts))
    }

    /// Mixture of the members' cached validation probabilities.
    pub fn valid_proba(&self) -> Option<Proba> {
        let parts: Option<Vec<(&Proba, usize)>> = self
            .members
            .iter()
            .map(|m| m.model.valid_proba.as_ref().map(|p| (p, m.multiplicity)))
            .collect();
        parts.filter(|p| !p.is_empty()).map(|p| weighted_mean(&p))
    }
}
