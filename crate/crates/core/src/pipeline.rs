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

//! Sequential pipeline execution and the shared cache of intermediate
//! datasets produced by default-configured prefixes.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{evaluate, Dataset, Metric, Proba};
use crate::rng::step_seed;
use crate::steps::{self, Config, FittedStep, Registry, StepError};

pub const DEFAULT_CACHE_BUDGET: usize = 512 * 1024 * 1024;
pub const DEFAULT_EVAL_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("candidate {0:?} does not end in a classifier")]
    NonTerminal(Vec<String>),
    #[error("candidate is empty")]
    Empty,
    #[error("{configs} configurations for {steps} steps")]
    ConfigCount { steps: usize, configs: usize },
    #[error("step {position} (`{step}`) is inapplicable: {reason}")]
    Inapplicable {
        position: usize,
        step: String,
        reason: String,
    },
    #[error("evaluation exceeded its timeout after step {position}")]
    Timeout { position: usize },
    #[error("step {position}: {source}")]
    Step {
        position: usize,
        #[source]
        source: StepError,
    },
    #[error("scoring failed: {0}")]
    Scoring(String),
}

impl PipelineError {
    /// Position of the failing step for prune signals.
    pub fn position(&self) -> Option<usize> {
        match self {
            PipelineError::Inapplicable { position, .. }
            | PipelineError::Timeout { position }
            | PipelineError::Step { position, .. } => Some(*position),
            _ => None,
        }
    }

    pub fn is_inapplicable(&self) -> bool {
        matches!(self, PipelineError::Inapplicable { .. })
    }

    fn at(position: usize, step: &str, e: StepError) -> Self {
        match e {
            StepError::Inapplicable(reason) => PipelineError::Inapplicable {
                position,
                step: step.to_string(),
                reason,
            },
            other => PipelineError::Step { position, source: other },
        }
    }
}

/// An ordered chain of step names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PipelineCandidate {
    pub steps: Vec<String>,
}

impl PipelineCandidate {
    pub fn new<S: Into<String>>(steps: impl IntoIterator<Item = S>) -> Self {
        Self {
            steps: steps.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn is_terminal(&self, registry: &Registry) -> bool {
        self.steps.last().is_some_and(|s| registry.is_classifier(s))
    }
}

impl std::fmt::Display for PipelineCandidate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.steps.join(" -> "))
    }
}

/// A fitted chain plus its validation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineModel {
    pub candidate: PipelineCandidate,
    pub configs: Vec<Config>,
    pub fitted: Vec<FittedStep>,
    pub metric: Metric,
    pub metric_value: f64,
    pub reward: f64,
    #[serde(skip)]
    pub valid_proba: Option<Proba>,
}

impl PipelineModel {
    /// Pushes `d` through every fitted step and returns the terminal
    /// classifier's probabilities.
    pub fn predict_proba(&self, d: &Dataset) -> Result<Proba, PipelineError> {
        let (last, head) = self.fitted.split_last().ok_or(PipelineError::Empty)?;
        let mut cur = std::borrow::Cow::Borrowed(d);
        for (i, f) in head.iter().enumerate() {
            cur = std::borrow::Cow::Owned(steps::forward(f, &cur).map_err(|e| PipelineError::at(i, &f.name, e))?);
        }
        steps::predict_proba(last, &cur).map_err(|e| PipelineError::at(head.len(), &last.name, e))
    }
}

/// Fits `candidate` left to right on `train`, pushes `valid` through the
/// same fitted chain and scores it.
#[allow(clippy::too_many_arguments)]
pub fn execute(
    registry: &Registry,
    candidate: &PipelineCandidate,
    configs: &[Config],
    train: &Dataset,
    valid: &Dataset,
    metric: Metric,
    seed: u64,
    timeout: Duration,
) -> Result<PipelineModel, PipelineError> {
    if candidate.is_empty() {
        return Err(PipelineError::Empty);
    }
    if !candidate.is_terminal(registry) {
        return Err(PipelineError::NonTerminal(candidate.steps.clone()));
    }
    if configs.len() != candidate.len() {
        return Err(PipelineError::ConfigCount {
            steps: candidate.len(),
            configs: configs.len(),
        });
    }
    let deadline = Instant::now() + timeout;
    let mut tr = std::borrow::Cow::Borrowed(train);
    let mut va = std::borrow::Cow::Borrowed(valid);
    let mut fitted = Vec::with_capacity(candidate.len());
    let last = candidate.len() - 1;
    for (i, (name, config)) in candidate.steps.iter().zip(configs).enumerate() {
        let spec = registry.get(name).map_err(|e| PipelineError::at(i, name, e))?;
        let f = steps::fit(spec, config, &tr, step_seed(seed, i)).map_err(|e| PipelineError::at(i, name, e))?;
        if i < last {
            let next_tr = steps::forward(&f, &tr).map_err(|e| PipelineError::at(i, name, e))?;
            let next_va = steps::forward(&f, &va).map_err(|e| PipelineError::at(i, name, e))?;
            tr = std::borrow::Cow::Owned(next_tr);
            va = std::borrow::Cow::Owned(next_va);
        }
        fitted.push(f);
        if Instant::now() > deadline {
            return Err(PipelineError::Timeout { position: i });
        }
    }
    let proba = steps::predict_proba(&fitted[last], &va).map_err(|e| PipelineError::at(last, &candidate.steps[last], e))?;
    let (metric_value, reward) =
        evaluate(metric, valid.target(), &proba).map_err(|e| PipelineError::Scoring(e.to_string()))?;
    Ok(PipelineModel {
        candidate: candidate.clone(),
        configs: configs.to_vec(),
        fitted,
        metric,
        metric_value,
        reward: reward.value(),
        valid_proba: Some(proba),
    })
}

/// Refits an evaluated pipeline's configurations on new training data.
pub fn refit(
    registry: &Registry,
    model: &PipelineModel,
    train: &Dataset,
    seed: u64,
) -> Result<PipelineModel, PipelineError> {
    let mut cur = std::borrow::Cow::Borrowed(train);
    let mut fitted = Vec::with_capacity(model.fitted.len());
    let last = model.candidate.len().saturating_sub(1);
    for (i, (name, config)) in model.candidate.steps.iter().zip(&model.configs).enumerate() {
        let spec = registry.get(name).map_err(|e| PipelineError::at(i, name, e))?;
        let f = steps::fit(spec, config, &cur, step_seed(seed, i)).map_err(|e| PipelineError::at(i, name, e))?;
        if i < last {
            cur = std::borrow::Cow::Owned(steps::forward(&f, &cur).map_err(|e| PipelineError::at(i, name, e))?);
        }
        fitted.push(f);
    }
    Ok(PipelineModel {
        fitted,
        ..model.clone()
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    /// Step applications performed while materializing prefixes.
    pub computed_steps: u64,
    pub evictions: u64,
    pub bytes: usize,
    pub peak_bytes: usize,
    pub largest_entry: usize,
    pub entries: usize,
}

struct Entry {
    data: Arc<Dataset>,
    bytes: usize,
    last_used: u64,
}

#[derive(Default)]
struct CacheInner {
    map: HashMap<Vec<String>, Entry>,
    tick: u64,
    stats: CacheStats,
}

/// Byte-bounded LRU cache of intermediate datasets keyed by prefix.
/// The most recent insertion is never evicted, so the resident size
/// exceeds the budget by at most one entry.
pub struct IntermediateCache {
    budget: usize,
    inner: Mutex<CacheInner>,
    computed: AtomicU64,
}

impl IntermediateCache {
    pub fn new(budget_bytes: usize) -> Self {
        Self {
            budget: budget_bytes,
            inner: Mutex::new(CacheInner::default()),
            computed: AtomicU64::new(0),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn stats(&self) -> CacheStats {
        let mut s = self.inner.lock().expect("cache lock").stats;
        s.computed_steps = self.computed.load(Ordering::Relaxed);
        s
    }

    fn get(&self, key: &[String]) -> Option<Arc<Dataset>> {
        let mut g = self.inner.lock().expect("cache lock");
        g.tick += 1;
        let tick = g.tick;
        match g.map.get_mut(key) {
            Some(e) => {
                e.last_used = tick;
                let data = Arc::clone(&e.data);
                g.stats.hits += 1;
                Some(data)
            }
            None => {
                g.stats.misses += 1;
                None
            }
        }
    }

    fn peek(&self, key: &[String]) -> Option<Arc<Dataset>> {
        let g = self.inner.lock().expect("cache lock");
        g.map.get(key).map(|e| Arc::clone(&e.data))
    }

    fn insert(&self, key: Vec<String>, data: Arc<Dataset>) {
        let bytes = data.approx_bytes();
        let mut g = self.inner.lock().expect("cache lock");
        g.tick += 1;
        let tick = g.tick;
        if let Some(old) = g.map.insert(
            key.clone(),
            Entry {
                data,
                bytes,
                last_used: tick,
            },
        ) {
            g.stats.bytes -= old.bytes;
        }
        g.stats.bytes += bytes;
        g.stats.largest_entry = g.stats.largest_entry.max(bytes);
        while g.stats.bytes > self.budget {
            let victim = g
                .map
                .iter()
                .filter(|(k, _)| **k != key)
                .min_by_key(|(_, e)| e.last_used)
                .map(|(k, _)| k.clone());
            let Some(victim) = victim else { break };
            let e = g.map.remove(&victim).expect("victim present");
            g.stats.bytes -= e.bytes;
            g.stats.evictions += 1;
        }
        g.stats.peak_bytes = g.stats.peak_bytes.max(g.stats.bytes);
        g.stats.entries = g.map.len();
    }
}

/// The training set after applying `prefix` with default configurations.
/// Results (including every shorter prefix computed on the way) are cached.
pub fn intermediate(
    registry: &Registry,
    prefix: &[String],
    train: &Arc<Dataset>,
    seed: u64,
    cache: &IntermediateCache,
) -> Result<Arc<Dataset>, PipelineError> {
    if prefix.is_empty() {
        return Ok(Arc::clone(train));
    }
    if let Some(hit) = cache.get(prefix) {
        return Ok(hit);
    }
    let mut start = 0;
    let mut cur = Arc::clone(train);
    for i in (1..prefix.len()).rev() {
        if let Some(d) = cache.peek(&prefix[..i]) {
            start = i;
            cur = d;
            break;
        }
    }
    for i in start..prefix.len() {
        let name = &prefix[i];
        let spec = registry.get(name).map_err(|e| PipelineError::at(i, name, e))?;
        let f = steps::fit(spec, &spec.default, &cur, step_seed(seed, i)).map_err(|e| PipelineError::at(i, name, e))?;
        let next = steps::forward(&f, &cur).map_err(|e| PipelineError::at(i, name, e))?;
        cache.computed.fetch_add(1, Ordering::Relaxed);
        cur = Arc::new(next);
        cache.insert(prefix[..=i].to_vec(), Arc::clone(&cur));
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Column;
    use crate::steps::{builtin_registry, ParamValue};

    fn blobs(n: usize, seed: u64) -> Dataset {
        use rand::Rng as _;
        let mut rng = crate::rng::rng_for(seed, 1);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = (i % 2) as f64 * 6.0;
                vec![c + rng.gen_range(-1.0..1.0), -c + rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)]
            })
            .collect();
        Dataset::from_rows(&["a", "b", "c"], &rows, (0..n).map(|i| i % 2).collect(), 2).unwrap()
    }

    fn defaults(r: &Registry, steps: &[&str]) -> Vec<Config> {
        steps.iter().map(|s| r.get(s).unwrap().default.clone()).collect()
    }

    #[test]
    fn non_terminal_rejected() {
        let r = builtin_registry();
        let d = blobs(40, 0);
        let c = PipelineCandidate::new(["standard_scaler"]);
        let err = execute(&r, &c, &defaults(&r, &["standard_scaler"]), &d, &d, Metric::Accuracy, 0, DEFAULT_EVAL_TIMEOUT)
            .unwrap_err();
        assert!(matches!(err, PipelineError::NonTerminal(_)));
    }

    #[test]
    fn pca_prune_reports_position() {
        let r = builtin_registry();
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let d = Dataset::from_rows(&["x"], &rows, (0..20).map(|i| i % 2).collect(), 2).unwrap();
        let c = PipelineCandidate::new(["pca", "knn"]);
        let cfgs = vec![Config::new().with("k", ParamValue::Int(2)), r.get("knn").unwrap().default.clone()];
        let err = execute(&r, &c, &cfgs, &d, &d, Metric::Accuracy, 0, DEFAULT_EVAL_TIMEOUT).unwrap_err();
        assert!(err.is_inapplicable());
        assert_eq!(err.position(), Some(0));
    }

    #[test]
    fn validation_rows_do_not_leak() {
        let r = builtin_registry();
        let train = blobs(60, 1);
        let valid = blobs(20, 2);
        let mut shifted_rows = valid.to_rows();
        for row in &mut shifted_rows {
            row[0] += 100.0;
        }
        let shifted = Dataset::from_rows(&["a", "b", "c"], &shifted_rows, valid.target().to_vec(), 2).unwrap();
        let steps = ["standard_scaler", "decision_tree"];
        let c = PipelineCandidate::new(steps);
        let a = execute(&r, &c, &defaults(&r, &steps), &train, &valid, Metric::Accuracy, 3, DEFAULT_EVAL_TIMEOUT).unwrap();
        let b = execute(&r, &c, &defaults(&r, &steps), &train, &shifted, Metric::Accuracy, 3, DEFAULT_EVAL_TIMEOUT).unwrap();
        assert_eq!(a.fitted, b.fitted);
    }

    #[test]
    fn execute_is_deterministic_and_predicts() {
        let r = builtin_registry();
        let train = blobs(80, 1);
        let valid = blobs(30, 2);
        let steps = ["mean_mode_imputer", "random_forest"];
        let c = PipelineCandidate::new(steps);
        let a = execute(&r, &c, &defaults(&r, &steps), &train, &valid, Metric::Accuracy, 9, DEFAULT_EVAL_TIMEOUT).unwrap();
        let b = execute(&r, &c, &defaults(&r, &steps), &train, &valid, Metric::Accuracy, 9, DEFAULT_EVAL_TIMEOUT).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.predict_proba(&valid).unwrap(), a.valid_proba.clone().unwrap());
        let json = serde_json::to_string(&a).unwrap();
        let back: PipelineModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.fitted, a.fitted);
    }

    #[test]
    fn intermediate_caches_prefixes() {
        let r = builtin_registry();
        let d = Arc::new(
            Dataset::new(
                vec![Column::categorical("c", vec!["a".into(), "b".into(), "z".into()]), Column::numeric("x")],
                vec![vec![0.0, 1.0, 2.0, 0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]],
                vec![vec![false; 6], vec![false; 6]],
                vec![0, 1, 0, 1, 0, 1],
                vec!["0".into(), "1".into()],
            )
            .unwrap(),
        );
        let cache = IntermediateCache::new(DEFAULT_CACHE_BUDGET);
        assert!(Arc::ptr_eq(&intermediate(&r, &[], &d, 0, &cache).unwrap(), &d));
        let p = vec!["one_hot_encoder".to_string()];
        let first = intermediate(&r, &p, &d, 0, &cache).unwrap();
        assert_eq!(first.n_cols(), 4);
        let computed = cache.stats().computed_steps;
        let again = intermediate(&r, &p, &d, 0, &cache).unwrap();
        assert!(Arc::ptr_eq(&first, &again));
        assert_eq!(cache.stats().computed_steps, computed);
        assert_eq!(cache.stats().hits, 1);
    }

    #[test]
    fn tiny_cache_recomputes_identically() {
        let r = builtin_registry();
        let d = Arc::new(blobs(50, 4));
        let big = IntermediateCache::new(DEFAULT_CACHE_BUDGET);
        let tiny = IntermediateCache::new(1);
        let prefixes: Vec<Vec<String>> = vec![
            vec!["standard_scaler".into()],
            vec!["standard_scaler".into(), "pca".into()],
            vec!["minmax_scaler".into(), "knn".into()],
            vec!["standard_scaler".into(), "pca".into()],
        ];
        for p in &prefixes {
            let a = intermediate(&r, p, &d, 5, &big).unwrap();
            let b = intermediate(&r, p, &d, 5, &tiny).unwrap();
            assert_eq!(*a, *b);
        }
        let s = tiny.stats();
        assert!(s.peak_bytes <= tiny.budget() + s.largest_entry);
        assert_eq!(s.entries, 1);
    }
}
