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

//! Offline meta-learning base: default-configuration enumeration over a
//! corpus, performance records, and random-forest prior surrogates.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{evaluate, stratified_split, Dataset, Metric};
use crate::metafeatures::{self, MetaFeatureVector, N_META_FEATURES, SCHEMA_VERSION};
use crate::rng::{combine, rng_for, step_seed, Rng};
use crate::steps::{self, Registry};

pub use crate::search::Normal;

pub const MAX_ENUMERATION_DEPTH: usize = 5;
pub const RECORDS_FILE: &str = "records.jsonl";
pub const SURROGATES_FILE: &str = "surrogates.json";

#[derive(Debug, thiserror::Error)]
pub enum MetaBaseError {
    #[error("max depth is {MAX_ENUMERATION_DEPTH} (got {0})")]
    DepthTooLarge(usize),
    #[error("max depth must be at least 1")]
    DepthZero,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("no performance records")]
    NoRecords,
    #[error("held-out dataset `{0}` is not in the corpus")]
    HeldOutAbsent(String),
    #[error("no records remain after holding out `{0}`")]
    EmptyRemainder(String),
    #[error("{path}: schema version {found}, expected {expected}")]
    SchemaVersion { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MetaBaseError + '_ {
    move |source| MetaBaseError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Observed performance of applying `algorithm` to a dataset state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub dataset_id: String,
    pub schema_version: u32,
    pub meta_features: [f64; N_META_FEATURES],
    pub algorithm: String,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub n_evals: usize,
}

impl PerformanceRecord {
    pub fn meta(&self) -> MetaFeatureVector {
        MetaFeatureVector::from_values(self.meta_features)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnumerationReport {
    pub records: Vec<PerformanceRecord>,
    /// The step sequence producing each record's state, aligned with `records`.
    pub prefixes: Vec<Vec<String>>,
    /// Sequences whose last step was fitted (successfully or not).
    pub attempted: usize,
    /// Sequences ending in a classifier that produced a validation reward.
    pub classifier_terminated: usize,
    pub failures: usize,
    /// Attempted sequences per dataset and length.
    pub per_dataset: BTreeMap<String, BTreeMap<usize, usize>>,
}

struct Enumerator<'a> {
    registry: &'a Registry,
    max_depth: usize,
    metric: Metric,
    seed: u64,
    dataset_id: &'a str,
    seen: HashSet<Vec<String>>,
    report: EnumerationReport,
}

impl Enumerator<'_> {
    /// Enumerates all extensions of the state `(train, valid)` at `depth`.
    /// Returns rewards of the classifier actions taken directly from it.
    fn visit(&mut self, train: &Dataset, valid: &Dataset, prefix: &mut Vec<String>) -> Vec<f64> {
        let depth = prefix.len();
        let meta = metafeatures::extract(train, self.seed);
        let mut direct = Vec::new();
        for spec in self.registry.specs() {
            prefix.push(spec.name.clone());
            if !self.seen.insert(prefix.clone()) {
                prefix.pop();
                continue;
            }
            self.report.attempted += 1;
            *self
                .report
                .per_dataset
                .entry(self.dataset_id.to_string())
                .or_default()
                .entry(depth + 1)
                .or_default() += 1;
            let outcome = self.apply(spec, train, valid, prefix, depth);
            match outcome {
                Err(e) => {
                    self.report.failures += 1;
                    log::debug!("{}: {} skipped: {e}", self.dataset_id, prefix.join(" -> "));
                }
                Ok(Applied::Classifier(reward)) => {
                    direct.push(reward);
                    self.push(&meta, &prefix[..depth], &spec.name, &[reward]);
                }
                Ok(Applied::Preprocessor(extensions)) => {
                    if !extensions.is_empty() {
                        self.push(&meta, &prefix[..depth], &spec.name, &extensions);
                    }
                }
            }
            prefix.pop();
        }
        direct
    }

    fn apply(
        &mut self,
        spec: &steps::StepSpec,
        train: &Dataset,
        valid: &Dataset,
        prefix: &mut Vec<String>,
        depth: usize,
    ) -> Result<Applied, steps::StepError> {
        let f = steps::fit(spec, &spec.default, train, step_seed(self.seed, depth))?;
        let deeper = depth + 1 < self.max_depth;
        if spec.is_classifier() {
            let proba = steps::predict_proba(&f, valid)?;
            let (_, reward) = evaluate(self.metric, valid.target(), &proba)
                .map_err(|e| steps::StepError::Inapplicable(e.to_string()))?;
            self.report.classifier_terminated += 1;
            if deeper {
                match (steps::forward(&f, train), steps::forward(&f, valid)) {
                    (Ok(tr), Ok(va)) => {
                        self.visit(&tr, &va, prefix);
                    }
                    (Err(e), _) | (_, Err(e)) => log::debug!("{}: cannot extend: {e}", prefix.join(" -> ")),
                }
            }
            Ok(Applied::Classifier(reward.value()))
        } else {
            let tr = steps::forward(&f, train)?;
            let va = steps::forward(&f, valid)?;
            if deeper {
                Ok(Applied::Preprocessor(self.visit(&tr, &va, prefix)))
            } else {
                Ok(Applied::Preprocessor(Vec::new()))
            }
        }
    }

    fn push(&mut self, meta: &MetaFeatureVector, state: &[String], algorithm: &str, rewards: &[f64]) {
        self.report.prefixes.push(state.to_vec());
        let n = rewards.len() as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        self.report.records.push(PerformanceRecord {
            dataset_id: self.dataset_id.to_string(),
            schema_version: SCHEMA_VERSION,
            meta_features: meta.values,
            algorithm: algorithm.to_string(),
            reward_mean: mean.clamp(0.0, 1.0),
            reward_std: var.sqrt(),
            n_evals: rewards.len(),
        });
    }
}

enum Applied {
    Classifier(f64),
    /// Rewards of the classifiers applied directly after the preprocessor.
    Preprocessor(Vec<f64>),
}

/// Applies every step sequence of length up to `max_depth` with default
/// configurations to every corpus dataset.
pub fn enumerate_corpus(
    corpus: &[(String, Dataset)],
    registry: &Registry,
    max_depth: usize,
    metric: Metric,
    valid_fraction: f64,
    seed: u64,
) -> Result<EnumerationReport, MetaBaseError> {
    if max_depth > MAX_ENUMERATION_DEPTH {
        return Err(MetaBaseError::DepthTooLarge(max_depth));
    }
    if max_depth == 0 {
        return Err(MetaBaseError::DepthZero);
    }
    if corpus.is_empty() {
        return Err(MetaBaseError::EmptyCorpus);
    }
    let mut report = EnumerationReport::default();
    for (id, d) in corpus {
        let (train, valid) = match stratified_split(d, valid_fraction, seed) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("dataset `{id}` skipped: {e}");
                continue;
            }
        };
        let mut en = Enumerator {
            registry,
            max_depth,
            metric,
            seed,
            dataset_id: id,
            seen: HashSet::new(),
            report: std::mem::take(&mut report),
        };
        en.visit(&train, &valid, &mut Vec::new());
        report = en.report;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 50,
            max_depth: 12,
            min_leaf: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegNode {
    pub feature_index: Option<usize>,
    pub threshold: f64,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub leaf_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            let n = &self.nodes[at];
            match (n.feature_index, n.left, n.right) {
                (Some(f), Some(l), Some(r)) => at = if x[f] <= n.threshold { l } else { r },
                _ => return n.leaf_value,
            }
        }
    }
}

/// Mean computed around the first value, so identical inputs average to
/// themselves without rounding.
fn shifted_mean(mut values: impl Iterator<Item = f64>) -> f64 {
    let Some(first) = values.next() else {
        return 0.0;
    };
    let (mut dev, mut n) = (0.0, 1usize);
    for v in values {
        dev += v - first;
        n += 1;
    }
    first + dev / n as f64
}

struct RegBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: ForestParams,
    n_features: usize,
    rng: Rng,
    nodes: Vec<RegNode>,
}

impl RegBuilder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let v = shifted_mean(rows.iter().map(|&r| self.y[r]));
        self.nodes.push(RegNode {
            feature_index: None,
            threshold: 0.0,
            left: None,
            right: None,
            leaf_value: v,
        });
        self.nodes.len() - 1
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let min_leaf = self.params.min_leaf.max(1);
        if depth >= self.params.max_depth || rows.len() < 2 * min_leaf {
            return self.leaf(rows);
        }
        let p = self.x[0].len();
        let mut features: Vec<usize> = (0..p).collect();
        features.shuffle(&mut self.rng);
        features.truncate(self.n_features);
        features.sort_unstable();
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let total_sq: f64 = rows.iter().map(|&r| self.y[r] * self.y[r]).sum();
        let parent_sse = total_sq - total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.to_vec();
        for &f in &features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let (mut s, mut sq) = (0.0, 0.0);
            for i in 0..n - 1 {
                let y = self.y[order[i]];
                s += y;
                sq += y * y;
                let nl = i + 1;
                let (lo, hi) = (self.x[order[i]][f], self.x[order[i + 1]][f]);
                if lo == hi || nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let sse_l = sq - s * s / nl as f64;
                let (rs, rsq) = (total - s, total_sq - sq);
                let sse_r = rsq - rs * rs / (n - nl) as f64;
                let gain = parent_sse - sse_l - sse_r;
                if gain > 1e-12 && best.map_or(true, |(g, _, _)| gain > g) {
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some((gain, f, if mid < hi { mid } else { lo }));
                }
            }
        }
        let Some((_, f, threshold)) = best else {
            return self.leaf(rows);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][f] <= threshold);
        let id = self.nodes.len();
        self.nodes.push(RegNode {
            feature_index: Some(f),
            threshold,
            left: None,
            right: None,
            leaf_value: 0.0,
        });
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id].left = Some(left);
        self.nodes[id].right = Some(right);
        id
    }
}

/// Bagged variance-reduction regression trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegForest {
    pub trees: Vec<RegTree>,
}

impl RegForest {
    /// Fits the forest and returns it with each tree's bootstrap rows.
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: ForestParams, seed: u64) -> (Self, Vec<Vec<usize>>) {
        assert!(!x.is_empty(), "regression forest needs at least one row");
        let n = x.len();
        let p = x[0].len();
        let n_features = ((p as f64).sqrt().round() as usize).clamp(1, p.max(1));
        let mut bags = Vec::with_capacity(params.trees);
        let trees = (0..params.trees.max(1))
            .map(|t| {
                let mut rng = rng_for(seed, combine(0x7267_0000, t as u64));
                let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                let mut b = RegBuilder {
                    x,
                    y,
                    params,
                    n_features,
                    rng,
                    nodes: Vec::new(),
                };
                b.grow(&rows, 0);
                bags.push(rows);
                RegTree { nodes: b.nodes }
            })
            .collect();
        (Self { trees }, bags)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        shifted_mean(self.trees.iter().map(|t| t.predict(x)))
    }
}

/// Prior surrogates over `meta_features ++ one_hot(algorithm)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surrogates {
    pub schema_version: u32,
    pub vocabulary: Vec<String>,
    pub params: ForestParams,
    pub rf_mu: RegForest,
    pub rf_sigma: RegForest,
}

fn encode(meta: &[f64; N_META_FEATURES], slot: usize, vocab_len: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(N_META_FEATURES + vocab_len);
    x.extend_from_slice(meta);
    x.extend((0..vocab_len).map(|i| if i == slot { 1.0 } else { 0.0 }));
    x
}

impl Surrogates {
    pub fn train(records: &[PerformanceRecord], params: ForestParams, seed: u64) -> Result<Self, MetaBaseError> {
        if records.is_empty() {
            return Err(MetaBaseError::NoRecords);
        }
        let mut vocabulary: Vec<String> = records.iter().map(|r| r.algorithm.clone()).collect();
        vocabulary.sort();
        vocabulary.dedup();
        let x: Vec<Vec<f64>> = records
            .iter()
            .map(|r| {
                let slot = vocabulary.binary_search(&r.algorithm).expect("algorithm in vocabulary");
                encode(&r.meta_features, slot, vocabulary.len())
            })
            .collect();
        let mu: Vec<f64> = records.iter().map(|r| r.reward_mean).collect();
        let sigma: Vec<f64> = records.iter().map(|r| r.reward_std).collect();
        let (rf_mu, _) = RegForest::fit(&x, &mu, params, combine(seed, 1));
        let (rf_sigma, _) = RegForest::fit(&x, &sigma, params, combine(seed, 2));
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            vocabulary,
            params,
            rf_mu,
            rf_sigma,
        })
    }

    /// `N(clamp(mu, 0, 1), max(sigma, 0))`, or the uninformative prior for
    /// algorithms absent from training.
    pub fn prior(&self, mf: &MetaFeatureVector, algorithm: &str) -> Normal {
        let Ok(slot) = self.vocabulary.binary_search_by(|v| v.as_str().cmp(algorithm)) else {
            return Normal::UNINFORMATIVE;
        };
        let x = encode(&mf.values, slot, self.vocabulary.len());
        let mean = self.rf_mu.predict(&x);
        let std = self.rf_sigma.predict(&x);
        Normal {
            mean: if mean.is_finite() { mean.clamp(0.0, 1.0) } else { 0.5 },
            std: if std.is_finite() { std.max(0.0) } else { 0.25 },
        }
    }
}

/// Records plus their trained surrogates.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaBase {
    pub records: Vec<PerformanceRecord>,
    pub surrogates: Surrogates,
}

fn canonical_order(records: &mut [PerformanceRecord]) {
    records.sort_by(|a, b| {
        a.dataset_id
            .cmp(&b.dataset_id)
            .then_with(|| a.algorithm.cmp(&b.algorithm))
            .then_with(|| {
                a.meta_features
                    .iter()
                    .zip(&b.meta_features)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| a.reward_mean.total_cmp(&b.reward_mean))
            .then_with(|| a.reward_std.total_cmp(&b.reward_std))
            .then_with(|| a.n_evals.cmp(&b.n_evals))
    });
}

impl MetaBase {
    pub fn build(mut records: Vec<PerformanceRecord>, seed: u64) -> Result<Self, MetaBaseError> {
        canonical_order(&mut records);
        let surrogates = Surrogates::train(&records, ForestParams::default(), seed)?;
        Ok(Self { records, surrogates })
    }

    pub fn prior(&self, mf: &MetaFeatureVector, algorithm: &str) -> Normal {
        self.surrogates.prior(mf, algorithm)
    }

    pub fn dataset_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records.iter().map(|r| r.dataset_id.clone()).collect();
        ids.dedup();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Writes `records.jsonl` and `surrogates.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), MetaBaseError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(RECORDS_FILE);
        let mut out = Vec::new();
        let mut records = self.records.clone();
        canonical_order(&mut records);
        for r in &records {
            serde_json::to_writer(&mut out, r).expect("record serializes");
            out.push(b'\n');
        }
        fs::write(&path, out).map_err(io_err(&path))?;
        let path = dir.join(SURROGATES_FILE);
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        serde_json::to_writer(&mut f, &self.surrogates).expect("surrogates serialize");
        f.write_all(b"\n").map_err(io_err(&path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, MetaBaseError> {
        let path = dir.join(RECORDS_FILE);
        let file = fs::File::open(&path).map_err(io_err(&path))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: PerformanceRecord = serde_json::from_str(&line).map_err(|e| MetaBaseError::Parse {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if r.schema_version != SCHEMA_VERSION {
                return Err(MetaBaseError::SchemaVersion {
                    path,
                    found: r.schema_version,
                    expected: SCHEMA_VERSION,
                });
            }
            records.push(r);
        }
        let path = dir.join(SURROGATES_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let surrogates: Surrogates = serde_json::from_str(&text).map_err(|e| MetaBaseError::Parse {
            path: path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if surrogates.schema_version != SCHEMA_VERSION {
            return Err(MetaBaseError::SchemaVersion {
                path,
                found: surrogates.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(Self { records, surrogates })
    }
}

/// A base trained on every record except those of `held_out`.
pub fn leave_one_out_base(records: &[PerformanceRecord], held_out: &str, seed: u64) -> Result<MetaBase, MetaBaseError> {
    if !records.iter().any(|r| r.dataset_id == held_out) {
        return Err(MetaBaseError::HeldOutAbsent(held_out.to_string()));
    }
    let rest: Vec<PerformanceRecord> = records.iter().filter(|r| r.dataset_id != held_out).cloned().collect();
    if rest.is_empty() {
        return Err(MetaBaseError::EmptyRemainder(held_out.to_string()));
    }
    MetaBase::build(rest, seed)
}
