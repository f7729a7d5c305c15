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

//! The budgeted search loop: tree policy, per-candidate HPO, incumbent
//! tracking, ensemble construction and run persistence.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{stratified_split, DataError, Dataset, Metric, Proba, Schema};
use crate::ensemble::{self, EnsembleError, EnsembleModel, DEFAULT_POOL_SIZE, DEFAULT_ROUNDS};
use crate::hpo::{optimize_candidate, CandidateOutcome, EvalContext, HpoError, HpoStore, InstanceHistory};
use crate::metabase::MetaBase;
use crate::metafeatures::{self, MetaFeatureSignature, MetaFeatureVector};
use crate::pipeline::{self, CacheStats, IntermediateCache, PipelineCandidate, PipelineModel, DEFAULT_CACHE_BUDGET, DEFAULT_EVAL_TIMEOUT};
use crate::rng::{combine, rng_for};
use crate::search::{Normal, PolicyParams, SearchError, SearchTree, TreeSnapshot};
use crate::steps::{Config, Registry};

pub const MODEL_FILE: &str = "model.json";
pub const EVALUATIONS_FILE: &str = "evaluations.jsonl";
pub const TREE_FILE: &str = "tree.json";
pub const CONFIG_FILE: &str = "config.json";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const HPO_FILE: &str = "hpo.jsonl";
pub const MODEL_SCHEMA_VERSION: u32 = 1;

const SEARCH_STREAM: u64 = 0x7365_6172;
const REFIT_STREAM: u64 = 0x7265_6669;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Hpo(#[from] HpoError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no successful evaluation within the budget ({} failed)", .failures.len())]
    NoSuccessfulEvaluation { failures: Vec<String> },
    #[error("{path}: {message}")]
    Persist { path: PathBuf, message: String },
}

fn persist_err(path: &Path, e: impl std::fmt::Display) -> EngineError {
    EngineError::Persist {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub metric: Metric,
    /// Tree-policy constants; `policy.t_max` is the time budget in seconds.
    pub policy: PolicyParams,
    pub seed: u64,
    pub worker_count: usize,
    pub cache_budget_bytes: usize,
    pub metabase: Option<PathBuf>,
    /// Ignore any meta-base and use the uninformative prior everywhere.
    pub no_prior: bool,
    pub valid_fraction: f64,
    #[serde(with = "secs")]
    pub eval_timeout: Duration,
    /// Stop after this many evaluations. When set, the greediness schedule
    /// runs on evaluation count instead of wall time, which makes runs
    /// reproducible.
    pub max_evaluations: Option<usize>,
    pub ensemble_rounds: usize,
    pub pool_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            metric: Metric::BalancedAccuracy,
            policy: PolicyParams::default(),
            seed: 0,
            worker_count: 1,
            cache_budget_bytes: DEFAULT_CACHE_BUDGET,
            metabase: None,
            no_prior: false,
            valid_fraction: 0.2,
            eval_timeout: DEFAULT_EVAL_TIMEOUT,
            max_evaluations: None,
            ensemble_rounds: DEFAULT_ROUNDS,
            pool_size: DEFAULT_POOL_SIZE,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let mut policy = self.policy.clone();
        if policy.t_max <= 0.0 {
            policy.t_max = 1.0;
        }
        policy.validate()?;
        if self.worker_count == 0 {
            return Err(EngineError::Config("worker_count must be at least 1".into()));
        }
        if self.pool_size == 0 {
            return Err(EngineError::Config("pool_size must be at least 1".into()));
        }
        if self.max_evaluations == Some(0) {
            return Err(EngineError::Config("max_evaluations must be at least 1".into()));
        }
        Ok(())
    }
}

/// One HPO trial in the order it was evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub index: usize,
    pub iteration: usize,
    pub candidate: Vec<String>,
    pub configs: Vec<Config>,
    pub seed: u64,
    pub reward: Option<f64>,
    pub metric_value: Option<f64>,
    pub error: Option<String>,
    /// Best reward seen up to and including this evaluation.
    pub incumbent_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub index: usize,
    pub seconds: f64,
    /// Seconds since the run started, at the end of the evaluation.
    pub elapsed: f64,
}

/// The deployable part of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub schema_version: u32,
    pub metric: Metric,
    pub schema: Schema,
    pub ensemble: EnsembleModel,
    pub incumbent: PipelineModel,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: RunConfig,
    pub model: SavedModel,
    pub evaluations: Vec<EvaluationRecord>,
    pub timings: Vec<Timing>,
    pub tree: TreeSnapshot,
    pub hpo: Vec<InstanceHistory>,
    pub cache: CacheStats,
    /// Best validation reward over the pool before ensembling.
    pub best_single_reward: f64,
    pub elapsed: Duration,
}

impl RunResult {
    pub fn incumbent(&self) -> &PipelineModel {
        &self.model.incumbent
    }

    pub fn ensemble(&self) -> &EnsembleModel {
        &self.model.ensemble
    }

    /// 1-based number of evaluations until a reward of at least `target`.
    pub fn evaluations_to_reach(&self, target: f64) -> Option<usize> {
        self.evaluations
            .iter()
            .position(|e| e.reward.is_some_and(|r| r >= target))
            .map(|i| i + 1)
    }

    pub fn save(&self, dir: &Path) -> Result<(), EngineError> {
        fs::create_dir_all(dir).map_err(|e| persist_err(dir, e))?;
        write_json(&dir.join(MODEL_FILE), &self.model)?;
        write_json(&dir.join(TREE_FILE), &self.tree)?;
        write_json(&dir.join(CONFIG_FILE), &self.config)?;
        write_jsonl(&dir.join(EVALUATIONS_FILE), &self.evaluations)?;
        write_jsonl(&dir.join(TIMINGS_FILE), &self.timings)?;
        write_jsonl(&dir.join(HPO_FILE), &self.hpo)?;
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EngineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| persist_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| persist_err(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), EngineError> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| persist_err(path, e))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| persist_err(path, e))?;
    f.write_all(&out).map_err(|e| persist_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, EngineError> {
    let text = fs::read_to_string(path).map_err(|e| persist_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| persist_err(path, e))
}

pub fn load_model(dir: &Path) -> Result<SavedModel, EngineError> {
    let path = dir.join(MODEL_FILE);
    let m: SavedModel = read_json(&path)?;
    if m.schema_version != MODEL_SCHEMA_VERSION {
        return Err(persist_err(
            &path,
            format!("schema version {}, expected {MODEL_SCHEMA_VERSION}", m.schema_version),
        ));
    }
    Ok(m)
}

pub fn load_tree(dir: &Path) -> Result<TreeSnapshot, EngineError> {
    read_json(&dir.join(TREE_FILE))
}

pub fn load_evaluations(dir: &Path) -> Result<Vec<EvaluationRecord>, EngineError> {
    let path = dir.join(EVALUATIONS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| persist_err(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| persist_err(&path, format!("line {}: {e}", i + 1))))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<String>,
    pub proba: Proba,
}

/// Checks `d` against the training schema and returns labels plus
/// ensemble probabilities.
pub fn predict(model: &SavedModel, d: &Dataset) -> Result<Prediction, EngineError> {
    let mut offending: Vec<String> = Vec::new();
    let cols = d.columns();
    for (i, c) in model.schema.columns.iter().enumerate() {
        match cols.get(i) {
            Some(o) if o.name == c.name && o.kind == c.kind => {}
            _ => offending.push(c.name.clone()),
        }
    }
    for o in cols.iter().skip(model.schema.columns.len()) {
        offending.push(o.name.clone());
    }
    if !offending.is_empty() {
        return Err(DataError::SchemaMismatch(offending).into());
    }
    let k = model.schema.class_names.len();
    if d.n_rows() == 0 {
        return Ok(Prediction {
            labels: Vec::new(),
            proba: Proba::zeros(0, k),
        });
    }
    let proba = model.ensemble.predict_proba(d)?;
    let labels = proba.argmax().into_iter().map(|c| model.schema.class_names[c].clone()).collect();
    Ok(Prediction { labels, proba })
}

struct Clock {
    start: Instant,
    t_max: f64,
    max_evaluations: Option<usize>,
}

impl Clock {
    /// Position in the schedule used by the greediness term.
    fn t(&self, evaluations: usize) -> f64 {
        match self.max_evaluations {
            Some(m) => self.t_max * (evaluations as f64 / m as f64).min(1.0),
            None => self.start.elapsed().as_secs_f64(),
        }
    }

    fn exhausted(&self, evaluations: usize) -> bool {
        self.max_evaluations.is_some_and(|m| evaluations >= m) || self.start.elapsed().as_secs_f64() >= self.t_max
    }
}

/// Runs the search on `data` and returns the ensemble refit on all rows.
pub fn fit(
    data: &Dataset,
    registry: &Registry,
    cfg: &RunConfig,
    metabase: Option<&MetaBase>,
) -> Result<RunResult, EngineError> {
    cfg.validate()?;
    cfg.metric.check_target(data.n_classes())?;
    let clock = Clock {
        start: Instant::now(),
        t_max: cfg.policy.t_max,
        max_evaluations: cfg.max_evaluations,
    };
    let (train, valid) = stratified_split(data, cfg.valid_fraction, cfg.seed)?;
    let train = Arc::new(train);
    let seed = cfg.seed;
    let root_meta = metafeatures::extract(&train, seed);
    let mut policy = cfg.policy.clone();
    if policy.t_max <= 0.0 {
        return Err(EngineError::NoSuccessfulEvaluation { failures: Vec::new() });
    }
    policy.t_max = policy.t_max.max(f64::MIN_POSITIVE);
    let mut tree = SearchTree::new(registry, policy, root_meta)?;
    let cache = IntermediateCache::new(cfg.cache_budget_bytes);
    let expander = |prefix: &[String]| -> Result<MetaFeatureVector, String> {
        pipeline::intermediate(registry, prefix, &train, seed, &cache)
            .map(|d| metafeatures::extract(&d, seed))
            .map_err(|e| e.to_string())
    };
    let base = if cfg.no_prior { None } else { metabase };
    let prior_fn = |mf: &MetaFeatureVector, alg: &str| base.map_or(Normal::UNINFORMATIVE, |b| b.prior(mf, alg));
    let mut rng = rng_for(seed, SEARCH_STREAM);
    let store = HpoStore::new(registry.clone(), seed);
    let ctx = EvalContext {
        registry,
        train: &train,
        valid: &valid,
        metric: cfg.metric,
        timeout: cfg.eval_timeout,
        deadline: Some(clock.start + Duration::from_secs_f64(cfg.policy.t_max)),
    };

    let mut evaluations: Vec<EvaluationRecord> = Vec::new();
    let mut timings = Vec::new();
    let mut pool: Vec<PipelineModel> = Vec::new();
    let mut incumbent: Option<PipelineModel> = None;
    let mut failures = Vec::new();
    let mut iteration = 0usize;
    while !clock.exhausted(evaluations.len()) {
        let t = clock.t(evaluations.len());
        let mut batch: Vec<(usize, PipelineCandidate, Vec<MetaFeatureSignature>, usize)> = Vec::new();
        for _ in 0..cfg.worker_count {
            let Some(leaf) = tree.next_candidate(&prior_fn, t, &mut rng, &expander) else {
                break;
            };
            if batch.iter().any(|b| b.0 == leaf) {
                continue;
            }
            let path = tree.path(leaf);
            let sigs = path[..path.len() - 1].iter().map(|&n| tree.node(n).meta.signature()).collect();
            let candidate = PipelineCandidate::new(tree.node(leaf).prefix.iter().cloned());
            batch.push((leaf, candidate, sigs, iteration));
            iteration += 1;
        }
        if batch.is_empty() {
            log::info!("search space exhausted after {} evaluations", evaluations.len());
            break;
        }
        let outcomes: Vec<Result<CandidateOutcome, HpoError>> = if batch.len() == 1 {
            let (_, c, s, it) = &batch[0];
            vec![optimize_candidate(&ctx, c, s, cfg.policy.n_hpo_per_visit, &store, combine(seed, *it as u64))]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|(_, c, s, it)| {
                        let (ctx, store) = (&ctx, &store);
                        let sd = combine(seed, *it as u64);
                        scope.spawn(move || optimize_candidate(ctx, c, s, cfg.policy.n_hpo_per_visit, store, sd))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
            })
        };
        for ((leaf, candidate, _, it), outcome) in batch.into_iter().zip(outcomes) {
            let outcome = outcome?;
            for trial in &outcome.trials {
                if let Some(err) = &trial.error {
                    failures.push(format!("{candidate}: {err}"));
                }
                let best_so_far = evaluations.last().map_or(0.0, |e| e.incumbent_reward);
                let index = evaluations.len();
                evaluations.push(EvaluationRecord {
                    index,
                    iteration: it,
                    candidate: candidate.steps.clone(),
                    configs: trial.configs.clone(),
                    seed: trial.seed,
                    reward: trial.reward,
                    metric_value: trial.metric_value,
                    error: trial.error.clone(),
                    incumbent_reward: trial.reward.map_or(best_so_far, |r| r.max(best_so_far)),
                });
                timings.push(Timing {
                    index,
                    seconds: trial.seconds,
                    elapsed: clock.start.elapsed().as_secs_f64(),
                });
            }
            tree.backpropagate(leaf, outcome.best_reward());
            for m in outcome.models {
                if incumbent.as_ref().map_or(true, |i| m.reward > i.reward) {
                    incumbent = Some(m.clone());
                }
                admit(&mut pool, m, cfg.pool_size);
            }
        }
    }
    let Some(incumbent) = incumbent else {
        return Err(EngineError::NoSuccessfulEvaluation { failures });
    };
    let best_single_reward = pool.iter().map(|m| m.reward).fold(0.0, f64::max);
    let ensemble = ensemble::select(&pool, valid.target(), cfg.ensemble_rounds, cfg.metric)?;
    let refit_seed = combine(seed, REFIT_STREAM);
    let refit = |m: &PipelineModel| {
        let mut r = match pipeline::refit(registry, m, data, refit_seed) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("refit of `{}` on all rows failed, keeping the search fit: {e}", m.candidate);
                m.clone()
            }
        };
        r.valid_proba = None;
        r
    };
    let mut ensemble = ensemble;
    for member in &mut ensemble.members {
        member.model = refit(&member.model);
    }
    let incumbent = refit(&incumbent);
    let elapsed = clock.start.elapsed();
    log::info!(
        "{} evaluations in {:.1}s, incumbent {} reward {:.4}, ensemble of {}",
        evaluations.len(),
        elapsed.as_secs_f64(),
        incumbent.candidate,
        incumbent.reward,
        ensemble.len()
    );
    Ok(RunResult {
        config: cfg.clone(),
        model: SavedModel {
            schema_version: MODEL_SCHEMA_VERSION,
            metric: cfg.metric,
            schema: data.schema(),
            ensemble,
            incumbent,
        },
        evaluations,
        timings,
        tree: tree.snapshot(),
        hpo: store.export(),
        cache: cache.stats(),
        best_single_reward,
        elapsed,
    })
}

/// Keeps the `cap` best models by reward; earlier models win ties.
fn admit(pool: &mut Vec<PipelineModel>, m: PipelineModel, cap: usize) {
    let at = pool.iter().position(|p| m.reward > p.reward).unwrap_or(pool.len());
    if at < cap {
        pool.insert(at, m);
        pool.truncate(cap);
    }
}
