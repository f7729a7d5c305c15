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

//! Tree Parzen estimator instances keyed by step and input signature.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Metric};
use crate::metafeatures::MetaFeatureSignature;
use crate::pipeline::{self, PipelineCandidate, PipelineModel};
use crate::rng::{combine, hash_str, rng_for, Rng};
use crate::steps::{Config, Domain, HyperparameterSpace, ParamValue, Registry};

pub const GAMMA: f64 = 0.25;
pub const N_CANDIDATES: usize = 24;
pub const N_STARTUP: usize = 10;
pub const DENSITY_FLOOR: f64 = 1e-12;
pub const WARM_START_CAP: usize = 20;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HpoError {
    #[error("unknown step `{0}`")]
    UnknownStep(String),
    #[error("loss {0} is not finite")]
    NonFiniteLoss(f64),
    #[error("configuration outside the search space: {0}")]
    OutOfSpace(String),
    #[error("{sigs} input signatures for {steps} steps")]
    SignatureCount { steps: usize, sigs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub config: Config,
    pub loss: f64,
}

/// Good-set size for `n` observations.
pub fn n_good(n: usize) -> usize {
    ((GAMMA * n as f64).ceil() as usize).max(1)
}

/// One optimizer for one step on one family of input datasets.
#[derive(Debug)]
pub struct HpoInstance {
    pub id: usize,
    pub step: String,
    pub signature: MetaFeatureSignature,
    space: HyperparameterSpace,
    observations: Vec<Observation>,
    rng: Rng,
    last_used_tpe: bool,
    n_observe_calls: usize,
}

impl HpoInstance {
    pub fn new(id: usize, step: &str, signature: MetaFeatureSignature, space: HyperparameterSpace, seed: u64) -> Self {
        let key = combine(hash_str(step), signature.stable_hash());
        Self {
            id,
            step: step.to_string(),
            signature,
            space,
            observations: Vec::new(),
            rng: rng_for(seed, key),
            last_used_tpe: false,
            n_observe_calls: 0,
        }
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn space(&self) -> &HyperparameterSpace {
        &self.space
    }

    /// Whether the most recent `suggest` used the density model.
    pub fn last_used_tpe(&self) -> bool {
        self.last_used_tpe
    }

    pub fn n_observe_calls(&self) -> usize {
        self.n_observe_calls
    }

    pub fn suggest(&mut self) -> Config {
        if self.space.is_empty() {
            self.last_used_tpe = false;
            return Config::new();
        }
        if self.observations.len() < N_STARTUP {
            self.last_used_tpe = false;
            return self.space.sample(&mut self.rng);
        }
        self.last_used_tpe = true;
        let mut order: Vec<usize> = (0..self.observations.len()).collect();
        order.sort_by(|&a, &b| {
            self.observations[a]
                .loss
                .total_cmp(&self.observations[b].loss)
                .then(a.cmp(&b))
        });
        let split = n_good(order.len());
        let (good, bad) = order.split_at(split);
        let models: Vec<(String, ParzenPair)> = self
            .space
            .params
            .iter()
            .map(|p| {
                let pick = |idx: &[usize]| -> Vec<&ParamValue> {
                    idx.iter()
                        .map(|&i| self.observations[i].config.get(&p.name).expect("observed config is complete"))
                        .collect()
                };
                (p.name.clone(), ParzenPair::fit(&p.domain, &pick(good), &pick(bad)))
            })
            .collect();
        let mut best: Option<(f64, Config)> = None;
        for _ in 0..N_CANDIDATES {
            let mut cfg = Config::new();
            let mut score = 0.0;
            for (name, m) in &models {
                let v = m.sample_good(&mut self.rng);
                score += m.log_ratio(&v);
                cfg.0.insert(name.clone(), v);
            }
            if best.as_ref().map_or(true, |(s, _)| score > *s) {
                best = Some((score, cfg));
            }
        }
        best.expect("at least one candidate").1
    }

    pub fn observe(&mut self, config: Config, loss: f64) -> Result<(), HpoError> {
        if !loss.is_finite() {
            return Err(HpoError::NonFiniteLoss(loss));
        }
        self.space.validate(&config).map_err(HpoError::OutOfSpace)?;
        self.observations.push(Observation { config, loss });
        self.n_observe_calls += 1;
        Ok(())
    }

    /// Inserts up to 20 lowest-loss valid records ahead of existing
    /// observations. Returns how many records were skipped as invalid.
    pub fn warm_start(&mut self, records: &[Observation]) -> usize {
        let mut valid: Vec<&Observation> = records
            .iter()
            .filter(|r| r.loss.is_finite() && self.space.validate(&r.config).is_ok())
            .collect();
        let skipped = records.len() - valid.len();
        if skipped > 0 {
            log::warn!("{skipped} warm-start records for `{}` are invalid and were skipped", self.step);
        }
        valid.sort_by(|a, b| a.loss.total_cmp(&b.loss));
        valid.truncate(WARM_START_CAP);
        let mut obs: Vec<Observation> = valid.into_iter().cloned().collect();
        obs.append(&mut self.observations);
        self.observations = obs;
        skipped
    }
}

/// Univariate good/bad densities for one parameter.
enum ParzenPair {
    Numeric {
        lo: f64,
        hi: f64,
        log: bool,
        int: bool,
        good: Kde,
        bad: Kde,
    },
    Categorical {
        values: Vec<String>,
        good: Vec<f64>,
        bad: Vec<f64>,
    },
}

/// Gaussian mixture over observed points plus one wide prior component.
struct Kde {
    centers: Vec<f64>,
    bandwidth: f64,
    prior_center: f64,
    prior_width: f64,
}

impl Kde {
    fn fit(points: &[f64], lo: f64, hi: f64, n_total: usize) -> Self {
        let range = hi - lo;
        let floor = range / (1 + n_total).min(100) as f64;
        let n = points.len();
        let bandwidth = if n >= 2 {
            let mu = points.iter().sum::<f64>() / n as f64;
            let sd = (points.iter().map(|p| (p - mu).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            1.06 * sd * (n as f64).powf(-0.2)
        } else {
            range / 10.0
        };
        Self {
            centers: points.to_vec(),
            bandwidth: bandwidth.clamp(floor, range),
            prior_center: lo + range / 2.0,
            prior_width: range,
        }
    }

    fn density(&self, z: f64) -> f64 {
        let gauss = |c: f64, s: f64| (-0.5 * ((z - c) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let sum: f64 = self.centers.iter().map(|&c| gauss(c, self.bandwidth)).sum::<f64>()
            + gauss(self.prior_center, self.prior_width);
        (sum / (self.centers.len() + 1) as f64).max(DENSITY_FLOOR)
    }

    fn sample(&self, rng: &mut Rng, lo: f64, hi: f64) -> f64 {
        let k = if self.centers.is_empty() { 0 } else { rng.gen_range(0..self.centers.len()) };
        let (c, s) = if k == self.centers.len() {
            (self.prior_center, self.prior_width)
        } else {
            (self.centers[k], self.bandwidth)
        };
        let dist = Normal::new(c, s).expect("positive bandwidth");
        for _ in 0..32 {
            let z = dist.sample(rng);
            if (lo..=hi).contains(&z) {
                return z;
            }
        }
        c.clamp(lo, hi)
    }
}

impl ParzenPair {
    fn fit(domain: &Domain, good: &[&ParamValue], bad: &[&ParamValue]) -> Self {
        let numeric = |lo: f64, hi: f64, log: bool, int: bool| {
            let to_z = |v: &&ParamValue| {
                let x = match v {
                    ParamValue::Int(i) => *i as f64,
                    ParamValue::Float(f) => *f,
                    ParamValue::Cat(_) => lo,
                };
                if log {
                    x.ln()
                } else {
                    x
                }
            };
            let (zlo, zhi) = if log { (lo.ln(), hi.ln()) } else { (lo, hi) };
            let g: Vec<f64> = good.iter().map(to_z).collect();
            let b: Vec<f64> = bad.iter().map(to_z).collect();
            ParzenPair::Numeric {
                lo,
                hi,
                log,
                int,
                good: Kde::fit(&g, zlo, zhi, good.len() + bad.len()),
                bad: Kde::fit(&b, zlo, zhi, good.len() + bad.len()),
            }
        };
        match domain {
            Domain::Uniform { lo, hi } => numeric(*lo, *hi, false, false),
            Domain::LogUniform { lo, hi } => numeric(*lo, *hi, true, false),
            Domain::IntUniform { lo, hi } => numeric(*lo as f64, *hi as f64, false, true),
            Domain::Categorical { values } => {
                let freq = |pts: &[&ParamValue]| -> Vec<f64> {
                    let denom = (pts.len() + values.len()) as f64;
                    values
                        .iter()
                        .map(|v| {
                            let c = pts.iter().filter(|p| matches!(p, ParamValue::Cat(s) if s == v)).count();
                            (c as f64 + 1.0) / denom
                        })
                        .collect()
                };
                ParzenPair::Categorical {
                    values: values.clone(),
                    good: freq(good),
                    bad: freq(bad),
                }
            }
        }
    }

    fn sample_good(&self, rng: &mut Rng) -> ParamValue {
        match self {
            ParzenPair::Numeric {
                lo,
                hi,
                log,
                int,
                good,
                ..
            } => {
                let (zlo, zhi) = if *log { (lo.ln(), hi.ln()) } else { (*lo, *hi) };
                let z = good.sample(rng, zlo, zhi);
                let x = if *log { z.exp() } else { z };
                if *int {
                    ParamValue::Int(x.round().clamp(*lo, *hi) as i64)
                } else {
                    ParamValue::Float(x.clamp(*lo, *hi))
                }
            }
            ParzenPair::Categorical { values, good, .. } => {
                let u: f64 = rng.gen_range(0.0..1.0);
                let mut acc = 0.0;
                for (v, w) in values.iter().zip(good) {
                    acc += w;
                    if u < acc {
                        return ParamValue::Cat(v.clone());
                    }
                }
                ParamValue::Cat(values[values.len() - 1].clone())
            }
        }
    }

    fn log_ratio(&self, v: &ParamValue) -> f64 {
        match (self, v) {
            (ParzenPair::Numeric { log, good, bad, .. }, ParamValue::Int(_) | ParamValue::Float(_)) => {
                let x = match v {
                    ParamValue::Int(i) => *i as f64,
                    ParamValue::Float(f) => *f,
                    ParamValue::Cat(_) => unreachable!(),
                };
                let z = if *log { x.ln() } else { x };
                good.density(z).ln() - bad.density(z).ln()
            }
            (ParzenPair::Categorical { values, good, bad }, ParamValue::Cat(s)) => {
                let i = values.iter().position(|x| x == s).unwrap_or(0);
                good[i].max(DENSITY_FLOOR).ln() - bad[i].max(DENSITY_FLOOR).ln()
            }
            _ => 0.0,
        }
    }
}

/// Create-on-miss map from (step, input signature) to optimizer instance.
pub struct HpoStore {
    seed: u64,
    registry: Registry,
    neighbor_warm_start: bool,
    inner: Mutex<StoreInner>,
}

#[derive(Default)]
struct StoreInner {
    map: BTreeMap<(String, MetaFeatureSignature), Arc<Mutex<HpoInstance>>>,
    next_id: usize,
}

impl HpoStore {
    pub fn new(registry: Registry, seed: u64) -> Self {
        Self {
            seed,
            registry,
            neighbor_warm_start: true,
            inner: Mutex::new(StoreInner::default()),
        }
    }

    /// Disables copying observations from the nearest same-step instance
    /// into newly created instances.
    pub fn without_neighbor_warm_start(mut self) -> Self {
        self.neighbor_warm_start = false;
        self
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store lock").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_instance(&self, step: &str, sig: &MetaFeatureSignature) -> Result<Arc<Mutex<HpoInstance>>, HpoError> {
        let spec = self.registry.get(step).map_err(|_| HpoError::UnknownStep(step.to_string()))?;
        let mut g = self.inner.lock().expect("store lock");
        let key = (step.to_string(), sig.clone());
        if let Some(inst) = g.map.get(&key) {
            return Ok(Arc::clone(inst));
        }
        let id = g.next_id;
        g.next_id += 1;
        let mut inst = HpoInstance::new(id, step, sig.clone(), spec.space.clone(), self.seed);
        if self.neighbor_warm_start {
            let nearest = g
                .map
                .iter()
                .filter(|((s, _), _)| s == step)
                .map(|((_, other), i)| (other.l1_distance(sig), i))
                .min_by_key(|(d, i)| (*d, i.lock().expect("instance lock").id));
            if let Some((_, src)) = nearest {
                let records = src.lock().expect("instance lock").observations.clone();
                inst.warm_start(&records);
            }
        }
        let inst = Arc::new(Mutex::new(inst));
        g.map.insert(key, Arc::clone(&inst));
        Ok(inst)
    }

    /// Observation histories of every instance, ordered by creation.
    pub fn export(&self) -> Vec<InstanceHistory> {
        let g = self.inner.lock().expect("store lock");
        let mut out: Vec<InstanceHistory> = g
            .map
            .values()
            .map(|i| {
                let i = i.lock().expect("instance lock");
                InstanceHistory {
                    id: i.id,
                    step: i.step.clone(),
                    signature_hash: format!("{:016x}", i.signature.stable_hash()),
                    observations: i.observations.clone(),
                }
            })
            .collect();
        out.sort_by_key(|h| h.id);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceHistory {
    pub id: usize,
    pub step: String,
    pub signature_hash: String,
    pub observations: Vec<Observation>,
}

/// Shared inputs for evaluating candidates.
pub struct EvalContext<'a> {
    pub registry: &'a Registry,
    pub train: &'a Dataset,
    pub valid: &'a Dataset,
    pub metric: Metric,
    pub timeout: Duration,
    /// No new iteration starts after this instant (the first always runs).
    pub deadline: Option<Instant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub configs: Vec<Config>,
    pub seed: u64,
    pub reward: Option<f64>,
    pub metric_value: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Default)]
pub struct CandidateOutcome {
    pub trials: Vec<Trial>,
    /// Successful models in trial order.
    pub models: Vec<PipelineModel>,
    /// True when every trial failed.
    pub pruned: bool,
}

impl CandidateOutcome {
    /// Best validation reward of the batch, 0 when nothing succeeded.
    pub fn best_reward(&self) -> f64 {
        self.trials.iter().filter_map(|t| t.reward).fold(0.0, f64::max)
    }

    pub fn best(&self) -> Option<&PipelineModel> {
        let mut best: Option<&PipelineModel> = None;
        for m in &self.models {
            if best.map_or(true, |b| m.reward > b.reward) {
                best = Some(m);
            }
        }
        best
    }
}

/// Runs `budget` suggest/execute/observe rounds for a terminal candidate.
/// `input_sigs[i]` is the signature of the dataset entering step `i`.
pub fn optimize_candidate(
    ctx: &EvalContext<'_>,
    candidate: &PipelineCandidate,
    input_sigs: &[MetaFeatureSignature],
    budget: usize,
    store: &HpoStore,
    seed: u64,
) -> Result<CandidateOutcome, HpoError> {
    if input_sigs.len() != candidate.len() {
        return Err(HpoError::SignatureCount {
            steps: candidate.len(),
            sigs: input_sigs.len(),
        });
    }
    let instances = candidate
        .steps
        .iter()
        .zip(input_sigs)
        .map(|(s, sig)| store.get_instance(s, sig))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = CandidateOutcome::default();
    for it in 0..budget {
        if it > 0 && ctx.deadline.is_some_and(|d| Instant::now() >= d) {
            break;
        }
        let configs: Vec<Config> = instances.iter().map(|i| i.lock().expect("instance lock").suggest()).collect();
        let trial_seed = combine(seed, it as u64);
        let started = Instant::now();
        let result = pipeline::execute(
            ctx.registry,
            candidate,
            &configs,
            ctx.train,
            ctx.valid,
            ctx.metric,
            trial_seed,
            ctx.timeout,
        );
        let seconds = started.elapsed().as_secs_f64();
        let loss = match &result {
            Ok(m) => 1.0 - m.reward,
            Err(_) => 1.0,
        };
        for (inst, cfg) in instances.iter().zip(&configs) {
            inst.lock().expect("instance lock").observe(cfg.clone(), loss)?;
        }
        match result {
            Ok(m) => {
                out.trials.push(Trial {
                    configs,
                    seed: trial_seed,
                    reward: Some(m.reward),
                    metric_value: Some(m.metric_value),
                    error: None,
                    seconds,
                });
                out.models.push(m);
            }
            Err(e) => out.trials.push(Trial {
                configs,
                seed: trial_seed,
                reward: None,
                metric_value: None,
                error: Some(e.to_string()),
                seconds,
            }),
        }
    }
    out.pruned = out.models.is_empty();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metafeatures::{MetaFeatureVector, N_META_FEATURES};
    use crate::steps::{builtin_registry, Param};
    use proptest::prelude::*;

    fn unit_space() -> HyperparameterSpace {
        HyperparameterSpace::new(vec![Param {
            name: "x".into(),
            domain: Domain::Uniform { lo: 0.0, hi: 1.0 },
        }])
    }

    fn sig(v: f64) -> MetaFeatureSignature {
        MetaFeatureVector::from_values([v; N_META_FEATURES]).signature()
    }

    #[test]
    fn good_set_sizes() {
        assert_eq!(n_good(8), 2);
        assert_eq!(n_good(1), 1);
        assert_eq!(n_good(10), 3);
    }

    #[test]
    fn startup_then_tpe() {
        let mut inst = HpoInstance::new(0, "f", sig(0.0), unit_space(), 1);
        for i in 0..N_STARTUP {
            let c = inst.suggest();
            assert!(!inst.last_used_tpe());
            inst.observe(c, i as f64).unwrap();
        }
        let c = inst.suggest();
        assert!(inst.last_used_tpe());
        assert!(unit_space().validate(&c).is_ok());
    }

    #[test]
    fn duplicates_kept_and_infinite_rejected() {
        let mut inst = HpoInstance::new(0, "f", sig(0.0), unit_space(), 1);
        let c = Config::new().with("x", ParamValue::Float(0.5));
        inst.observe(c.clone(), 0.2).unwrap();
        inst.observe(c.clone(), 0.2).unwrap();
        assert_eq!(inst.observations().len(), 2);
        assert_eq!(inst.observe(c, f64::INFINITY), Err(HpoError::NonFiniteLoss(f64::INFINITY)));
    }

    #[test]
    fn warm_start_caps_and_switches_to_tpe() {
        let mut inst = HpoInstance::new(0, "f", sig(0.0), unit_space(), 1);
        let recs: Vec<Observation> = (0..30)
            .map(|i| Observation {
                config: Config::new().with("x", ParamValue::Float(i as f64 / 30.0)),
                loss: (30 - i) as f64,
            })
            .collect();
        assert_eq!(inst.warm_start(&recs), 0);
        assert_eq!(inst.observations().len(), 20);
        assert!(inst.observations().iter().all(|o| o.loss <= 20.0));
        inst.suggest();
        assert!(inst.last_used_tpe());
        let mut empty = HpoInstance::new(1, "f", sig(0.0), unit_space(), 1);
        empty.warm_start(&[]);
        assert!(empty.observations().is_empty());
    }

    #[test]
    fn equal_losses_still_suggest() {
        let mut inst = HpoInstance::new(0, "f", sig(0.0), unit_space(), 3);
        for _ in 0..15 {
            inst.observe(Config::new().with("x", ParamValue::Float(0.4)), 0.5).unwrap();
        }
        let c = inst.suggest();
        assert!(unit_space().validate(&c).is_ok());
    }

    #[test]
    fn store_creates_once_per_key() {
        let store = HpoStore::new(builtin_registry(), 0);
        let a = store.get_instance("knn", &sig(1.0)).unwrap();
        let b = store.get_instance("knn", &sig(1.0)).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        let c = store.get_instance("knn", &sig(2.0)).unwrap();
        assert!(!Arc::ptr_eq(&a, &c));
        assert_eq!(store.len(), 2);
        assert_eq!(store.get_instance("svm", &sig(1.0)).unwrap_err(), HpoError::UnknownStep("svm".into()));
    }

    fn quad_run(seed: u64, tpe: bool) -> f64 {
        let mut inst = HpoInstance::new(0, "f", sig(0.0), unit_space(), seed);
        let mut rng = rng_for(seed, 99);
        let mut best = f64::INFINITY;
        for _ in 0..50 {
            let c = if tpe { inst.suggest() } else { unit_space().sample(&mut rng) };
            let loss = (c.float("x") - 0.3).powi(2);
            best = best.min(loss);
            inst.observe(c, loss).unwrap();
        }
        best
    }

    #[test]
    fn tpe_beats_random_on_quadratic() {
        let median = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            (v[9] + v[10]) / 2.0
        };
        let t = median((0..20).map(|s| quad_run(s, true)).collect());
        let r = median((0..20).map(|s| quad_run(s, false)).collect());
        assert!(t < r, "tpe {t} random {r}");
        assert!(t < 1e-3);
    }

    #[test]
    fn counting_contract() {
        let r = builtin_registry();
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 2) as f64 + 0.1 * (i % 5) as f64, i as f64]).collect();
        let d = Dataset::from_rows(&["a", "b"], &rows, (0..40).map(|i| i % 2).collect(), 2).unwrap();
        let ctx = EvalContext {
            registry: &r,
            train: &d,
            valid: &d,
            metric: Metric::Accuracy,
            timeout: Duration::from_secs(10),
            deadline: None,
        };
        let store = HpoStore::new(r.clone(), 0);
        let one = PipelineCandidate::new(["gaussian_nb"]);
        let out = optimize_candidate(&ctx, &one, &[sig(0.0)], 1, &store, 0).unwrap();
        assert_eq!(out.trials.len(), 1);
        assert_eq!(store.get_instance("gaussian_nb", &sig(0.0)).unwrap().lock().unwrap().n_observe_calls(), 1);

        let three = PipelineCandidate::new(["standard_scaler", "minmax_scaler", "knn"]);
        let sigs = [sig(1.0), sig(2.0), sig(3.0)];
        let out = optimize_candidate(&ctx, &three, &sigs, 2, &store, 0).unwrap();
        assert_eq!(out.trials.len(), 2);
        let total: usize = three
            .steps
            .iter()
            .zip(&sigs)
            .map(|(s, g)| store.get_instance(s, g).unwrap().lock().unwrap().n_observe_calls())
            .sum();
        assert_eq!(total, 6);
    }

    #[test]
    fn failures_observed_as_worst_loss() {
        let r = builtin_registry();
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let d = Dataset::from_rows(&["x"], &rows, (0..20).map(|i| i % 2).collect(), 2).unwrap();
        let ctx = EvalContext {
            registry: &r,
            train: &d,
            valid: &d,
            metric: Metric::Accuracy,
            timeout: Duration::from_secs(10),
            deadline: None,
        };
        let store = HpoStore::new(r.clone(), 0);
        let c = PipelineCandidate::new(["pca", "knn"]);
        let out = optimize_candidate(&ctx, &c, &[sig(0.0), sig(1.0)], 3, &store, 0).unwrap();
        assert_eq!(out.trials.len(), 3);
        let inst = store.get_instance("pca", &sig(0.0)).unwrap();
        let inst = inst.lock().unwrap();
        for (o, t) in inst.observations().iter().zip(&out.trials) {
            if t.error.is_some() {
                assert_eq!(o.loss, 1.0);
            }
        }
        assert!(out.trials.iter().any(|t| t.error.is_some()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn suggestions_stay_in_space(seed in 0u64..1000, losses in proptest::collection::vec(0.0f64..1.0, 0..30)) {
            let r = builtin_registry();
            for spec in r.specs() {
                let mut inst = HpoInstance::new(0, &spec.name, sig(0.0), spec.space.clone(), seed);
                for l in &losses {
                    let c = inst.suggest();
                    prop_assert!(spec.space.validate(&c).is_ok(), "{} {:?}", spec.name, c);
                    inst.observe(c, *l).unwrap();
                }
                let c = inst.suggest();
                prop_assert!(spec.space.validate(&c).is_ok());
            }
        }
    }
}
