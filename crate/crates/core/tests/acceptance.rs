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

//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any of them fails.

use std::collections::BTreeSet;
use std::time::Instant;

use pipeforge_core::corpus::{builtin_corpus, gaussian_blobs, missing_blobs, scaling_planted, SCALING_PLANTED_ID, SCALING_PLANTED_ROWS};
use pipeforge_core::data::{evaluate, stratified_split, Dataset, Metric};
use pipeforge_core::engine::{self, fit, RunConfig, RunResult, EVALUATIONS_FILE, MODEL_FILE};
use pipeforge_core::hpo::HpoInstance;
use pipeforge_core::metabase::{enumerate_corpus, leave_one_out_base, MetaBase, MetaBaseError};
use pipeforge_core::metafeatures::{MetaFeatureVector, N_META_FEATURES};
use pipeforge_core::pipeline::{execute, PipelineCandidate, DEFAULT_EVAL_TIMEOUT};
use pipeforge_core::rng::{hash_str, rng_for};
use pipeforge_core::search::{
    exploitation_q, exploration_u, greediness, overfit_penalty, Normal, PolicyParams, SearchTree,
};
use pipeforge_core::steps::{builtin_registry, Config, Domain, HyperparameterSpace, Param, Registry};
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn check(&mut self, id: &str, title: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {verdict}  {title}: {} [{secs:.1}s]", o.detail);
        if !o.pass {
            self.failed.push(id.to_string());
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn defaults(r: &Registry, steps: &[&str]) -> Vec<Config> {
    steps.iter().map(|s| r.get(s).unwrap().default.clone()).collect()
}

fn direct(r: &Registry, steps: &[&str], train: &Dataset, valid: &Dataset) -> f64 {
    let c = PipelineCandidate::new(steps.iter().copied());
    execute(r, &c, &defaults(r, steps), train, valid, Metric::BalancedAccuracy, 0, DEFAULT_EVAL_TIMEOUT)
        .map(|m| m.reward)
        .unwrap_or(0.0)
}

fn has_scaler_before_knn(steps: &[String]) -> bool {
    let scaler = steps.iter().position(|s| s == "standard_scaler" || s == "minmax_scaler");
    let knn = steps.iter().rposition(|s| s == "knn");
    matches!((scaler, knn), (Some(a), Some(b)) if a < b)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let p = PolicyParams {
        t_max: 60.0,
        ..PolicyParams::default()
    };
    let mut rng = rng_for(0, 0);
    let q = exploitation_q(Normal::new(0.8, 0.1), 1, 0.6, &mut rng);
    let u = exploration_u(2, 16);
    let o2 = overfit_penalty(2, &p).unwrap();
    let o5 = overfit_penalty(5, &p).unwrap();
    let c0 = greediness(0.0, &p);
    let c_end = greediness(p.t_max, &p);
    let checks = [
        (q, 0.8 / 2.0 * 0.6),
        (u, 16f64.sqrt() / 3.0),
        (o2, 1.0 - 4.0 / 32.0),
        (o5, 0.0),
        (c0, 0.6 * (std::f64::consts::E - 1.0)),
        (c_end, 0.0),
    ];
    let worst = checks.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 1.0,
        format!("Q={q} U={u} o2={o2} o5={o5} c0={c0} cT={c_end}, max error {worst:.1e}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let pre = ["standard_scaler", "minmax_scaler", "pca"];
    let cls = ["decision_tree", "gaussian_nb"];
    let names: Vec<&str> = pre.iter().chain(&cls).copied().collect();
    let reg = builtin_registry().restrict(&names).unwrap();
    let d = gaussian_blobs(100, 4, 2, 1.0, 3);
    let rep = match enumerate_corpus(&[("d".to_string(), d)], &reg, 2, Metric::BalancedAccuracy, 0.2, 0) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut all: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut frontier: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..2 {
        let mut next = Vec::new();
        for p in &frontier {
            for n in &names {
                let mut q = p.clone();
                q.push(n.to_string());
                all.insert(q.clone());
                next.push(q);
            }
        }
        frontier = next;
    }
    let terminated: BTreeSet<Vec<String>> =
        all.iter().filter(|s| cls.contains(&s.last().unwrap().as_str())).cloned().collect();
    let observed: BTreeSet<Vec<String>> = rep
        .records
        .iter()
        .zip(&rep.prefixes)
        .filter(|(r, _)| cls.contains(&r.algorithm.as_str()))
        .map(|(r, p)| {
            let mut s = p.clone();
            s.push(r.algorithm.clone());
            s
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let pass = rep.attempted == all.len()
        && rep.classifier_terminated == terminated.len()
        && observed == terminated
        && all.len() == 30
        && terminated.len() == 12
        && secs < 60.0;
    outcome(
        pass,
        format!(
            "attempted {} (oracle {}), classifier-terminated {} (oracle {}), sequence sets equal: {}",
            rep.attempted,
            all.len(),
            rep.classifier_terminated,
            terminated.len(),
            observed == terminated
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let space = HyperparameterSpace::new(vec![Param {
        name: "lambda".into(),
        domain: Domain::Uniform { lo: 0.0, hi: 1.0 },
    }]);
    let sig = MetaFeatureVector::zeros().signature();
    let lambda = |c: &Config| match c.0.get("lambda") {
        Some(pipeforge_core::steps::ParamValue::Float(v)) => *v,
        _ => f64::NAN,
    };
    let mut tpe = Vec::new();
    let mut random = Vec::new();
    for seed in 0..20u64 {
        let mut inst = HpoInstance::new(0, "quadratic", sig.clone(), space.clone(), seed);
        let mut best = f64::INFINITY;
        for _ in 0..50 {
            let c = inst.suggest();
            let loss = (lambda(&c) - 0.3).powi(2);
            best = best.min(loss);
            inst.observe(c, loss).unwrap();
        }
        tpe.push(best);
        let mut rng = rng_for(seed, 0x7261_6e64);
        let best_random = (0..50).map(|_| (rng.gen_range(0.0..=1.0) - 0.3f64).powi(2)).fold(f64::INFINITY, f64::min);
        random.push(best_random);
    }
    let (t, r) = (median(tpe), median(random));
    let secs = start.elapsed().as_secs_f64();
    outcome(t < r && t < 1e-3 && secs < 10.0, format!("median best TPE {t:.2e}, random {r:.2e}"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let reg = builtin_registry();
    let planted = ["standard_scaler", "pca", "knn"];
    let reward = |prefix: &[String]| {
        if prefix.len() == 3 && prefix.iter().zip(planted).all(|(a, b)| a == b) {
            return 0.95;
        }
        let matched = prefix.iter().zip(planted).take_while(|(a, b)| *a == b).count();
        0.1 + 0.2 * matched.min(2) as f64
    };
    let meta = |prefix: &[String]| -> Result<MetaFeatureVector, String> {
        let mut v = [0.0; N_META_FEATURES];
        v[0] = (hash_str(&prefix.join("/")) % 100_000) as f64;
        v[1] = prefix.len() as f64;
        Ok(MetaFeatureVector::from_values(v))
    };
    let flat = |_: &MetaFeatureVector, _: &str| Normal::UNINFORMATIVE;
    let mut hits = Vec::new();
    for seed in 0..10u64 {
        let params = PolicyParams {
            t_max: 300.0,
            ..PolicyParams::default()
        };
        let mut tree = SearchTree::new(&reg, params, meta(&[]).unwrap()).unwrap();
        let mut rng = rng_for(seed, 0x706c_616e);
        let mut found = None;
        for it in 0..300 {
            let Some(leaf) = tree.next_candidate(&flat, it as f64, &mut rng, &meta) else { break };
            let prefix = tree.node(leaf).prefix.clone();
            let r = reward(&prefix);
            tree.backpropagate(leaf, r);
            if r == 0.95 {
                found = Some(it + 1);
                break;
            }
        }
        hits.push(found);
    }
    let ok = hits.iter().filter(|h| h.is_some()).count();
    let secs = start.elapsed().as_secs_f64();
    let iters: Vec<String> = hits.iter().map(|h| h.map_or("-".into(), |v| v.to_string())).collect();
    outcome(ok >= 9 && secs < 30.0, format!("{ok}/10 seeds, iterations to incumbent [{}]", iters.join(" ")))
}

struct Runs {
    /// (label, ensemble validation reward, best single reward)
    ensemble_checks: Vec<(String, f64, f64)>,
    /// (label, elapsed, allowed)
    wall_checks: Vec<(String, f64, f64)>,
}

impl Runs {
    fn record(&mut self, label: String, res: &RunResult, wall: Option<f64>) {
        self.ensemble_checks.push((label.clone(), res.ensemble().valid_reward, res.best_single_reward));
        if let Some(limit) = wall {
            self.wall_checks.push((label, res.elapsed.as_secs_f64(), limit));
        }
    }
}

fn criterion_5(runs: &mut Runs) -> Outcome {
    let reg = builtin_registry();
    let mut oracle_ok = 0;
    let mut oracle = Vec::new();
    for seed in 0..10u64 {
        let d = scaling_planted(SCALING_PLANTED_ROWS, seed);
        let (tr, va) = stratified_split(&d, 0.2, seed).unwrap();
        let raw = direct(&reg, &["knn"], &tr, &va);
        let standard = direct(&reg, &["standard_scaler", "knn"], &tr, &va);
        let minmax = direct(&reg, &["minmax_scaler", "knn"], &tr, &va);
        if raw <= 0.7 && standard.max(minmax) >= 0.95 {
            oracle_ok += 1;
        }
        oracle.push(format!("{raw:.2}/{standard:.2}/{minmax:.2}"));
    }
    let results: Vec<(u64, Result<RunResult, String>)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..10u64)
            .map(|seed| {
                let reg = &reg;
                s.spawn(move || {
                    let d = scaling_planted(SCALING_PLANTED_ROWS, seed);
                    let mut cfg = RunConfig::default();
                    cfg.seed = seed;
                    cfg.policy.t_max = 120.0;
                    (seed, fit(&d, reg, &cfg, None).map_err(|e| e.to_string()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut ok = 0;
    let mut cells = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(res) => {
                let inc = res.incumbent();
                let good = has_scaler_before_knn(&inc.candidate.steps) && inc.reward >= 0.95;
                ok += good as usize;
                cells.push(format!("{seed}:{}{:.3}", if good { "+" } else { "-" }, inc.reward));
                let limit = 120.0 + DEFAULT_EVAL_TIMEOUT.as_secs_f64() + 5.0;
                runs.record(format!("scaling seed {seed}"), &res, Some(limit));
            }
            Err(e) => cells.push(format!("{seed}:error {e}")),
        }
    }
    outcome(
        oracle_ok == 10 && ok >= 8,
        format!(
            "oracle knn raw/standard/minmax {} ({oracle_ok}/10 hold); scaler->knn incumbents {ok}/10 [{}]",
            oracle.join(" "),
            cells.join(" ")
        ),
    )
}

fn criterion_6(runs: &mut Runs) -> Outcome {
    let reg = builtin_registry();
    let d = missing_blobs(6);
    let (train, test) = stratified_split(&d, 0.25, 6).unwrap();
    let baseline = direct(&reg, &["mean_mode_imputer", "decision_tree"], &train, &test);
    let mut cfg = RunConfig::default();
    cfg.seed = 6;
    cfg.policy.t_max = 60.0;
    let res = match fit(&train, &reg, &cfg, None) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    runs.record("missing blobs".into(), &res, Some(60.0 + DEFAULT_EVAL_TIMEOUT.as_secs_f64() + 5.0));
    let p = engine::predict(&res.model, &test).unwrap();
    let (_, held_out) = evaluate(Metric::BalancedAccuracy, test.target(), &p.proba).unwrap();
    let acc = held_out.value();
    outcome(
        acc >= 0.90 && acc >= baseline - 0.02,
        format!(
            "held-out balanced accuracy {acc:.4}, imputer+tree baseline {baseline:.4}, {} evaluations, ensemble of {}",
            res.evaluations.len(),
            res.ensemble().len()
        ),
    )
}

fn loo_base() -> Result<MetaBase, MetaBaseError> {
    let corpus = builtin_corpus(0);
    let report = enumerate_corpus(&corpus, &builtin_registry(), 2, Metric::BalancedAccuracy, 0.2, 0)?;
    leave_one_out_base(&report.records, SCALING_PLANTED_ID, 0)
}

fn criterion_7(base: &MetaBase, runs: &mut Runs) -> Outcome {
    const EVALS: usize = 300;
    let reg = builtin_registry();
    let mut with = Vec::new();
    let mut without = Vec::new();
    for seed in 0..10u64 {
        let d = scaling_planted(SCALING_PLANTED_ROWS, seed);
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.policy.t_max = 120.0;
        cfg.max_evaluations = Some(EVALS);
        for (prior, out) in [(true, &mut with), (false, &mut without)] {
            cfg.no_prior = !prior;
            match fit(&d, &reg, &cfg, Some(base)) {
                Ok(res) => {
                    out.push(res.evaluations_to_reach(0.95).unwrap_or(EVALS + 1) as f64);
                    runs.record(format!("ablation seed {seed} prior {prior}"), &res, None);
                }
                Err(e) => return outcome(false, format!("seed {seed}: {e}")),
            }
        }
    }
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
    let detail = format!("with prior [{}], without [{}]", fmt(&with), fmt(&without));
    let (a, b) = (median(with), median(without));
    outcome(a < b, format!("median evaluations to 0.95: with prior {a}, without {b}; {detail}"))
}

fn criterion_8(runs: &Runs) -> Outcome {
    let bad: Vec<String> = runs
        .ensemble_checks
        .iter()
        .filter(|(_, e, s)| e < s)
        .map(|(l, e, s)| format!("{l}: {e} < {s}"))
        .collect();
    outcome(
        bad.is_empty() && !runs.ensemble_checks.is_empty(),
        if bad.is_empty() {
            format!("ensemble >= best single on all {} runs", runs.ensemble_checks.len())
        } else {
            bad.join("; ")
        },
    )
}

fn criterion_9() -> Outcome {
    let reg = builtin_registry();
    let d = missing_blobs(9);
    let mut cfg = RunConfig::default();
    cfg.seed = 9;
    cfg.policy.t_max = 60.0;
    cfg.max_evaluations = Some(80);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        match fit(&d, &reg, &cfg, None) {
            Ok(res) => res.save(dir.path()).unwrap(),
            Err(e) => return outcome(false, e.to_string()),
        }
    }
    let same = |f: &str| std::fs::read(dirs[0].path().join(f)).unwrap() == std::fs::read(dirs[1].path().join(f)).unwrap();
    let (m, e) = (same(MODEL_FILE), same(EVALUATIONS_FILE));
    outcome(m && e, format!("{MODEL_FILE} identical: {m}, {EVALUATIONS_FILE} identical: {e}"))
}

fn criterion_10(base: &MetaBase) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    if let Err(e) = base.save(dir.path()) {
        return outcome(false, e.to_string());
    }
    let loaded = match MetaBase::load(dir.path()) {
        Ok(b) => b,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut rng = rng_for(10, 0);
    let algs: Vec<String> = builtin_registry().names().map(String::from).collect();
    let mut exact = 0;
    for _ in 0..50 {
        let mut v = [0.0; N_META_FEATURES];
        for x in v.iter_mut() {
            *x = rng.gen_range(-5.0..500.0);
        }
        let mf = MetaFeatureVector::from_values(v);
        let alg = &algs[rng.gen_range(0..algs.len())];
        let (a, b) = (base.prior(&mf, alg), loaded.prior(&mf, alg));
        if a.mean.to_bits() == b.mean.to_bits() && a.std.to_bits() == b.std.to_bits() {
            exact += 1;
        }
    }
    let path = dir.path().join("records.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"schema_version\":1", "\"schema_version\":99", 1)).unwrap();
    let rejected = matches!(MetaBase::load(dir.path()), Err(MetaBaseError::SchemaVersion { .. }));
    outcome(exact == 50 && rejected, format!("{exact}/50 priors bit-identical, schema mismatch rejected: {rejected}"))
}

fn criterion_11(runs: &mut Runs) -> Outcome {
    const BUDGET: usize = 1024 * 1024;
    let reg = builtin_registry();
    let d = missing_blobs(6);
    let (train, _) = stratified_split(&d, 0.25, 6).unwrap();
    let mut cfg = RunConfig::default();
    cfg.seed = 6;
    cfg.policy.t_max = 60.0;
    cfg.max_evaluations = Some(200);
    let full = fit(&train, &reg, &cfg, None);
    cfg.cache_budget_bytes = BUDGET;
    let small = fit(&train, &reg, &cfg, None);
    let (full, small) = match (full, small) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e.to_string()),
    };
    runs.record("cache default".into(), &full, None);
    runs.record("cache 1 MiB".into(), &small, None);
    let same_reward = full.ensemble().valid_reward == small.ensemble().valid_reward
        && full.incumbent().reward == small.incumbent().reward;
    let c = small.cache;
    let within = c.peak_bytes <= BUDGET + c.largest_entry;
    outcome(
        same_reward && within,
        format!(
            "final reward {:.4} vs {:.4}, peak {} bytes (budget {BUDGET}, largest entry {}), {} evictions, {} misses",
            full.ensemble().valid_reward,
            small.ensemble().valid_reward,
            c.peak_bytes,
            c.largest_entry,
            c.evictions,
            c.misses
        ),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut report = Report { failed: Vec::new() };
    let mut runs = Runs {
        ensemble_checks: Vec::new(),
        wall_checks: Vec::new(),
    };
    report.check("1", "policy arithmetic", criterion_1);
    report.check("2", "enumeration oracle", criterion_2);
    report.check("3", "TPE beats random search", criterion_3);
    report.check("4", "planted structure recovery", criterion_4);
    report.check("5", "scaling-planted end to end", || criterion_5(&mut runs));
    report.check("6", "missing-data end to end", || criterion_6(&mut runs));
    let base = loo_base();
    report.check("7", "meta-guidance ablation", || match &base {
        Ok(b) => criterion_7(b, &mut runs),
        Err(e) => outcome(false, e.to_string()),
    });
    report.check("9", "determinism", criterion_9);
    report.check("10", "meta-base round trip", || match &base {
        Ok(b) => criterion_10(b),
        Err(e) => outcome(false, e.to_string()),
    });
    report.check("11", "bounded intermediate cache", || criterion_11(&mut runs));
    report.check("8", "ensemble never worse than best single", || criterion_8(&runs));
    let late: Vec<String> = runs
        .wall_checks
        .iter()
        .filter(|(_, e, l)| e > l)
        .map(|(n, e, l)| format!("{n}: {e:.1}s > {l:.1}s"))
        .collect();
    println!(
        "invariant    {}  fit returns within budget + timeout + 5 s: {}",
        if late.is_empty() { "PASS" } else { "FAIL" },
        if late.is_empty() { format!("{} timed runs", runs.wall_checks.len()) } else { late.join("; ") }
    );
    if !late.is_empty() {
        report.failed.push("wall-clock".into());
    }
    if report.failed.is_empty() {
        println!("all acceptance criteria passed");
    } else {
        println!("failed: {}", report.failed.join(", "));
        std::process::exit(1);
    }
}
