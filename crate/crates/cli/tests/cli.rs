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

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pipeforge"));
    c.env_remove("PIPEFORGE_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn blobs_csv() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/blobs.csv")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["generate", "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

/// Fits a short deterministic run with a single evaluation per visit.
fn small_run(dir: &Path, data: &Path, evals: &str, seed: &str) -> PathBuf {
    let conf = dir.join("small.conf");
    std::fs::write(&conf, "n_hpo_per_visit = 1\n").unwrap();
    let out = dir.join(format!("run{evals}"));
    let o = run(&[
        "fit", "--config", s(&conf), "--data", s(data), "--budget", "60", "--max-evaluations", evals, "--out", s(&out),
        "--seed", seed,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

#[test]
fn build_metabase_is_deterministic_and_reports_counts() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["build-metabase", "--corpus", "builtin", "--out", s(out), "--max-depth", "2", "--seed", "5"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let err = stderr(&o);
        let records: usize = err
            .lines()
            .next()
            .and_then(|l| l.split(", ").last())
            .and_then(|c| c.split_whitespace().next())
            .and_then(|n| n.parse().ok())
            .expect("summary line");
        assert!(records > 0, "{err}");
        assert!(err.contains("blobs_k2: depth 1:"), "{err}");
    }
    for f in ["records.jsonl", "surrogates.json"] {
        assert!(std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn build_metabase_rejects_depth_six() {
    let t = tempfile::tempdir().unwrap();
    let o = run(&["build-metabase", "--corpus", "builtin", "--out", s(&t.path().join("m")), "--max-depth", "6"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("max depth is 5"), "{}", stderr(&o));
}

#[test]
fn build_metabase_corpus_errors() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("m");
    let o = run(&["build-metabase", "--corpus", s(&t.path().join("absent")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let empty = t.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = run(&["build-metabase", "--corpus", s(&empty), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn build_metabase_from_csv_directory() {
    let t = tempfile::tempdir().unwrap();
    let corpus = t.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    generate(&corpus, "a.csv", &["--kind", "blobs", "--rows", "80", "--features", "3", "--seed", "1"]);
    generate(&corpus, "b.csv", &["--kind", "moons", "--rows", "80", "--classes", "3", "--seed", "2"]);
    let out = t.path().join("m");
    let o = run(&["build-metabase", "--corpus", s(&corpus), "--out", s(&out), "--max-depth", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let records = std::fs::read_to_string(out.join("records.jsonl")).unwrap();
    assert!(records.contains("\"a\"") && records.contains("\"b\""));
}

#[test]
fn fit_on_bundled_blobs_for_thirty_seconds() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("run");
    let o = run(&["fit", "--data", s(&blobs_csv()), "--budget", "30", "--out", s(&out), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = String::from_utf8(o.stdout).unwrap();
    let evals: usize = line
        .split_whitespace()
        .find_map(|w| w.strip_prefix("evaluations="))
        .and_then(|v| v.parse().ok())
        .expect("summary line");
    assert!(evals >= 5, "{line}");
    for f in ["model.json", "evaluations.jsonl", "tree.json", "config.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn fit_error_exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let three = generate(t.path(), "k3.csv", &["--kind", "blobs", "--rows", "90", "--classes", "3"]);
    let o = run(&["fit", "--data", s(&three), "--metric", "roc_auc", "--budget", "5", "--out", s(&t.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("roc_auc requires binary target"), "{}", stderr(&o));

    let o = run(&["fit", "--data", s(&blobs_csv()), "--budget", "0", "--out", s(&t.path().join("r"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let o = run(&["fit", "--data", s(&t.path().join("nope.csv")), "--budget", "1", "--out", s(&t.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["fit", "--data", s(&blobs_csv()), "--target", "label", "--budget", "1", "--out", s(&t.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`label`"));
}

#[test]
fn config_file_unknown_key_is_named() {
    let t = tempfile::tempdir().unwrap();
    let conf = t.path().join("bad.conf");
    std::fs::write(&conf, "metric = accuracy\nbudgte = 5\n").unwrap();
    let o = run(&["fit", "--config", s(&conf), "--data", s(&blobs_csv()), "--out", s(&t.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key `budgte`"), "{}", stderr(&o));
}

#[test]
fn config_values_apply_and_flags_override() {
    let t = tempfile::tempdir().unwrap();
    let conf = t.path().join("run.conf");
    std::fs::write(&conf, "# short run\nmetric = accuracy\nbudget = 60\nmax_evaluations = 6\nseed = 9\n").unwrap();
    let out = t.path().join("r");
    let o = run(&["fit", "--config", s(&conf), "--data", s(&blobs_csv()), "--out", s(&out), "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["metric"], "accuracy");
    assert_eq!(cfg["seed"], 4);
    assert_eq!(cfg["max_evaluations"], 6);
}

#[test]
fn seed_env_var_is_a_fallback() {
    let t = tempfile::tempdir().unwrap();
    let (a, b, c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    let data = blobs_csv();
    let base = ["fit", "--data", s(&data), "--budget", "60", "--max-evaluations", "8"];
    let with = |out: &Path, seed_flag: Option<&str>, env: Option<&str>| {
        let mut cmd = bin();
        cmd.args(base).args(["--out", s(out)]);
        if let Some(v) = seed_flag {
            cmd.args(["--seed", v]);
        }
        if let Some(v) = env {
            cmd.env("PIPEFORGE_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        std::fs::read(out.join("evaluations.jsonl")).unwrap()
    };
    let by_env = with(&a, None, Some("12"));
    let by_flag = with(&b, Some("12"), None);
    let overridden = with(&c, Some("12"), Some("99"));
    assert!(by_env == by_flag);
    assert!(by_flag == overridden);
}

#[test]
fn predict_round_trip_and_errors() {
    let t = tempfile::tempdir().unwrap();
    let runs = small_run(t.path(), &blobs_csv(), "10", "3");
    let out = t.path().join("pred.csv");
    let o = run(&["predict", "--model", s(&runs), "--data", s(&blobs_csv()), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("row,label,p_0,p_1"));
    let rows: Vec<&str> = lines.collect();
    let n_train = std::fs::read_to_string(blobs_csv()).unwrap().lines().count() - 1;
    assert_eq!(rows.len(), n_train);
    for r in rows {
        let p: f64 = r.split(',').skip(2).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((p - 1.0).abs() < 1e-6, "{r}");
    }

    let o = run(&["predict", "--model", s(&t.path().join("nothing")), "--data", s(&blobs_csv()), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));

    let other = generate(t.path(), "other.csv", &["--kind", "moons", "--rows", "40"]);
    let o = run(&["predict", "--model", s(&runs), "--data", s(&other), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("x2") && err.contains("x3"), "{err}");
}

fn frequency_rows(report: &str) -> Vec<f64> {
    report
        .lines()
        .skip_while(|l| !l.starts_with("selection frequency"))
        .skip(1)
        .take_while(|l| !l.trim().is_empty())
        .map(|l| {
            let cells = l.split_once(": ").unwrap().1;
            cells.split(", ").map(|c| c.rsplit(' ').next().unwrap().parse::<f64>().unwrap()).sum()
        })
        .collect()
}

#[test]
fn report_on_a_single_evaluation() {
    let t = tempfile::tempdir().unwrap();
    let runs = small_run(t.path(), &blobs_csv(), "1", "1");
    let evals = std::fs::read_to_string(runs.join("evaluations.jsonl")).unwrap();
    assert_eq!(evals.lines().count(), 1);
    let steps = evals.split("\"candidate\":[").nth(1).unwrap().split(']').next().unwrap().split(',').count();
    let o = run(&["report", "--run", s(&runs)]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with(&format!("mean pipeline length: {steps}.000")), "{text}");
}

#[test]
fn report_frequencies_and_dot_output() {
    let t = tempfile::tempdir().unwrap();
    let runs = small_run(t.path(), &blobs_csv(), "40", "3");
    let dot = t.path().join("tree.dot");
    let o = run(&["report", "--run", s(&runs), "--dot", s(&dot)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let sums = frequency_rows(&text);
    assert!(!sums.is_empty());
    for v in sums {
        assert!((v - 1.0).abs() < 0.01, "{text}");
    }
    assert!(text.contains("top pipelines:") && text.contains("edge visits:"));

    let graph = std::fs::read_to_string(&dot).unwrap();
    let parsed = graphviz_rust::parse(&graph).expect("valid DOT");
    match parsed {
        graphviz_rust::dot_structures::Graph::DiGraph { stmts, .. } => assert!(stmts.len() > 2),
        other => panic!("expected a digraph, got {other:?}"),
    }
}

#[test]
fn report_rejects_corrupt_tree() {
    let t = tempfile::tempdir().unwrap();
    let runs = small_run(t.path(), &blobs_csv(), "2", "3");
    std::fs::write(runs.join("tree.json"), "{ not json").unwrap();
    let o = run(&["report", "--run", s(&runs)]);
    assert_eq!(o.status.code(), Some(2));
}
