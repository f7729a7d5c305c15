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

//! Summaries of a finished run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use pipeforge_core::engine::EvaluationRecord;
use pipeforge_core::search::{EdgeState, TreeSnapshot};

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    /// For each pipeline position, algorithm name to share of evaluated
    /// pipelines using it there.
    pub layers: Vec<BTreeMap<String, f64>>,
    pub mean_length: f64,
    /// Best reward per distinct pipeline, best first.
    pub top: Vec<(String, f64)>,
    pub edges: Vec<EdgeRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRow {
    pub from: String,
    pub action: String,
    pub visits: u64,
    pub mean_reward: f64,
    pub state: EdgeState,
}

fn prefix_label(prefix: &[String]) -> String {
    if prefix.is_empty() {
        "<root>".into()
    } else {
        prefix.join(" -> ")
    }
}

pub fn build(tree: &TreeSnapshot, evaluations: &[EvaluationRecord], top_n: usize) -> Report {
    let mut counts: Vec<BTreeMap<String, usize>> = Vec::new();
    let mut totals: Vec<usize> = Vec::new();
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    let mut length_sum = 0usize;
    for e in evaluations {
        length_sum += e.candidate.len();
        for (pos, step) in e.candidate.iter().enumerate() {
            if counts.len() <= pos {
                counts.push(BTreeMap::new());
                totals.push(0);
            }
            *counts[pos].entry(step.clone()).or_insert(0) += 1;
            totals[pos] += 1;
        }
        if let Some(r) = e.reward {
            let slot = best.entry(e.candidate.join(" -> ")).or_insert(f64::NEG_INFINITY);
            *slot = slot.max(r);
        }
    }
    let layers = counts
        .into_iter()
        .zip(&totals)
        .map(|(m, &t)| m.into_iter().map(|(k, c)| (k, c as f64 / t as f64)).collect())
        .collect();
    let mean_length = if evaluations.is_empty() {
        0.0
    } else {
        length_sum as f64 / evaluations.len() as f64
    };
    let mut top: Vec<(String, f64)> = best.into_iter().collect();
    top.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    top.truncate(top_n);

    let mut edges: Vec<EdgeRow> = tree
        .edges
        .iter()
        .filter(|e| e.visits > 0)
        .map(|e| EdgeRow {
            from: tree.nodes.get(e.from).map_or_else(|| format!("#{}", e.from), |n| prefix_label(&n.prefix)),
            action: e.action.clone(),
            visits: e.visits,
            mean_reward: e.mean_reward,
            state: e.state,
        })
        .collect();
    edges.sort_by(|a, b| b.visits.cmp(&a.visits).then_with(|| (&a.from, &a.action).cmp(&(&b.from, &b.action))));
    Report {
        layers,
        mean_length,
        top,
        edges,
    }
}

impl Report {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mean pipeline length: {:.3}", self.mean_length);
        let _ = writeln!(s, "\nselection frequency by position:");
        for (pos, layer) in self.layers.iter().enumerate() {
            let mut row: Vec<(&String, &f64)> = layer.iter().collect();
            row.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
            let cells: Vec<String> = row.iter().map(|(k, v)| format!("{k} {:.3}", v)).collect();
            let _ = writeln!(s, "  {}: {}", pos + 1, cells.join(", "));
        }
        let _ = writeln!(s, "\ntop pipelines:");
        for (i, (p, r)) in self.top.iter().enumerate() {
            let _ = writeln!(s, "  {:>2}. {r:.4}  {p}", i + 1);
        }
        let _ = writeln!(s, "\nedge visits:");
        let _ = writeln!(s, "  {:>6}  {:>8}  {:<11}  edge", "visits", "mean", "state");
        for e in &self.edges {
            let state = match e.state {
                EdgeState::Open => "open",
                EdgeState::Dead => "dead",
                EdgeState::Ineffective => "ineffective",
            };
            let _ = writeln!(
                s,
                "  {:>6}  {:>8.4}  {:<11}  {} => {}",
                e.visits, e.mean_reward, state, e.from, e.action
            );
        }
        s
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz rendering of the visited part of the search tree.
pub fn dot(tree: &TreeSnapshot) -> String {
    let visited = |id: usize| id == 0 || tree.nodes.get(id).is_some_and(|n| n.visits > 0);
    let mut s = String::from("digraph search {\n  node [shape=box];\n");
    for n in tree.nodes.iter().filter(|n| visited(n.id)) {
        let name = n.prefix.last().map_or("<root>", String::as_str);
        let label = quote(name);
        let label = format!("{}\\nN={} best={:.3}\"", &label[..label.len() - 1], n.visits, n.best_reward);
        let shape = if n.terminal { ", shape=ellipse" } else { "" };
        let _ = writeln!(s, "  n{} [label={label}{shape}];", n.id);
    }
    for e in &tree.edges {
        let Some(to) = e.to else { continue };
        if e.visits == 0 || !visited(e.from) || !visited(to) {
            continue;
        }
        let _ = writeln!(
            s,
            "  n{} -> n{} [label={}];",
            e.from,
            to,
            quote(&format!("{} ({})", e.action, e.visits))
        );
    }
    s.push_str("}\n");
    s
}
