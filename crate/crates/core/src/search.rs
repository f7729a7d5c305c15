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

//! Monte-Carlo tree search over sequential pipeline prefixes.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal as Gaussian};
use serde::{Deserialize, Serialize};

use crate::metafeatures::MetaFeatureVector;
use crate::rng::Rng;
use crate::steps::Registry;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SearchError {
    #[error("depth {depth} exceeds the maximum pipeline length {l_max}")]
    DepthExceeded { depth: usize, l_max: usize },
    #[error("invalid policy parameters: {0}")]
    InvalidParams(String),
    #[error("edge `{action}` of node {node} cannot be expanded ({reason})")]
    NotExpandable {
        node: usize,
        action: String,
        reason: &'static str,
    },
    #[error("no such node {0}")]
    NoSuchNode(usize),
}

/// Performance prior `N(mean, std)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normal {
    pub mean: f64,
    pub std: f64,
}

impl Normal {
    pub const UNINFORMATIVE: Normal = Normal { mean: 0.5, std: 0.25 };

    pub fn new(mean: f64, std: f64) -> Self {
        Self { mean, std: std.max(0.0) }
    }

    /// One draw clamped to `[0, 1]`.
    pub fn draw_clamped(&self, rng: &mut Rng) -> f64 {
        let v = if self.std > 0.0 && self.std.is_finite() {
            Gaussian::new(self.mean, self.std).map(|g| g.sample(rng)).unwrap_or(self.mean)
        } else {
            self.mean
        };
        if v.is_nan() {
            0.5
        } else {
            v.clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub l_max: usize,
    pub c_overfit: f64,
    pub w: f64,
    pub e_max: usize,
    /// Total optimization time in seconds.
    pub t_max: f64,
    pub n_hpo_per_visit: usize,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            l_max: 5,
            c_overfit: 2.0,
            w: 0.6,
            e_max: 3,
            t_max: 60.0,
            n_hpo_per_visit: 2,
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidParams(m.to_string()));
        if self.l_max == 0 {
            return bad("l_max must be at least 1");
        }
        if !(self.c_overfit > 1.0) {
            return bad("c_overfit must exceed 1");
        }
        if !(self.w >= 0.0) {
            return bad("w must be non-negative");
        }
        if self.e_max == 0 {
            return bad("e_max must be at least 1");
        }
        if !(self.t_max > 0.0) {
            return bad("t_max must be positive");
        }
        if self.n_hpo_per_visit == 0 {
            return bad("n_hpo_per_visit must be at least 1");
        }
        Ok(())
    }
}

/// `P/(1+N) * sum(nu)` for visited actions; an unvisited action gets one
/// clamped draw from the prior instead.
pub fn exploitation_q(prior: Normal, n: u64, sum_nu: f64, rng: &mut Rng) -> f64 {
    if n == 0 {
        return prior.draw_clamped(rng);
    }
    prior.mean.clamp(0.0, 1.0) / (1.0 + n as f64) * sum_nu
}

/// `sqrt(total) / (1 + N)`.
pub fn exploration_u(n: u64, total: u64) -> f64 {
    (total as f64).sqrt() / (1.0 + n as f64)
}

/// `1 - c^depth / c^l_max`.
pub fn overfit_penalty(depth: usize, params: &PolicyParams) -> Result<f64, SearchError> {
    if depth > params.l_max {
        return Err(SearchError::DepthExceeded {
            depth,
            l_max: params.l_max,
        });
    }
    Ok(1.0 - params.c_overfit.powi(depth as i32) / params.c_overfit.powi(params.l_max as i32))
}

/// `w * (exp((t_max - t) / t_max) - 1)` with `t` clamped to `[0, t_max]`.
pub fn greediness(t: f64, params: &PolicyParams) -> f64 {
    let t = t.clamp(0.0, params.t_max);
    params.w * (((params.t_max - t) / params.t_max).exp() - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeState {
    Open,
    /// The step failed on this prefix.
    Dead,
    /// The step left the meta-features unchanged.
    Ineffective,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub visits: u64,
    pub reward_sum: f64,
    pub child: Option<usize>,
    pub state: EdgeState,
    pub prior: Option<Normal>,
}

impl Edge {
    fn new() -> Self {
        Self {
            visits: 0,
            reward_sum: 0.0,
            child: None,
            state: EdgeState::Open,
            prior: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub parent: Option<usize>,
    pub prefix: Vec<String>,
    pub meta: MetaFeatureVector,
    pub edges: BTreeMap<String, Edge>,
    pub visits: u64,
    pub reward_sum: f64,
    pub best_reward: f64,
    pub terminal: bool,
    pub dead: bool,
}

impl Node {
    pub fn depth(&self) -> usize {
        self.prefix.len()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.reward_sum / self.visits as f64
        }
    }

    pub fn total_edge_visits(&self) -> u64 {
        self.edges.values().map(|e| e.visits).sum()
    }
}

/// Materializes a prefix and returns its meta-features, or the reason the
/// prefix is inapplicable.
pub trait Expander {
    fn expand(&self, prefix: &[String]) -> Result<MetaFeatureVector, String>;
}

impl<F: Fn(&[String]) -> Result<MetaFeatureVector, String>> Expander for F {
    fn expand(&self, prefix: &[String]) -> Result<MetaFeatureVector, String> {
        self(prefix)
    }
}

/// Prior performance of applying an action in a state.
pub type PriorFn<'a> = dyn Fn(&MetaFeatureVector, &str) -> Normal + 'a;

#[derive(Debug, Clone, PartialEq)]
pub enum Descent {
    /// A terminal node whose own reward beats every child score.
    Abort(usize),
    /// An unexpanded edge.
    Expand(usize, String),
    /// Every branch is dead.
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpandFailure {
    Dead,
    Ineffective,
}

/// Scored legal action of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionScore {
    pub action: String,
    pub score: f64,
    pub visits: u64,
}

pub struct SearchTree {
    params: PolicyParams,
    /// Step names in lexicographic order with their classifier flag.
    actions: Vec<(String, bool)>,
    nodes: Vec<Node>,
    expansions: u64,
}

impl SearchTree {
    pub fn new(registry: &Registry, params: PolicyParams, root_meta: MetaFeatureVector) -> Result<Self, SearchError> {
        params.validate()?;
        let mut actions: Vec<(String, bool)> = registry.names().map(|n| (n.to_string(), registry.is_classifier(n))).collect();
        actions.sort();
        let root = Node {
            id: 0,
            parent: None,
            prefix: Vec::new(),
            meta: root_meta,
            edges: BTreeMap::new(),
            visits: 0,
            reward_sum: 0.0,
            best_reward: 0.0,
            terminal: false,
            dead: false,
        };
        Ok(Self {
            params,
            actions,
            nodes: vec![root],
            expansions: 0,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn expansions(&self) -> u64 {
        self.expansions
    }

    fn is_classifier(&self, name: &str) -> bool {
        self.actions.iter().any(|(n, c)| n == name && *c)
    }

    /// Whether only classifiers may follow `prefix`.
    pub fn classifier_forced(&self, prefix: &[String]) -> bool {
        let trailing = prefix.iter().rev().take_while(|s| !self.is_classifier(s)).count();
        prefix.len() + 1 >= self.params.l_max || trailing >= self.params.e_max
    }

    /// Legal, not yet failed actions of `node` in lexicographic order.
    pub fn legal_actions(&self, node: usize) -> Vec<&str> {
        let n = &self.nodes[node];
        if n.depth() >= self.params.l_max {
            return Vec::new();
        }
        let forced = self.classifier_forced(&n.prefix);
        self.actions
            .iter()
            .filter(|(_, clf)| !forced || *clf)
            .filter(|(a, _)| n.edges.get(a).map_or(true, |e| e.state == EdgeState::Open))
            .map(|(a, _)| a.as_str())
            .collect()
    }

    /// Policy scores `o(s) * (Q + c(t) * U)` of every legal action.
    pub fn score_actions(&mut self, node: usize, prior_fn: &PriorFn<'_>, t: f64, rng: &mut Rng) -> Vec<ActionScore> {
        let legal: Vec<String> = self.legal_actions(node).into_iter().map(str::to_string).collect();
        let o = overfit_penalty(self.nodes[node].depth(), &self.params).expect("node depth within l_max");
        let c = greediness(t, &self.params);
        let total = self.nodes[node].total_edge_visits();
        let mut out = Vec::with_capacity(legal.len());
        for a in legal {
            let meta = &self.nodes[node].meta;
            let cached = self.nodes[node].edges.get(&a).and_then(|e| e.prior);
            let prior = cached.unwrap_or_else(|| prior_fn(meta, &a));
            let edge = self.nodes[node].edges.entry(a.clone()).or_insert_with(Edge::new);
            edge.prior = Some(prior);
            let q = exploitation_q(prior, edge.visits, edge.reward_sum, rng);
            let u = exploration_u(edge.visits, total);
            out.push(ActionScore {
                action: a,
                score: o * (q + c * u),
                visits: edge.visits,
            });
        }
        out
    }

    /// Argmax by score, then fewest visits, then name.
    pub fn pick(scores: &[ActionScore]) -> Option<&ActionScore> {
        scores.iter().reduce(|best, s| {
            let better = s.score > best.score
                || (s.score == best.score && (s.visits < best.visits || (s.visits == best.visits && s.action < best.action)));
            if better {
                s
            } else {
                best
            }
        })
    }

    pub fn select_action(&mut self, node: usize, prior_fn: &PriorFn<'_>, t: f64, rng: &mut Rng) -> Option<String> {
        let scores = self.score_actions(node, prior_fn, t, rng);
        Self::pick(&scores).map(|s| s.action.clone())
    }

    fn mark_dead(&mut self, node: usize) {
        self.nodes[node].dead = true;
        if let Some(p) = self.nodes[node].parent {
            let action = self.nodes[node].prefix.last().expect("non-root has an action").clone();
            if let Some(e) = self.nodes[p].edges.get_mut(&action) {
                e.state = EdgeState::Dead;
            }
        }
    }

    pub fn descend(&mut self, prior_fn: &PriorFn<'_>, t: f64, rng: &mut Rng) -> Descent {
        let mut cur = 0;
        loop {
            if self.nodes[0].dead {
                return Descent::Exhausted;
            }
            let scores = self.score_actions(cur, prior_fn, t, rng);
            let node = &self.nodes[cur];
            let Some(best) = Self::pick(&scores) else {
                if node.terminal {
                    return Descent::Abort(cur);
                }
                self.mark_dead(cur);
                cur = 0;
                continue;
            };
            if node.terminal && node.visits > 0 {
                let o = overfit_penalty(node.depth(), &self.params).expect("node depth within l_max");
                let own = o * node.mean_reward();
                if scores.iter().all(|s| own > s.score) {
                    return Descent::Abort(cur);
                }
            }
            match node.edges.get(&best.action).and_then(|e| e.child) {
                Some(child) => cur = child,
                None => return Descent::Expand(cur, best.action.clone()),
            }
        }
    }

    /// Creates the child reached by `action`, or marks the edge failed.
    pub fn expand(
        &mut self,
        node: usize,
        action: &str,
        expander: &dyn Expander,
    ) -> Result<Result<usize, ExpandFailure>, SearchError> {
        let not = |reason| SearchError::NotExpandable {
            node,
            action: action.to_string(),
            reason,
        };
        let n = self.nodes.get(node).ok_or(SearchError::NoSuchNode(node))?;
        if let Some(e) = n.edges.get(action) {
            if e.child.is_some() {
                return Err(not("already expanded"));
            }
            if e.state != EdgeState::Open {
                return Err(not("edge is dead or ineffective"));
            }
        }
        if !self.legal_actions(node).contains(&action) {
            return Err(not("action not legal at this depth"));
        }
        let mut prefix = n.prefix.clone();
        prefix.push(action.to_string());
        self.expansions += 1;
        let outcome = expander.expand(&prefix);
        let edge = self.nodes[node].edges.entry(action.to_string()).or_insert_with(Edge::new);
        let meta = match outcome {
            Err(reason) => {
                log::debug!("pruned {}: {reason}", prefix.join(" -> "));
                edge.state = EdgeState::Dead;
                return Ok(Err(ExpandFailure::Dead));
            }
            Ok(m) => m,
        };
        if meta == self.nodes[node].meta {
            self.nodes[node].edges.get_mut(action).expect("edge exists").state = EdgeState::Ineffective;
            return Ok(Err(ExpandFailure::Ineffective));
        }
        let id = self.nodes.len();
        let terminal = self.is_classifier(action);
        self.nodes.push(Node {
            id,
            parent: Some(node),
            prefix,
            meta,
            edges: BTreeMap::new(),
            visits: 0,
            reward_sum: 0.0,
            best_reward: 0.0,
            terminal,
            dead: false,
        });
        self.nodes[node].edges.get_mut(action).expect("edge exists").child = Some(id);
        Ok(Ok(id))
    }

    /// Extends `node` with policy-selected expansions until a classifier
    /// ends the prefix. Returns `None` when every completion failed.
    pub fn complete(
        &mut self,
        node: usize,
        prior_fn: &PriorFn<'_>,
        t: f64,
        rng: &mut Rng,
        expander: &dyn Expander,
    ) -> Option<usize> {
        let mut cur = node;
        loop {
            if self.nodes[cur].terminal {
                return Some(cur);
            }
            let Some(action) = self.select_action(cur, prior_fn, t, rng) else {
                self.mark_dead(cur);
                return None;
            };
            if let Some(child) = self.nodes[cur].edges.get(&action).and_then(|e| e.child) {
                cur = child;
                continue;
            }
            if let Ok(Ok(child)) = self.expand(cur, &action, expander) {
                cur = child;
            }
        }
    }

    /// Descends, expands and completes until a terminal node is reached.
    /// `None` means the search space is exhausted.
    pub fn next_candidate(
        &mut self,
        prior_fn: &PriorFn<'_>,
        t: f64,
        rng: &mut Rng,
        expander: &dyn Expander,
    ) -> Option<usize> {
        loop {
            match self.descend(prior_fn, t, rng) {
                Descent::Exhausted => return None,
                Descent::Abort(n) => return Some(n),
                Descent::Expand(n, a) => {
                    if let Ok(Ok(child)) = self.expand(n, &a, expander) {
                        if let Some(leaf) = self.complete(child, prior_fn, t, rng, expander) {
                            return Some(leaf);
                        }
                    }
                }
            }
        }
    }

    /// Node ids from the root to `leaf` inclusive.
    pub fn path(&self, leaf: usize) -> Vec<usize> {
        let mut out = vec![leaf];
        let mut cur = leaf;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Credits `reward` to every node on the root-to-leaf path and to each
    /// traversed edge.
    pub fn backpropagate(&mut self, leaf: usize, reward: f64) {
        let reward = reward.clamp(0.0, 1.0);
        let mut cur = leaf;
        loop {
            let n = &mut self.nodes[cur];
            n.visits += 1;
            n.reward_sum += reward;
            n.best_reward = n.best_reward.max(reward);
            let Some(p) = n.parent else { break };
            let action = n.prefix.last().expect("non-root has an action").clone();
            let e = self.nodes[p].edges.get_mut(&action).expect("edge on path");
            e.visits += 1;
            e.reward_sum += reward;
            cur = p;
        }
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeSnapshot {
                id: n.id,
                parent: n.parent,
                prefix: n.prefix.clone(),
                terminal: n.terminal,
                dead: n.dead,
                visits: n.visits,
                mean_reward: n.mean_reward(),
                best_reward: n.best_reward,
                signature_hash: format!("{:016x}", n.meta.signature().stable_hash()),
            })
            .collect();
        let edges = self
            .nodes
            .iter()
            .flat_map(|n| {
                n.edges.iter().filter(|(_, e)| e.child.is_some() || e.state != EdgeState::Open).map(move |(a, e)| {
                    EdgeSnapshot {
                        from: n.id,
                        to: e.child,
                        action: a.clone(),
                        visits: e.visits,
                        mean_reward: if e.visits == 0 { 0.0 } else { e.reward_sum / e.visits as f64 },
                        state: e.state,
                        prior: e.prior,
                    }
                })
            })
            .collect();
        TreeSnapshot { nodes, edges }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub id: usize,
    pub parent: Option<usize>,
    pub prefix: Vec<String>,
    pub terminal: bool,
    pub dead: bool,
    pub visits: u64,
    pub mean_reward: f64,
    pub best_reward: f64,
    pub signature_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSnapshot {
    pub from: usize,
    pub to: Option<usize>,
    pub action: String,
    pub visits: u64,
    pub mean_reward: f64,
    pub state: EdgeState,
    pub prior: Option<Normal>,
}

/// Serializable view of the search tree.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub nodes: Vec<NodeSnapshot>,
    pub edges: Vec<EdgeSnapshot>,
}
