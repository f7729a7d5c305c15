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

//! Gini classification trees and bagged forests of them.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features drawn per split; `None` considers all of them.
    pub max_features: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        proba: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTree {
    pub nodes: Vec<Node>,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / nf).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    k: usize,
    params: TreeParams,
    rng: Rng,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, counts: &[usize], n: usize) -> usize {
        let proba = if n == 0 {
            vec![1.0 / self.k as f64; self.k]
        } else {
            counts.iter().map(|&c| c as f64 / n as f64).collect()
        };
        self.nodes.push(Node::Leaf { proba });
        self.nodes.len() - 1
    }

    fn best_split(&mut self, rows: &[usize], counts: &[usize]) -> Option<(usize, f64)> {
        let p = self.x.first().map_or(0, |r| r.len());
        let mut features: Vec<usize> = (0..p).collect();
        if let Some(m) = self.params.max_features {
            features.shuffle(&mut self.rng);
            features.truncate(m.clamp(1, p.max(1)));
            features.sort_unstable();
        }
        let n = rows.len();
        let parent = gini(counts, n);
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for &f in &features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0usize; self.k];
            for i in 0..n - 1 {
                left[self.y[order[i]]] += 1;
                let (lo, hi) = (self.x[order[i]][f], self.x[order[i + 1]][f]);
                let n_left = i + 1;
                if lo == hi || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let right: Vec<usize> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                let impurity = (n_left as f64 * gini(&left, n_left)
                    + (n - n_left) as f64 * gini(&right, n - n_left))
                    / n as f64;
                let gain = parent - impurity;
                if best.map_or(true, |(g, _, _)| gain > g + 1e-12) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((gain, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let mut counts = vec![0usize; self.k];
        for &r in rows {
            counts[self.y[r]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf.max(1) {
            return self.leaf(&counts, rows.len());
        }
        let Some((feature, threshold)) = self.best_split(rows, &counts) else {
            return self.leaf(&counts, rows.len());
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { proba: Vec::new() });
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

impl ClassTree {
    pub fn fit(x: &[Vec<f64>], y: &[usize], k: usize, params: &TreeParams, seed: u64) -> Self {
        let rows: Vec<usize> = (0..x.len()).collect();
        Self::fit_rows(x, y, k, params, &rows, rng_for(seed, 0x7472_6565))
    }

    fn fit_rows(x: &[Vec<f64>], y: &[usize], k: usize, params: &TreeParams, rows: &[usize], rng: Rng) -> Self {
        let mut b = Builder {
            x,
            y,
            k: k.max(1),
            params: *params,
            rng,
            nodes: Vec::new(),
        };
        b.grow(rows, 0);
        Self { nodes: b.nodes }
    }

    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        match &self.nodes[self.leaf_of(row)] {
            Node::Leaf { proba } => proba.clone(),
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Index of the leaf node reached by `row`.
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { .. } => return at,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Bootstrap-aggregated trees using `sqrt(p)` features per split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassForest {
    pub trees: Vec<ClassTree>,
    pub n_classes: usize,
}

impl ClassForest {
    pub fn fit(x: &[Vec<f64>], y: &[usize], k: usize, trees: usize, max_depth: usize, seed: u64) -> Self {
        let n = x.len();
        let p = x.first().map_or(0, |r| r.len());
        let params = TreeParams {
            max_depth,
            min_leaf: 1,
            max_features: Some(((p as f64).sqrt().round() as usize).max(1)),
        };
        let trees = (0..trees.max(1))
            .map(|t| {
                let mut rng = rng_for(seed, 0x666f_7200 + t as u64);
                let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                ClassTree::fit_rows(x, y, k, &params, &rows, rng)
            })
            .collect();
        Self {
            trees,
            n_classes: k.max(1),
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (a, p) in acc.iter_mut().zip(t.predict_row(row)) {
                *a += p;
            }
        }
        let m = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        acc
    }
}
