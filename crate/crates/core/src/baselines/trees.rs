//! Bagged Gini decision trees.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::tensor::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 50,
            max_depth: 12,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Most frequent class, lowest label on ties.
fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (l, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = l;
        }
    }
    best
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    classes: usize,
    max_depth: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    /// Best `(feature, threshold, impurity)` over all features, midpoints
    /// between consecutive distinct values.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        let mut total = vec![0usize; self.classes];
        for &i in idx {
            total[self.y[i]] += 1;
        }
        let parent = gini(&total, n);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        let dims = self.x[idx[0]].len();
        for f in 0..dims {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = vec![0usize; self.classes];
            for pos in 0..n - 1 {
                left[self.y[order[pos]]] += 1;
                let (lo, hi) = (self.x[order[pos]][f], self.x[order[pos + 1]][f]);
                if lo == hi {
                    continue;
                }
                let nl = pos + 1;
                let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                let imp = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
                if imp < parent - 1e-12 && best.is_none_or(|b| imp < b.2) {
                    best = Some((f, lo + (hi - lo) / 2.0, imp));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        let mut counts = vec![0usize; self.classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf(majority(&counts)));
        if pure || depth >= self.max_depth || idx.len() < 2 {
            return slot;
        }
        let Some((feature, threshold, _)) = self.best_split(idx) else {
            return slot;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }
}

impl DecisionTree {
    /// Greedy Gini tree over the rows `idx` (repeats allowed).
    pub fn fit(x: &[Vec<f64>], y: &[usize], idx: &[usize], classes: usize, max_depth: usize) -> Result<Self> {
        if idx.is_empty() {
            return config_err("decision tree needs at least one training row");
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
            return config_err(format!("label {bad} outside {classes} classes"));
        }
        let mut b = Builder {
            x,
            y,
            classes,
            max_depth,
            nodes: Vec::new(),
        };
        b.grow(idx, 0);
        Ok(Self { nodes: b.nodes })
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(c) => return c,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug)]
pub struct BaggedTrees {
    trees: Vec<DecisionTree>,
    classes: usize,
}

impl BaggedTrees {
    /// Each tree sees a bootstrap resample drawn from its own derived stream.
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, cfg: &ForestConfig) -> Result<Self> {
        if cfg.trees == 0 {
            return config_err("bagging needs at least one tree");
        }
        if x.is_empty() || x.len() != y.len() {
            return config_err("bagging needs matching, non-empty features and labels");
        }
        let n = x.len();
        let trees = (0..cfg.trees)
            .map(|t| {
                let mut rng = SeededRng::derive(cfg.seed, t as u64);
                let idx: Vec<usize> = (0..n).map(|_| rng.index(n)).collect();
                DecisionTree::fit(x, y, &idx, classes, cfg.max_depth)
            })
            .collect::<Result<_>>()?;
        Ok(Self { trees, classes })
    }

    /// Majority vote, lowest label on ties.
    pub fn predict(&self, row: &[f64]) -> usize {
        let mut votes = vec![0usize; self.classes];
        for t in &self.trees {
            votes[t.predict(row)] += 1;
        }
        majority(&votes)
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }
}
