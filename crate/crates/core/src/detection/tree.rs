//! CART classification trees (Gini impurity) and their bootstrap-aggregated
//! ensemble.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DetectError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { class: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> u8 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn num_splits(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Split { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, at: usize) -> usize {
            match t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }
}

fn gini(ones: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = ones as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

/// Grow a tree breadth-first until nodes are pure, no split reduces
/// impurity, or `max_splits` is reached. Minimum leaf size is 1.
pub fn fit_tree(x: &[Vec<f64>], y: &[u8], rows: &[usize], max_splits: usize) -> DecisionTree {
    let d = x.first().map_or(0, Vec::len);
    let majority = |idx: &[usize]| -> u8 {
        let ones = idx.iter().filter(|&&i| y[i] == 1).count();
        u8::from(2 * ones >= idx.len())
    };
    let mut nodes = vec![Node::Leaf { class: majority(rows) }];
    let mut queue = std::collections::VecDeque::new();
    queue.push_back((0usize, rows.to_vec()));
    let mut splits = 0;
    let mut order: Vec<usize> = Vec::new();
    while let Some((at, idx)) = queue.pop_front() {
        if splits >= max_splits {
            break;
        }
        let n = idx.len();
        let ones = idx.iter().filter(|&&i| y[i] == 1).count();
        if ones == 0 || ones == n {
            continue;
        }
        let parent = gini(ones, n) * n as f64;
        // (weighted impurity, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        for f in 0..d {
            order.clear();
            order.extend_from_slice(&idx);
            order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            let mut left_ones = 0;
            for k in 0..n - 1 {
                left_ones += usize::from(y[order[k]] == 1);
                let (lo, hi) = (x[order[k]][f], x[order[k + 1]][f]);
                if lo == hi {
                    continue;
                }
                let nl = k + 1;
                let imp = gini(left_ones, nl) * nl as f64 + gini(ones - left_ones, n - nl) * (n - nl) as f64;
                if best.is_none_or(|(b, _, _)| imp < b - 1e-12) {
                    best = Some((imp, f, lo + 0.5 * (hi - lo)));
                }
            }
        }
        let Some((imp, feature, threshold)) = best else { continue };
        if imp >= parent - 1e-12 {
            continue;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][feature] <= threshold);
        let left = nodes.len();
        nodes.push(Node::Leaf { class: majority(&l) });
        nodes.push(Node::Leaf { class: majority(&r) });
        nodes[at] = Node::Split { feature, threshold, left, right: left + 1 };
        splits += 1;
        queue.push_back((left, l));
        queue.push_back((left + 1, r));
    }
    DecisionTree { nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggedTreesModel {
    pub trees: Vec<DecisionTree>,
    pub seeds: Vec<u64>,
}

impl BaggedTreesModel {
    pub fn votes(&self, x: &[f64]) -> usize {
        self.trees.iter().filter(|t| t.predict(x) == 1).count()
    }

    /// Majority class; a tied vote goes to class 1.
    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(2 * self.votes(x) >= self.trees.len())
    }
}

/// Bootstrap aggregation: each learner sees `n` rows drawn with replacement
/// from its own seeded stream.
pub fn train_bagged_trees(
    x: &[Vec<f64>],
    y: &[u8],
    n_learners: usize,
    max_splits: usize,
    seed: u64,
) -> Result<BaggedTreesModel, DetectError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(DetectError::EmptyDataset);
    }
    let n = x.len();
    let seeds: Vec<u64> = (0..n_learners as u64).map(|k| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k)).collect();
    let trees = seeds
        .iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            fit_tree(x, y, &rows, max_splits)
        })
        .collect();
    Ok(BaggedTreesModel { trees, seeds })
}
