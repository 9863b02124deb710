//! Random-forest regression: trees grown greedily on variance-reduction
//! splits over bootstrap resamples, prediction by averaging tree outputs.
//! Per-tree RNG streams make results independent of fitting schedule.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ForestParams;
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    trees: Vec<DecisionTree>,
}

struct TreeBuilder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    min_samples_leaf: usize,
    max_depth: Option<usize>,
    n_split_features: usize,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    /// Grows the subtree over `idx` (indices into x/y rows); returns node id.
    fn grow(&mut self, idx: &mut [usize], depth: usize, rng: &mut impl Rng) -> usize {
        let n = idx.len();
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let mean = sum / n as f64;
        let sq_sum: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let sse = sq_sum - sum * sum / n as f64;

        let depth_ok = self.max_depth.map_or(true, |d| depth < d);
        if !depth_ok || n < 2 * self.min_samples_leaf || sse <= 1e-12 {
            self.nodes.push(Node::Leaf { value: mean });
            return self.nodes.len() - 1;
        }

        // Candidate features: a random draw without replacement per node.
        let p = self.x.ncols();
        let mut feats: Vec<usize> = (0..p).collect();
        for k in 0..self.n_split_features.min(p) {
            let pick = rng.random_range(k..p);
            feats.swap(k, pick);
        }
        feats.truncate(self.n_split_features.min(p));

        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for &f in &feats {
            order.clear();
            order.extend_from_slice(idx);
            order.sort_by(|&a, &b| {
                self.x[(a, f)]
                    .partial_cmp(&self.x[(b, f)])
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            // Prefix scan: minimize SSE_left + SSE_right.
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for cut in 1..n {
                let i = order[cut - 1];
                left_sum += self.y[i];
                left_sq += self.y[i] * self.y[i];
                let a = self.x[(order[cut - 1], f)];
                let b = self.x[(order[cut], f)];
                if a == b || cut < self.min_samples_leaf || n - cut < self.min_samples_leaf {
                    continue;
                }
                let nl = cut as f64;
                let nr = (n - cut) as f64;
                let right_sum = sum - left_sum;
                let right_sq = sq_sum - left_sq;
                let score = (left_sq - left_sum * left_sum / nl)
                    + (right_sq - right_sum * right_sum / nr);
                if best.map_or(true, |(s, _, _)| score < s) {
                    // The midpoint of adjacent floats can round up to b; a
                    // threshold must keep `x <= t` equivalent to the cut.
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some((score, f, threshold));
                }
            }
        }

        let Some((score, feature, threshold)) = best else {
            self.nodes.push(Node::Leaf { value: mean });
            return self.nodes.len() - 1;
        };
        if score >= sse {
            self.nodes.push(Node::Leaf { value: mean });
            return self.nodes.len() - 1;
        }

        let split_at = stable_partition(idx, |&i| self.x[(i, feature)] <= threshold);
        debug_assert!(split_at > 0 && split_at < idx.len());
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean }); // placeholder
        let (left_idx, right_idx) = idx.split_at_mut(split_at);
        let left = self.grow(left_idx, depth + 1, rng);
        let right = self.grow(right_idx, depth + 1, rng);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }
}

/// Stable partition: moves elements satisfying `pred` to the front,
/// preserving relative order on both sides; returns the split point.
fn stable_partition<T: Copy>(slice: &mut [T], pred: impl Fn(&T) -> bool) -> usize {
    let mut front: Vec<T> = Vec::with_capacity(slice.len());
    let mut back: Vec<T> = Vec::new();
    for &v in slice.iter() {
        if pred(&v) {
            front.push(v);
        } else {
            back.push(v);
        }
    }
    let split = front.len();
    slice[..split].copy_from_slice(&front);
    slice[split..].copy_from_slice(&back);
    split
}

fn fit_one_tree(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: &ForestParams,
    tree_index: usize,
) -> DecisionTree {
    let mut rng = seeding::rng_for(params.rng_seed, &[0x7265_6573, tree_index as u64]);
    let n = x.nrows();
    let mut idx: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let p = x.ncols();
    let n_split_features = ((p as f64 * params.features_per_split).round() as usize).clamp(1, p);
    let mut builder = TreeBuilder {
        x,
        y,
        min_samples_leaf: params.min_samples_leaf,
        max_depth: params.max_depth,
        n_split_features,
        nodes: Vec::new(),
    };
    builder.grow(&mut idx, 0, &mut rng);
    DecisionTree {
        nodes: builder.nodes,
    }
}

pub fn forest_fit(x: &DMatrix<f64>, y: &DVector<f64>, params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    if x.nrows() == 0 {
        return Err(Error::data("forest_fit: empty design matrix"));
    }
    if x.nrows() != y.len() {
        return Err(Error::data(format!(
            "forest_fit: {} rows vs {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() < params.min_samples_leaf {
        return Err(Error::data(format!(
            "forest_fit: {} samples < min_samples_leaf {}",
            x.nrows(),
            params.min_samples_leaf
        )));
    }
    super::check_finite_matrix(x, "forest design matrix")?;
    // Per-tree seeds make the result independent of scheduling.
    let trees: Vec<DecisionTree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| fit_one_tree(x, y, params, t))
        .collect();
    Ok(ForestModel {
        params: params.clone(),
        trees,
    })
}

pub fn forest_predict(model: &ForestModel, x: &DMatrix<f64>) -> DVector<f64> {
    let row_buf: Vec<Vec<f64>> = (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect();
    DVector::from_fn(x.nrows(), |i, _| {
        let mut sum = 0.0;
        for tree in &model.trees {
            sum += tree.predict_row(&row_buf[i]);
        }
        sum / model.trees.len() as f64
    })
}
