//! Random forest regression: bootstrap-resampled variance-reduction trees
//! averaged at prediction time.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_training_input, Node, Tree, TreeError};
use crate::model::Features;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Fraction of features considered per split, ceil(max_features * d).
    pub max_features: f64,
    /// Test hook: `false` trains every tree on the full sample set.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_estimators: 100,
            max_depth: 30,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: 1.0,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfModel {
    pub config: RfConfig,
    pub trees: Vec<Tree>,
}

impl RfModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / self.trees.len() as f64
    }
}

struct RfBuilder<'a> {
    x: Features<'a>,
    y: &'a [f64],
    cfg: &'a RfConfig,
    n_split_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl<'a> RfBuilder<'a> {
    fn build(mut self, rows: Vec<u32>) -> Tree {
        self.nodes.push(Node::Leaf { value: 0.0 });
        self.split_node(0, rows, 0);
        Tree { nodes: self.nodes }
    }

    fn leaf_value(&self, rows: &[u32]) -> f64 {
        rows.iter().map(|&r| self.y[r as usize]).sum::<f64>() / rows.len() as f64
    }

    fn split_node(&mut self, node: usize, rows: Vec<u32>, depth: usize) {
        if depth >= self.cfg.max_depth || rows.len() < self.cfg.min_samples_split.max(2) {
            self.nodes[node] = Node::Leaf {
                value: self.leaf_value(&rows),
            };
            return;
        }
        let d = self.x.n_cols();
        let mut features: Vec<usize> = if self.n_split_features < d {
            sample_indices(&mut self.rng, d, self.n_split_features)
                .iter()
                .collect()
        } else {
            (0..d).collect()
        };
        features.sort_unstable();

        let sum: f64 = rows.iter().map(|&r| self.y[r as usize]).sum();
        let sum_sq: f64 = rows.iter().map(|&r| self.y[r as usize].powi(2)).sum();
        let n = rows.len() as f64;
        let sse_parent = sum_sq - sum * sum / n;

        let min_leaf = self.cfg.min_samples_leaf.max(1);
        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        let mut order: Vec<u32> = rows.clone();
        for &f in &features {
            order.sort_by(|&a, &b| {
                self.x.row(a as usize)[f]
                    .partial_cmp(&self.x.row(b as usize)[f])
                    .unwrap()
            });
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for i in 0..order.len() - 1 {
                let yi = self.y[order[i] as usize];
                left_sum += yi;
                left_sq += yi * yi;
                let n_left = i + 1;
                let n_right = order.len() - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let lo = self.x.row(order[i] as usize)[f];
                let hi = self.x.row(order[i + 1] as usize)[f];
                if hi <= lo {
                    continue;
                }
                let right_sum = sum - left_sum;
                let right_sq = sum_sq - left_sq;
                let sse_left = left_sq - left_sum * left_sum / n_left as f64;
                let sse_right = right_sq - right_sum * right_sum / n_right as f64;
                let gain = sse_parent - sse_left - sse_right;
                if gain > 0.0 && best.is_none_or(|(bg, ..)| gain > bg) {
                    best = Some((gain, f, lo + (hi - lo) / 2.0));
                }
            }
        }

        match best {
            None => {
                self.nodes[node] = Node::Leaf {
                    value: self.leaf_value(&rows),
                };
            }
            Some((gain, feature, threshold)) => {
                let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
                    .into_iter()
                    .partition(|&r| self.x.row(r as usize)[feature] < threshold);
                let left = self.nodes.len();
                self.nodes.push(Node::Leaf { value: 0.0 });
                let right = self.nodes.len();
                self.nodes.push(Node::Leaf { value: 0.0 });
                self.nodes[node] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    gain,
                };
                self.split_node(left, left_rows, depth + 1);
                self.split_node(right, right_rows, depth + 1);
            }
        }
    }
}

/// Fits a forest. Trees train in parallel with per-tree seeded generators,
/// so results are identical for any worker count.
pub fn fit_rf(x: Features<'_>, y: &[f64], cfg: &RfConfig) -> Result<RfModel, TreeError> {
    check_training_input(x, y)?;
    let n = x.n_rows();
    let d = x.n_cols();
    let n_split_features = ((cfg.max_features * d as f64).ceil() as usize).clamp(1, d);
    let trees: Vec<Tree> = (0..cfg.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64 + 1);
            let rows: Vec<u32> = if cfg.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n as u32)).collect()
            } else {
                (0..n as u32).collect()
            };
            RfBuilder {
                x,
                y,
                cfg,
                n_split_features,
                rng,
                nodes: Vec::new(),
            }
            .build(rows)
        })
        .collect();
    Ok(RfModel {
        config: cfg.clone(),
        trees,
    })
}
