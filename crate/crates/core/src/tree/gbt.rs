//! Histogram gradient boosting for squared error.
//!
//! Each round fits one tree to the gradients of the current prediction
//! (g = pred - y, h = 1). Split candidates come from equal-frequency
//! histogram edges; split scoring uses the second-order gain
//!   gain = 1/2 [ G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda)
//!                - (G_L+G_R)^2/(H_L+H_R+lambda) ] - gamma
//! and splits with gain <= 0 are rejected. Leaf values soft-threshold the
//! gradient sum by alpha, divide by (H+lambda) and scale by the learning
//! rate.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_input, Node, Tree, TreeError};
use crate::model::Features;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub gamma: f64,
    pub reg_alpha: f64,
    pub reg_lambda: f64,
    pub n_rounds: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            max_depth: 6,
            learning_rate: 0.1,
            subsample: 1.0,
            colsample_bytree: 1.0,
            gamma: 0.0,
            reg_alpha: 0.0,
            reg_lambda: 1.0,
            n_rounds: 200,
            bins: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub config: GbtConfig,
    pub base_score: f64,
    pub trees: Vec<Tree>,
}

impl GbtModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }
}

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

/// Equal-frequency candidate thresholds for one feature: midpoints between
/// distinct values at the `bins` quantile cuts. With bins >= n this yields
/// every midpoint between consecutive distinct values, i.e. the exact
/// greedy candidate set.
fn histogram_edges(values: &mut [f64], bins: usize) -> Vec<f64> {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    let mut edges = Vec::new();
    for k in 1..=bins.min(n.saturating_sub(1)) {
        let pos = (k as u64 * n as u64 / bins.min(n - 1).max(1) as u64) as usize;
        let pos = pos.clamp(1, n - 1);
        let lo = values[pos - 1];
        let hi = values[pos];
        if hi > lo {
            let mid = lo + (hi - lo) / 2.0;
            if edges.last() != Some(&mid) {
                edges.push(mid);
            }
        }
    }
    edges.dedup();
    edges
}

struct TreeBuilder<'a> {
    grads: &'a [f64],
    features: Vec<usize>,
    edges: Vec<Vec<f64>>,
    /// bin index per (row, feature-slot), row-major over slots.
    bins: Vec<u32>,
    cfg: &'a GbtConfig,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn build(mut self, rows: Vec<u32>) -> Tree {
        self.nodes.push(Node::Leaf { value: 0.0 });
        self.split_node(0, rows, 0);
        Tree { nodes: self.nodes }
    }

    fn bin_of(&self, row: u32, slot: usize) -> usize {
        self.bins[row as usize * self.features.len() + slot] as usize
    }

    fn split_node(&mut self, node: usize, rows: Vec<u32>, depth: usize) {
        let g_total: f64 = rows.iter().map(|&r| self.grads[r as usize]).sum();
        let h_total = rows.len() as f64;
        let lambda = self.cfg.reg_lambda;

        let mut best: Option<(f64, usize, usize)> = None; // (gain, slot, edge index)
        if depth < self.cfg.max_depth && rows.len() >= 2 {
            for slot in 0..self.features.len() {
                let n_edges = self.edges[slot].len();
                if n_edges == 0 {
                    continue;
                }
                let mut g_bins = vec![0.0f64; n_edges + 1];
                let mut h_bins = vec![0.0f64; n_edges + 1];
                for &r in &rows {
                    let b = self.bin_of(r, slot);
                    g_bins[b] += self.grads[r as usize];
                    h_bins[b] += 1.0;
                }
                let mut g_left = 0.0;
                let mut h_left = 0.0;
                for i in 0..n_edges {
                    g_left += g_bins[i];
                    h_left += h_bins[i];
                    let h_right = h_total - h_left;
                    if h_left == 0.0 || h_right == 0.0 {
                        continue;
                    }
                    let g_right = g_total - g_left;
                    let gain = 0.5
                        * (g_left * g_left / (h_left + lambda)
                            + g_right * g_right / (h_right + lambda)
                            - g_total * g_total / (h_total + lambda))
                        - self.cfg.gamma;
                    if gain > 0.0 && best.is_none_or(|(bg, ..)| gain > bg) {
                        best = Some((gain, slot, i));
                    }
                }
            }
        }

        match best {
            None => {
                let value = -soft_threshold(g_total, self.cfg.reg_alpha) / (h_total + lambda)
                    * self.cfg.learning_rate;
                self.nodes[node] = Node::Leaf { value };
            }
            Some((gain, slot, edge_idx)) => {
                let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
                    .into_iter()
                    .partition(|&r| self.bin_of(r, slot) <= edge_idx);
                let left = self.nodes.len();
                self.nodes.push(Node::Leaf { value: 0.0 });
                let right = self.nodes.len();
                self.nodes.push(Node::Leaf { value: 0.0 });
                self.nodes[node] = Node::Split {
                    feature: self.features[slot],
                    threshold: self.edges[slot][edge_idx],
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

fn round_rng(seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round as u64 + 1);
    rng
}

fn fit_one_tree(x: Features<'_>, grads: &[f64], cfg: &GbtConfig, round: usize) -> Tree {
    let n = x.n_rows();
    let d = x.n_cols();
    let mut rng = round_rng(cfg.seed, round);

    let n_sub = ((cfg.subsample * n as f64).floor() as usize).clamp(1, n);
    let mut rows: Vec<u32> = if n_sub < n {
        sample_indices(&mut rng, n, n_sub)
            .iter()
            .map(|i| i as u32)
            .collect()
    } else {
        (0..n as u32).collect()
    };
    rows.sort_unstable();

    let n_feat = ((cfg.colsample_bytree * d as f64).ceil() as usize).clamp(1, d);
    let mut features: Vec<usize> = if n_feat < d {
        sample_indices(&mut rng, d, n_feat).iter().collect()
    } else {
        (0..d).collect()
    };
    features.sort_unstable();

    let edges: Vec<Vec<f64>> = features
        .iter()
        .map(|&f| {
            let mut vals: Vec<f64> = rows.iter().map(|&r| x.row(r as usize)[f]).collect();
            histogram_edges(&mut vals, cfg.bins)
        })
        .collect();

    // Bin every training row once; off-subsample rows still route through
    // the finished tree for the prediction update.
    let mut bins = vec![0u32; n * features.len()];
    for r in 0..n {
        let row = x.row(r);
        for (slot, &f) in features.iter().enumerate() {
            let v = row[f];
            let e = &edges[slot];
            bins[r * features.len() + slot] = e.partition_point(|&edge| edge <= v) as u32;
        }
    }

    TreeBuilder {
        grads,
        features,
        edges,
        bins,
        cfg,
        nodes: Vec::new(),
    }
    .build(rows)
}

/// Trains for exactly `cfg.n_rounds` rounds.
pub fn fit_gbt(x: Features<'_>, y: &[f64], cfg: &GbtConfig) -> Result<GbtModel, TreeError> {
    fit_gbt_with_validation(x, y, cfg, None, 0).map(|(m, _)| m)
}

/// Trains with optional validation-based early stopping: when a validation
/// set is given and `patience > 0`, training stops after `patience` rounds
/// without improvement and the model is truncated to the best round.
/// Returns the model and the number of trees kept.
pub fn fit_gbt_with_validation(
    x: Features<'_>,
    y: &[f64],
    cfg: &GbtConfig,
    validation: Option<(Features<'_>, &[f64])>,
    patience: usize,
) -> Result<(GbtModel, usize), TreeError> {
    check_training_input(x, y)?;
    let n = x.n_rows();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let mut preds = vec![base_score; n];
    let mut trees = Vec::with_capacity(cfg.n_rounds);

    let mut val_preds: Option<Vec<f64>> = validation
        .as_ref()
        .map(|(vx, _)| vec![base_score; vx.n_rows()]);
    let mut best_rmse = f64::INFINITY;
    let mut best_round = 0;
    let mut since_best = 0;

    let mut grads = vec![0.0; n];
    for round in 0..cfg.n_rounds {
        for (g, (p, t)) in grads.iter_mut().zip(preds.iter().zip(y)) {
            *g = p - t;
        }
        let tree = fit_one_tree(x, &grads, cfg, round);
        for (i, p) in preds.iter_mut().enumerate() {
            *p += tree.predict_row(x.row(i));
        }
        if let (Some((vx, vy)), Some(vp)) = (&validation, &mut val_preds) {
            let mut sse = 0.0;
            for (i, p) in vp.iter_mut().enumerate() {
                *p += tree.predict_row(vx.row(i));
                sse += (*p - vy[i]).powi(2);
            }
            let rmse = (sse / vy.len() as f64).sqrt();
            if rmse < best_rmse {
                best_rmse = rmse;
                best_round = round + 1;
                since_best = 0;
            } else {
                since_best += 1;
            }
            trees.push(tree);
            if patience > 0 && since_best >= patience {
                break;
            }
        } else {
            trees.push(tree);
        }
    }
    let kept = if validation.is_some() && patience > 0 {
        trees.truncate(best_round);
        best_round
    } else {
        trees.len()
    };
    Ok((
        GbtModel {
            config: cfg.clone(),
            base_score,
            trees,
        },
        kept,
    ))
}
