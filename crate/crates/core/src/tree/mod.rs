//! Native regression trees: random forest bagging and histogram gradient
//! boosting with second-order gain and L1/L2/gamma regularization.

mod gbt;
mod rf;

pub use gbt::{fit_gbt, fit_gbt_with_validation, GbtConfig, GbtModel};
pub use rf::{fit_rf, RfConfig, RfModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Features, ModelArtifact, ModelError, ModelKind};

/// Flattened tree: nodes index into the arena, node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

impl Tree {
    /// Routes a row to its leaf: `x[feature] < threshold` goes left.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    idx = if row[*feature] < *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    fn collect_gains(&self, acc: &mut std::collections::HashMap<usize, (f64, usize)>) {
        for node in &self.nodes {
            if let Node::Split { feature, gain, .. } = node {
                let e = acc.entry(*feature).or_insert((0.0, 0));
                e.0 += gain;
                e.1 += 1;
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("training input contains non-finite values")]
    NonFiniteInput,
    #[error("training set is empty or too small")]
    EmptyTraining,
    #[error("feature index {0} out of range")]
    BadFeature(usize),
}

pub(crate) fn check_training_input(x: Features<'_>, y: &[f64]) -> Result<(), TreeError> {
    if x.n_rows() < 2 || y.len() != x.n_rows() {
        return Err(TreeError::EmptyTraining);
    }
    if x.data().iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(TreeError::NonFiniteInput);
    }
    Ok(())
}

/// Per-feature average gain across all splits in all trees, descending.
/// Unused features are omitted.
pub fn gain_importance(model: &ModelArtifact) -> Result<Vec<(String, f64)>, ModelError> {
    let trees: Vec<&Tree> = match &model.model {
        ModelKind::Gbt(m) => m.trees.iter().collect(),
        ModelKind::Rf(m) => m.trees.iter().collect(),
        ModelKind::Fcnn(_) => return Err(ModelError::NotTreeModel),
    };
    let mut acc = std::collections::HashMap::new();
    for t in trees {
        t.collect_gains(&mut acc);
    }
    let mut out: Vec<(String, f64)> = acc
        .into_iter()
        .map(|(f, (total, count))| (model.feature_names[f].clone(), total / count as f64))
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelArtifact;

    fn stump_artifact(trees: Vec<Tree>) -> ModelArtifact {
        ModelArtifact {
            format_version: 1,
            feature_names: (0..5).map(|i| format!("f{i}")).collect(),
            norm_stats: None,
            plan_hash: None,
            model: ModelKind::Gbt(GbtModel {
                config: GbtConfig::default(),
                base_score: 0.0,
                trees,
            }),
        }
    }

    #[test]
    fn stump_importance_lists_only_its_feature() {
        let tree = Tree {
            nodes: vec![
                Node::Split {
                    feature: 3,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                    gain: 2.0,
                },
                Node::Leaf { value: -1.0 },
                Node::Leaf { value: 1.0 },
            ],
        };
        let imp = gain_importance(&stump_artifact(vec![tree])).unwrap();
        assert_eq!(imp, vec![("f3".to_string(), 2.0)]);
    }

    #[test]
    fn importance_averages_gains_per_feature() {
        let t = |gain| Tree {
            nodes: vec![
                Node::Split {
                    feature: 1,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                    gain,
                },
                Node::Leaf { value: 0.0 },
                Node::Leaf { value: 0.0 },
            ],
        };
        let imp = gain_importance(&stump_artifact(vec![t(2.0), t(4.0)])).unwrap();
        assert_eq!(imp, vec![("f1".to_string(), 3.0)]);
    }
}
