//! Trained model artifact: the fitted regressor plus everything inference
//! needs to reproduce training-time behavior (normalization statistics,
//! feature names, the hash of the split plan it trained under).
//!
//! Artifacts serialize to a self-describing JSON document; round-trips
//! preserve predictions bit-for-bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fcnn::DenseNet;
use crate::preprocess::NormalizationStats;
use crate::tree::{GbtModel, RfModel};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// Borrowed row-major feature matrix.
#[derive(Debug, Clone, Copy)]
pub struct Features<'a> {
    data: &'a [f64],
    n_cols: usize,
}

impl<'a> Features<'a> {
    pub fn new(data: &'a [f64], n_cols: usize) -> Self {
        assert!(n_cols > 0 && data.len().is_multiple_of(n_cols));
        Features { data, n_cols }
    }

    pub fn n_rows(&self) -> usize {
        self.data.len() / self.n_cols
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn data(&self) -> &'a [f64] {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &'a [f64]> + '_ {
        (0..self.n_rows()).map(move |i| self.row(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Gbt,
    Rf,
    Fcnn,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Gbt => "GBT",
            ModelFamily::Rf => "RandomForest",
            ModelFamily::Fcnn => "FCNN",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gbt" | "xgboost" => Some(ModelFamily::Gbt),
            "rf" | "randomforest" | "random_forest" => Some(ModelFamily::Rf),
            "fcnn" | "net" => Some(ModelFamily::Fcnn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Gbt(GbtModel),
    Rf(RfModel),
    Fcnn(DenseNet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub norm_stats: Option<NormalizationStats>,
    /// Hash of the split plan the model trained under, when one applies.
    pub plan_hash: Option<String>,
    pub model: ModelKind,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("row arity {got} does not match model arity {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("operation requires a tree-based model")]
    NotTreeModel,
    #[error("artifact serialization failed: {0}")]
    Serialization(String),
}

impl ModelArtifact {
    pub fn family(&self) -> ModelFamily {
        match self.model {
            ModelKind::Gbt(_) => ModelFamily::Gbt,
            ModelKind::Rf(_) => ModelFamily::Rf,
            ModelKind::Fcnn(_) => ModelFamily::Fcnn,
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Predicts pre-normalized rows. Deterministic; finite outputs for
    /// finite inputs.
    pub fn predict(&self, rows: Features<'_>) -> Result<Vec<f64>, ModelError> {
        if rows.n_cols() != self.n_features() {
            return Err(ModelError::ArityMismatch {
                expected: self.n_features(),
                got: rows.n_cols(),
            });
        }
        Ok(match &self.model {
            ModelKind::Gbt(m) => rows.iter_rows().map(|r| m.predict_row(r)).collect(),
            ModelKind::Rf(m) => rows.iter_rows().map(|r| m.predict_row(r)).collect(),
            ModelKind::Fcnn(net) => rows.iter_rows().map(|r| net.predict_row(r)).collect(),
        })
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        serde_json::to_string_pretty(self).map_err(|e| ModelError::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        serde_json::from_str(s).map_err(|e| ModelError::Serialization(e.to_string()))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?).map_err(|e| ModelError::Serialization(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        let s =
            std::fs::read_to_string(path).map_err(|e| ModelError::Serialization(e.to_string()))?;
        Self::from_json(&s)
    }
}
