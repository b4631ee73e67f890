//! Soil nutrient regression pipeline.
//!
//! The crate covers the full desk-scale workflow: a columnar feature-table
//! model ([`tabular`]), readers for every external data source ([`ingest`]),
//! imputation / normalization / correlation analysis ([`preprocess`]),
//! single and spatial cross-validated splitting ([`split`]), native tree
//! ensembles ([`tree`]) and a dense regression network ([`fcnn`]),
//! random-search hyperparameter tuning ([`hpo`]), RMSE / importance
//! reporting ([`eval`]) and a synthetic spatially autocorrelated data
//! generator ([`synth`]) so the whole pipeline is testable without the
//! licensed source datasets.

pub mod eval;
pub mod fcnn;
pub mod hpo;
pub mod ingest;
pub mod model;
pub mod preprocess;
pub mod split;
pub mod synth;
pub mod tabular;
pub mod tree;

pub use model::ModelArtifact;
pub use tabular::{FeatureSetConfig, FeatureTable, Nutrient, SampleRecord};
