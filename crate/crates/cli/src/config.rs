//! Run configuration: a TOML file with one section per stage. Every field
//! has a default, so the synthetic-data chain runs with no config at all.
//! Command-line flags (`--seed`, `--workers`, `--out`) override file values.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// 0 means "all processor cores".
    pub workers: usize,
    pub synth: SynthSection,
    pub ingest: IngestSection,
    pub preprocess: PreprocessSection,
    pub split: SplitSection,
    pub model: ModelSection,
    pub tune: TuneSection,
    pub evaluate: EvaluateSection,
    pub report: ReportSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_samples: usize,
    pub lat_range: (f64, f64),
    pub lon_range: (f64, f64),
    pub correlation_length_deg: f64,
    pub n_features: usize,
    /// "linear" or "nonlinear"
    pub target_rule: String,
    pub noise_std: f64,
    pub skew: bool,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            n_samples: 500,
            lat_range: (40.0, 60.0),
            lon_range: (0.0, 40.0),
            correlation_length_deg: 8.0,
            n_features: 6,
            target_rule: "linear".into(),
            noise_std: 0.1,
            skew: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    /// Delimited soil sample table (required by the ingest stage).
    pub soil_table: Option<PathBuf>,
    /// Directory of `<point_id>_<band>.spx` patch files.
    pub patch_dir: Option<PathBuf>,
    /// Extract the 3x3 neighbor window instead of the center pixel only.
    pub neighbors: bool,
    /// Fixture weather table consulted on cache misses.
    pub weather_fixture: Option<PathBuf>,
    /// Directory of `.yld` yield raster files.
    pub yield_dir: Option<PathBuf>,
    /// Delimited embedding table (point_id + 1024 values per row).
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    /// "minmax" or "log_minmax"
    pub method: String,
    /// "none", "constant_midpoint" or "uniform_random"
    pub impute: String,
    pub histogram_bins: usize,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        PreprocessSection {
            method: "minmax".into(),
            impute: "none".into(),
            histogram_bins: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    /// "single" or "spatial_grid"
    pub strategy: String,
    pub ratio: f64,
    pub grid_deg: f64,
    pub test_share: f64,
    pub folds: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            strategy: "single".into(),
            ratio: 0.8,
            grid_deg: 4.0,
            test_share: 0.2,
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// "gbt", "rf" or "fcnn"
    pub family: String,
    /// Target nutrient column name, e.g. "N" or "pH_CaCl2".
    pub nutrient: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            family: "gbt".into(),
            nutrient: "N".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSection {
    pub n_trials: u64,
    /// Share of the training partition carved off as validation when the
    /// split plan is a single split.
    pub validation_share: f64,
    pub gbt_rounds: usize,
    pub gbt_bins: usize,
    pub gbt_patience: usize,
    pub fcnn_epochs: usize,
}

impl Default for TuneSection {
    fn default() -> Self {
        TuneSection {
            n_trials: 8,
            validation_share: 0.2,
            gbt_rounds: 60,
            gbt_bins: 64,
            gbt_patience: 10,
            fcnn_epochs: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub permutation_repeats: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            permutation_repeats: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Feature-set label printed in performance tables.
    pub feature_set: String,
    /// File-name tag for `reports/perf_<tag>.*`.
    pub tag: String,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            feature_set: "BASE".into(),
            tag: "run".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&std::path::Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", p.display()))?;
                toml::from_str(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", p.display()))
            }
        }
    }
}
