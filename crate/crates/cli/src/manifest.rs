//! Per-stage manifests: each stage records the hashes of the inputs it
//! read, the hashes of the outputs it wrote, and a snapshot of the config
//! it ran under. Manifests carry no timestamps, so reruns with unchanged
//! inputs are byte-identical.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub pipeline_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// File name -> sha256 of the inputs consumed.
    pub inputs: BTreeMap<String, String>,
    /// File name -> sha256 of the outputs produced.
    pub outputs: BTreeMap<String, String>,
    /// Free-form stage facts (plan hashes, row counts, ...).
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(stage: &str, seed: u64, config: serde_json::Value) -> Self {
        Manifest {
            stage: stage.to_string(),
            pipeline_version: PIPELINE_VERSION.to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(file_key(path), sha256_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(file_key(path), sha256_file(path)?);
        Ok(())
    }

    pub fn save(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(format!("manifest_{}.json", self.stage));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(out_dir: &Path, stage: &str) -> Result<Self> {
        let path = out_dir.join(format!("manifest_{stage}.json"));
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn file_key(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// Fails with a "run <stage> first" diagnostic when a prerequisite stage
/// has not produced its manifest. `alternatives` lets a stage accept any
/// one of several upstream producers.
pub fn require_stage(out_dir: &Path, alternatives: &[&str]) -> Result<Manifest> {
    for stage in alternatives {
        let path = out_dir.join(format!("manifest_{stage}.json"));
        if path.exists() {
            return Manifest::load(out_dir, stage);
        }
    }
    let names = alternatives.join("` or `soilml ");
    bail!(
        "missing prerequisite outputs in {}; run `soilml {names}` first",
        out_dir.display()
    );
}
