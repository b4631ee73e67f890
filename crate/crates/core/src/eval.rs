//! Model evaluation: RMSE on held-out data, permutation feature
//! importance, and text/SVG report rendering.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Features, ModelArtifact};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction and truth lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cannot score an empty sample")]
    Empty,
    #[error("model was trained against a different split plan (expected {expected}, got {got})")]
    PlanMismatch { expected: String, got: String },
    #[error("model error: {0}")]
    Model(#[from] crate::model::ModelError),
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// One scored (model family, nutrient, feature set) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub family: String,
    pub nutrient: String,
    pub feature_set: String,
    pub rmse_test: f64,
    /// Mean RMSE over cross-validation rounds; absent for a single split.
    pub rmse_average: Option<f64>,
    /// Mean and standard deviation of the target on the raw scale.
    pub target_mean: f64,
    pub target_std: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

/// Scores an artifact on a held-out set. When both sides carry a split-plan
/// hash they must agree, which catches models evaluated against the wrong
/// partition.
pub fn evaluate(
    artifact: &ModelArtifact,
    x: Features<'_>,
    y: &[f64],
    plan_hash: Option<&str>,
) -> Result<f64, EvalError> {
    if let (Some(expected), Some(got)) = (artifact.plan_hash.as_deref(), plan_hash) {
        if expected != got {
            return Err(EvalError::PlanMismatch {
                expected: expected.to_string(),
                got: got.to_string(),
            });
        }
    }
    let pred = artifact.predict(x)?;
    rmse(&pred, y)
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Permutation importance: increase in RMSE after shuffling one column,
/// averaged over `repeats` seeded shuffles. Returned sorted descending.
pub fn permutation_importance(
    artifact: &ModelArtifact,
    x: Features<'_>,
    y: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>, EvalError> {
    let base = evaluate(artifact, x, y, None)?;
    let d = x.n_cols();
    let n = x.n_rows();
    let mut out = Vec::with_capacity(d);
    for col in 0..d {
        let mut delta_sum = 0.0;
        for rep in 0..repeats {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((col as u64) << 20 | rep as u64);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut shuffled = x.data().to_vec();
            for (i, &src) in order.iter().enumerate() {
                shuffled[i * d + col] = x.data()[src * d + col];
            }
            let score = evaluate(artifact, Features::new(&shuffled, d), y, None)?;
            delta_sum += score - base;
        }
        out.push((
            artifact.feature_names[col].clone(),
            delta_sum / repeats as f64,
        ));
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(out)
}

fn fmt_val(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 100.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

/// Performance table: one row per (family, nutrient), one RMSE column per
/// feature set, best value per row flagged with `*`. Feature-set column
/// order follows first appearance in `rows`.
pub fn render_performance_table(rows: &[EvalRow]) -> String {
    let mut feature_sets: Vec<&str> = Vec::new();
    for r in rows {
        if !feature_sets.iter().any(|f| *f == r.feature_set) {
            feature_sets.push(&r.feature_set);
        }
    }
    type RowGroup<'a> = ((String, String), BTreeMap<String, &'a EvalRow>);
    let mut groups: Vec<RowGroup<'_>> = Vec::new();
    for r in rows {
        let key = (r.family.clone(), r.nutrient.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, m)) => {
                m.insert(r.feature_set.clone(), r);
            }
            None => {
                let mut m = BTreeMap::new();
                m.insert(r.feature_set.clone(), r);
                groups.push((key, m));
            }
        }
    }
    let mut out = String::from("model\tnutrient\tmean\tstd");
    for fs in &feature_sets {
        out.push_str(&format!("\tRMSE[{fs}]"));
    }
    out.push('\n');
    for ((family, nutrient), cells) in &groups {
        let best = cells
            .values()
            .map(|r| r.rmse_test)
            .fold(f64::INFINITY, f64::min);
        let any = cells.values().next().unwrap();
        out.push_str(&format!(
            "{family}\t{nutrient}\t{}\t{}",
            fmt_val(any.target_mean),
            fmt_val(any.target_std)
        ));
        for fs in &feature_sets {
            match cells.get(*fs) {
                Some(r) if r.rmse_test == best => {
                    out.push_str(&format!("\t{}*", fmt_val(r.rmse_test)))
                }
                Some(r) => out.push_str(&format!("\t{}", fmt_val(r.rmse_test))),
                None => out.push_str("\tNA"),
            }
        }
        out.push('\n');
    }
    out
}

/// Machine-readable companion of the performance table.
pub fn write_eval_rows<W: Write>(mut w: W, rows: &[EvalRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "family\tnutrient\tfeature_set\trmse_test\trmse_average\ttarget_mean\ttarget_std\tn_train\tn_val\tn_test"
    )?;
    for r in rows {
        let avg = r
            .rmse_average
            .map(|v| v.to_string())
            .unwrap_or_else(|| "NA".to_string());
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.family,
            r.nutrient,
            r.feature_set,
            r.rmse_test,
            avg,
            r.target_mean,
            r.target_std,
            r.n_train,
            r.n_val,
            r.n_test
        )?;
    }
    Ok(())
}

/// Horizontal bar chart of the top `limit` importance entries.
pub fn importance_svg(importance: &[(String, f64)], title: &str, limit: usize) -> String {
    let shown: Vec<&(String, f64)> = importance.iter().take(limit).collect();
    let bar_h = 18.0;
    let gap = 6.0;
    let label_w = 180.0;
    let chart_w = 420.0;
    let height = 40.0 + shown.len() as f64 * (bar_h + gap);
    let max_v = shown
        .iter()
        .map(|(_, v)| v.abs())
        .fold(f64::MIN_POSITIVE, f64::max);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{height}\">\n",
        label_w + chart_w + 60.0
    );
    svg.push_str(&format!(
        "<text x=\"10\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n"
    ));
    for (i, (name, v)) in shown.iter().enumerate() {
        let y = 34.0 + i as f64 * (bar_h + gap);
        let w = chart_w * v.abs() / max_v;
        let fill = if *v >= 0.0 { "#4878b0" } else { "#c05050" };
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{name}</text>\n",
            label_w - 6.0,
            y + bar_h - 5.0
        ));
        svg.push_str(&format!(
            "<rect x=\"{label_w}\" y=\"{y}\" width=\"{w:.2}\" height=\"{bar_h}\" fill=\"{fill}\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            label_w + w + 4.0,
            y + bar_h - 5.0,
            fmt_val(*v)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_importance<W: Write>(mut w: W, importance: &[(String, f64)]) -> std::io::Result<()> {
    writeln!(w, "feature\timportance")?;
    for (name, v) in importance {
        writeln!(w, "{name}\t{v}")?;
    }
    Ok(())
}

/// Writes perf_<tag>.txt / .tsv and, per importance entry, the SVG and TSV
/// companions, into `dir`.
pub fn render_reports(
    dir: &Path,
    tag: &str,
    rows: &[EvalRow],
    importances: &[(String, Vec<(String, f64)>)],
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(format!("perf_{tag}.txt")),
        render_performance_table(rows),
    )?;
    let f = std::fs::File::create(dir.join(format!("perf_{tag}.tsv")))?;
    write_eval_rows(std::io::BufWriter::new(f), rows)?;
    for (name, imp) in importances {
        std::fs::write(
            dir.join(format!("importance_{name}.svg")),
            importance_svg(imp, name, 20),
        )?;
        let f = std::fs::File::create(dir.join(format!("importance_{name}.tsv")))?;
        write_importance(std::io::BufWriter::new(f), imp)?;
    }
    Ok(())
}
