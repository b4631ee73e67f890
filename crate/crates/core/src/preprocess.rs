//! Imputation, normalization, correlation analysis and distribution
//! inspection between ingestion and training.
//!
//! Normalization keeps the raw table untouched and installs a separate
//! normalized view; the per-column extrema are returned as
//! [`NormalizationStats`] so inference can reproduce training-time scaling.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::{FeatureTable, Nutrient, SampleRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    Minmax,
    /// ln(1+x) followed by min-max; defined for x >= 0.
    LogMinmax,
}

/// Per-column scaling statistics, stored inside every model artifact.
/// For `LogMinmax` the extrema are taken in the transformed domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub method: NormMethod,
    pub col_min: Vec<f64>,
    pub col_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    /// Square, row-major. Constant columns yield NaN on their row/column.
    pub r: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.labels.len() + j]
    }

    /// Delimited matrix export: header of labels, one row per label.
    pub fn write_delimited<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.labels.len();
        write!(w, "label")?;
        for l in &self.labels {
            write!(w, "\t{l}")?;
        }
        writeln!(w)?;
        for i in 0..n {
            write!(w, "{}", self.labels[i])?;
            for j in 0..n {
                let v = self.get(i, j);
                if v.is_nan() {
                    write!(w, "\tNA")?;
                } else {
                    write!(w, "\t{v}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Heatmap over [-1, 1] with a blue-white-red ramp.
    pub fn to_svg(&self) -> String {
        let n = self.labels.len();
        let cell = 18usize;
        let margin = 90usize;
        let size = margin + n * cell + 10;
        let mut svg = String::new();
        svg.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\">\n"
        ));
        for i in 0..n {
            for j in 0..n {
                let v = self.get(i, j);
                let (r, g, b) = heat_color(v);
                let x = margin + j * cell;
                let y = margin + i * cell;
                svg.push_str(&format!(
                    "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({r},{g},{b})\"/>\n"
                ));
            }
        }
        for (i, l) in self.labels.iter().enumerate() {
            let y = margin + i * cell + cell / 2 + 4;
            svg.push_str(&format!(
                "<text x=\"4\" y=\"{y}\" font-size=\"10\" font-family=\"monospace\">{l}</text>\n"
            ));
            let x = margin + i * cell + cell / 2;
            svg.push_str(&format!(
                "<text x=\"{x}\" y=\"{}\" font-size=\"10\" font-family=\"monospace\" transform=\"rotate(-90 {x} {})\">{l}</text>\n",
                margin - 4,
                margin - 4
            ));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Color ramp: -1 full blue, 0 white, +1 full red. NaN renders gray.
pub fn heat_color(v: f64) -> (u8, u8, u8) {
    if v.is_nan() {
        return (128, 128, 128);
    }
    let v = v.clamp(-1.0, 1.0);
    if v >= 0.0 {
        let t = 1.0 - v;
        (255, (255.0 * t).round() as u8, (255.0 * t).round() as u8)
    } else {
        let t = 1.0 + v;
        ((255.0 * t).round() as u8, (255.0 * t).round() as u8, 255)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImputeStrategy {
    /// Replace flagged readings with LOD/2.
    ConstantMidpoint,
    /// Replace flagged readings with a seeded uniform draw from [0, LOD).
    UniformRandom { seed: u64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("nutrient {0} has no numeric detection limit")]
    NonNumericLod(Nutrient),
    #[error("column {0} contains negative values; log normalization undefined")]
    NegativeUnderLog(String),
    #[error("row arity {got} does not match normalization stats arity {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("correlation requires at least 2 rows")]
    TooFewRows,
}

/// Replaces below-LOD readings of one nutrient. Unflagged values are left
/// untouched; samples without the nutrient are skipped.
pub fn impute_below_lod(
    samples: &mut [SampleRecord],
    nutrient: Nutrient,
    strategy: ImputeStrategy,
) -> Result<(), PreprocessError> {
    let lod = nutrient
        .lod()
        .numeric()
        .ok_or(PreprocessError::NonNumericLod(nutrient))?;
    let mut rng = match strategy {
        ImputeStrategy::UniformRandom { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        ImputeStrategy::ConstantMidpoint => None,
    };
    for s in samples {
        if s.below_lod.get(&nutrient).copied().unwrap_or(false) {
            if let Some(v) = s.targets.get_mut(&nutrient) {
                *v = match &mut rng {
                    None => lod / 2.0,
                    Some(rng) => rng.gen_range(0.0..lod),
                };
            }
        }
    }
    Ok(())
}

/// Min-max (optionally after ln(1+x)) per column; the raw view stays
/// unchanged. Constant columns normalize to all-0.
pub fn normalize(
    table: &FeatureTable,
    method: NormMethod,
) -> Result<(FeatureTable, NormalizationStats), PreprocessError> {
    let d = table.n_cols();
    let n = table.n_rows();
    let transform = |v: f64, col: usize| -> Result<f64, PreprocessError> {
        match method {
            NormMethod::Minmax => Ok(v),
            NormMethod::LogMinmax => {
                if v < 0.0 {
                    Err(PreprocessError::NegativeUnderLog(
                        table.column_names[col].clone(),
                    ))
                } else {
                    Ok((1.0 + v).ln())
                }
            }
        }
    };

    let mut col_min = vec![f64::INFINITY; d];
    let mut col_max = vec![f64::NEG_INFINITY; d];
    let mut transformed = Vec::with_capacity(n * d);
    for i in 0..n {
        for (j, &v) in table.raw_row(i).iter().enumerate() {
            let t = if v.is_nan() {
                f64::NAN
            } else {
                transform(v, j)?
            };
            if t.is_finite() {
                col_min[j] = col_min[j].min(t);
                col_max[j] = col_max[j].max(t);
            }
            transformed.push(t);
        }
    }
    for j in 0..d {
        if !col_min[j].is_finite() {
            // all-NA column
            col_min[j] = 0.0;
            col_max[j] = 0.0;
        }
    }
    let stats = NormalizationStats {
        method,
        col_min: col_min.clone(),
        col_max: col_max.clone(),
    };
    let mut normalized = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            let t = transformed[i * d + j];
            normalized.push(scale(t, col_min[j], col_max[j]));
        }
    }
    let mut out = table.clone();
    out.set_normalized(normalized, raw_extrema(table, 0), raw_extrema(table, 1));
    // set_normalized stores raw-domain extrema for the table invariant; the
    // returned stats carry the transformed-domain extrema used for scaling.
    Ok((out, stats))
}

fn raw_extrema(table: &FeatureTable, which: usize) -> Vec<f64> {
    let d = table.n_cols();
    let mut out = vec![
        if which == 0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        d
    ];
    for i in 0..table.n_rows() {
        for (j, &v) in table.raw_row(i).iter().enumerate() {
            if v.is_finite() {
                out[j] = if which == 0 {
                    out[j].min(v)
                } else {
                    out[j].max(v)
                };
            }
        }
    }
    out
}

fn scale(t: f64, min: f64, max: f64) -> f64 {
    if t.is_nan() {
        f64::NAN
    } else if max > min {
        (t - min) / (max - min)
    } else {
        0.0
    }
}

/// Applies training-time scaling to one raw row. Values beyond the stored
/// extrema fall outside [0, 1] and are not clipped.
pub fn apply_stats(
    raw_row: &[f64],
    stats: &NormalizationStats,
) -> Result<Vec<f64>, PreprocessError> {
    if raw_row.len() != stats.col_min.len() {
        return Err(PreprocessError::ArityMismatch {
            expected: stats.col_min.len(),
            got: raw_row.len(),
        });
    }
    Ok(raw_row
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let t = match stats.method {
                NormMethod::Minmax => v,
                NormMethod::LogMinmax => (1.0 + v).ln(),
            };
            scale(t, stats.col_min[j], stats.col_max[j])
        })
        .collect())
}

/// Pearson product-moment correlation matrix from the population covariance
/// of the raw columns. Constant columns yield NaN entries.
pub fn pearson_matrix(table: &FeatureTable) -> Result<CorrelationMatrix, PreprocessError> {
    let n = table.n_rows();
    let d = table.n_cols();
    if n < 2 {
        return Err(PreprocessError::TooFewRows);
    }
    let nf = n as f64;
    let mut means = vec![0.0; d];
    for i in 0..n {
        for (j, &v) in table.raw_row(i).iter().enumerate() {
            means[j] += v;
        }
    }
    for m in &mut means {
        *m /= nf;
    }
    let mut cov = vec![0.0; d * d];
    for i in 0..n {
        let row = table.raw_row(i);
        for a in 0..d {
            let da = row[a] - means[a];
            for b in a..d {
                cov[a * d + b] += da * (row[b] - means[b]);
            }
        }
    }
    let mut r = vec![0.0; d * d];
    for a in 0..d {
        for b in a..d {
            let c = cov[a * d + b] / nf;
            let denom = (cov[a * d + a] / nf * (cov[b * d + b] / nf)).sqrt();
            let v = if denom > 0.0 { c / denom } else { f64::NAN };
            r[a * d + b] = v;
            r[b * d + a] = v;
        }
    }
    Ok(CorrelationMatrix {
        labels: table.column_names.clone(),
        r,
    })
}

/// Equal-width histogram of one column plus a report-only outlier share
/// (fraction outside mean +/- 4 stddev). Values are retained, never dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramReport {
    pub label: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub stddev: f64,
    pub outlier_share: f64,
}

impl HistogramReport {
    pub fn write_delimited<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# column\t{}", self.label)?;
        writeln!(w, "# mean\t{}", self.mean)?;
        writeln!(w, "# stddev\t{}", self.stddev)?;
        writeln!(w, "# outlier_share\t{}", self.outlier_share)?;
        writeln!(w, "bin_lo\tbin_hi\tcount")?;
        for (k, c) in self.counts.iter().enumerate() {
            writeln!(w, "{}\t{}\t{c}", self.bin_edges[k], self.bin_edges[k + 1])?;
        }
        Ok(())
    }
}

pub fn histogram_report(values: &[f64], label: &str, bins: usize) -> HistogramReport {
    assert!(bins >= 1);
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let n = finite.len();
    let (min, max) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let mean = finite.iter().sum::<f64>() / n.max(1) as f64;
    let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    let stddev = var.sqrt();
    let mut counts = vec![0usize; bins];
    let mut outliers = 0usize;
    for &v in &finite {
        let k = if max > min {
            (((v - min) / (max - min)) * bins as f64).min(bins as f64 - 1.0) as usize
        } else {
            0
        };
        counts[k] += 1;
        if (v - mean).abs() > 4.0 * stddev {
            outliers += 1;
        }
    }
    let bin_edges = (0..=bins)
        .map(|k| {
            if max > min {
                min + (max - min) * k as f64 / bins as f64
            } else {
                min
            }
        })
        .collect();
    HistogramReport {
        label: label.to_string(),
        bin_edges,
        counts,
        mean,
        stddev,
        outlier_share: outliers as f64 / n.max(1) as f64,
    }
}
