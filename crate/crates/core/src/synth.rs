//! Synthetic soil-sample generator with controllable spatial
//! autocorrelation, used for pipeline smoke runs and the split-leakage
//! experiments.
//!
//! Each feature is a sum of K random sinusoidal plane waves whose
//! wavelengths are at least `correlation_length_deg`, plus white noise.
//! Nearby points therefore share smooth structure while distant points are
//! close to independent.

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::{FeatureTable, Nutrient, SampleRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub lat_range: (f64, f64),
    pub lon_range: (f64, f64),
    /// Smallest wavelength of the smooth fields, in degrees.
    pub correlation_length_deg: f64,
    pub n_features: usize,
    pub target_rule: TargetRule,
    /// Standard deviation of white noise added to features and target.
    pub noise_std: f64,
    /// Exponentiate the target to produce a right-skewed distribution.
    pub skew: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 500,
            lat_range: (40.0, 60.0),
            lon_range: (0.0, 40.0),
            correlation_length_deg: 8.0,
            n_features: 6,
            target_rule: TargetRule::Linear,
            noise_std: 0.1,
            skew: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("empty coordinate range")]
    EmptyRange,
    #[error("correlation length must be positive")]
    BadCorrelationLength,
}

/// One smooth scalar field over (lat, lon): a sum of sinusoidal components.
#[derive(Debug, Clone)]
pub struct SmoothField {
    // (amplitude, k_lat, k_lon, phase) per component
    components: Vec<(f64, f64, f64, f64)>,
}

impl SmoothField {
    const N_COMPONENTS: usize = 16;

    fn random(rng: &mut impl Rng, min_wavelength: f64) -> Self {
        let max_k = std::f64::consts::TAU / min_wavelength;
        let components = (0..Self::N_COMPONENTS)
            .map(|_| {
                let k = rng.gen_range(0.15 * max_k..=max_k);
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let amp = rng.gen_range(0.5..1.5) / (Self::N_COMPONENTS as f64).sqrt();
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                (amp, k * theta.cos(), k * theta.sin(), phase)
            })
            .collect();
        SmoothField { components }
    }

    pub fn eval(&self, lat: f64, lon: f64) -> f64 {
        self.components
            .iter()
            .map(|(amp, kl, ko, phase)| amp * (kl * lat + ko * lon + phase).sin())
            .sum()
    }
}

#[derive(Debug)]
pub struct SynthOutput {
    pub samples: Vec<SampleRecord>,
    pub table: FeatureTable,
    pub targets: Vec<f64>,
    /// Smooth nuisance term baked into the target, independent of the
    /// features; spatially blocked splits should not be able to exploit it.
    pub nuisance: Vec<f64>,
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    if cfg.n_samples < 2 {
        return Err(SynthError::TooFewSamples(cfg.n_samples));
    }
    if cfg.lat_range.1 <= cfg.lat_range.0 || cfg.lon_range.1 <= cfg.lon_range.0 {
        return Err(SynthError::EmptyRange);
    }
    if cfg.correlation_length_deg <= 0.0 {
        return Err(SynthError::BadCorrelationLength);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let fields: Vec<SmoothField> = (0..cfg.n_features)
        .map(|_| SmoothField::random(&mut rng, cfg.correlation_length_deg))
        .collect();
    let nuisance_field = SmoothField::random(&mut rng, cfg.correlation_length_deg);

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut raw = Vec::with_capacity(cfg.n_samples * cfg.n_features);
    let mut targets = Vec::with_capacity(cfg.n_samples);
    let mut nuisance = Vec::with_capacity(cfg.n_samples);
    let date = NaiveDate::from_ymd_opt(2018, 6, 15).unwrap();

    for i in 0..cfg.n_samples {
        let lat = rng.gen_range(cfg.lat_range.0..cfg.lat_range.1);
        let lon = rng.gen_range(cfg.lon_range.0..cfg.lon_range.1);

        let mut feats = Vec::with_capacity(cfg.n_features);
        for f in &fields {
            feats.push(f.eval(lat, lon) + cfg.noise_std * gaussian(&mut rng));
        }

        let rule = match cfg.target_rule {
            TargetRule::Linear => feats
                .iter()
                .enumerate()
                .map(|(j, v)| v / (j + 1) as f64)
                .sum::<f64>(),
            TargetRule::Nonlinear => {
                let a = feats[0];
                let b = feats.get(1).copied().unwrap_or(0.0);
                a * b + (2.0 * a).sin() + 0.5 * b.powi(2)
            }
        };
        // Nuisance amplitude rides on noise_std: noiseless data stays an
        // exact function of the features, while at default noise the
        // nuisance variance exceeds the feature-signal variance.
        let smooth = 15.0 * cfg.noise_std * nuisance_field.eval(lat, lon);
        let mut y = rule + smooth + cfg.noise_std * gaussian(&mut rng);
        if cfg.skew {
            y = (0.5 * y).exp();
        }

        let mut record = SampleRecord::new(i as i64 + 1, lat, lon, date)
            .expect("generated coordinates are in range");
        record.targets.insert(Nutrient::N, y);
        samples.push(record);
        raw.extend_from_slice(&feats);
        targets.push(y);
        nuisance.push(smooth);
    }

    let column_names: Vec<String> = (0..cfg.n_features).map(|j| format!("f{j:02}")).collect();
    let row_keys: Vec<i64> = samples.iter().map(|s| s.point_id).collect();
    let table =
        FeatureTable::from_rows(column_names, row_keys, raw).expect("consistent dimensions");
    Ok(SynthOutput {
        samples,
        table,
        targets,
        nuisance,
    })
}

/// Mean Pearson correlation between a field's values at point pairs whose
/// separation falls in `[d_lo, d_hi)` degrees (Euclidean in lat/lon).
/// Brute-force over all pairs; intended for tests and diagnostics.
pub fn lag_correlation(points: &[(f64, f64)], values: &[f64], d_lo: f64, d_hi: f64) -> Option<f64> {
    assert_eq!(points.len(), values.len());
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    if var == 0.0 {
        return None;
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d =
                ((points[i].0 - points[j].0).powi(2) + (points[i].1 - points[j].1).powi(2)).sqrt();
            if d >= d_lo && d < d_hi {
                acc += (values[i] - mean) * (values[j] - mean);
                count += 1;
            }
        }
    }
    if count == 0 {
        None
    } else {
        Some(acc / count as f64 / var)
    }
}

/// Fisher-Pearson skewness coefficient, E[(x-mu)^3] / sigma^3.
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    m3 / var.powf(1.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shapes_and_bounds() {
        let cfg = SynthConfig {
            n_samples: 200,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        assert_eq!(out.samples.len(), 200);
        assert_eq!(out.targets.len(), 200);
        assert_eq!(out.table.row_keys.len(), 200);
        assert_eq!(out.table.column_names.len(), cfg.n_features);
        for s in &out.samples {
            assert!(s.lat >= 40.0 && s.lat < 60.0);
            assert!(s.lon >= 0.0 && s.lon < 40.0);
            assert!(s.targets.contains_key(&Nutrient::N));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.table.raw(), b.table.raw());
        assert_eq!(a.targets, b.targets);
        let cfg2 = SynthConfig { seed: 1, ..cfg };
        let c = generate(&cfg2).unwrap();
        assert_ne!(a.table.raw(), c.table.raw());
    }

    #[test]
    fn nearby_points_correlate_more_than_distant_ones() {
        let cfg = SynthConfig {
            n_samples: 600,
            correlation_length_deg: 10.0,
            noise_std: 0.05,
            seed: 3,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        let points: Vec<(f64, f64)> = out.samples.iter().map(|s| (s.lat, s.lon)).collect();
        // column 0 of the feature table
        let col0: Vec<f64> = out.table.raw_column(0);
        let near = lag_correlation(&points, &col0, 0.0, 1.0).unwrap();
        let far = lag_correlation(&points, &col0, 15.0, 25.0).unwrap();
        assert!(near > 0.5, "short-lag correlation too weak: {near}");
        assert!(
            near > far + 0.3,
            "no decay with distance: near {near}, far {far}"
        );
    }

    #[test]
    fn skew_flag_produces_right_skew() {
        let base = SynthConfig {
            n_samples: 1000,
            seed: 7,
            ..SynthConfig::default()
        };
        let skewed = generate(&SynthConfig {
            skew: true,
            ..base.clone()
        })
        .unwrap();
        assert!(skewness(&skewed.targets) > 0.5);
        let plain = generate(&base).unwrap();
        assert!(skewness(&plain.targets).abs() < skewness(&skewed.targets));
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let cfg = SynthConfig {
            n_samples: 1,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap_err(), SynthError::TooFewSamples(1));
        let cfg = SynthConfig {
            lat_range: (50.0, 50.0),
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap_err(), SynthError::EmptyRange);
        let cfg = SynthConfig {
            correlation_length_deg: 0.0,
            ..SynthConfig::default()
        };
        assert_eq!(
            generate(&cfg).unwrap_err(),
            SynthError::BadCorrelationLength
        );
    }
}
