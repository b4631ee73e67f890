//! Shared fixtures for the criterion benchmarks.

use soilml_core::synth::{SynthConfig, SynthOutput};

/// Deterministic synthetic regression problem used by every benchmark.
pub fn bench_data(n_samples: usize, n_features: usize) -> SynthOutput {
    soilml_core::synth::generate(&SynthConfig {
        n_samples,
        n_features,
        seed: 7,
        ..SynthConfig::default()
    })
    .unwrap()
}
