//! Property suites over the preprocessing, splitting, tuning and tabular
//! invariants.

use chrono::NaiveDate;
use proptest::prelude::*;

use soilml_core::hpo;
use soilml_core::preprocess::{self, NormMethod};
use soilml_core::split;
use soilml_core::tabular::{FeatureSetConfig, FeatureTable, SampleRecord};

fn table_strategy(max_n: usize, max_d: usize) -> impl Strategy<Value = FeatureTable> {
    (2..max_n, 1..max_d).prop_flat_map(|(n, d)| {
        proptest::collection::vec(-1e6..1e6f64, n * d).prop_map(move |raw| {
            FeatureTable::from_rows(
                (0..d).map(|j| format!("c{j}")).collect(),
                (0..n as i64).collect(),
                raw,
            )
            .unwrap()
        })
    })
}

proptest! {
    #[test]
    fn normalization_round_trips(table in table_strategy(30, 6)) {
        let (normed, stats) = preprocess::normalize(&table, NormMethod::Minmax).unwrap();
        let data = normed.normalized().unwrap();
        let d = table.n_cols();
        for i in 0..table.n_rows() {
            for j in 0..d {
                let span = stats.col_max[j] - stats.col_min[j];
                let back = stats.col_min[j] + data[i * d + j] * span;
                let orig = table.raw()[i * d + j];
                if span > 0.0 {
                    prop_assert!((back - orig).abs() <= 1e-9 * orig.abs().max(1.0));
                }
                prop_assert!((0.0..=1.0).contains(&data[i * d + j]));
            }
        }
    }

    #[test]
    fn pearson_is_affine_invariant(
        table in table_strategy(20, 4),
        scale in 0.1..50.0f64,
        shift in -100.0..100.0f64,
    ) {
        let base = preprocess::pearson_matrix(&table).unwrap();
        let d = table.n_cols();
        // positively rescale column 0
        let mut raw = table.raw().to_vec();
        for i in 0..table.n_rows() {
            raw[i * d] = raw[i * d] * scale + shift;
        }
        let scaled = FeatureTable::from_rows(
            table.column_names.clone(),
            table.row_keys.clone(),
            raw,
        )
        .unwrap();
        let after = preprocess::pearson_matrix(&scaled).unwrap();
        for i in 0..d {
            for j in 0..d {
                let (a, b) = (base.get(i, j), after.get(i, j));
                if a.is_nan() {
                    prop_assert!(b.is_nan());
                } else {
                    prop_assert!((a - b).abs() < 1e-6, "r[{i}][{j}]: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn single_split_sizes_are_exact(n in 2usize..2000, ratio in 0.05..0.95f64, seed: u64) {
        let date = NaiveDate::from_ymd_opt(2018, 6, 1).unwrap();
        let samples: Vec<SampleRecord> = (0..n)
            .map(|i| SampleRecord::new(i as i64, 0.0, 0.0, date).unwrap())
            .collect();
        let plan = split::single_split(&samples, ratio, seed).unwrap();
        let expect_train = (ratio * n as f64).floor() as usize;
        prop_assert_eq!(plan.train_ids().len(), expect_train);
        prop_assert_eq!(plan.test_ids().len(), n - expect_train);
    }

    #[test]
    fn spatial_test_share_is_close_with_many_cells(seed in 0u64..500) {
        // 10x10 grid of cells, a few samples each: plenty of cells, so the
        // greedy assignment should land within 5 points of the target share
        let date = NaiveDate::from_ymd_opt(2018, 6, 1).unwrap();
        let mut samples = Vec::new();
        let mut id = 0i64;
        for cx in 0..10 {
            for cy in 0..10 {
                for k in 0..(1 + (cx + cy + seed as usize) % 4) {
                    samples.push(
                        SampleRecord::new(
                            id,
                            cx as f64 + 0.1 + 0.2 * k as f64,
                            cy as f64 + 0.5,
                            date,
                        )
                        .unwrap(),
                    );
                    id += 1;
                }
            }
        }
        let plan = split::spatial_grid_split(&samples, 1.0, 0.2, 5, seed).unwrap();
        let share = plan.test_ids().len() as f64 / samples.len() as f64;
        prop_assert!((share - 0.2).abs() < 0.05, "test share {share}");
    }

    #[test]
    fn sampled_configs_respect_bounds(seed: u64, trial in 0u64..1000) {
        for space in [hpo::gbt_space(), hpo::rf_space(), hpo::fcnn_space()] {
            let cfg = hpo::sample(&space, seed, trial).unwrap();
            for (name, spec) in &space.params {
                match spec {
                    hpo::ParamSpec::IntRange { lo, hi } => {
                        prop_assert!((*lo..=*hi).contains(&cfg[name].as_int()));
                    }
                    hpo::ParamSpec::RealRange { lo, hi, .. } => {
                        prop_assert!((*lo..=*hi).contains(&cfg[name].as_real()));
                    }
                    hpo::ParamSpec::StepRange { lo, hi, step } => {
                        let v = cfg[name].as_int();
                        prop_assert!((*lo..=*hi).contains(&v) && (v - lo) % step == 0);
                    }
                    hpo::ParamSpec::Categorical(options) => {
                        prop_assert!(options.iter().any(|o| o == cfg[name].as_text()));
                    }
                }
            }
        }
    }

    #[test]
    fn column_count_formula_holds(surr: bool, wthr: bool, cry: bool, clay: bool) {
        let cfg = FeatureSetConfig { surr, wthr, cry, clay };
        let mut expect = if surr { 108 } else { 12 };
        if wthr {
            expect += 9;
        }
        if cry {
            expect += 27;
        }
        if clay {
            expect += 1024;
        }
        prop_assert_eq!(cfg.column_count(), expect);
        prop_assert_eq!(cfg.band_column_names().len(), if surr { 108 } else { 12 });
    }
}
