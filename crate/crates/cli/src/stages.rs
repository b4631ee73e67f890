//! Stage implementations. Each stage reads the previous stage's files from
//! the output directory, writes its own files plus a manifest, and never
//! touches another stage's outputs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use soilml_core::eval::{self, EvalRow};
use soilml_core::hpo::{self, SampledConfig, StudyBudget, StudyData};
use soilml_core::ingest;
use soilml_core::model::{Features, ModelArtifact, ModelFamily, ARTIFACT_FORMAT_VERSION};
use soilml_core::preprocess::{self, ImputeStrategy, NormMethod, NormalizationStats};
use soilml_core::split::{self, SplitPlan, Strategy};
use soilml_core::synth::{self, SynthConfig, TargetRule};
use soilml_core::tabular::{
    FeatureSetConfig, FeatureTable, Nutrient, SampleRecord, SourceColumns, BANDS, WEATHER_COLUMNS,
};
use soilml_core::tree;

use crate::config::RunConfig;
use crate::manifest::{require_stage, Manifest};

fn section_json<T: serde::Serialize>(section: &T) -> serde_json::Value {
    serde_json::to_value(section).expect("config sections serialize")
}

fn write_soil_table(path: &Path, samples: &[SampleRecord]) -> Result<()> {
    let mut out = String::from("point_id\tlat\tlon\tdate");
    for n in Nutrient::ALL {
        out.push('\t');
        out.push_str(n.name());
    }
    out.push('\n');
    for s in samples {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}",
            s.point_id, s.lat, s.lon, s.sample_date
        ));
        for n in Nutrient::ALL {
            match s.targets.get(&n) {
                Some(v) => out.push_str(&format!("\t{v}")),
                None => out.push_str("\tNA"),
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_soil(path: &Path) -> Result<Vec<SampleRecord>> {
    let f = std::fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ingest::read_soil_table(std::io::BufReader::new(f))?)
}

fn read_table(path: &Path) -> Result<FeatureTable> {
    FeatureTable::read_from_path(path).with_context(|| format!("reading {}", path.display()))
}

fn nutrient_of(cfg: &RunConfig) -> Result<Nutrient> {
    Nutrient::from_name(&cfg.model.nutrient)
        .ok_or_else(|| anyhow::anyhow!("model.nutrient: unknown nutrient {:?}", cfg.model.nutrient))
}

fn family_of(cfg: &RunConfig) -> Result<ModelFamily> {
    ModelFamily::from_name(&cfg.model.family).ok_or_else(|| {
        anyhow::anyhow!(
            "model.family: expected gbt, rf or fcnn, got {:?}",
            cfg.model.family
        )
    })
}

fn space_for(family: ModelFamily) -> hpo::SearchSpace {
    match family {
        ModelFamily::Gbt => hpo::gbt_space(),
        ModelFamily::Rf => hpo::rf_space(),
        ModelFamily::Fcnn => hpo::fcnn_space(),
    }
}

fn budget_of(cfg: &RunConfig) -> StudyBudget {
    StudyBudget {
        gbt_rounds: cfg.tune.gbt_rounds,
        gbt_bins: cfg.tune.gbt_bins,
        gbt_patience: cfg.tune.gbt_patience,
        fcnn_epochs: cfg.tune.fcnn_epochs,
    }
}

/// Gathers the listed point ids (in order) into a flat feature matrix.
fn gather_rows(table: &FeatureTable, ids: &[i64]) -> Result<Vec<f64>> {
    let d = table.n_cols();
    let mut out = Vec::with_capacity(ids.len() * d);
    for id in ids {
        let row = table
            .row_index(*id)
            .ok_or_else(|| anyhow::anyhow!("point {id} is missing from the feature table"))?;
        out.extend_from_slice(table.raw_row(row));
    }
    Ok(out)
}

fn targets_for(samples: &[SampleRecord], nutrient: Nutrient, ids: &[i64]) -> Result<Vec<f64>> {
    let by_id: HashMap<i64, f64> = samples
        .iter()
        .filter_map(|s| s.targets.get(&nutrient).map(|v| (s.point_id, *v)))
        .collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| anyhow::anyhow!("point {id} has no {} target", nutrient.name()))
        })
        .collect()
}

// ---------------------------------------------------------------------------

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let rule = match cfg.synth.target_rule.as_str() {
        "linear" => TargetRule::Linear,
        "nonlinear" => TargetRule::Nonlinear,
        other => bail!("synth.target_rule: expected linear or nonlinear, got {other:?}"),
    };
    let scfg = SynthConfig {
        n_samples: cfg.synth.n_samples,
        lat_range: cfg.synth.lat_range,
        lon_range: cfg.synth.lon_range,
        correlation_length_deg: cfg.synth.correlation_length_deg,
        n_features: cfg.synth.n_features,
        target_rule: rule,
        noise_std: cfg.synth.noise_std,
        skew: cfg.synth.skew,
        seed: cfg.seed,
    };
    let data = synth::generate(&scfg)?;

    let soil = out.join("soil.tsv");
    write_soil_table(&soil, &data.samples)?;
    let feats = out.join("features_raw.tsv");
    data.table.write_to_path(&feats, false)?;

    let mut m = Manifest::new("synth", cfg.seed, section_json(&cfg.synth));
    m.record_output(&soil)?;
    m.record_output(&feats)?;
    m.extra
        .insert("n_samples".into(), data.samples.len().into());
    m.save(out)?;
    println!(
        "synth: {} samples, {} features -> {}",
        data.samples.len(),
        cfg.synth.n_features,
        out.display()
    );
    Ok(())
}

pub fn cmd_ingest(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let soil_src = cfg
        .ingest
        .soil_table
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("ingest.soil_table: path required"))?;
    let samples = read_soil(soil_src)?;
    let mut sources = SourceColumns::default();
    let mut inputs: Vec<PathBuf> = vec![soil_src.clone()];

    let feature_config = FeatureSetConfig {
        surr: cfg.ingest.neighbors,
        wthr: cfg.ingest.weather_fixture.is_some(),
        cry: cfg.ingest.yield_dir.is_some(),
        clay: cfg.ingest.embeddings.is_some(),
    };

    // band pixels
    let patch_dir = cfg
        .ingest
        .patch_dir
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("ingest.patch_dir: path required"))?;
    let band_names = feature_config.band_column_names();
    let mut band_cols: Vec<HashMap<i64, f64>> = vec![HashMap::new(); band_names.len()];
    for s in &samples {
        let patches: Vec<ingest::PatchFile> = BANDS
            .iter()
            .map(|b| {
                let p = patch_dir.join(format!("{}_{b}.spx", s.point_id));
                let f =
                    std::fs::File::open(&p).with_context(|| format!("patch {}", p.display()))?;
                Ok(ingest::PatchFile::read(std::io::BufReader::new(f))?)
            })
            .collect::<Result<_>>()?;
        let values = ingest::extract_pixels(&patches, cfg.ingest.neighbors)?;
        for (col, v) in values.into_iter().enumerate() {
            band_cols[col].insert(s.point_id, v);
        }
    }
    for (name, col) in band_names.iter().zip(band_cols) {
        sources.push_band(name.clone(), col);
    }

    // weather via fixture-backed fetcher + persistent cache
    if let Some(fixture_path) = &cfg.ingest.weather_fixture {
        inputs.push(fixture_path.clone());
        let fixture = ingest::WeatherCache::load(fixture_path)?;
        struct CacheFetcher(ingest::WeatherCache);
        impl ingest::WeatherFetcher for CacheFetcher {
            fn fetch(
                &mut self,
                key: &ingest::WeatherKey,
            ) -> std::result::Result<Option<ingest::WeatherObservation>, ingest::IngestError>
            {
                Ok(self.0.get(key).copied())
            }
        }
        let mut fetcher = CacheFetcher(fixture);
        let cache_path = out.join("weather_cache.tsv");
        let mut cache = ingest::WeatherCache::load(&cache_path)?;
        let res = ingest::fetch_weather(&samples, &mut fetcher, &mut cache)?;
        cache.save(&cache_path)?;
        if !res.unresolved.is_empty() {
            bail!(
                "weather unresolved for {} samples (first: {:?})",
                res.unresolved.len(),
                &res.unresolved[..res.unresolved.len().min(5)]
            );
        }
        for (i, name) in WEATHER_COLUMNS.iter().enumerate() {
            let col: HashMap<i64, f64> = res
                .resolved
                .iter()
                .map(|(id, o)| (*id, o.values[i]))
                .collect();
            sources.push_weather(*name, col);
        }
    }

    // crop yield scores
    if let Some(dir) = &cfg.ingest.yield_dir {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "yld"))
            .collect();
        paths.sort();
        for p in paths {
            inputs.push(p.clone());
            let f = std::fs::File::open(&p)?;
            let raster = ingest::YieldRaster::read(std::io::BufReader::new(f))?;
            let mut col = HashMap::new();
            for s in &samples {
                col.insert(s.point_id, raster.sample(s.lat, s.lon)?);
            }
            sources.push_yield(format!("CRY_{}", raster.crop_code), col);
        }
    }

    // embeddings
    if let Some(path) = &cfg.ingest.embeddings {
        inputs.push(path.clone());
        let f = std::fs::File::open(path)?;
        let table = ingest::read_embeddings(std::io::BufReader::new(f))?;
        for j in 0..soilml_core::tabular::EMBEDDING_DIM {
            let col: HashMap<i64, f64> = table.iter().map(|(id, v)| (*id, v[j])).collect();
            sources.push_embedding(format!("embedding_{j:04}"), col);
        }
    }

    let table = soilml_core::tabular::assemble_feature_table(&samples, &sources, feature_config)?;
    let soil_copy = out.join("soil.tsv");
    write_soil_table(&soil_copy, &samples)?;
    let feats = out.join("features_raw.tsv");
    table.write_to_path(&feats, false)?;

    let mut m = Manifest::new("ingest", cfg.seed, section_json(&cfg.ingest));
    for p in &inputs {
        m.record_input(p)?;
    }
    m.record_output(&soil_copy)?;
    m.record_output(&feats)?;
    m.extra
        .insert("feature_set".into(), feature_config.label().into());
    m.extra.insert("n_columns".into(), table.n_cols().into());
    m.save(out)?;
    println!(
        "ingest: {} samples, {} columns ({})",
        samples.len(),
        table.n_cols(),
        feature_config.label()
    );
    Ok(())
}

pub fn cmd_preprocess(cfg: &RunConfig, out: &Path) -> Result<()> {
    require_stage(out, &["synth", "ingest"])?;
    let soil_path = out.join("soil.tsv");
    let feats_path = out.join("features_raw.tsv");
    let mut samples = read_soil(&soil_path)?;
    let table = read_table(&feats_path)?;

    let strategy = match cfg.preprocess.impute.as_str() {
        "none" => None,
        "constant_midpoint" => Some(ImputeStrategy::ConstantMidpoint),
        "uniform_random" => Some(ImputeStrategy::UniformRandom { seed: cfg.seed }),
        other => bail!(
            "preprocess.impute: expected none, constant_midpoint or uniform_random, got {other:?}"
        ),
    };
    if let Some(strategy) = strategy {
        for n in Nutrient::ALL {
            if n.lod().numeric().is_some() {
                preprocess::impute_below_lod(&mut samples, n, strategy)?;
            }
        }
    }
    let soil_imputed = out.join("soil_imputed.tsv");
    write_soil_table(&soil_imputed, &samples)?;

    let method = match cfg.preprocess.method.as_str() {
        "minmax" => NormMethod::Minmax,
        "log_minmax" => NormMethod::LogMinmax,
        other => bail!("preprocess.method: expected minmax or log_minmax, got {other:?}"),
    };
    let (normed, stats) = preprocess::normalize(&table, method)?;
    let norm_path = out.join("features_norm.tsv");
    normed.write_to_path(&norm_path, true)?;
    let stats_path = out.join("norm_stats.json");
    std::fs::write(&stats_path, serde_json::to_string_pretty(&stats)? + "\n")?;

    let corr = preprocess::pearson_matrix(&table)?;
    let reports = out.join("reports");
    std::fs::create_dir_all(&reports)?;
    let corr_tsv = reports.join("corr_features.tsv");
    let mut buf = Vec::new();
    corr.write_delimited(&mut buf)?;
    std::fs::write(&corr_tsv, buf)?;
    let corr_svg = reports.join("corr_features.svg");
    std::fs::write(&corr_svg, corr.to_svg())?;

    // target distribution summaries
    let mut hist_buf = Vec::new();
    for n in Nutrient::ALL {
        let values: Vec<f64> = samples
            .iter()
            .filter_map(|s| s.targets.get(&n))
            .copied()
            .collect();
        if values.len() >= 2 {
            let rep =
                preprocess::histogram_report(&values, n.name(), cfg.preprocess.histogram_bins);
            rep.write_delimited(&mut hist_buf)?;
            hist_buf.push(b'\n');
        }
    }
    let hist_path = out.join("histograms.txt");
    std::fs::write(&hist_path, hist_buf)?;

    let mut m = Manifest::new("preprocess", cfg.seed, section_json(&cfg.preprocess));
    m.record_input(&soil_path)?;
    m.record_input(&feats_path)?;
    for p in [
        &soil_imputed,
        &norm_path,
        &stats_path,
        &corr_tsv,
        &corr_svg,
        &hist_path,
    ] {
        m.record_output(p)?;
    }
    m.save(out)?;
    println!(
        "preprocess: normalized {} columns ({})",
        table.n_cols(),
        cfg.preprocess.method
    );
    Ok(())
}

pub fn cmd_split(cfg: &RunConfig, out: &Path) -> Result<()> {
    require_stage(out, &["preprocess"])?;
    let soil_path = out.join("soil_imputed.tsv");
    let samples = read_soil(&soil_path)?;
    let plan = match cfg.split.strategy.as_str() {
        "single" => split::single_split(&samples, cfg.split.ratio, cfg.seed)?,
        "spatial_grid" => split::spatial_grid_split(
            &samples,
            cfg.split.grid_deg,
            cfg.split.test_share,
            cfg.split.folds,
            cfg.seed,
        )?,
        other => bail!("split.strategy: expected single or spatial_grid, got {other:?}"),
    };
    let tsv = out.join("split_plan.tsv");
    let mut buf = Vec::new();
    plan.write_delimited(&mut buf)?;
    std::fs::write(&tsv, buf)?;
    let json = out.join("split_plan.json");
    std::fs::write(&json, serde_json::to_string_pretty(&plan)? + "\n")?;

    let mut m = Manifest::new("split", cfg.seed, section_json(&cfg.split));
    m.record_input(&soil_path)?;
    m.record_output(&tsv)?;
    m.record_output(&json)?;
    m.extra.insert("plan_hash".into(), plan.hash().into());
    m.extra
        .insert("n_train".into(), plan.train_ids().len().into());
    m.extra
        .insert("n_test".into(), plan.test_ids().len().into());
    m.save(out)?;
    println!(
        "split: {} train / {} test ({})",
        plan.train_ids().len(),
        plan.test_ids().len(),
        cfg.split.strategy
    );
    Ok(())
}

fn load_plan(out: &Path) -> Result<SplitPlan> {
    let text =
        std::fs::read_to_string(out.join("split_plan.json")).context("reading split_plan.json")?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct BestConfig {
    pub family: String,
    pub nutrient: String,
    pub config: SampledConfig,
    pub validation_rmse: f64,
    pub best_trial: u64,
    pub n_val: usize,
}

/// Validation rounds for the study: spatial plans use their declared folds;
/// single plans carve an inner validation set out of the training ids.
fn study_rounds(
    plan: &SplitPlan,
    samples: &[SampleRecord],
    validation_share: f64,
    seed: u64,
) -> Result<Vec<split::FoldRound>> {
    match plan.strategy {
        Strategy::SpatialGrid => Ok(split::fold_rounds(plan)?),
        Strategy::Single => {
            let train_ids = plan.train_ids();
            let train_samples: Vec<SampleRecord> = samples
                .iter()
                .filter(|s| train_ids.contains(&s.point_id))
                .cloned()
                .collect();
            let inner = split::single_split(&train_samples, 1.0 - validation_share, seed ^ 0x1a2b)?;
            Ok(vec![(inner.train_ids(), inner.test_ids())])
        }
    }
}

pub fn cmd_tune(cfg: &RunConfig, out: &Path) -> Result<()> {
    require_stage(out, &["split"])?;
    let samples = read_soil(&out.join("soil_imputed.tsv"))?;
    let table = read_table(&out.join("features_norm.tsv"))?;
    let plan = load_plan(out)?;
    let nutrient = nutrient_of(cfg)?;
    let family = family_of(cfg)?;

    // Order the modeling matrix by the table's own row order and translate
    // the id-based rounds into row indices.
    let all_ids: Vec<i64> = table.row_keys.clone();
    let xs = gather_rows(&table, &all_ids)?;
    let ys = targets_for(&samples, nutrient, &all_ids)?;
    let row_of: HashMap<i64, usize> = all_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let to_rows = |ids: &[i64]| -> Vec<usize> { ids.iter().map(|id| row_of[id]).collect() };

    let id_rounds = study_rounds(&plan, &samples, cfg.tune.validation_share, cfg.seed)?;
    let n_val = id_rounds.iter().map(|(_, v)| v.len()).sum::<usize>() / id_rounds.len();
    let rounds: Vec<(Vec<usize>, Vec<usize>)> = id_rounds
        .iter()
        .map(|(t, v)| (to_rows(t), to_rows(v)))
        .collect();
    let data = StudyData {
        x: Features::new(&xs, table.n_cols()),
        y: &ys,
        rounds,
        refit_rows: to_rows(&plan.train_ids()),
    };
    let budget = budget_of(cfg);
    let study = hpo::run_study(
        family,
        &data,
        &space_for(family),
        cfg.tune.n_trials,
        cfg.seed,
        &budget,
        &table.column_names,
    )?;

    let trials_path = out.join("trials.tsv");
    let mut buf = Vec::new();
    hpo::write_trial_log(&mut buf, &study.trials)?;
    std::fs::write(&trials_path, buf)?;

    let best = study
        .trials
        .iter()
        .find(|t| t.trial_id == study.best_trial)
        .expect("best trial exists");
    let best_cfg = BestConfig {
        family: family.name().to_string(),
        nutrient: nutrient.name().to_string(),
        config: best.config.clone(),
        validation_rmse: best.validation_rmse,
        best_trial: best.trial_id,
        n_val,
    };
    let best_path = out.join("best_config.json");
    std::fs::write(&best_path, serde_json::to_string_pretty(&best_cfg)? + "\n")?;

    let mut m = Manifest::new("tune", cfg.seed, section_json(&cfg.tune));
    for f in ["soil_imputed.tsv", "features_norm.tsv", "split_plan.json"] {
        m.record_input(&out.join(f))?;
    }
    m.record_output(&trials_path)?;
    m.record_output(&best_path)?;
    m.extra.insert("best_trial".into(), study.best_trial.into());
    m.extra
        .insert("validation_rmse".into(), best.validation_rmse.into());
    m.save(out)?;
    println!(
        "tune: {} trials, best trial {} (validation RMSE {:.4})",
        study.trials.len(),
        study.best_trial,
        best.validation_rmse
    );
    Ok(())
}

fn load_best(out: &Path) -> Result<BestConfig> {
    let text = std::fs::read_to_string(out.join("best_config.json"))
        .context("reading best_config.json")?;
    Ok(serde_json::from_str(&text)?)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    require_stage(out, &["tune"])?;
    let samples = read_soil(&out.join("soil_imputed.tsv"))?;
    let table = read_table(&out.join("features_norm.tsv"))?;
    let plan = load_plan(out)?;
    let best = load_best(out)?;
    let family = ModelFamily::from_name(&best.family)
        .ok_or_else(|| anyhow::anyhow!("best_config.json: unknown family {:?}", best.family))?;
    let nutrient = Nutrient::from_name(&best.nutrient)
        .ok_or_else(|| anyhow::anyhow!("best_config.json: unknown nutrient {:?}", best.nutrient))?;

    let train_ids = plan.train_ids();
    let xs = gather_rows(&table, &train_ids)?;
    let ys = targets_for(&samples, nutrient, &train_ids)?;
    let kind = hpo::fit_sampled(
        family,
        &best.config,
        &budget_of(cfg),
        cfg.seed,
        Features::new(&xs, table.n_cols()),
        &ys,
        None,
    )
    .map_err(|status| anyhow::anyhow!("final fit failed with status {status:?}"))?;

    let stats: NormalizationStats =
        serde_json::from_str(&std::fs::read_to_string(out.join("norm_stats.json"))?)?;
    let artifact = ModelArtifact {
        format_version: ARTIFACT_FORMAT_VERSION,
        feature_names: table.column_names.clone(),
        norm_stats: Some(stats),
        plan_hash: Some(plan.hash()),
        model: kind,
    };
    let model_path = out.join("model.json");
    artifact.save(&model_path)?;

    let mut m = Manifest::new("train", cfg.seed, section_json(&cfg.model));
    for f in [
        "soil_imputed.tsv",
        "features_norm.tsv",
        "split_plan.json",
        "best_config.json",
        "norm_stats.json",
    ] {
        m.record_input(&out.join(f))?;
    }
    m.record_output(&model_path)?;
    m.save(out)?;
    println!(
        "train: fitted {} on {} samples",
        best.family,
        train_ids.len()
    );
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<()> {
    require_stage(out, &["train"])?;
    let samples = read_soil(&out.join("soil_imputed.tsv"))?;
    let table = read_table(&out.join("features_norm.tsv"))?;
    let plan = load_plan(out)?;
    let best = load_best(out)?;
    let artifact = ModelArtifact::load(&out.join("model.json"))?;
    let nutrient = Nutrient::from_name(&best.nutrient).expect("validated at tune time");

    let test_ids = plan.test_ids();
    let xs = gather_rows(&table, &test_ids)?;
    let ys = targets_for(&samples, nutrient, &test_ids)?;
    let rmse_test = eval::evaluate(
        &artifact,
        Features::new(&xs, table.n_cols()),
        &ys,
        Some(&plan.hash()),
    )?;

    let all_targets = targets_for(&samples, nutrient, &table.row_keys)?;
    let (mean, std) = eval::mean_std(&all_targets);
    let row = EvalRow {
        family: best.family.clone(),
        nutrient: best.nutrient.clone(),
        feature_set: cfg.report.feature_set.clone(),
        rmse_test,
        rmse_average: match plan.strategy {
            Strategy::SpatialGrid => Some(best.validation_rmse),
            Strategy::Single => None,
        },
        target_mean: mean,
        target_std: std,
        n_train: plan.train_ids().len(),
        n_val: best.n_val,
        n_test: test_ids.len(),
    };
    let eval_json = out.join("eval.json");
    std::fs::write(
        &eval_json,
        serde_json::to_string_pretty(&vec![&row])? + "\n",
    )?;
    let eval_tsv = out.join("eval.tsv");
    let mut buf = Vec::new();
    eval::write_eval_rows(&mut buf, std::slice::from_ref(&row))?;
    std::fs::write(&eval_tsv, buf)?;

    let mut m = Manifest::new("evaluate", cfg.seed, section_json(&cfg.evaluate));
    for f in [
        "soil_imputed.tsv",
        "features_norm.tsv",
        "split_plan.json",
        "model.json",
    ] {
        m.record_input(&out.join(f))?;
    }
    m.record_output(&eval_json)?;
    m.record_output(&eval_tsv)?;
    m.save(out)?;
    println!(
        "evaluate: test RMSE {rmse_test:.4} over {} samples",
        test_ids.len()
    );
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig, out: &Path) -> Result<()> {
    require_stage(out, &["evaluate"])?;
    let samples = read_soil(&out.join("soil_imputed.tsv"))?;
    let table = read_table(&out.join("features_norm.tsv"))?;
    let plan = load_plan(out)?;
    let best = load_best(out)?;
    let artifact = ModelArtifact::load(&out.join("model.json"))?;
    let nutrient = Nutrient::from_name(&best.nutrient).expect("validated at tune time");

    let rows: Vec<EvalRow> =
        serde_json::from_str(&std::fs::read_to_string(out.join("eval.json"))?)?;

    let test_ids = plan.test_ids();
    let xs = gather_rows(&table, &test_ids)?;
    let ys = targets_for(&samples, nutrient, &test_ids)?;
    let perm = eval::permutation_importance(
        &artifact,
        Features::new(&xs, table.n_cols()),
        &ys,
        cfg.evaluate.permutation_repeats,
        cfg.seed,
    )?;
    let mut importances = vec![(
        format!("{}_{}_permutation", best.family, best.nutrient),
        perm,
    )];
    if let Ok(gain) = tree::gain_importance(&artifact) {
        importances.push((format!("{}_{}_gain", best.family, best.nutrient), gain));
    }

    let reports = out.join("reports");
    eval::render_reports(&reports, &cfg.report.tag, &rows, &importances)?;

    let mut m = Manifest::new("report", cfg.seed, section_json(&cfg.report));
    for f in ["eval.json", "model.json", "split_plan.json"] {
        m.record_input(&out.join(f))?;
    }
    m.record_output(&reports.join(format!("perf_{}.txt", cfg.report.tag)))?;
    m.record_output(&reports.join(format!("perf_{}.tsv", cfg.report.tag)))?;
    for (name, _) in &importances {
        m.record_output(&reports.join(format!("importance_{name}.svg")))?;
        m.record_output(&reports.join(format!("importance_{name}.tsv")))?;
    }
    m.save(out)?;
    println!("report: wrote {}", reports.display());
    Ok(())
}
