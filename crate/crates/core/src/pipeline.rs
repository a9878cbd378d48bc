//! End-to-end orchestration: configuration, stage artifacts, manifests and
//! report files for the `prepare`, `balance`, `baseline`, `tune` and
//! `compare` commands.
//!
//! Every stage writes its manifest next to its data artifact and later
//! stages reuse artifacts whose manifest stamp matches the current
//! configuration, so a run can resume from any completed stage. All
//! randomness is derived from the master seed by stage name, and wall
//! times go to separate `timings_*.json` files so the report files are
//! byte-identical across runs.

use std::collections::BTreeMap;
use std::fs;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::{
    downsample_to, smote, undersample_majority, verify_convexity, BalanceConfig, BalancedDataset,
};
use crate::eval::{confusion, cross_validate, metrics, split, EvalReport, FoldPlan};
use crate::features::{build_matrix, default_plan, FeatureManifest, FeatureMatrix};
use crate::ingest::{clean, load_id_mappings, load_raw, missing_profile, CleanReport, CLASS_NAMES};
use crate::learners::{fit_k, Family, LearnerSpec, ModelManifest, ParamValue, Params};
use crate::seed::derive_seed;
use crate::stats::{
    boxplot_summary, outlier_attribution, sign_test_with_critical, write_boxplot_csv,
    BoxplotSummary, SignTestResult,
};
use crate::tune::{
    builtin_grid, grid_search, significance, summarize, ParamGrid, ParamSummary, Significance,
    TuneError,
};

#[derive(Debug, Error)]
#[error("stage {stage}: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

fn stage_err<E: std::error::Error + Send + Sync + 'static>(
    stage: &'static str,
) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        source: Box::new(e),
    }
}

fn simple_err(stage: &'static str, message: String) -> PipelineError {
    PipelineError {
        stage,
        source: message.into(),
    }
}

/// Which data an experiment stage trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// Balance the full set before any splitting (the published procedure).
    Full,
    /// Split first, then balance only the training side (leakage-free).
    TrainOnly,
}

/// Flat run configuration; every field has a CLI flag and a JSON key.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_csv: Option<PathBuf>,
    pub ids_csv: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub include_meds: bool,
    pub k_neighbors: usize,
    pub balance_target: Option<usize>,
    pub balance_scope: Scope,
    pub split_fraction: f64,
    pub cv_folds: usize,
    pub compare_folds: usize,
    pub budget: Option<usize>,
    pub tune_scope: Scope,
    pub grid_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_csv: None,
            ids_csv: None,
            out_dir: PathBuf::from("out"),
            seed: 42,
            include_meds: true,
            k_neighbors: 5,
            balance_target: None,
            balance_scope: Scope::Full,
            split_fraction: 0.8,
            cv_folds: 5,
            compare_folds: 10,
            budget: None,
            tune_scope: Scope::Full,
            grid_file: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<RunConfig, PipelineError> {
        let text = fs::read_to_string(path).map_err(stage_err("config"))?;
        serde_json::from_str(&text).map_err(stage_err("config"))
    }

    fn data_csv(&self) -> Result<&Path, PipelineError> {
        self.data_csv.as_deref().ok_or_else(|| {
            simple_err(
                "config",
                "no data csv path given (--data or data_csv)".into(),
            )
        })
    }

    fn variant(&self) -> &'static str {
        variant_name(self.include_meds)
    }
}

fn variant_name(include_meds: bool) -> &'static str {
    if include_meds {
        "with_meds"
    } else {
        "no_meds"
    }
}

/// Stamp embedded in stage manifests; a stage artifact is reused only when
/// its stamp matches the current configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub seed: u64,
    pub data_csv: String,
    pub include_meds: bool,
}

impl Stamp {
    fn of(cfg: &RunConfig, include_meds: bool) -> Result<Stamp, PipelineError> {
        Ok(Stamp {
            seed: cfg.seed,
            data_csv: cfg.data_csv()?.display().to_string(),
            include_meds,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(stage_err("write"))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value).map_err(stage_err("write"))?;
    use std::io::Write;
    writeln!(writer).map_err(stage_err("write"))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Option<T> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Volatile wall-time record, kept out of the deterministic reports.
fn write_timings(
    out_dir: &Path,
    stage: &str,
    entries: &BTreeMap<String, f64>,
) -> Result<(), PipelineError> {
    write_json(&out_dir.join(format!("timings_{stage}.json")), entries)
}

fn update_run_report(
    cfg: &RunConfig,
    command: &str,
    artifacts: &[PathBuf],
) -> Result<(), PipelineError> {
    let path = cfg.out_dir.join("run_report.json");
    let mut report: BTreeMap<String, serde_json::Value> = read_json(&path).unwrap_or_default();
    // paths are stored relative to the output directory so reports stay
    // byte-identical across output locations
    let names: Vec<String> = artifacts
        .iter()
        .map(|p| {
            p.strip_prefix(&cfg.out_dir)
                .unwrap_or(p)
                .display()
                .to_string()
        })
        .collect();
    report.insert(
        command.to_string(),
        serde_json::json!({ "seed": cfg.seed, "artifacts": names }),
    );
    write_json(&path, &report)
}

// ---------------------------------------------------------------- prepare

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CleanManifest {
    pub stamp: Stamp,
    pub report: CleanReport,
    /// Class labels in report order.
    pub class_names: Vec<String>,
    pub id_mapping_sections: Option<[usize; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureStageManifest {
    pub stamp: Stamp,
    pub features: FeatureManifest,
}

pub struct PrepareArtifacts {
    pub cleaned_csv: PathBuf,
    pub features_csv: PathBuf,
    pub clean_report: CleanReport,
    pub feature_manifest: FeatureManifest,
}

/// Parse, profile, clean and encode. Emits `missing_profile.csv`,
/// `cleaned.csv` + manifest, and the design matrix for the configured
/// medication variant.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareArtifacts, PipelineError> {
    let t0 = Instant::now();
    fs::create_dir_all(&cfg.out_dir).map_err(stage_err("prepare"))?;
    let data_path = cfg.data_csv()?;
    let table = load_raw(data_path).map_err(stage_err("prepare"))?;
    println!(
        "prepare: parsed {} rows x {} columns from {}",
        table.n_rows(),
        table.n_columns(),
        data_path.display()
    );

    let profile = missing_profile(&table);
    let profile_path = cfg.out_dir.join("missing_profile.csv");
    let file = File::create(&profile_path).map_err(stage_err("prepare"))?;
    profile
        .write_csv(BufWriter::new(file))
        .map_err(stage_err("prepare"))?;

    let id_sections = match cfg.ids_csv.as_deref() {
        Some(path) => {
            let maps = load_id_mappings(path).map_err(stage_err("prepare"))?;
            Some([
                maps.admission_type.len(),
                maps.discharge_disposition.len(),
                maps.admission_source.len(),
            ])
        }
        None => None,
    };

    let outcome = clean(&table).map_err(stage_err("prepare"))?;
    println!("{}", outcome.report);
    let cleaned_csv = cfg.out_dir.join("cleaned.csv");
    outcome
        .table
        .write_csv_path(&cleaned_csv)
        .map_err(stage_err("prepare"))?;
    let clean_manifest = CleanManifest {
        stamp: Stamp::of(cfg, cfg.include_meds)?,
        report: outcome.report.clone(),
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        id_mapping_sections: id_sections,
    };
    write_json(&cfg.out_dir.join("clean_manifest.json"), &clean_manifest)?;

    let plan = default_plan(cfg.include_meds);
    let (matrix, feature_manifest) =
        build_matrix(&outcome.table, &plan).map_err(stage_err("prepare"))?;
    println!(
        "prepare: encoded {} features ({})",
        feature_manifest.n_features,
        cfg.variant()
    );
    let features_csv = cfg.out_dir.join(format!("features_{}.csv", cfg.variant()));
    matrix
        .write_csv_path(&features_csv, None)
        .map_err(stage_err("prepare"))?;
    write_json(
        &cfg.out_dir
            .join(format!("features_manifest_{}.json", cfg.variant())),
        &FeatureStageManifest {
            stamp: Stamp::of(cfg, cfg.include_meds)?,
            features: feature_manifest.clone(),
        },
    )?;

    let mut timings = BTreeMap::new();
    timings.insert("prepare_total_s".to_string(), t0.elapsed().as_secs_f64());
    write_timings(&cfg.out_dir, "prepare", &timings)?;
    update_run_report(
        cfg,
        "prepare",
        &[profile_path, cleaned_csv.clone(), features_csv.clone()],
    )?;

    Ok(PrepareArtifacts {
        cleaned_csv,
        features_csv,
        clean_report: outcome.report,
        feature_manifest,
    })
}

/// Encoded matrix for a medication variant, reusing the stage artifact
/// when its stamp matches.
fn ensure_features(cfg: &RunConfig, include_meds: bool) -> Result<FeatureMatrix, PipelineError> {
    let variant = variant_name(include_meds);
    let csv_path = cfg.out_dir.join(format!("features_{variant}.csv"));
    let manifest_path = cfg
        .out_dir
        .join(format!("features_manifest_{variant}.json"));
    if let Some(manifest) = read_json::<FeatureStageManifest>(&manifest_path) {
        if manifest.stamp == Stamp::of(cfg, include_meds)? && csv_path.exists() {
            return FeatureMatrix::read_csv_path(&csv_path).map_err(stage_err("prepare"));
        }
    }
    let mut sub = cfg.clone();
    sub.include_meds = include_meds;
    let artifacts = cmd_prepare(&sub)?;
    FeatureMatrix::read_csv_path(&artifacts.features_csv).map_err(stage_err("prepare"))
}

// ---------------------------------------------------------------- balance

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceManifest {
    pub stamp: Stamp,
    pub config: BalanceConfig,
    pub counts_before: Vec<usize>,
    pub counts_after_undersample: Vec<usize>,
    pub counts_after_smote: Vec<usize>,
    pub synthetic_rows: usize,
    pub convexity_verified: bool,
}

fn balance_matrix(
    cfg: &RunConfig,
    matrix: &FeatureMatrix,
    seed_index: u64,
) -> Result<(BalancedDataset, BalanceManifest), PipelineError> {
    let bal_cfg = BalanceConfig {
        seed: derive_seed(cfg.seed, "balance", seed_index),
        k_neighbors: cfg.k_neighbors,
        target_per_class: cfg.balance_target,
    };
    let k = matrix.n_classes().max(2);
    let counts_before = matrix.class_histogram(k);
    let mut undersampled = undersample_majority(matrix, &bal_cfg).map_err(stage_err("balance"))?;
    if let Some(target) = cfg.balance_target {
        // explicit target below current counts: cap every class first
        undersampled =
            downsample_to(&undersampled, target, bal_cfg.seed).map_err(stage_err("balance"))?;
    }
    let counts_after_undersample = undersampled.class_histogram(k);
    let balanced = smote(&undersampled, &bal_cfg).map_err(stage_err("balance"))?;
    let counts_after_smote = balanced.matrix.class_histogram(k);
    verify_convexity(&balanced).map_err(|m| simple_err("balance", m))?;
    let synthetic_rows = balanced
        .provenance
        .iter()
        .filter(|p| !matches!(p, crate::balance::Provenance::Original))
        .count();
    let manifest = BalanceManifest {
        stamp: Stamp::of(cfg, cfg.include_meds)?,
        config: bal_cfg,
        counts_before,
        counts_after_undersample,
        counts_after_smote,
        synthetic_rows,
        convexity_verified: true,
    };
    Ok((balanced, manifest))
}

/// Undersample + SMOTE on the configured variant's matrix; emits the
/// balanced CSV with a provenance column plus its manifest.
pub fn cmd_balance(cfg: &RunConfig) -> Result<BalanceManifest, PipelineError> {
    let t0 = Instant::now();
    fs::create_dir_all(&cfg.out_dir).map_err(stage_err("balance"))?;
    let matrix = ensure_features(cfg, cfg.include_meds)?;
    let (balanced, manifest) = balance_matrix(cfg, &matrix, 0)?;
    let csv_path = cfg.out_dir.join(format!("balanced_{}.csv", cfg.variant()));
    balanced
        .matrix
        .write_csv_path(&csv_path, Some(&balanced.provenance))
        .map_err(stage_err("balance"))?;
    write_json(
        &cfg.out_dir
            .join(format!("balance_manifest_{}.json", cfg.variant())),
        &manifest,
    )?;
    println!(
        "balance: {:?} -> {:?} -> {:?} ({} synthetic rows)",
        manifest.counts_before,
        manifest.counts_after_undersample,
        manifest.counts_after_smote,
        manifest.synthetic_rows
    );
    let mut timings = BTreeMap::new();
    timings.insert("balance_total_s".to_string(), t0.elapsed().as_secs_f64());
    write_timings(&cfg.out_dir, "balance", &timings)?;
    update_run_report(cfg, "balance", &[csv_path])?;
    Ok(manifest)
}

fn ensure_balanced(cfg: &RunConfig, include_meds: bool) -> Result<FeatureMatrix, PipelineError> {
    let variant = variant_name(include_meds);
    let csv_path = cfg.out_dir.join(format!("balanced_{variant}.csv"));
    let manifest_path = cfg.out_dir.join(format!("balance_manifest_{variant}.json"));
    if let Some(manifest) = read_json::<BalanceManifest>(&manifest_path) {
        if manifest.stamp == Stamp::of(cfg, include_meds)? && csv_path.exists() {
            return FeatureMatrix::read_csv_path(&csv_path).map_err(stage_err("balance"));
        }
    }
    let matrix = ensure_features(cfg, include_meds)?;
    let (balanced, manifest) = balance_matrix(cfg, &matrix, 0)?;
    balanced
        .matrix
        .write_csv_path(&csv_path, Some(&balanced.provenance))
        .map_err(stage_err("balance"))?;
    write_json(&manifest_path, &manifest)?;
    Ok(balanced.matrix)
}

// ---------------------------------------------------------------- baseline

/// The reference configurations trained by the baseline command: the
/// published "before tuning" settings per family.
pub fn baseline_roster(seed: u64) -> Vec<LearnerSpec> {
    let s = |family: Family, idx: u64| {
        LearnerSpec::new(family, derive_seed(seed, "baseline-model", idx))
    };
    vec![
        s(Family::NaiveBayes, 0),
        s(Family::GradientBoosting, 1)
            .with("learning_rate", ParamValue::Float(0.1))
            .with("n_estimators", ParamValue::Int(100))
            .with("max_depth", ParamValue::Int(3)),
        s(Family::RandomForest, 2)
            .with("n_estimators", ParamValue::Int(100))
            .with("max_depth", ParamValue::Int(6))
            .with("min_samples_split", ParamValue::Int(2))
            .with("max_features", ParamValue::Str("auto".into())),
        s(Family::DecisionTree, 3),
        s(Family::LogisticRegression, 4)
            .with("C", ParamValue::Float(1.0))
            .with("max_iter", ParamValue::Int(2000)),
        s(Family::Svm, 5).with("C", ParamValue::Float(1.0)),
    ]
}

/// Train/test data for an experiment stage under the configured balance
/// scope.
fn experiment_split(
    cfg: &RunConfig,
    include_meds: bool,
    stage: &str,
) -> Result<(FeatureMatrix, FeatureMatrix), PipelineError> {
    let seed = derive_seed(cfg.seed, "experiment-split", u64::from(include_meds));
    match cfg.balance_scope {
        Scope::Full => {
            let balanced = ensure_balanced(cfg, include_meds)?;
            split(&balanced, cfg.split_fraction, seed, true).map_err(stage_err("baseline"))
        }
        Scope::TrainOnly => {
            let encoded = ensure_features(cfg, include_meds)?;
            let (train, test) =
                split(&encoded, cfg.split_fraction, seed, true).map_err(stage_err("baseline"))?;
            let (balanced, _) = balance_matrix(cfg, &train, 1 + u64::from(include_meds))?;
            println!("{stage}: balanced the training partition only (train-only scope)");
            Ok((balanced.matrix, test))
        }
    }
}

/// Data the tuner and the comparison stage train on.
fn tuning_data(cfg: &RunConfig) -> Result<FeatureMatrix, PipelineError> {
    match (cfg.balance_scope, cfg.tune_scope) {
        (Scope::Full, Scope::Full) => ensure_balanced(cfg, cfg.include_meds),
        (Scope::Full, Scope::TrainOnly) => {
            let balanced = ensure_balanced(cfg, cfg.include_meds)?;
            let seed = derive_seed(cfg.seed, "experiment-split", u64::from(cfg.include_meds));
            let (train, _) =
                split(&balanced, cfg.split_fraction, seed, true).map_err(stage_err("tune"))?;
            Ok(train)
        }
        (Scope::TrainOnly, _) => Ok(experiment_split(cfg, cfg.include_meds, "tune")?.0),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineRow {
    pub model: Family,
    pub recall_macro: f64,
    pub precision_macro: f64,
    pub f1_macro: f64,
    pub accuracy: f64,
    pub recall_micro: f64,
    pub precision_micro: f64,
    pub f1_micro: f64,
}

impl BaselineRow {
    fn of(family: Family, report: &EvalReport) -> BaselineRow {
        BaselineRow {
            model: family,
            recall_macro: report.macro_recall,
            precision_macro: report.macro_precision,
            f1_macro: report.macro_f1,
            accuracy: report.accuracy,
            recall_micro: report.micro_recall,
            precision_micro: report.micro_precision,
            f1_micro: report.micro_f1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineManifest {
    pub stamp: Stamp,
    pub variants: Vec<String>,
    pub split_fraction: f64,
}

fn write_baseline_csv(path: &Path, rows: &[BaselineRow]) -> Result<(), PipelineError> {
    let mut wtr = csv::Writer::from_path(path).map_err(stage_err("baseline"))?;
    wtr.write_record([
        "model",
        "recall_macro",
        "precision_macro",
        "f1_macro",
        "accuracy",
        "recall_micro",
        "precision_micro",
        "f1_micro",
    ])
    .map_err(stage_err("baseline"))?;
    for r in rows {
        wtr.write_record([
            r.model.display_name().to_string(),
            format!("{}", r.recall_macro),
            format!("{}", r.precision_macro),
            format!("{}", r.f1_macro),
            format!("{}", r.accuracy),
            format!("{}", r.recall_micro),
            format!("{}", r.precision_micro),
            format!("{}", r.f1_micro),
        ])
        .map_err(stage_err("baseline"))?;
    }
    wtr.flush().map_err(stage_err("baseline"))?;
    Ok(())
}

/// Train all six families at their reference settings on a seeded split,
/// for one medication variant or both (`ablation`). `save_models`
/// additionally persists every fitted model as reloadable JSON.
pub fn cmd_baseline_full(
    cfg: &RunConfig,
    ablation: bool,
    save_models: bool,
) -> Result<BTreeMap<String, Vec<BaselineRow>>, PipelineError> {
    let t0 = Instant::now();
    fs::create_dir_all(&cfg.out_dir).map_err(stage_err("baseline"))?;
    let variants: Vec<bool> = if ablation {
        vec![true, false]
    } else {
        vec![cfg.include_meds]
    };
    let mut results = BTreeMap::new();
    let mut timings = BTreeMap::new();
    let mut artifacts = Vec::new();

    for include_meds in &variants {
        let variant = variant_name(*include_meds);
        let (train, test) = experiment_split(cfg, *include_meds, "baseline")?;
        let k = train.n_classes().max(test.n_classes()).max(2);
        let mut rows = Vec::new();
        for spec in baseline_roster(cfg.seed) {
            let started = Instant::now();
            let model = fit_k(&spec, &train, k).map_err(stage_err("baseline"))?;
            let pred = model.predict(&test).map_err(stage_err("baseline"))?;
            let cm = confusion(test.labels(), &pred, k).map_err(stage_err("baseline"))?;
            let report = metrics(&cm).map_err(stage_err("baseline"))?;
            let cm_path = cfg
                .out_dir
                .join(format!("confusion_{}_{variant}.csv", spec.family));
            let file = File::create(&cm_path).map_err(stage_err("baseline"))?;
            cm.write_csv(BufWriter::new(file), &CLASS_NAMES)
                .map_err(stage_err("baseline"))?;
            write_json(
                &cfg.out_dir
                    .join(format!("eval_{}_{variant}.json", spec.family)),
                &report,
            )?;
            write_json(
                &cfg.out_dir
                    .join(format!("model_manifest_{}_{variant}.json", spec.family)),
                &ModelManifest::new(&spec, &model),
            )?;
            if save_models {
                model
                    .save(
                        &cfg.out_dir
                            .join(format!("model_{}_{variant}.json", spec.family)),
                    )
                    .map_err(stage_err("baseline"))?;
            }
            timings.insert(
                format!("train_{}_{variant}_s", spec.family),
                model.train_seconds,
            );
            timings.insert(
                format!("evaluate_{}_{variant}_s", spec.family),
                started.elapsed().as_secs_f64(),
            );
            println!(
                "baseline[{variant}] {}: accuracy {:.4}, macro recall {:.4}",
                spec.family.display_name(),
                report.accuracy,
                report.macro_recall
            );
            rows.push(BaselineRow::of(spec.family, &report));
        }
        let csv_path = cfg.out_dir.join(format!("baseline_{variant}.csv"));
        write_baseline_csv(&csv_path, &rows)?;
        artifacts.push(csv_path);
        results.insert(variant.to_string(), rows);
    }

    write_json(
        &cfg.out_dir.join("baseline_manifest.json"),
        &BaselineManifest {
            stamp: Stamp::of(cfg, cfg.include_meds)?,
            variants: variants
                .iter()
                .map(|&v| variant_name(v).to_string())
                .collect(),
            split_fraction: cfg.split_fraction,
        },
    )?;
    timings.insert("baseline_total_s".to_string(), t0.elapsed().as_secs_f64());
    write_timings(&cfg.out_dir, "baseline", &timings)?;
    update_run_report(cfg, "baseline", &artifacts)?;
    Ok(results)
}

/// `cmd_baseline_full` without model persistence.
pub fn cmd_baseline(
    cfg: &RunConfig,
    ablation: bool,
) -> Result<BTreeMap<String, Vec<BaselineRow>>, PipelineError> {
    cmd_baseline_full(cfg, ablation, false)
}

// ---------------------------------------------------------------- tune

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneSummaryFile {
    pub stamp: Stamp,
    pub family: Family,
    pub best_params: Params,
    pub best_mean_accuracy: f64,
    pub worst_mean_accuracy: f64,
    pub evaluated_configs: usize,
    pub truncated_configs: usize,
    pub param_summary: Option<ParamSummary>,
    pub boxplot: Option<BoxplotSummary>,
    pub outlier_attribution: Vec<(String, Vec<(String, usize)>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningComparisonRow {
    pub model: Family,
    pub before_accuracy: Option<f64>,
    pub after_accuracy: Option<f64>,
    pub result: Option<Significance>,
}

/// The families the tuner accepts (naive Bayes has no grid).
pub const TUNABLE: [Family; 5] = [
    Family::GradientBoosting,
    Family::RandomForest,
    Family::DecisionTree,
    Family::LogisticRegression,
    Family::Svm,
];

fn grid_for(cfg: &RunConfig, family: Family) -> Result<ParamGrid, TuneError> {
    if let Some(path) = &cfg.grid_file {
        let grid = ParamGrid::from_json_file(path)?;
        if grid.family == family {
            return Ok(grid);
        }
    }
    builtin_grid(family)
}

/// Grid-search the requested families, emit ranked CSVs, parameter
/// summaries, boxplot data and the before/after comparison table.
pub fn cmd_tune(
    cfg: &RunConfig,
    families: &[Family],
) -> Result<Vec<TuningComparisonRow>, PipelineError> {
    let t0 = Instant::now();
    fs::create_dir_all(&cfg.out_dir).map_err(stage_err("tune"))?;
    let data = tuning_data(cfg)?;
    let (train, test) = experiment_split(cfg, cfg.include_meds, "tune")?;
    let k = train.n_classes().max(2);

    let mut comparison: Vec<TuningComparisonRow> = Vec::new();
    let mut timings = BTreeMap::new();
    let mut artifacts = Vec::new();

    for (idx, family) in families.iter().enumerate() {
        if *family == Family::NaiveBayes {
            println!("tune: naive_bayes has no tunable grid (N/A)");
            let spec = baseline_roster(cfg.seed)
                .into_iter()
                .find(|s| s.family == Family::NaiveBayes)
                .unwrap();
            let before = evaluate_spec(&spec, &train, &test, k)?;
            comparison.push(TuningComparisonRow {
                model: Family::NaiveBayes,
                before_accuracy: Some(before),
                after_accuracy: None,
                result: None,
            });
            continue;
        }
        let started = Instant::now();
        let grid = grid_for(cfg, *family).map_err(stage_err("tune"))?;
        let result = grid_search(
            &grid,
            &data,
            cfg.cv_folds,
            derive_seed(cfg.seed, "tune", idx as u64),
            cfg.budget,
        )
        .map_err(stage_err("tune"))?;
        timings.insert(format!("grid_{family}_s"), started.elapsed().as_secs_f64());

        let grid_csv = cfg.out_dir.join(format!("grid_{family}.csv"));
        let file = File::create(&grid_csv).map_err(stage_err("tune"))?;
        result
            .write_csv(BufWriter::new(file))
            .map_err(stage_err("tune"))?;
        artifacts.push(grid_csv);

        let scored: Vec<(f64, Params)> = result
            .rows
            .iter()
            .map(|r| (r.mean_accuracy, r.params.clone()))
            .collect();
        let mut attribution = Vec::new();
        let mut boxplot = None;
        if scored.len() >= 4 {
            let box_summary = boxplot_summary(&scored).map_err(stage_err("tune"))?;
            attribution = outlier_attribution(&box_summary);
            let box_csv = cfg.out_dir.join(format!("boxplot_{family}.csv"));
            let file = File::create(&box_csv).map_err(stage_err("tune"))?;
            write_boxplot_csv(BufWriter::new(file), &scored, &box_summary)
                .map_err(stage_err("tune"))?;
            artifacts.push(box_csv);
            boxplot = Some(box_summary);
        }

        let n_summary = (result.rows.len() / 2).min(10);
        let param_summary = if n_summary >= 1 {
            Some(summarize(&result, n_summary).map_err(stage_err("tune"))?)
        } else {
            None
        };

        let before_spec = baseline_roster(cfg.seed)
            .into_iter()
            .find(|s| s.family == *family)
            .unwrap();
        let before = evaluate_spec(&before_spec, &train, &test, k)?;
        let after = result.rows[0].mean_accuracy;
        println!(
            "tune {family}: best {:?} mean accuracy {:.4} (before {:.4}, {} configs, {} truncated)",
            params_display(&result.best),
            after,
            before,
            result.rows.len(),
            result.truncated_configs
        );

        let summary = TuneSummaryFile {
            stamp: Stamp::of(cfg, cfg.include_meds)?,
            family: *family,
            best_params: result.best.clone(),
            best_mean_accuracy: after,
            worst_mean_accuracy: result.rows.last().unwrap().mean_accuracy,
            evaluated_configs: result.rows.len(),
            truncated_configs: result.truncated_configs,
            param_summary,
            boxplot,
            outlier_attribution: attribution,
        };
        let summary_path = cfg.out_dir.join(format!("tuning_summary_{family}.json"));
        write_json(&summary_path, &summary)?;
        artifacts.push(summary_path);

        comparison.push(TuningComparisonRow {
            model: *family,
            before_accuracy: Some(before),
            after_accuracy: Some(after),
            result: Some(significance(before, after)),
        });
    }

    let cmp_path = cfg.out_dir.join("tuning_comparison.csv");
    let mut wtr = csv::Writer::from_path(&cmp_path).map_err(stage_err("tune"))?;
    wtr.write_record(["model", "before", "after", "result"])
        .map_err(stage_err("tune"))?;
    for row in &comparison {
        let fmt = |v: Option<f64>| v.map_or("N/A".to_string(), |x| format!("{x}"));
        wtr.write_record([
            row.model.display_name().to_string(),
            fmt(row.before_accuracy),
            fmt(row.after_accuracy),
            row.result.map_or("N/A".to_string(), |s| {
                match s {
                    Significance::Significant => "Significant",
                    Significance::Insignificant => "Insignificant",
                }
                .to_string()
            }),
        ])
        .map_err(stage_err("tune"))?;
    }
    wtr.flush().map_err(stage_err("tune"))?;
    artifacts.push(cmp_path);

    timings.insert("tune_total_s".to_string(), t0.elapsed().as_secs_f64());
    write_timings(&cfg.out_dir, "tune", &timings)?;
    update_run_report(cfg, "tune", &artifacts)?;
    Ok(comparison)
}

fn params_display(params: &Params) -> Vec<String> {
    params.iter().map(|(n, v)| format!("{n}={v}")).collect()
}

fn evaluate_spec(
    spec: &LearnerSpec,
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    k: usize,
) -> Result<f64, PipelineError> {
    let model = fit_k(spec, train, k).map_err(stage_err("tune"))?;
    let pred = model.predict(test).map_err(stage_err("tune"))?;
    let cm = confusion(test.labels(), &pred, k).map_err(stage_err("tune"))?;
    Ok(metrics(&cm).map_err(stage_err("tune"))?.accuracy)
}

// ---------------------------------------------------------------- compare

/// Published best configurations, used when no tuning artifact exists.
pub fn tuned_defaults(family: Family, seed: u64) -> LearnerSpec {
    let spec = LearnerSpec::new(family, seed);
    match family {
        Family::GradientBoosting => spec
            .with("learning_rate", ParamValue::Float(0.1))
            .with("max_depth", ParamValue::Int(5))
            .with("n_estimators", ParamValue::Int(150)),
        Family::RandomForest => spec
            .with("max_depth", ParamValue::Int(20))
            .with("max_features", ParamValue::Str("auto".into()))
            .with("min_samples_split", ParamValue::Int(4))
            .with("n_estimators", ParamValue::Int(500)),
        Family::DecisionTree => spec
            .with("max_depth", ParamValue::Int(10))
            .with("max_features", ParamValue::Int(61))
            .with("min_samples_split", ParamValue::Int(3))
            .with("min_samples_leaf", ParamValue::Int(1)),
        Family::LogisticRegression => spec
            .with("C", ParamValue::Float(0.05))
            .with("max_iter", ParamValue::Int(30000)),
        Family::Svm => spec.with("C", ParamValue::Float(100.0)),
        Family::NaiveBayes => spec,
    }
}

fn tuned_spec(cfg: &RunConfig, family: Family, seed: u64) -> LearnerSpec {
    let path = cfg.out_dir.join(format!("tuning_summary_{family}.json"));
    if let Some(summary) = read_json::<TuneSummaryFile>(&path) {
        // ignore summaries tuned under a different seed or source file
        if Stamp::of(cfg, cfg.include_meds).ok().as_ref() == Some(&summary.stamp) {
            return LearnerSpec {
                family,
                params: summary.best_params,
                seed,
            };
        }
    }
    tuned_defaults(family, seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareManifest {
    pub stamp: Stamp,
    pub model_a: Family,
    pub model_b: Family,
    pub params_a: Params,
    pub params_b: Params,
    pub folds: usize,
    pub sign_tests: BTreeMap<String, SignTestResult>,
}

/// Paper-style critical value for the 10-fold sign test, reported
/// alongside the exact p-value.
pub const SIGN_TEST_CRITICAL_10: usize = 8;

/// Cross-validate two tuned models on one shared fold plan and run the
/// sign test per metric.
pub fn cmd_compare(
    cfg: &RunConfig,
    model_a: Family,
    model_b: Family,
) -> Result<CompareManifest, PipelineError> {
    let t0 = Instant::now();
    fs::create_dir_all(&cfg.out_dir).map_err(stage_err("compare"))?;
    let data = tuning_data(cfg)?;
    // the model seed depends on the family alone, so a model compared
    // against itself ties on every fold
    let family_seed = |family: Family| {
        derive_seed(
            cfg.seed,
            "compare-model",
            Family::ALL.iter().position(|f| *f == family).unwrap() as u64,
        )
    };
    let spec_a = tuned_spec(cfg, model_a, family_seed(model_a));
    let spec_b = tuned_spec(cfg, model_b, family_seed(model_b));
    let plan = FoldPlan::new(
        data.labels(),
        cfg.compare_folds,
        true,
        derive_seed(cfg.seed, "compare-folds", 0),
    )
    .map_err(stage_err("compare"))?;
    let cv_a = cross_validate(&spec_a, &data, &plan).map_err(stage_err("compare"))?;
    let cv_b = cross_validate(&spec_b, &data, &plan).map_err(stage_err("compare"))?;

    let folds_csv = cfg
        .out_dir
        .join(format!("compare_folds_{model_a}_vs_{model_b}.csv"));
    {
        let mut wtr = csv::Writer::from_path(&folds_csv).map_err(stage_err("compare"))?;
        let mut header = vec!["fold".to_string()];
        for side in [model_a, model_b] {
            for metric in [
                "accuracy",
                "recall_macro",
                "recall_micro",
                "precision_macro",
                "f1_macro",
            ] {
                header.push(format!("{side}_{metric}"));
            }
        }
        wtr.write_record(&header).map_err(stage_err("compare"))?;
        for f in 0..plan.k {
            let mut rec = vec![(f + 1).to_string()];
            for cv in [&cv_a, &cv_b] {
                let r = &cv.folds[f];
                for v in [
                    r.accuracy,
                    r.macro_recall,
                    r.micro_recall,
                    r.macro_precision,
                    r.macro_f1,
                ] {
                    rec.push(format!("{v}"));
                }
            }
            wtr.write_record(&rec).map_err(stage_err("compare"))?;
        }
        wtr.flush().map_err(stage_err("compare"))?;
    }

    let critical = (plan.k == 10).then_some(SIGN_TEST_CRITICAL_10);
    let mut sign_tests = BTreeMap::new();
    type MetricFn = fn(&EvalReport) -> f64;
    let metric_columns: [(&str, MetricFn); 4] = [
        ("accuracy", |r| r.accuracy),
        ("recall_macro", |r| r.macro_recall),
        ("precision_macro", |r| r.macro_precision),
        ("f1_macro", |r| r.macro_f1),
    ];
    for (name, metric) in metric_columns {
        let a: Vec<f64> = cv_a.folds.iter().map(metric).collect();
        let b: Vec<f64> = cv_b.folds.iter().map(metric).collect();
        let result =
            sign_test_with_critical(&a, &b, 0.05, critical).map_err(stage_err("compare"))?;
        sign_tests.insert(name.to_string(), result);
    }
    let accuracy_test = &sign_tests["accuracy"];
    println!(
        "compare {model_a} vs {model_b}: wins {} / {} (ties {}), p = {:.5} -> {:?}",
        accuracy_test.wins_a,
        accuracy_test.wins_b,
        accuracy_test.ties,
        accuracy_test.p_value_two_sided,
        accuracy_test.decision
    );

    let manifest = CompareManifest {
        stamp: Stamp::of(cfg, cfg.include_meds)?,
        model_a,
        model_b,
        params_a: spec_a.params.clone(),
        params_b: spec_b.params.clone(),
        folds: plan.k,
        sign_tests,
    };
    let json_path = cfg
        .out_dir
        .join(format!("sign_test_{model_a}_vs_{model_b}.json"));
    write_json(&json_path, &manifest)?;

    let mut timings = BTreeMap::new();
    timings.insert("compare_total_s".to_string(), t0.elapsed().as_secs_f64());
    write_timings(&cfg.out_dir, "compare", &timings)?;
    update_run_report(cfg, "compare", &[folds_csv, json_path])?;
    Ok(manifest)
}

/// Sign test over two externally produced score files (one score per line
/// or a single-column CSV).
pub fn compare_score_files(
    path_a: &Path,
    path_b: &Path,
    alpha: f64,
) -> Result<SignTestResult, PipelineError> {
    let read_scores = |path: &Path| -> Result<Vec<f64>, PipelineError> {
        let text = fs::read_to_string(path).map_err(stage_err("compare"))?;
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.eq_ignore_ascii_case("score"))
            .map(|l| {
                l.parse::<f64>().map_err(|_| {
                    simple_err(
                        "compare",
                        format!("bad score line '{l}' in {}", path.display()),
                    )
                })
            })
            .collect()
    };
    let a = read_scores(path_a)?;
    let b = read_scores(path_b)?;
    let critical = (a.len() == 10).then_some(SIGN_TEST_CRITICAL_10);
    sign_test_with_critical(&a, &b, alpha, critical).map_err(stage_err("compare"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::write_sample;
    use tempfile::tempdir;

    fn test_config(dir: &Path, rows: usize) -> RunConfig {
        let (data, ids) = write_sample(&dir.join("data"), rows, 5).unwrap();
        RunConfig {
            data_csv: Some(data),
            ids_csv: Some(ids),
            out_dir: dir.join("out"),
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn prepare_then_balance_reuses_artifacts() {
        let dir = tempdir().unwrap();
        let cfg = test_config(dir.path(), 400);
        let prepared = cmd_prepare(&cfg).unwrap();
        assert!(prepared.cleaned_csv.exists());
        let manifest = cmd_balance(&cfg).unwrap();
        let target = manifest.counts_after_smote[0];
        assert!(manifest.counts_after_smote.iter().all(|&c| c == target));
        // balanced artifact is reused: stamp matches, no recompute
        let again = ensure_balanced(&cfg, cfg.include_meds).unwrap();
        assert_eq!(again.class_histogram(3), manifest.counts_after_smote);
    }

    #[test]
    fn balance_respects_explicit_target() {
        let dir = tempdir().unwrap();
        let mut cfg = test_config(dir.path(), 400);
        cfg.balance_target = Some(250);
        let manifest = cmd_balance(&cfg).unwrap();
        assert_eq!(manifest.counts_after_smote, vec![250, 250, 250]);
    }

    #[test]
    fn baseline_ablation_writes_both_variants() {
        let dir = tempdir().unwrap();
        let mut cfg = test_config(dir.path(), 500);
        cfg.balance_target = Some(120);
        let results = cmd_baseline(&cfg, true).unwrap();
        assert_eq!(results.len(), 2);
        assert_eq!(results["with_meds"].len(), 6);
        assert!(cfg.out_dir.join("baseline_with_meds.csv").exists());
        assert!(cfg.out_dir.join("baseline_no_meds.csv").exists());
        assert!(cfg
            .out_dir
            .join("confusion_gradient_boosting_with_meds.csv")
            .exists());
    }

    #[test]
    fn compare_model_against_itself_is_all_ties() {
        let dir = tempdir().unwrap();
        let mut cfg = test_config(dir.path(), 420);
        cfg.balance_target = Some(100);
        cfg.compare_folds = 4;
        let manifest = cmd_compare(&cfg, Family::DecisionTree, Family::DecisionTree).unwrap();
        let acc = &manifest.sign_tests["accuracy"];
        assert_eq!(acc.ties, 4);
        assert_eq!(acc.n_effective, 0);
        assert_eq!(acc.decision, crate::stats::Decision::FailToReject);
    }

    #[test]
    fn train_only_scope_balances_inside_the_split() {
        let dir = tempdir().unwrap();
        let mut cfg = test_config(dir.path(), 500);
        cfg.balance_scope = Scope::TrainOnly;
        let results = cmd_baseline(&cfg, false).unwrap();
        assert_eq!(results["with_meds"].len(), 6);
        // no full-set balanced artifact is produced in this mode
        assert!(!cfg.out_dir.join("balanced_with_meds.csv").exists());

        cfg.budget = Some(10);
        let rows = cmd_tune(&cfg, &[Family::Svm]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].after_accuracy.is_some());
    }

    #[test]
    fn tune_scope_train_only_uses_the_training_partition() {
        let dir = tempdir().unwrap();
        let mut cfg = test_config(dir.path(), 500);
        cfg.balance_target = Some(120);
        cfg.tune_scope = Scope::TrainOnly;
        cfg.budget = Some(10);
        let rows = cmd_tune(&cfg, &[Family::DecisionTree]).unwrap();
        assert!(rows[0].result.is_some());
        assert!(cfg.out_dir.join("grid_decision_tree.csv").exists());
    }

    #[test]
    fn stages_resume_from_artifacts_without_the_source() {
        let dir = tempdir().unwrap();
        let mut cfg = test_config(dir.path(), 420);
        cfg.balance_target = Some(100);
        cmd_prepare(&cfg).unwrap();
        cmd_balance(&cfg).unwrap();
        // the raw file is gone; baseline must run from the balanced artifact
        fs::remove_file(cfg.data_csv.as_ref().unwrap()).unwrap();
        let results = cmd_baseline(&cfg, false).unwrap();
        assert_eq!(results["with_meds"].len(), 6);
    }

    #[test]
    fn score_file_compare_checks_lengths() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        fs::write(&a, "1\n2\n3\n").unwrap();
        fs::write(&b, "1\n2\n").unwrap();
        assert!(compare_score_files(&a, &b, 0.05).is_err());
        fs::write(&b, "0\n3\n3\n").unwrap();
        let r = compare_score_files(&a, &b, 0.05).unwrap();
        assert_eq!((r.wins_a, r.wins_b, r.ties), (1, 1, 1));
    }
}
