//! `readmit`: batch driver for the readmission classification pipeline.
//!
//! Commands mirror the pipeline stages. Every flag has a JSON config
//! equivalent (`--config`); flags win on conflict. Exit code is nonzero on
//! failure with the failing stage named on stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use readmit_core::learners::Family;
use readmit_core::pipeline::{
    cmd_balance, cmd_baseline_full, cmd_compare, cmd_prepare, cmd_tune, compare_score_files,
    RunConfig, Scope, TUNABLE,
};
use readmit_core::synth::write_sample;

#[derive(Parser)]
#[command(
    name = "readmit",
    version,
    about = "Hospital readmission classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// JSON config file with the same keys as the flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Raw dataset CSV (diabetic_data.csv layout)
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// ID-mapping CSV (IDS_mapping.csv layout)
    #[arg(long, global = true)]
    ids: Option<PathBuf>,
    /// Output directory for artifacts and manifests
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; all stage randomness derives from it
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Encode the medication dosage features
    #[arg(long, global = true, conflicts_with = "exclude_meds")]
    include_meds: bool,
    /// Drop the medication dosage features
    #[arg(long, global = true)]
    exclude_meds: bool,
    /// Balance the full set (full) or only training data (train-only)
    #[arg(long, global = true, value_parser = parse_scope)]
    balance_scope: Option<Scope>,
}

fn parse_scope(s: &str) -> Result<Scope, String> {
    match s {
        "full" => Ok(Scope::Full),
        "train-only" => Ok(Scope::TrainOnly),
        other => Err(format!(
            "scope must be 'full' or 'train-only', got '{other}'"
        )),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse, profile missing values, clean, and encode the design matrix
    Prepare {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Undersample the majority class, then SMOTE to uniform class counts
    Balance {
        #[command(flatten)]
        common: CommonOpts,
        /// Rows per class after balancing (default: size of class ">30")
        #[arg(long)]
        target: Option<usize>,
        /// SMOTE nearest-neighbor count
        #[arg(long)]
        k_neighbors: Option<usize>,
    },
    /// Train all six families at reference settings on a seeded split
    Baseline {
        #[command(flatten)]
        common: CommonOpts,
        /// Run both medication variants (the ablation contrast)
        #[arg(long)]
        ablation: bool,
        /// Train fraction of the split
        #[arg(long)]
        split_fraction: Option<f64>,
        /// Persist every fitted model as reloadable JSON
        #[arg(long)]
        save_models: bool,
    },
    /// Cross-validated grid search with ranked results and summaries
    Tune {
        #[command(flatten)]
        common: CommonOpts,
        /// Family to tune (gb, rf, dt, lr, svm); repeatable. Default: all
        #[arg(long = "family")]
        families: Vec<String>,
        /// Cap on total fits (configurations x folds)
        #[arg(long)]
        budget: Option<usize>,
        /// Cross-validation folds for the grid
        #[arg(long)]
        cv_folds: Option<usize>,
        /// JSON grid override file
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Tune on the full balanced set or a training partition
        #[arg(long, value_parser = parse_scope)]
        tune_scope: Option<Scope>,
    },
    /// Sign test between two tuned models over shared CV folds
    Compare {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, required_unless_present = "scores_a")]
        model_a: Option<String>,
        #[arg(long, required_unless_present = "scores_b")]
        model_b: Option<String>,
        /// Number of paired folds
        #[arg(long)]
        folds: Option<usize>,
        /// Direct mode: file of per-fold scores for side A (one per line)
        #[arg(long, requires = "scores_b", conflicts_with = "model_a")]
        scores_a: Option<PathBuf>,
        /// Direct mode: file of per-fold scores for side B
        #[arg(long, requires = "scores_a", conflicts_with = "model_b")]
        scores_b: Option<PathBuf>,
    },
    /// Write a synthetic sample dataset in the source schema
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of rows to generate
        #[arg(long, default_value_t = 2000)]
        rows: usize,
    },
}

fn build_config(common: &CommonOpts) -> Result<RunConfig, String> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_json_file(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(data) = &common.data {
        cfg.data_csv = Some(data.clone());
    }
    if let Some(ids) = &common.ids {
        cfg.ids_csv = Some(ids.clone());
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.include_meds {
        cfg.include_meds = true;
    }
    if common.exclude_meds {
        cfg.include_meds = false;
    }
    if let Some(scope) = common.balance_scope {
        cfg.balance_scope = scope;
    }
    Ok(cfg)
}

fn parse_families(names: &[String]) -> Result<Vec<Family>, String> {
    if names.is_empty() {
        let mut all = vec![Family::NaiveBayes];
        all.extend(TUNABLE);
        return Ok(all);
    }
    names.iter().map(|n| n.parse::<Family>()).collect()
}

fn run() -> Result<(), String> {
    match Cli::parse().command {
        Command::Prepare { common } => {
            let cfg = build_config(&common)?;
            cmd_prepare(&cfg).map_err(|e| e.to_string())?;
        }
        Command::Balance {
            common,
            target,
            k_neighbors,
        } => {
            let mut cfg = build_config(&common)?;
            if let Some(t) = target {
                cfg.balance_target = Some(t);
            }
            if let Some(k) = k_neighbors {
                cfg.k_neighbors = k;
            }
            cmd_balance(&cfg).map_err(|e| e.to_string())?;
        }
        Command::Baseline {
            common,
            ablation,
            split_fraction,
            save_models,
        } => {
            let mut cfg = build_config(&common)?;
            if let Some(f) = split_fraction {
                cfg.split_fraction = f;
            }
            cmd_baseline_full(&cfg, ablation, save_models).map_err(|e| e.to_string())?;
        }
        Command::Tune {
            common,
            families,
            budget,
            cv_folds,
            grid,
            tune_scope,
        } => {
            let mut cfg = build_config(&common)?;
            if budget.is_some() {
                cfg.budget = budget;
            }
            if let Some(k) = cv_folds {
                cfg.cv_folds = k;
            }
            if grid.is_some() {
                cfg.grid_file = grid;
            }
            if let Some(scope) = tune_scope {
                cfg.tune_scope = scope;
            }
            let families = parse_families(&families)?;
            cmd_tune(&cfg, &families).map_err(|e| e.to_string())?;
        }
        Command::Compare {
            common,
            model_a,
            model_b,
            folds,
            scores_a,
            scores_b,
        } => {
            if let (Some(a), Some(b)) = (&scores_a, &scores_b) {
                let result = compare_score_files(a, b, 0.05).map_err(|e| e.to_string())?;
                println!(
                    "sign test: wins {} / {} (ties {}), n_effective {}, p = {}, decision {:?}",
                    result.wins_a,
                    result.wins_b,
                    result.ties,
                    result.n_effective,
                    result.p_value_two_sided,
                    result.decision
                );
                return Ok(());
            }
            let mut cfg = build_config(&common)?;
            if let Some(k) = folds {
                cfg.compare_folds = k;
            }
            let a: Family = model_a.expect("clap enforces").parse()?;
            let b: Family = model_b.expect("clap enforces").parse()?;
            cmd_compare(&cfg, a, b).map_err(|e| e.to_string())?;
        }
        Command::Synth { common, rows } => {
            let cfg = build_config(&common)?;
            let dir = cfg.out_dir;
            let seed = cfg.seed;
            let (data, ids) =
                write_sample(&dir, rows, seed).map_err(|e| format!("stage synth: {e}"))?;
            println!("synth: wrote {} and {}", data.display(), ids.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
