//! `run-all`: the whole pipeline in one invocation. Chains synth (optional),
//! ingest, scheme selection, training, and evaluation under one output
//! directory:
//!
//! ```text
//! out/
//!   data/     ohlc.csv, trends.csv        (only with --synth)
//!   panel.json
//!   scheme/   mi_grid.csv, scheme.json, feature_rank.csv
//!   models/   <model>.json, history_<model>.csv
//!   eval/     predictions.csv, report.*, diagnostics.json, ...
//! ```

use std::path::PathBuf;

use clap::Args;
use volcast_core::scheme::{NormWindow, TargetKind};

use crate::commands::{evaluate, ingest, select, synth, train};
use crate::config::FileConfig;
use crate::errors::CliError;

#[derive(Debug, Args)]
pub struct RunAllArgs {
    #[arg(long)]
    pub out_dir: PathBuf,

    /// Simulate the input data instead of reading files.
    #[arg(long)]
    pub synth: bool,
    /// Daily bars CSV (mutually exclusive with --synth).
    #[arg(long)]
    pub ohlc: Option<PathBuf>,
    /// Trend CSV to go with --ohlc.
    #[arg(long)]
    pub trends: Option<PathBuf>,
    #[arg(long)]
    pub synth_days: Option<usize>,
    #[arg(long)]
    pub synth_trends: Option<usize>,
    #[arg(long)]
    pub synth_coupled: Option<usize>,
    #[arg(long)]
    pub synth_gamma: Option<f64>,
    #[arg(long)]
    pub synth_seed: Option<u64>,

    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub adf_max_lag: Option<usize>,

    /// Pin the aggregation span; with --k this skips scheme selection.
    #[arg(long)]
    pub dt: Option<usize>,
    /// Pin the normalization window; with --dt this skips scheme selection.
    #[arg(long)]
    pub k: Option<NormWindow>,
    #[arg(long)]
    pub target: Option<TargetKind>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub min_samples: Option<usize>,
    #[arg(long)]
    pub dt_values: Option<String>,
    #[arg(long)]
    pub k_values: Option<String>,
    #[arg(long)]
    pub top_features: Option<usize>,

    #[arg(long)]
    pub lag: Option<usize>,
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub cell_dim: Option<usize>,
    /// Training seed (the simulator has its own --synth-seed).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_constant: Option<f64>,
    #[arg(long)]
    pub init_mode: Option<String>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    #[arg(long)]
    pub teacher_forcing: bool,
    #[arg(long)]
    pub normalize_target: bool,
    #[arg(long)]
    pub dump_windows: bool,

    #[arg(long)]
    pub c_grid: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Seed for evaluation-time Monte Carlo and benchmark restarts.
    #[arg(long)]
    pub eval_seed: Option<u64>,
    #[arg(long)]
    pub garch_restarts: Option<usize>,
    #[arg(long)]
    pub max_acf_lag: Option<usize>,
}

pub fn run(args: &RunAllArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let panel = args.out_dir.join("panel.json");
    let scheme_dir = args.out_dir.join("scheme");
    let models_dir = args.out_dir.join("models");
    let eval_dir = args.out_dir.join("eval");

    let (ohlc, trends) = if args.synth {
        if args.ohlc.is_some() || args.trends.is_some() {
            return Err(CliError::input(
                "--synth replaces --ohlc/--trends; pass one or the other",
            ));
        }
        let data_dir = args.out_dir.join("data");
        synth::run(
            &synth::SynthArgs {
                out_dir: data_dir.clone(),
                days: args.synth_days,
                trends: args.synth_trends,
                coupled: args.synth_coupled,
                gamma: args.synth_gamma,
                seed: args.synth_seed,
            },
            cfg,
        )?;
        (data_dir.join("ohlc.csv"), Some(data_dir.join("trends.csv")))
    } else {
        match &args.ohlc {
            Some(p) => (p.clone(), args.trends.clone()),
            None => {
                return Err(CliError::input(
                    "no input data: pass --ohlc FILE (and optionally --trends) or --synth",
                ))
            }
        }
    };

    ingest::run(
        &ingest::IngestArgs {
            ohlc,
            trends,
            out: panel.clone(),
            train_frac: args.train_frac,
            adf_max_lag: args.adf_max_lag,
        },
        cfg,
    )?;

    // Scheme search is skipped only when both halves of the scheme are
    // already pinned by flag or config.
    let pinned = cfg.resolve_opt(args.dt, "dt")?.is_some()
        && cfg.resolve_opt(args.k, "k")?.is_some();
    let scheme_file = if pinned {
        None
    } else {
        select::run(
            &select::SelectArgs {
                panel: panel.clone(),
                out_dir: scheme_dir.clone(),
                target: args.target,
                bins: args.bins,
                min_samples: args.min_samples,
                dt_values: args.dt_values.clone(),
                k_values: args.k_values.clone(),
                top_features: args.top_features,
            },
            cfg,
        )?;
        Some(scheme_dir.join("scheme.json"))
    };

    train::run(
        &train::TrainArgs {
            panel: panel.clone(),
            out_dir: models_dir.clone(),
            scheme: scheme_file,
            dt: args.dt,
            k: args.k,
            lag: args.lag,
            models: args.models.clone(),
            features: args.features.clone(),
            epochs: args.epochs,
            batch_size: args.batch_size,
            lr: args.lr,
            cell_dim: args.cell_dim,
            seed: args.seed,
            init_constant: args.init_constant,
            init_mode: args.init_mode.clone(),
            val_frac: args.val_frac,
            teacher_forcing: args.teacher_forcing,
            normalize_target: args.normalize_target,
            dump_windows: args.dump_windows,
        },
        cfg,
    )?;

    evaluate::run(
        &evaluate::EvalArgs {
            panel,
            models_dir,
            out_dir: eval_dir,
            c_grid: args.c_grid.clone(),
            reps: args.reps,
            seed: args.eval_seed,
            garch_restarts: args.garch_restarts,
            max_acf_lag: args.max_acf_lag,
        },
        cfg,
    )?;
    Ok(())
}
