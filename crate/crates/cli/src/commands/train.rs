//! `train`: build supervised windows under a scheme and fit the recurrent
//! forecaster(s), writing model JSON and per-epoch history.

use std::path::PathBuf;

use clap::Args;
use volcast_core::lstm::{train, InitMode, LstmModel, TrainConfig, TrainHistory};
use volcast_core::market_data::FeaturePanel;
use volcast_core::scheme::{apply_scheme, DatasetSpec, NormWindow, Scheme, SchemeDataset};

use crate::cache::{to_pretty_json, write_text, PanelCache};
use crate::commands::select::{parse_list, SchemeFile};
use crate::config::FileConfig;
use crate::errors::CliError;

pub const DEFAULT_LAG: usize = 10;

/// Trend names that, when present, join the reduced model alongside the two
/// price-derived columns.
pub const REDUCED_TRENDS: [&str; 4] = ["comput", "crcard", "invest", "bnkrpt"];

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Panel cache from `ingest`.
    #[arg(long)]
    pub panel: PathBuf,
    /// Directory for <model>.json and history_<model>.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// scheme.json from `select-scheme`; --dt/--k override it.
    #[arg(long)]
    pub scheme: Option<PathBuf>,
    /// Aggregation span in days.
    #[arg(long)]
    pub dt: Option<usize>,
    /// Normalization window in periods, or "inf".
    #[arg(long)]
    pub k: Option<NormWindow>,
    /// Input window length in periods.
    #[arg(long)]
    pub lag: Option<usize>,
    /// Which models to fit: any of lstm,lstm_r.
    #[arg(long)]
    pub models: Option<String>,
    /// Feature subset for the full model (default: every panel column).
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
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_constant: Option<f64>,
    /// "constant" or "normalized".
    #[arg(long)]
    pub init_mode: Option<String>,
    /// Fraction of training windows held out for epoch selection.
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Feed observed sigma back during training instead of predictions.
    #[arg(long)]
    pub teacher_forcing: bool,
    /// Z-score the target like a feature instead of keeping raw sigma.
    #[arg(long)]
    pub normalize_target: bool,
    /// Also write the supervised windows as CSV next to each model.
    #[arg(long)]
    pub dump_windows: bool,
}

/// Scheme resolution shared with `evaluate` and `run-all`: explicit flags
/// beat the scheme file; one of the two must pin both dt and k.
pub fn resolve_scheme(
    dt: Option<usize>,
    k: Option<NormWindow>,
    scheme_path: Option<&std::path::Path>,
    cfg: &FileConfig,
) -> Result<Scheme, CliError> {
    let dt = cfg.resolve_opt(dt, "dt")?;
    let k = cfg.resolve_opt(k, "k")?;
    let from_file = match scheme_path {
        Some(p) => Some(SchemeFile::load(p)?),
        None => None,
    };
    let dt = dt.or(from_file.as_ref().map(|s| s.dt));
    let k = k.or(from_file.as_ref().map(|s| s.k));
    match (dt, k) {
        (Some(dt), Some(k)) => Ok(Scheme::new(dt, k)?),
        _ => Err(CliError::input(
            "no scheme given: pass --scheme FILE or both --dt and --k",
        )),
    }
}

pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from("epoch,train_mape,val_mape\n");
    for e in &history.epochs {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.train_mape, e.val_mape));
    }
    out
}

fn parse_init_mode(text: &str) -> Result<InitMode, CliError> {
    match text.to_ascii_lowercase().as_str() {
        "constant" => Ok(InitMode::Constant),
        "normalized" => Ok(InitMode::Normalized),
        other => Err(CliError::input(format!(
            "init_mode must be constant or normalized, got {other:?}"
        ))),
    }
}

/// The reduced feature list: the two price-derived columns plus whichever of
/// the designated trend names exist in the panel, in panel order.
pub fn reduced_features(panel: &FeaturePanel) -> Vec<String> {
    panel
        .feature_names()
        .iter()
        .filter(|n| {
            n.as_str() == "return"
                || n.as_str() == "volatility"
                || REDUCED_TRENDS.contains(&n.as_str())
        })
        .cloned()
        .collect()
}

pub struct TrainedModel {
    pub model: LstmModel,
    pub history: TrainHistory,
    pub train_ds: SchemeDataset,
    pub test_ds: SchemeDataset,
}

/// Fits one model end to end on an already-split panel pair.
pub fn fit_model(
    train_panel: &FeaturePanel,
    test_panel: &FeaturePanel,
    spec: &DatasetSpec,
    config: &TrainConfig,
) -> Result<TrainedModel, CliError> {
    let (train_ds, test_ds) = apply_scheme(train_panel, test_panel, spec)?;
    let (params, history) = train(&train_ds, config)?;
    let model = LstmModel {
        params,
        feature_order: train_ds.feature_names.clone(),
        scheme: spec.scheme,
        lag_len: spec.lag_len,
        train_stats: train_ds.train_stats.clone(),
        target_stats: train_ds.target_stats,
        normalized_target: train_ds.normalized_target,
        config: config.clone(),
        best_epoch: history.best_epoch,
        best_val_mape: history.best_val_mape,
    };
    Ok(TrainedModel {
        model,
        history,
        train_ds,
        test_ds,
    })
}

pub struct TrainPlan {
    pub scheme: Scheme,
    pub lag: usize,
    pub model_names: Vec<String>,
    pub full_features: Option<Vec<String>>,
    pub normalize_target: bool,
    pub config: TrainConfig,
}

pub fn build_plan(args: &TrainArgs, cfg: &FileConfig) -> Result<TrainPlan, CliError> {
    let scheme = resolve_scheme(args.dt, args.k, args.scheme.as_deref(), cfg)?;
    let lag = cfg.resolve(args.lag, "lag", DEFAULT_LAG)?;
    let models_text = cfg.resolve(args.models.clone(), "models", "lstm,lstm_r".to_string())?;
    let model_names = parse_list::<String>(&models_text, "models")?;
    for name in &model_names {
        if name != "lstm" && name != "lstm_r" {
            return Err(CliError::input(format!(
                "unknown model {name:?}; expected lstm or lstm_r"
            )));
        }
    }
    let full_features = match cfg.resolve_opt(args.features.clone(), "features")? {
        Some(text) => Some(parse_list::<String>(&text, "features")?),
        None => None,
    };

    let defaults = TrainConfig::default();
    let init_mode = match cfg.resolve_opt(args.init_mode.clone(), "init_mode")? {
        Some(text) => parse_init_mode(&text)?,
        None => defaults.init_mode,
    };
    let config = TrainConfig {
        cell_dim: cfg.resolve(args.cell_dim, "cell_dim", defaults.cell_dim)?,
        batch_size: cfg.resolve(args.batch_size, "batch_size", defaults.batch_size)?,
        epochs: cfg.resolve(args.epochs, "epochs", defaults.epochs)?,
        lr: cfg.resolve(args.lr, "lr", defaults.lr)?,
        beta1: cfg.resolve(None, "beta1", defaults.beta1)?,
        beta2: cfg.resolve(None, "beta2", defaults.beta2)?,
        eps: cfg.resolve(None, "eps", defaults.eps)?,
        validation_fraction: cfg.resolve(
            args.val_frac,
            "val_frac",
            defaults.validation_fraction,
        )?,
        seed: cfg.resolve(args.seed, "seed", defaults.seed)?,
        init_constant: cfg.resolve(args.init_constant, "init_constant", defaults.init_constant)?,
        init_mode,
        teacher_forcing: cfg.resolve_switch(args.teacher_forcing, "teacher_forcing")?,
    };
    Ok(TrainPlan {
        scheme,
        lag,
        model_names,
        full_features,
        normalize_target: cfg.resolve_switch(args.normalize_target, "normalize_target")?,
        config,
    })
}

pub fn run(args: &TrainArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let cache = PanelCache::load(&args.panel)?;
    let (train_panel, test_panel) = cache.split()?;
    let plan = build_plan(args, cfg)?;

    for name in &plan.model_names {
        let features = match name.as_str() {
            "lstm" => plan.full_features.clone(),
            _ => Some(reduced_features(&cache.panel)),
        };
        let spec = DatasetSpec {
            scheme: plan.scheme,
            lag_len: plan.lag,
            features,
            normalize_target: plan.normalize_target,
        };
        let fitted = fit_model(&train_panel, &test_panel, &spec, &plan.config)?;

        write_text(
            &args.out_dir.join(format!("{name}.json")),
            &to_pretty_json(&fitted.model)?,
        )?;
        write_text(
            &args.out_dir.join(format!("history_{name}.csv")),
            &history_csv(&fitted.history),
        )?;
        if args.dump_windows {
            for (side, ds) in [("train", &fitted.train_ds), ("test", &fitted.test_ds)] {
                let mut buf = Vec::new();
                ds.write_csv(&mut buf)?;
                write_text(
                    &args.out_dir.join(format!("windows_{name}_{side}.csv")),
                    &String::from_utf8(buf).expect("csv is utf-8"),
                )?;
            }
        }
        println!(
            "train {name}: {} features, {} train windows, best epoch {} (val mape {:.4}) -> {}",
            fitted.model.feature_order.len(),
            fitted.train_ds.windows.len(),
            fitted.history.best_epoch,
            fitted.history.best_val_mape,
            args.out_dir.join(format!("{name}.json")).display()
        );
    }
    Ok(())
}
