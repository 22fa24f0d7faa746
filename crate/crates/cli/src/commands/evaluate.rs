//! `evaluate`: score trained forecasters against the classical benchmarks on
//! the held-out panel rows and write predictions, metrics, and residual
//! diagnostics.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use volcast_core::benchmarks::{
    build_lag_matrix, default_c_grid, garch_fit, garch_volatility_forecasts, select_linear,
    GarchFit, LinearSelection, PenaltyKind,
};
use volcast_core::diagnostics::{acf_pacf, build_report, lilliefors_test, Correlogram,
    NormalityTest, Report};
use volcast_core::lstm::{predict, LstmModel};
use volcast_core::market_data::FeaturePanel;
use volcast_core::scheme::{aggregate_panel, apply_scheme, DatasetSpec};

use crate::cache::{read_text, to_pretty_json, write_text, PanelCache};
use crate::commands::select::parse_list;
use crate::config::FileConfig;
use crate::errors::CliError;

pub const DEFAULT_MC_REPS: usize = 500;
pub const DEFAULT_GARCH_RESTARTS: usize = 5;
pub const DEFAULT_MAX_ACF_LAG: usize = 20;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Panel cache from `ingest` (the same one the models were trained on).
    #[arg(long)]
    pub panel: PathBuf,
    /// Directory holding the trained <model>.json files.
    #[arg(long)]
    pub models_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated penalty weights for ridge/lasso selection.
    #[arg(long)]
    pub c_grid: Option<String>,
    /// Monte-Carlo replicates for the normality test.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Seed for the normality test and the variance-model restarts.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub garch_restarts: Option<usize>,
    /// Residual correlogram depth (clipped to the sample size).
    #[arg(long)]
    pub max_acf_lag: Option<usize>,
}

/// Residual diagnostics for one model. Residuals are `target - prediction`.
/// Entries that could not be computed carry the reason instead.
#[derive(Debug, Serialize)]
pub struct DiagEntry {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlogram: Option<Correlogram>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlogram_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normality: Option<NormalityTest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normality_error: Option<String>,
}

#[derive(Debug, Serialize)]
struct LinearFile {
    ridge: LinearSelection,
    lasso: LinearSelection,
}

pub struct EvalOutcome {
    pub report: Report,
    /// (model, predictions) in report order, raw sigma units.
    pub entries: Vec<(String, Vec<f64>)>,
    pub targets: Vec<f64>,
    pub window_ends: Vec<usize>,
    pub garch: GarchFit,
    pub ridge: LinearSelection,
    pub lasso: LinearSelection,
    pub diagnostics: Vec<DiagEntry>,
}

fn load_models(dir: &Path) -> Result<Vec<(String, LstmModel)>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    paths.sort();
    let mut models = Vec::new();
    for path in paths {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::input(format!("{}: unusable file name", path.display())))?
            .to_string();
        let model = LstmModel::from_json(&read_text(&path)?)
            .map_err(|e| CliError::input(format!("{}: not a model file: {e}", path.display())))?;
        models.push((name, model));
    }
    if models.is_empty() {
        return Err(CliError::input(format!(
            "no model .json files in {}",
            dir.display()
        )));
    }
    Ok(models)
}

/// Predictions of one trained forecaster on the test panel, in raw sigma
/// units, plus the window indices they refer to.
fn lstm_predictions(
    name: &str,
    model: &LstmModel,
    train_panel: &FeaturePanel,
    test_panel: &FeaturePanel,
) -> Result<(Vec<f64>, Vec<usize>), CliError> {
    if model.normalized_target && model.target_stats.is_none() {
        return Err(CliError::infeasible(format!(
            "model {name}: normalized target under a finite window has no stored \
             inverse transform; retrain with k=inf or raw targets to evaluate"
        )));
    }
    let spec = DatasetSpec {
        scheme: model.scheme,
        lag_len: model.lag_len,
        features: Some(model.feature_order.clone()),
        normalize_target: model.normalized_target,
    };
    let (_, test_ds) = apply_scheme(train_panel, test_panel, &spec)?;
    if !model.matches_dataset(&test_ds) {
        return Err(CliError::input(format!(
            "model {name} was trained on a different panel (normalization stats disagree)"
        )));
    }
    let mut preds = predict(&model.params, &test_ds)?;
    if let Some(stats) = model.target_stats {
        for p in &mut preds {
            *p = *p * stats.std + stats.mean;
        }
    }
    let ends = test_ds.windows.iter().map(|w| w.window_end).collect();
    Ok((preds, ends))
}

pub fn evaluate_models(
    models: &[(String, LstmModel)],
    train_panel: &FeaturePanel,
    test_panel: &FeaturePanel,
    c_grid: &[f64],
    reps: usize,
    seed: u64,
    garch_restarts: usize,
    max_acf_lag: usize,
) -> Result<EvalOutcome, CliError> {
    let (ref_scheme, ref_lag) = (models[0].1.scheme, models[0].1.lag_len);
    for (name, m) in models {
        if m.scheme != ref_scheme || m.lag_len != ref_lag {
            return Err(CliError::infeasible(format!(
                "model {name} uses scheme {:?} lag {}, expected {:?} lag {}; \
                 evaluate one scheme at a time",
                m.scheme, m.lag_len, ref_scheme, ref_lag
            )));
        }
    }

    // Raw-target dataset over every panel column: the shared ground truth
    // and the input to the linear benchmarks.
    let bench_spec = DatasetSpec::new(ref_scheme, ref_lag);
    let (bench_train, bench_test) = apply_scheme(train_panel, test_panel, &bench_spec)?;
    let targets = bench_test.targets();
    let window_ends: Vec<usize> = bench_test.windows.iter().map(|w| w.window_end).collect();

    let mut entries: Vec<(String, Vec<f64>)> = Vec::new();
    for (name, model) in models {
        let (preds, ends) = lstm_predictions(name, model, train_panel, test_panel)?;
        assert_eq!(
            ends, window_ends,
            "window geometry must not depend on the feature subset"
        );
        entries.push((name.clone(), preds));
    }

    // Variance-process benchmark: fitted to aggregated training returns,
    // rolled forward through the test periods without refitting.
    let train_agg = aggregate_panel(train_panel, ref_scheme.dt)?;
    let test_agg = aggregate_panel(test_panel, ref_scheme.dt)?;
    let garch = garch_fit(train_agg.returns(), seed, garch_restarts)?;
    let mut joint = train_agg.returns().to_vec();
    joint.extend_from_slice(test_agg.returns());
    let forecasts = garch_volatility_forecasts(&garch, &joint);
    let garch_preds: Vec<f64> = window_ends
        .iter()
        .map(|&e| forecasts[train_agg.n_periods() + e + 1])
        .collect();
    entries.push(("garch".to_string(), garch_preds));

    let train_matrix = build_lag_matrix(&bench_train)?;
    let test_matrix = build_lag_matrix(&bench_test)?;
    let ridge = select_linear(&train_matrix, PenaltyKind::Ridge, c_grid)?;
    let lasso = select_linear(&train_matrix, PenaltyKind::Lasso, c_grid)?;
    entries.push(("ridge".to_string(), ridge.model.predict(&test_matrix)));
    entries.push(("lasso".to_string(), lasso.model.predict(&test_matrix)));

    let report = build_report(ref_scheme, ref_lag, &entries, &targets)?;

    let mut diagnostics = Vec::new();
    for (name, preds) in &entries {
        let residuals: Vec<f64> = preds
            .iter()
            .zip(&targets)
            .map(|(p, y)| y - p)
            .collect();
        let lag_cap = residuals.len().saturating_sub(2).min(max_acf_lag);
        let (correlogram, correlogram_error) = if lag_cap >= 1 {
            match acf_pacf(&residuals, lag_cap) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            }
        } else {
            (None, Some("too few residuals for a correlogram".to_string()))
        };
        let (normality, normality_error) = match lilliefors_test(&residuals, reps, seed) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
        diagnostics.push(DiagEntry {
            model: name.clone(),
            correlogram,
            correlogram_error,
            normality,
            normality_error,
        });
    }

    Ok(EvalOutcome {
        report,
        entries,
        targets,
        window_ends,
        garch,
        ridge,
        lasso,
        diagnostics,
    })
}

pub fn predictions_csv(outcome: &EvalOutcome) -> String {
    let mut out = String::from("window_end,target,prediction,model\n");
    for (name, preds) in &outcome.entries {
        for ((e, y), p) in outcome
            .window_ends
            .iter()
            .zip(&outcome.targets)
            .zip(preds)
        {
            out.push_str(&format!("{e},{y},{p},{name}\n"));
        }
    }
    out
}

pub fn write_outputs(out_dir: &Path, outcome: &EvalOutcome) -> Result<(), CliError> {
    write_text(&out_dir.join("predictions.csv"), &predictions_csv(outcome))?;
    write_text(&out_dir.join("report.json"), &outcome.report.to_json())?;
    write_text(&out_dir.join("report.txt"), &outcome.report.to_table())?;
    write_text(&out_dir.join("garch.json"), &to_pretty_json(&outcome.garch)?)?;
    let linear = LinearFile {
        ridge: outcome.ridge.clone(),
        lasso: outcome.lasso.clone(),
    };
    write_text(&out_dir.join("linear.json"), &to_pretty_json(&linear)?)?;
    write_text(&out_dir.join("ridge.csv"), &outcome.ridge.model.to_csv())?;
    write_text(&out_dir.join("lasso.csv"), &outcome.lasso.model.to_csv())?;
    write_text(
        &out_dir.join("diagnostics.json"),
        &to_pretty_json(&outcome.diagnostics)?,
    )?;
    Ok(())
}

pub fn run(args: &EvalArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let cache = PanelCache::load(&args.panel)?;
    let (train_panel, test_panel) = cache.split()?;
    let models = load_models(&args.models_dir)?;

    let c_grid = match cfg.resolve_opt(args.c_grid.clone(), "c_grid")? {
        Some(text) => parse_list::<f64>(&text, "c_grid")?,
        None => default_c_grid(),
    };
    let reps = cfg.resolve(args.reps, "reps", DEFAULT_MC_REPS)?;
    let seed = cfg.resolve(args.seed, "seed", 0u64)?;
    let restarts = cfg.resolve(args.garch_restarts, "garch_restarts", DEFAULT_GARCH_RESTARTS)?;
    let max_acf_lag = cfg.resolve(args.max_acf_lag, "max_acf_lag", DEFAULT_MAX_ACF_LAG)?;

    let outcome = evaluate_models(
        &models,
        &train_panel,
        &test_panel,
        &c_grid,
        reps,
        seed,
        restarts,
        max_acf_lag,
    )?;
    write_outputs(&args.out_dir, &outcome)?;
    print!("{}", outcome.report.to_table());
    println!("outputs in {}", args.out_dir.display());
    Ok(())
}
