//! `ingest`: parse raw CSVs, assemble the aligned feature panel, freeze the
//! train/test boundary, and run the stationarity checks on the train rows.

use std::fs::File;
use std::path::PathBuf;

use clap::Args;
use volcast_core::market_data::{
    adf_test, assemble_panel, parse_ohlc, parse_trends, split_train_test,
};

use crate::cache::{AdfEntry, PanelCache};
use crate::config::FileConfig;
use crate::errors::CliError;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Daily bars: date,open,high,low,close,adj_close.
    #[arg(long)]
    pub ohlc: PathBuf,
    /// Wide trend CSV: date,<name>,... Omit to build a price-only panel.
    #[arg(long)]
    pub trends: Option<PathBuf>,
    /// Output panel cache (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of rows frozen as the training span.
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Cap on the lag order searched by the stationarity test.
    #[arg(long)]
    pub adf_max_lag: Option<usize>,
}

pub fn run(args: &IngestArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let ohlc_file = File::open(&args.ohlc)
        .map_err(|e| CliError::input(format!("{}: {e}", args.ohlc.display())))?;
    let ohlc = parse_ohlc(ohlc_file)
        .map_err(|e| CliError::input(format!("{}: {e}", args.ohlc.display())))?;

    let trends = match &args.trends {
        None => Vec::new(),
        Some(path) => {
            let f = File::open(path)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            parse_trends(f).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        }
    };

    let panel = assemble_panel(&ohlc, &trends)?;
    let train_fraction = cfg.resolve(args.train_frac, "train_frac", DEFAULT_TRAIN_FRACTION)?;
    let (train, _test) = split_train_test(&panel, train_fraction)?;
    let train_rows = train.n_rows();
    let adf_max_lag = cfg.resolve_opt(args.adf_max_lag, "adf_max_lag")?;

    // Stationarity evidence for the two price-derived columns, on the
    // training span only; failures are recorded, not fatal.
    let mut adf = Vec::new();
    for feature in ["return", "volatility"] {
        let column = train
            .column_by_name(feature)
            .expect("panel always has return and volatility");
        let entry = match adf_test(column, adf_max_lag) {
            Ok(result) => AdfEntry {
                feature: feature.to_string(),
                result: Some(result),
                error: None,
            },
            Err(e) => AdfEntry {
                feature: feature.to_string(),
                result: None,
                error: Some(e.to_string()),
            },
        };
        adf.push(entry);
    }

    let cache = PanelCache {
        panel,
        train_rows,
        train_fraction,
        adf,
    };
    cache.save(&args.out)?;

    println!(
        "ingest: {} rows x {} features, train_rows {} -> {}",
        cache.panel.n_rows(),
        cache.panel.n_features(),
        cache.train_rows,
        args.out.display()
    );
    for entry in &cache.adf {
        match (&entry.result, &entry.error) {
            (Some(r), _) => println!(
                "  adf {}: stat {:.4}, p {:.4}, lags {}, stationary(5%): {}",
                entry.feature, r.statistic, r.p_value, r.lag_order, r.stationary_at_5pct
            ),
            (None, Some(e)) => println!("  adf {}: skipped ({e})", entry.feature),
            (None, None) => {}
        }
    }
    Ok(())
}
