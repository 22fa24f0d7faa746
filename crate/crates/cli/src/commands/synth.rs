//! `synth`: write a seeded synthetic bar series and trend panel to CSV, in
//! the same shape `ingest` expects.

use std::path::PathBuf;

use clap::Args;
use volcast_core::market_data::{synth_generate, OhlcSeries, SynthConfig, TrendSeries};

use crate::cache::write_text;
use crate::config::FileConfig;
use crate::errors::CliError;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for ohlc.csv and trends.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Trading days to simulate.
    #[arg(long)]
    pub days: Option<usize>,
    /// Number of trend series.
    #[arg(long)]
    pub trends: Option<usize>,
    /// How many of them actually modulate volatility.
    #[arg(long)]
    pub coupled: Option<usize>,
    /// Modulation strength; 0 produces independent trends.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn ohlc_csv(series: &OhlcSeries) -> String {
    let mut out = String::from("date,open,high,low,close,adj_close\n");
    for b in series.bars() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            b.date.format("%Y-%m-%d"),
            b.open,
            b.high,
            b.low,
            b.close,
            b.adj_close
        ));
    }
    out
}

pub fn trends_csv(trends: &[TrendSeries]) -> Result<String, CliError> {
    let first = trends
        .first()
        .ok_or_else(|| CliError::input("no trend series to write"))?;
    for t in trends {
        if t.dates() != first.dates() {
            return Err(CliError::input(format!(
                "trend {:?} is not aligned with {:?}",
                t.name(),
                first.name()
            )));
        }
    }
    let mut out = String::from("date");
    for t in trends {
        out.push(',');
        out.push_str(t.name());
    }
    out.push('\n');
    for (i, date) in first.dates().iter().enumerate() {
        out.push_str(&date.format("%Y-%m-%d").to_string());
        for t in trends {
            out.push_str(&format!(",{}", t.values()[i]));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn run(args: &SynthArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let defaults = SynthConfig::default();
    let synth = SynthConfig {
        n_days: cfg.resolve(args.days, "days", defaults.n_days)?,
        n_trends: cfg.resolve(args.trends, "trends", defaults.n_trends)?,
        n_coupled: cfg.resolve(args.coupled, "coupled", defaults.n_coupled)?,
        gamma: cfg.resolve(args.gamma, "gamma", defaults.gamma)?,
        seed: cfg.resolve(args.seed, "seed", defaults.seed)?,
        ..defaults
    };
    let (ohlc, trends) = synth_generate(&synth)?;
    let ohlc_path = args.out_dir.join("ohlc.csv");
    let trends_path = args.out_dir.join("trends.csv");
    write_text(&ohlc_path, &ohlc_csv(&ohlc))?;
    write_text(&trends_path, &trends_csv(&trends)?)?;
    println!(
        "synth: {} bars, {} trends ({} coupled, gamma {}) -> {}",
        ohlc.len(),
        trends.len(),
        synth.n_coupled,
        synth.gamma,
        args.out_dir.display()
    );
    Ok(())
}
