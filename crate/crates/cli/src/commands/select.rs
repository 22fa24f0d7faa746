//! `select-scheme`: scan the (dt, k) grid by summed mutual information on
//! the training span, pick the winner, and rank features under it.

use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};
use volcast_core::infometrics::{
    default_dt_values, default_k_values, rank_features, scan_grid, select_scheme, DEFAULT_BINS,
    DEFAULT_MIN_SAMPLES,
};
use volcast_core::scheme::{NormWindow, TargetKind};

use crate::cache::{read_text, to_pretty_json, write_text, PanelCache};
use crate::config::FileConfig;
use crate::errors::CliError;

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Panel cache from `ingest`.
    #[arg(long)]
    pub panel: PathBuf,
    /// Directory for mi_grid.csv, scheme.json, feature_rank.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// What the mutual information is measured against.
    #[arg(long)]
    pub target: Option<TargetKind>,
    /// Quantile bins per variable.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Schemes keeping fewer samples than this are not eligible.
    #[arg(long)]
    pub min_samples: Option<usize>,
    /// Comma-separated aggregation spans, e.g. "1,2,3".
    #[arg(long)]
    pub dt_values: Option<String>,
    /// Comma-separated normalization windows, e.g. "5,20,inf".
    #[arg(long)]
    pub k_values: Option<String>,
    /// Keep only the best N features in the ranking output.
    #[arg(long)]
    pub top_features: Option<usize>,
}

/// The chosen scheme as written to disk and consumed by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeFile {
    pub dt: usize,
    pub k: NormWindow,
    pub mi_sum: f64,
    pub n_samples: usize,
    pub target: String,
    pub n_bins: usize,
    pub min_samples: usize,
}

impl SchemeFile {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("scheme file {}: {e}", path.display())))
    }
}

pub fn parse_list<T: FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    let items: Result<Vec<T>, CliError> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| CliError::input(format!("bad {what} entry {s:?}: {e}")))
        })
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err(CliError::input(format!("{what} list is empty")));
    }
    Ok(items)
}

pub fn run(args: &SelectArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let cache = PanelCache::load(&args.panel)?;
    let (train, _test) = cache.split()?;

    let target = cfg.resolve(args.target, "target", TargetKind::Volatility)?;
    let bins = cfg.resolve(args.bins, "bins", DEFAULT_BINS)?;
    let min_samples = cfg.resolve(args.min_samples, "min_samples", DEFAULT_MIN_SAMPLES)?;
    let dt_values = match cfg.resolve_opt(args.dt_values.clone(), "dt_values")? {
        Some(text) => parse_list::<usize>(&text, "dt_values")?,
        None => default_dt_values(),
    };
    let k_values = match cfg.resolve_opt(args.k_values.clone(), "k_values")? {
        Some(text) => parse_list::<NormWindow>(&text, "k_values")?,
        None => default_k_values(),
    };
    let top_features = cfg.resolve_opt(args.top_features, "top_features")?;

    let grid = scan_grid(&train, &dt_values, &k_values, target, bins)?;
    let mut grid_csv = Vec::new();
    grid.write_csv(&mut grid_csv)?;
    write_text(
        &args.out_dir.join("mi_grid.csv"),
        &String::from_utf8(grid_csv).expect("csv is utf-8"),
    )?;

    let choice = select_scheme(&grid, min_samples)?;
    let scheme_file = SchemeFile {
        dt: choice.scheme.dt,
        k: choice.scheme.k,
        mi_sum: choice.mi_sum,
        n_samples: choice.n_samples,
        target: target.to_string(),
        n_bins: bins,
        min_samples,
    };
    write_text(
        &args.out_dir.join("scheme.json"),
        &to_pretty_json(&scheme_file)?,
    )?;

    let ranking = rank_features(&train, choice.scheme, target, bins, top_features)?;
    let mut rank_csv = Vec::new();
    ranking.write_csv(&mut rank_csv)?;
    write_text(
        &args.out_dir.join("feature_rank.csv"),
        &String::from_utf8(rank_csv).expect("csv is utf-8"),
    )?;

    println!(
        "select-scheme: dt {} k {} (mi_sum {:.6}, {} samples) -> {}",
        choice.scheme.dt,
        choice.scheme.k,
        choice.mi_sum,
        choice.n_samples,
        args.out_dir.display()
    );
    Ok(())
}
