//! The on-disk panel artifact shared by every stage after ingest, plus
//! small deterministic file helpers.

use std::path::Path;

use serde::{Deserialize, Serialize};
use volcast_core::market_data::{AdfResult, FeaturePanel};

use crate::errors::CliError;

/// The assembled feature panel together with the frozen train/test boundary
/// and the stationarity diagnostics computed on the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelCache {
    pub panel: FeaturePanel,
    pub train_rows: usize,
    pub train_fraction: f64,
    pub adf: Vec<AdfEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfEntry {
    pub feature: String,
    /// Missing when the test could not run on this column; `error` says why.
    pub result: Option<AdfResult>,
    pub error: Option<String>,
}

impl PanelCache {
    pub fn split(&self) -> Result<(FeaturePanel, FeaturePanel), CliError> {
        let n = self.panel.n_rows();
        if self.train_rows == 0 || self.train_rows >= n {
            return Err(CliError::input(format!(
                "panel cache has train_rows {} out of {n} rows",
                self.train_rows
            )));
        }
        Ok((
            self.panel.slice_rows(0..self.train_rows),
            self.panel.slice_rows(self.train_rows..n),
        ))
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_text(path, &to_pretty_json(self)?)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("panel cache {}: {e}", path.display())))
    }
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Creates parent directories as needed and writes atomically enough for a
/// single-process pipeline.
pub fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn day(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn tiny_cache() -> PanelCache {
        let dates = vec![day("2020-01-02"), day("2020-01-03"), day("2020-01-06")];
        let panel = FeaturePanel::new(
            dates,
            vec!["return".into(), "volatility".into()],
            vec![vec![0.01, -0.02, 0.03], vec![0.1, 0.2, 0.15]],
        )
        .unwrap();
        PanelCache {
            panel,
            train_rows: 2,
            train_fraction: 0.7,
            adf: vec![AdfEntry {
                feature: "return".into(),
                result: None,
                error: Some("series too short".into()),
            }],
        }
    }

    #[test]
    fn cache_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub").join("panel.json");
        let cache = tiny_cache();
        cache.save(&path).unwrap();
        let back = PanelCache::load(&path).unwrap();
        assert_eq!(cache, back);
        let (train, test) = back.split().unwrap();
        assert_eq!(train.n_rows(), 2);
        assert_eq!(test.n_rows(), 1);
    }

    #[test]
    fn bad_boundaries_are_rejected() {
        let mut cache = tiny_cache();
        cache.train_rows = 3;
        assert!(cache.split().is_err());
        cache.train_rows = 0;
        assert!(cache.split().is_err());
    }
}
