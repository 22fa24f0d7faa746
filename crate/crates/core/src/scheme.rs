//! Observation schemes: aggregate the daily panel into `dt`-day periods and
//! normalize with a `k`-point sliding z-score (or a whole-sample transform
//! for infinite `k`), then cut the result into lagged supervised windows.
//!
//! Normalization is strictly causal: a finite-`k` z-score at index `i` sees
//! only the `k` values before `i`, and the infinite-`k` transform is fitted
//! on training rows and merely applied to test rows.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::market_data::FeaturePanel;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("dt must be at least 1")]
    BadDt,
    #[error("finite normalization window must be at least 2, got {got}")]
    BadK { got: usize },
    #[error("lag length must be at least 1")]
    BadLag,
    #[error("need at least {required} values, got {got}")]
    TooShort { required: usize, got: usize },
    #[error("zero variance in normalization window ending at index {index}")]
    ZeroVarianceWindow { index: usize },
    #[error("zero variance over the whole series; cannot normalize")]
    ZeroVarianceSeries,
    #[error("aggregated volatility target at period {period} is not positive")]
    NonPositiveTarget { period: usize },
    #[error("unknown feature {name:?}")]
    UnknownFeature { name: String },
    #[error("duplicate feature {name:?} in subset")]
    DuplicateFeature { name: String },
    #[error("{side} panel yields no supervised windows (needs {required} periods, has {got})")]
    NoWindows {
        side: &'static str,
        required: usize,
        got: usize,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Normalization window: a fixed number of preceding points, or the whole
/// training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormWindow {
    Finite(usize),
    Infinite,
}

impl NormWindow {
    /// Points dropped from the start of a normalized series.
    pub fn offset(&self) -> usize {
        match self {
            NormWindow::Finite(k) => *k,
            NormWindow::Infinite => 0,
        }
    }
}

impl fmt::Display for NormWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormWindow::Finite(k) => write!(f, "{k}"),
            NormWindow::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for NormWindow {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("inf") {
            return Ok(NormWindow::Infinite);
        }
        s.parse::<usize>()
            .map(NormWindow::Finite)
            .map_err(|_| format!("expected an integer or \"inf\", got {s:?}"))
    }
}

// Serialized as a plain number, or the string "inf".
impl Serialize for NormWindow {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            NormWindow::Finite(k) => serializer.serialize_u64(*k as u64),
            NormWindow::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for NormWindow {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct KVisitor;
        impl Visitor<'_> for KVisitor {
            type Value = NormWindow;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an integer or the string \"inf\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<NormWindow, E> {
                Ok(NormWindow::Finite(v as usize))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<NormWindow, E> {
                if v < 0 {
                    return Err(E::custom("window must be nonnegative"));
                }
                Ok(NormWindow::Finite(v as usize))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<NormWindow, E> {
                NormWindow::from_str(v).map_err(E::custom)
            }
        }
        deserializer.deserialize_any(KVisitor)
    }
}

/// An observation scheme: aggregate at `dt` trading days, normalize with
/// window `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub dt: usize,
    pub k: NormWindow,
}

impl Scheme {
    pub fn new(dt: usize, k: NormWindow) -> Result<Self, SchemeError> {
        if dt < 1 {
            return Err(SchemeError::BadDt);
        }
        if let NormWindow::Finite(k) = k {
            if k < 2 {
                return Err(SchemeError::BadK { got: k });
            }
        }
        Ok(Self { dt, k })
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(dt={}, k={})", self.dt, self.k)
    }
}

/// How a daily series folds into one `dt`-day period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggKind {
    /// Log returns add across days.
    ReturnSum,
    /// Trend levels average.
    TrendMean,
    /// Volatilities combine as the root of summed squares.
    VolRms,
}

/// Folds consecutive runs of `dt` values into periods, discarding a trailing
/// partial period.
pub fn aggregate(x: &[f64], dt: usize, kind: AggKind) -> Result<Vec<f64>, SchemeError> {
    if dt < 1 {
        return Err(SchemeError::BadDt);
    }
    if x.len() < dt {
        return Err(SchemeError::TooShort {
            required: dt,
            got: x.len(),
        });
    }
    let n_periods = x.len() / dt;
    let mut out = Vec::with_capacity(n_periods);
    for p in 0..n_periods {
        let chunk = &x[p * dt..(p + 1) * dt];
        let value = match kind {
            AggKind::ReturnSum => chunk.iter().sum(),
            AggKind::TrendMean => chunk.iter().sum::<f64>() / dt as f64,
            AggKind::VolRms => chunk.iter().map(|v| v * v).sum::<f64>().sqrt(),
        };
        out.push(value);
    }
    Ok(out)
}

/// The daily panel folded into `dt`-day periods. Column order matches the
/// source panel; returns sum, volatility combines as RMS, trends average.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedPanel {
    pub dt: usize,
    /// Last trading date of each period.
    pub period_end_dates: Vec<NaiveDate>,
    pub feature_names: Vec<String>,
    /// Column-major; every column has `n_periods` entries.
    pub features: Vec<Vec<f64>>,
}

impl AggregatedPanel {
    pub fn n_periods(&self) -> usize {
        self.period_end_dates.len()
    }

    pub fn returns(&self) -> &[f64] {
        &self.features[0]
    }

    pub fn sigma(&self) -> &[f64] {
        &self.features[1]
    }
}

pub fn aggregate_panel(panel: &FeaturePanel, dt: usize) -> Result<AggregatedPanel, SchemeError> {
    let names = panel.feature_names().to_vec();
    let mut features = Vec::with_capacity(names.len());
    for (j, _) in names.iter().enumerate() {
        let kind = match j {
            0 => AggKind::ReturnSum,
            1 => AggKind::VolRms,
            _ => AggKind::TrendMean,
        };
        features.push(aggregate(panel.column(j), dt, kind)?);
    }
    let n_periods = features[0].len();
    let period_end_dates = (0..n_periods)
        .map(|p| panel.dates()[(p + 1) * dt - 1])
        .collect();
    Ok(AggregatedPanel {
        dt,
        period_end_dates,
        feature_names: names,
        features,
    })
}

/// What the supervised target is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Volatility,
    Return,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::Volatility => write!(f, "volatility"),
            TargetKind::Return => write!(f, "return"),
        }
    }
}

impl FromStr for TargetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "volatility" => Ok(TargetKind::Volatility),
            "return" => Ok(TargetKind::Return),
            other => Err(format!("expected volatility or return, got {other:?}")),
        }
    }
}

/// Next-period supervised targets: `y[i]` is the period `i+1` value, so the
/// output is one shorter than the aggregated panel.
pub fn build_target(agg: &AggregatedPanel, kind: TargetKind) -> Vec<f64> {
    let source = match kind {
        TargetKind::Volatility => agg.sigma(),
        TargetKind::Return => agg.returns(),
    };
    source[1..].to_vec()
}

/// Mean and sample standard deviation of a normalization fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    /// Whole-series stats with the n-1 variance denominator.
    pub fn from_series(x: &[f64]) -> Result<Self, SchemeError> {
        if x.len() < 2 {
            return Err(SchemeError::TooShort {
                required: 2,
                got: x.len(),
            });
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var <= 0.0 {
            return Err(SchemeError::ZeroVarianceSeries);
        }
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// A normalized series plus the alignment offset into its source.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScored {
    /// `values[i]` normalizes source index `i + offset`.
    pub values: Vec<f64>,
    pub offset: usize,
    /// The whole-sample transform, present only for infinite `k`.
    pub stats: Option<Stats>,
}

/// Sliding or whole-sample z-score.
///
/// Finite `k`: the score at index `i` uses the mean and sample standard
/// deviation of the `k` values strictly before `i`, so the first `k` outputs
/// are dropped and no value is normalized against its own window.
///
/// Infinite `k`: one linear transform for the whole series, taken from
/// `train_stats` when supplied (out-of-sample rows) or fitted on `x` itself.
pub fn zscore(
    x: &[f64],
    k: NormWindow,
    train_stats: Option<Stats>,
) -> Result<ZScored, SchemeError> {
    match k {
        NormWindow::Finite(k) => {
            if k < 2 {
                return Err(SchemeError::BadK { got: k });
            }
            if x.len() <= k {
                return Err(SchemeError::TooShort {
                    required: k + 1,
                    got: x.len(),
                });
            }
            let mut values = Vec::with_capacity(x.len() - k);
            for i in k..x.len() {
                let window = &x[i - k..i];
                let mean = window.iter().sum::<f64>() / k as f64;
                let var =
                    window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0);
                if var <= 0.0 {
                    return Err(SchemeError::ZeroVarianceWindow { index: i });
                }
                values.push((x[i] - mean) / var.sqrt());
            }
            Ok(ZScored {
                values,
                offset: k,
                stats: None,
            })
        }
        NormWindow::Infinite => {
            let stats = match train_stats {
                Some(s) => s,
                None => Stats::from_series(x)?,
            };
            Ok(ZScored {
                values: x.iter().map(|v| stats.apply(*v)).collect(),
                offset: 0,
                stats: Some(stats),
            })
        }
    }
}

/// Aggregated, normalized feature columns with an aligned normalized target;
/// the shape consumed by mutual-information scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPanel {
    pub feature_names: Vec<String>,
    /// Column-major; every column has `n_samples` entries aligned to
    /// `z_target`.
    pub z_features: Vec<Vec<f64>>,
    pub z_target: Vec<f64>,
    /// First aggregated period index covered by the rows.
    pub offset: usize,
}

impl NormalizedPanel {
    pub fn n_samples(&self) -> usize {
        self.z_target.len()
    }
}

/// Aggregates and normalizes a single panel, pairing period-`i` features
/// with the normalized period-`i+1` target. Used for scheme scoring on the
/// training panel; infinite-`k` stats come from the panel itself.
pub fn normalize_for_mi(
    panel: &FeaturePanel,
    scheme: Scheme,
    target: TargetKind,
) -> Result<NormalizedPanel, SchemeError> {
    let agg = aggregate_panel(panel, scheme.dt)?;
    let y_raw = build_target(&agg, target);
    let zy = zscore(&y_raw, scheme.k, None)?;
    let offset = scheme.k.offset();
    // Feature index runs to P-2 (the last period with a defined target).
    let n_samples = zy.values.len();
    let mut z_features = Vec::with_capacity(agg.feature_names.len());
    for col in &agg.features {
        let z = zscore(col, scheme.k, None)?;
        let usable = &z.values[..n_samples.min(z.values.len())];
        if usable.len() < n_samples {
            return Err(SchemeError::TooShort {
                required: n_samples,
                got: usable.len(),
            });
        }
        z_features.push(usable.to_vec());
    }
    Ok(NormalizedPanel {
        feature_names: agg.feature_names.clone(),
        z_features,
        z_target: zy.values,
        offset,
    })
}

/// Options for building supervised windows from a panel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub scheme: Scheme,
    pub lag_len: usize,
    /// Restrict inputs to these panel columns (canonical panel order is
    /// preserved). `None` keeps every column.
    pub features: Option<Vec<String>>,
    /// Normalize the target like a feature instead of keeping raw sigma.
    pub normalize_target: bool,
}

impl DatasetSpec {
    pub fn new(scheme: Scheme, lag_len: usize) -> Self {
        Self {
            scheme,
            lag_len,
            features: None,
            normalize_target: false,
        }
    }
}

/// One supervised window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    /// Row-major `lag_len x n_features` normalized inputs, oldest row first.
    pub inputs: Vec<Vec<f64>>,
    /// Raw aggregated sigma of each window period (for teacher forcing).
    pub raw_sigma: Vec<f64>,
    /// Raw aggregated sigma of the period before the window.
    pub seed_sigma: f64,
    /// Supervised target: the period after the window's last row.
    pub target: f64,
    /// Aggregated period index of the window's last row within its panel.
    pub window_end: usize,
}

/// Supervised windows for one panel under one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeDataset {
    pub scheme: Scheme,
    pub lag_len: usize,
    pub feature_names: Vec<String>,
    /// Whole-sample normalization per feature; present only for infinite `k`
    /// and always fitted on the training panel.
    pub train_stats: Option<Vec<Stats>>,
    /// Present when the target was normalized too.
    pub target_stats: Option<Stats>,
    pub normalized_target: bool,
    pub windows: Vec<WindowSample>,
}

impl SchemeDataset {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.target).collect()
    }

    /// CSV export: `window_end,period_index,target_sigma` then the flattened
    /// inputs as `<feature>_lag<j>` (lag 1 is the most recent period).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), SchemeError> {
        write!(w, "window_end,period_index,target_sigma")?;
        for name in &self.feature_names {
            for lag in 1..=self.lag_len {
                write!(w, ",{name}_lag{lag}")?;
            }
        }
        writeln!(w)?;
        for win in &self.windows {
            write!(w, "{},{},{}", win.window_end, win.window_end + 1, win.target)?;
            for f in 0..self.feature_names.len() {
                for lag in 1..=self.lag_len {
                    write!(w, ",{}", win.inputs[self.lag_len - lag][f])?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// JSON sidecar describing how the CSV was produced.
    pub fn sidecar_json(&self) -> serde_json::Value {
        serde_json::json!({
            "scheme": self.scheme,
            "lag_len": self.lag_len,
            "feature_names": self.feature_names,
            "train_stats": self.train_stats,
            "target_stats": self.target_stats,
            "normalized_target": self.normalized_target,
            "n_windows": self.windows.len(),
        })
    }
}

/// Builds train and test window sets under one scheme.
///
/// Both panels are aggregated independently (their windows never share a
/// daily row). Infinite-`k` normalization is fitted on the training panel
/// and applied unchanged to the test panel; finite-`k` normalization is
/// causal within each panel. Targets stay in raw sigma units unless
/// `normalize_target` is set.
pub fn apply_scheme(
    train: &FeaturePanel,
    test: &FeaturePanel,
    spec: &DatasetSpec,
) -> Result<(SchemeDataset, SchemeDataset), SchemeError> {
    if spec.lag_len < 1 {
        return Err(SchemeError::BadLag);
    }
    let selected = select_indices(train.feature_names(), spec.features.as_deref())?;

    let train_agg = aggregate_panel(train, spec.scheme.dt)?;
    let test_agg = aggregate_panel(test, spec.scheme.dt)?;

    // Normalization transforms, fitted on training columns only.
    let mut train_stats = Vec::new();
    let mut train_z: Vec<ZScored> = Vec::new();
    let mut test_z: Vec<ZScored> = Vec::new();
    for &j in &selected {
        let zt = zscore(&train_agg.features[j], spec.scheme.k, None)?;
        let zv = zscore(&test_agg.features[j], spec.scheme.k, zt.stats)?;
        if let Some(s) = zt.stats {
            train_stats.push(s);
        }
        train_z.push(zt);
        test_z.push(zv);
    }
    let stats = match spec.scheme.k {
        NormWindow::Infinite => Some(train_stats),
        NormWindow::Finite(_) => None,
    };

    let train_target_raw = build_target(&train_agg, TargetKind::Volatility);
    let test_target_raw = build_target(&test_agg, TargetKind::Volatility);
    let (target_stats, train_target, test_target) = if spec.normalize_target {
        let zt = zscore(&train_target_raw, spec.scheme.k, None)?;
        let zv = zscore(&test_target_raw, spec.scheme.k, zt.stats)?;
        (zt.stats, zt.values, zv.values)
    } else {
        (None, train_target_raw.clone(), test_target_raw.clone())
    };
    let target_offset = if spec.normalize_target {
        spec.scheme.k.offset()
    } else {
        0
    };

    let names: Vec<String> = selected
        .iter()
        .map(|&j| train.feature_names()[j].clone())
        .collect();

    let build = |agg: &AggregatedPanel,
                 z: &[ZScored],
                 target: &[f64],
                 side: &'static str|
     -> Result<Vec<WindowSample>, SchemeError> {
        let p = agg.n_periods();
        let offset = spec.scheme.k.offset();
        // Window start needs normalized rows (>= offset), a seed period
        // (>= 1), and a target for its final row (end <= p - 2).
        let first_start = offset.max(1);
        let required = first_start + spec.lag_len + 1;
        if p < required {
            return Err(SchemeError::NoWindows {
                side,
                required,
                got: p,
            });
        }
        let mut windows = Vec::new();
        for s in first_start..=(p - 1 - spec.lag_len) {
            let e = s + spec.lag_len - 1;
            let inputs: Vec<Vec<f64>> = (s..=e)
                .map(|i| z.iter().map(|col| col.values[i - col.offset]).collect())
                .collect();
            let y = target[e - target_offset];
            if !spec.normalize_target && y <= 0.0 {
                return Err(SchemeError::NonPositiveTarget { period: e + 1 });
            }
            windows.push(WindowSample {
                inputs,
                raw_sigma: agg.sigma()[s..=e].to_vec(),
                seed_sigma: agg.sigma()[s - 1],
                target: y,
                window_end: e,
            });
        }
        Ok(windows)
    };

    let train_windows = build(&train_agg, &train_z, &train_target, "train")?;
    let test_windows = build(&test_agg, &test_z, &test_target, "test")?;

    let make = |windows: Vec<WindowSample>| SchemeDataset {
        scheme: spec.scheme,
        lag_len: spec.lag_len,
        feature_names: names.clone(),
        train_stats: stats.clone(),
        target_stats,
        normalized_target: spec.normalize_target,
        windows,
    };
    Ok((make(train_windows), make(test_windows)))
}

/// Resolves an optional feature subset to panel column indices, keeping the
/// panel's canonical order.
fn select_indices(
    names: &[String],
    subset: Option<&[String]>,
) -> Result<Vec<usize>, SchemeError> {
    match subset {
        None => Ok((0..names.len()).collect()),
        Some(wanted) => {
            let mut mask = vec![false; names.len()];
            for w in wanted {
                let j = names
                    .iter()
                    .position(|n| n == w)
                    .ok_or_else(|| SchemeError::UnknownFeature { name: w.clone() })?;
                if mask[j] {
                    return Err(SchemeError::DuplicateFeature { name: w.clone() });
                }
                mask[j] = true;
            }
            Ok(mask
                .iter()
                .enumerate()
                .filter_map(|(j, &keep)| keep.then_some(j))
                .collect())
        }
    }
}
