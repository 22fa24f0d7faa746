//! Raw market data: OHLC bars, trend series, returns, daily volatility,
//! and the aligned feature panel the rest of the pipeline consumes.

mod adf;
mod synth;

pub use adf::{adf_test, AdfResult};
pub use synth::{synth_generate, SynthConfig};

use std::collections::BTreeSet;
use std::io;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the log-return column in a [`FeaturePanel`].
pub const RETURN_COL: &str = "return";
/// Name of the daily-volatility column in a [`FeaturePanel`].
pub const VOLATILITY_COL: &str = "volatility";

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header mismatch: expected columns starting with {expected:?}, got {got:?}")]
    Header { expected: String, got: String },
    #[error("record {line}: expected {expected} fields, got {got}")]
    FieldCount {
        line: u64,
        expected: usize,
        got: usize,
    },
    #[error("record {line}: unparseable date {value:?}")]
    Date { line: u64, value: String },
    #[error("record {line}: unparseable number {value:?} in column {column}")]
    Number {
        line: u64,
        value: String,
        column: String,
    },
    #[error("{date}: non-positive price in column {column}")]
    NonPositivePrice { date: NaiveDate, column: String },
    #[error("{date}: negative value in trend column {column}")]
    NegativeTrend { date: NaiveDate, column: String },
    #[error("{date}: high/low inconsistent with open/close")]
    InconsistentBar { date: NaiveDate },
    #[error("dates not strictly increasing at {date}")]
    UnsortedDates { date: NaiveDate },
    #[error("no data rows")]
    Empty,
    #[error("need at least {required} observations, got {got}")]
    TooShort { required: usize, got: usize },
    #[error("trend {name:?} is missing trading day {date}; gaps are not imputed")]
    TrendGap { name: String, date: NaiveDate },
    #[error("date intersection of OHLC and trend series is empty")]
    EmptyIntersection,
    #[error("duplicate feature name {name:?}")]
    DuplicateFeature { name: String },
    #[error("split fraction must lie in (0, 1), got {fraction}")]
    BadFraction { fraction: f64 },
    #[error("split leaves an empty {side} set")]
    DegenerateSplit { side: &'static str },
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("singular regression matrix in unit-root test")]
    SingularRegression,
    #[error("invalid synthetic config: {reason}")]
    BadSynthConfig { reason: String },
}

/// One daily bar. Prices are positive and `low <= min(open, close) <=
/// max(open, close) <= high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: f64,
}

impl OhlcBar {
    fn validate(&self) -> Result<(), MarketDataError> {
        for (v, column) in [
            (self.open, "open"),
            (self.high, "high"),
            (self.low, "low"),
            (self.close, "close"),
            (self.adj_close, "adj_close"),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(MarketDataError::NonPositivePrice {
                    date: self.date,
                    column: column.to_string(),
                });
            }
        }
        let body_high = self.open.max(self.close);
        let body_low = self.open.min(self.close);
        if self.low > body_low || self.high < body_high {
            return Err(MarketDataError::InconsistentBar { date: self.date });
        }
        Ok(())
    }
}

/// Daily bars with strictly increasing dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OhlcSeries {
    bars: Vec<OhlcBar>,
}

impl OhlcSeries {
    /// Validates every bar and the date ordering.
    pub fn new(bars: Vec<OhlcBar>) -> Result<Self, MarketDataError> {
        if bars.is_empty() {
            return Err(MarketDataError::Empty);
        }
        for bar in &bars {
            bar.validate()?;
        }
        for pair in bars.windows(2) {
            if pair[1].date <= pair[0].date {
                return Err(MarketDataError::UnsortedDates { date: pair[1].date });
            }
        }
        Ok(Self { bars })
    }

    pub fn bars(&self) -> &[OhlcBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.bars.iter().map(|b| b.date)
    }
}

/// A named exogenous daily series; values are nonnegative and dates strictly
/// increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    name: String,
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl TrendSeries {
    pub fn new(
        name: impl Into<String>,
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
    ) -> Result<Self, MarketDataError> {
        let name = name.into();
        if dates.is_empty() {
            return Err(MarketDataError::Empty);
        }
        assert_eq!(dates.len(), values.len(), "date/value length mismatch");
        for pair in dates.windows(2) {
            if pair[1] <= pair[0] {
                return Err(MarketDataError::UnsortedDates { date: pair[1] });
            }
        }
        for (d, v) in dates.iter().zip(&values) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(MarketDataError::NegativeTrend {
                    date: *d,
                    column: name.clone(),
                });
            }
        }
        Ok(Self {
            name,
            dates,
            values,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn value_at(&self, date: NaiveDate) -> Option<f64> {
        self.dates
            .binary_search(&date)
            .ok()
            .map(|i| self.values[i])
    }
}

/// Range-based daily volatility estimate for a single bar.
///
/// `clamped` records that the quadratic form came out negative (possible for
/// extreme close-to-close moves) and was clamped to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolEstimate {
    pub sigma: f64,
    pub clamped: bool,
}

/// Daily volatility from the bar's intraday range.
///
/// With `u = ln(high/open)`, `d = ln(low/open)`, `c = ln(close/open)`:
///
/// ```text
/// sigma^2 = 0.511 (u - d)^2 - 0.019 [c (u + d) - 2 u d] - 0.383 c^2
/// ```
///
/// The estimate depends only on price ratios, so it is invariant under
/// rescaling all four prices.
pub fn garman_klass(bar: &OhlcBar) -> VolEstimate {
    let u = (bar.high / bar.open).ln();
    let d = (bar.low / bar.open).ln();
    let c = (bar.close / bar.open).ln();
    let var = 0.511 * (u - d).powi(2) - 0.019 * (c * (u + d) - 2.0 * u * d) - 0.383 * c.powi(2);
    if var < 0.0 {
        VolEstimate {
            sigma: 0.0,
            clamped: true,
        }
    } else {
        VolEstimate {
            sigma: var.sqrt(),
            clamped: false,
        }
    }
}

/// Per-bar volatility estimates for a whole series.
pub fn garman_klass_series(series: &OhlcSeries) -> Vec<VolEstimate> {
    series.bars().iter().map(garman_klass).collect()
}

/// Daily log returns `ln(adj_close_t / adj_close_{t-1})`; one element shorter
/// than the input series.
pub fn daily_returns(series: &OhlcSeries) -> Vec<f64> {
    series
        .bars()
        .windows(2)
        .map(|w| (w[1].adj_close / w[0].adj_close).ln())
        .collect()
}

/// Date-aligned daily feature matrix. The first two columns are always the
/// log return and the range-based volatility; trend columns follow in input
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePanel {
    dates: Vec<NaiveDate>,
    feature_names: Vec<String>,
    /// Column-major values; `columns[j].len() == dates.len()`.
    columns: Vec<Vec<f64>>,
}

impl FeaturePanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        feature_names: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self, MarketDataError> {
        if dates.is_empty() {
            return Err(MarketDataError::Empty);
        }
        assert_eq!(feature_names.len(), columns.len(), "name/column mismatch");
        assert!(
            feature_names.len() >= 2
                && feature_names[0] == RETURN_COL
                && feature_names[1] == VOLATILITY_COL,
            "panel must start with return and volatility columns"
        );
        for col in &columns {
            assert_eq!(col.len(), dates.len(), "ragged panel column");
        }
        for pair in dates.windows(2) {
            if pair[1] <= pair[0] {
                return Err(MarketDataError::UnsortedDates { date: pair[1] });
            }
        }
        let mut seen = BTreeSet::new();
        for name in &feature_names {
            if !seen.insert(name.clone()) {
                return Err(MarketDataError::DuplicateFeature { name: name.clone() });
            }
        }
        Ok(Self {
            dates,
            feature_names,
            columns,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .map(|j| self.columns[j].as_slice())
    }

    pub fn returns(&self) -> &[f64] {
        &self.columns[0]
    }

    pub fn volatility(&self) -> &[f64] {
        &self.columns[1]
    }

    /// Copy of the panel restricted to a row range (all columns kept).
    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            dates: self.dates[range.clone()].to_vec(),
            feature_names: self.feature_names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| c[range.clone()].to_vec())
                .collect(),
        }
    }
}

/// Joins OHLC-derived returns and volatility with the trend series on dates
/// present everywhere.
///
/// The first OHLC date is dropped (the return needs a lag). A trend missing a
/// trading day inside its own coverage is an error; trends are never imputed.
pub fn assemble_panel(
    ohlc: &OhlcSeries,
    trends: &[TrendSeries],
) -> Result<FeaturePanel, MarketDataError> {
    if ohlc.len() < 2 {
        return Err(MarketDataError::TooShort {
            required: 2,
            got: ohlc.len(),
        });
    }
    let returns = daily_returns(ohlc);
    let vols = garman_klass_series(ohlc);
    // Candidate dates: every OHLC date with a defined return.
    let candidates: Vec<NaiveDate> = ohlc.dates().skip(1).collect();

    for trend in trends {
        let first = *trend.dates().first().expect("trend is non-empty");
        let last = *trend.dates().last().expect("trend is non-empty");
        for &date in &candidates {
            if date >= first && date <= last && trend.value_at(date).is_none() {
                return Err(MarketDataError::TrendGap {
                    name: trend.name().to_string(),
                    date,
                });
            }
        }
    }

    let mut dates = Vec::new();
    let mut ret_col = Vec::new();
    let mut vol_col = Vec::new();
    let mut trend_cols: Vec<Vec<f64>> = vec![Vec::new(); trends.len()];
    for (i, &date) in candidates.iter().enumerate() {
        let row: Option<Vec<f64>> = trends.iter().map(|t| t.value_at(date)).collect();
        if let Some(row) = row {
            dates.push(date);
            ret_col.push(returns[i]);
            vol_col.push(vols[i + 1].sigma);
            for (col, v) in trend_cols.iter_mut().zip(row) {
                col.push(v);
            }
        }
    }
    if dates.is_empty() {
        return Err(MarketDataError::EmptyIntersection);
    }

    let mut names = vec![RETURN_COL.to_string(), VOLATILITY_COL.to_string()];
    names.extend(trends.iter().map(|t| t.name().to_string()));
    let mut columns = vec![ret_col, vol_col];
    columns.extend(trend_cols);
    FeaturePanel::new(dates, names, columns)
}

/// Chronological split: the first `floor(n * fraction)` rows become the
/// training panel, the rest the test panel.
pub fn split_train_test(
    panel: &FeaturePanel,
    fraction: f64,
) -> Result<(FeaturePanel, FeaturePanel), MarketDataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(MarketDataError::BadFraction { fraction });
    }
    let n = panel.n_rows();
    let cut = (n as f64 * fraction).floor() as usize;
    if cut == 0 {
        return Err(MarketDataError::DegenerateSplit { side: "training" });
    }
    if cut == n {
        return Err(MarketDataError::DegenerateSplit { side: "test" });
    }
    Ok((panel.slice_rows(0..cut), panel.slice_rows(cut..n)))
}

/// Parses OHLC bars from CSV with header
/// `date,open,high,low,close,adj_close` and ISO-8601 dates.
pub fn parse_ohlc<R: io::Read>(reader: R) -> Result<OhlcSeries, MarketDataError> {
    const EXPECTED: [&str; 6] = ["date", "open", "high", "low", "close", "adj_close"];
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got != EXPECTED {
        return Err(MarketDataError::Header {
            expected: EXPECTED.join(","),
            got: got.join(","),
        });
    }
    let mut bars = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != EXPECTED.len() {
            return Err(MarketDataError::FieldCount {
                line,
                expected: EXPECTED.len(),
                got: record.len(),
            });
        }
        let date = parse_date(&record[0], line)?;
        let mut nums = [0.0; 5];
        for (k, slot) in nums.iter_mut().enumerate() {
            *slot = parse_number(&record[k + 1], EXPECTED[k + 1], line)?;
        }
        bars.push(OhlcBar {
            date,
            open: nums[0],
            high: nums[1],
            low: nums[2],
            close: nums[3],
            adj_close: nums[4],
        });
    }
    OhlcSeries::new(bars)
}

/// Parses a wide trend CSV (`date,<name>,<name>,...`) into one series per
/// column.
pub fn parse_trends<R: io::Read>(reader: R) -> Result<Vec<TrendSeries>, MarketDataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    if names.len() < 2 || names[0] != "date" {
        return Err(MarketDataError::Header {
            expected: "date,<name>,...".to_string(),
            got: names.join(","),
        });
    }
    let mut dates = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len() - 1];
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(MarketDataError::FieldCount {
                line,
                expected: names.len(),
                got: record.len(),
            });
        }
        dates.push(parse_date(&record[0], line)?);
        for (k, col) in cols.iter_mut().enumerate() {
            col.push(parse_number(&record[k + 1], &names[k + 1], line)?);
        }
    }
    if dates.is_empty() {
        return Err(MarketDataError::Empty);
    }
    names
        .iter()
        .skip(1)
        .zip(cols)
        .map(|(name, values)| TrendSeries::new(name.clone(), dates.clone(), values))
        .collect()
}

fn parse_date(field: &str, line: u64) -> Result<NaiveDate, MarketDataError> {
    NaiveDate::parse_from_str(field, "%Y-%m-%d").map_err(|_| MarketDataError::Date {
        line,
        value: field.to_string(),
    })
}

fn parse_number(field: &str, column: &str, line: u64) -> Result<f64, MarketDataError> {
    field.parse::<f64>().map_err(|_| MarketDataError::Number {
        line,
        value: field.to_string(),
        column: column.to_string(),
    })
}
