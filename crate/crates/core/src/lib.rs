//! Volatility forecasting toolkit.
//!
//! The pipeline turns daily OHLC bars plus exogenous search-trend series into
//! supervised volatility forecasts:
//!
//! 1. [`market_data`] parses the raw CSVs, computes log returns and a
//!    range-based daily volatility estimate, and assembles an aligned panel.
//! 2. [`scheme`] aggregates the panel into `dt`-day periods and normalizes it
//!    with sliding or whole-sample z-scores, producing lagged training windows.
//! 3. [`infometrics`] scores candidate `(dt, k)` schemes by the mutual
//!    information between normalized features and the next-period target.
//! 4. [`lstm`] trains a single-block recurrent forecaster with prediction
//!    feedback on the windows.
//! 5. [`benchmarks`] fits GARCH(1,1) and penalized linear models on the same
//!    windows for comparison.
//! 6. [`diagnostics`] computes error metrics, residual correlograms, and a
//!    Monte-Carlo normality test, and bundles everything into a report.
//!
//! All randomness is seeded explicitly; identical configuration and seed
//! reproduce identical artifacts byte for byte.

pub mod benchmarks;
pub mod diagnostics;
pub mod infometrics;
pub mod lstm;
pub mod market_data;
pub mod scheme;
