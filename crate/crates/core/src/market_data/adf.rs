//! Augmented Dickey-Fuller unit-root test with a constant term.

use nalgebra::{Cholesky, DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use super::MarketDataError;

/// Outcome of [`adf_test`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdfResult {
    /// t-ratio of the lagged-level coefficient.
    pub statistic: f64,
    /// MacKinnon approximate p-value (constant-only case).
    pub p_value: f64,
    /// Number of lagged differences selected by AIC.
    pub lag_order: usize,
    /// Effective regression observations at the selected lag.
    pub n_obs: usize,
    /// `p_value < 0.05`.
    pub stationary_at_5pct: bool,
}

/// Tests `x` for a unit root via the regression
/// `dx_t = const + gamma * x_{t-1} + sum_i phi_i * dx_{t-i} + e_t`.
///
/// The lag order is chosen by minimum AIC over `0..=max_lag` on a common
/// sample, then the statistic is refit at that lag on the longest sample.
/// `max_lag` defaults to the Schwert rule `floor(12 * (n/100)^0.25)`.
pub fn adf_test(x: &[f64], max_lag: Option<usize>) -> Result<AdfResult, MarketDataError> {
    let n = x.len();
    let max_lag = max_lag.unwrap_or_else(|| (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize);
    let required = max_lag + 10;
    if n < required {
        return Err(MarketDataError::TooShort { required, got: n });
    }
    let (min, max) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if min == max {
        return Err(MarketDataError::ZeroVariance);
    }

    // Lag selection on the sample shared by every candidate.
    let common_start = max_lag + 1;
    let mut best: Option<(f64, usize)> = None;
    for p in 0..=max_lag {
        let (xm, yv) = design(x, p, common_start);
        let nobs = yv.len() as f64;
        let (_, _, ssr) = ols(&xm, &yv).ok_or(MarketDataError::SingularRegression)?;
        if ssr <= 0.0 {
            return Err(MarketDataError::SingularRegression);
        }
        let k = (p + 2) as f64;
        let aic = nobs * (ssr / nobs).ln() + 2.0 * k;
        match best {
            Some((best_aic, _)) if aic >= best_aic => {}
            _ => best = Some((aic, p)),
        }
    }
    let lag_order = best.expect("candidate set is non-empty").1;

    // Refit at the chosen lag on the longest available sample.
    let (xm, yv) = design(x, lag_order, lag_order + 1);
    let n_obs = yv.len();
    let (beta, xtx_inv, ssr) = ols(&xm, &yv).ok_or(MarketDataError::SingularRegression)?;
    let dof = n_obs - (lag_order + 2);
    if dof == 0 || ssr <= 0.0 {
        return Err(MarketDataError::SingularRegression);
    }
    let s2 = ssr / dof as f64;
    let se = (s2 * xtx_inv[(1, 1)]).sqrt();
    if !(se.is_finite() && se > 0.0) {
        return Err(MarketDataError::SingularRegression);
    }
    let statistic = beta[1] / se;
    let p_value = mackinnon_p(statistic);
    Ok(AdfResult {
        statistic,
        p_value,
        lag_order,
        n_obs,
        stationary_at_5pct: p_value < 0.05,
    })
}

/// Rows `t = start..n` of the test regression at lag order `p`.
fn design(x: &[f64], p: usize, start: usize) -> (DMatrix<f64>, DVector<f64>) {
    debug_assert!(start >= p + 1);
    let n = x.len();
    let rows = n - start;
    let mut xm = DMatrix::zeros(rows, p + 2);
    let mut yv = DVector::zeros(rows);
    for (r, t) in (start..n).enumerate() {
        yv[r] = x[t] - x[t - 1];
        xm[(r, 0)] = 1.0;
        xm[(r, 1)] = x[t - 1];
        for i in 1..=p {
            xm[(r, 1 + i)] = x[t - i] - x[t - i - 1];
        }
    }
    (xm, yv)
}

/// Least squares via Cholesky of the normal equations; returns
/// `(coefficients, (X'X)^-1, sum of squared residuals)`.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>, f64)> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let chol = Cholesky::new(xtx)?;
    let beta = chol.solve(&xty);
    let resid = y - x * &beta;
    let ssr = resid.dot(&resid);
    Some((beta, chol.inverse(), ssr))
}

// MacKinnon (1994) approximate response-surface coefficients for the
// constant-only, single-series case. Outside [TAU_MIN, TAU_MAX] the p-value
// saturates at 0 or 1.
const TAU_MAX: f64 = 2.74;
const TAU_MIN: f64 = -18.83;
const TAU_STAR: f64 = -1.61;
const SMALL_P: [f64; 3] = [2.1659, 1.4412, 0.038269];
const LARGE_P: [f64; 4] = [1.7339, 0.93202, -0.15147, -0.033377];

fn mackinnon_p(stat: f64) -> f64 {
    if stat > TAU_MAX {
        return 1.0;
    }
    if stat < TAU_MIN {
        return 0.0;
    }
    let z = if stat <= TAU_STAR {
        polyval(&SMALL_P, stat)
    } else {
        polyval(&LARGE_P, stat)
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    normal.cdf(z)
}

fn polyval(ascending: &[f64], x: f64) -> f64 {
    ascending
        .iter()
        .rev()
        .fold(0.0, |acc, &c| acc.mul_add(x, c))
}
