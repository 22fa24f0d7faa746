//! Forecast scoring and residual diagnostics: error metrics, correlograms
//! with significance bands, a Monte-Carlo normality test, and the combined
//! evaluation report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::scheme::Scheme;

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("no observations")]
    Empty,
    #[error("predictions and targets differ in length: {preds} vs {targets}")]
    LengthMismatch { preds: usize, targets: usize },
    #[error("target at index {index} is not positive; MAPE undefined")]
    NonPositiveTarget { index: usize },
    #[error("need at least {required} observations, got {got}")]
    TooShort { required: usize, got: usize },
    #[error("max_lag must be at least 1")]
    BadLag,
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("need at least one Monte-Carlo replicate")]
    BadReps,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("no models to report on")]
    NoModels,
}

/// Headline forecast errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean absolute percentage error, in percent.
    pub mape: f64,
    /// Root mean squared error, in target units.
    pub rmse: f64,
    pub n: usize,
}

pub fn compute_metrics(preds: &[f64], targets: &[f64]) -> Result<Metrics, DiagError> {
    if preds.len() != targets.len() {
        return Err(DiagError::LengthMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(DiagError::Empty);
    }
    let mut ape_sum = 0.0;
    let mut sq_sum = 0.0;
    for (i, (&p, &y)) in preds.iter().zip(targets).enumerate() {
        if !p.is_finite() || !y.is_finite() {
            return Err(DiagError::NonFinite);
        }
        if y <= 0.0 {
            return Err(DiagError::NonPositiveTarget { index: i });
        }
        ape_sum += (p - y).abs() / y;
        sq_sum += (p - y) * (p - y);
    }
    let n = preds.len();
    Ok(Metrics {
        mape: 100.0 * ape_sum / n as f64,
        rmse: (sq_sum / n as f64).sqrt(),
        n,
    })
}

/// How much smaller the model error is than the baseline error, in percent
/// of the baseline.
pub fn relative_improvement(baseline_mape: f64, model_mape: f64) -> f64 {
    100.0 * (baseline_mape - model_mape) / baseline_mape
}

/// Sample autocorrelations and partial autocorrelations, lags 1 through
/// `max_lag`, with the two-standard-error white-noise band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlogram {
    pub acf: Vec<f64>,
    pub pacf: Vec<f64>,
    /// `2 / sqrt(n)`; values outside it are flagged below.
    pub band: f64,
    pub significant_acf: Vec<usize>,
    pub significant_pacf: Vec<usize>,
    pub n: usize,
    pub max_lag: usize,
}

/// Biased (denominator `n`) autocovariances normalized by the lag-0 value,
/// then partial autocorrelations by Durbin-Levinson.
pub fn acf_pacf(x: &[f64], max_lag: usize) -> Result<Correlogram, DiagError> {
    if max_lag < 1 {
        return Err(DiagError::BadLag);
    }
    let n = x.len();
    if n < max_lag + 2 {
        return Err(DiagError::TooShort {
            required: max_lag + 2,
            got: n,
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DiagError::NonFinite);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return Err(DiagError::ZeroVariance);
    }
    let acf: Vec<f64> = (1..=max_lag)
        .map(|k| {
            let ck = (k..n)
                .map(|t| (x[t] - mean) * (x[t - k] - mean))
                .sum::<f64>()
                / n as f64;
            ck / c0
        })
        .collect();

    // Durbin-Levinson: phi[k][j] are order-k AR coefficients; the diagonal
    // phi[k][k] is the partial autocorrelation at lag k.
    let mut pacf = Vec::with_capacity(max_lag);
    let mut phi_prev: Vec<f64> = Vec::new();
    for k in 1..=max_lag {
        let rho_k = acf[k - 1];
        let phi_kk = if k == 1 {
            rho_k
        } else {
            let num = rho_k
                - phi_prev
                    .iter()
                    .enumerate()
                    .map(|(j, p)| p * acf[k - 2 - j])
                    .sum::<f64>();
            let den = 1.0
                - phi_prev
                    .iter()
                    .enumerate()
                    .map(|(j, p)| p * acf[j])
                    .sum::<f64>();
            if den.abs() < 1e-14 {
                0.0
            } else {
                num / den
            }
        };
        let mut phi = Vec::with_capacity(k);
        for j in 0..k - 1 {
            phi.push(phi_prev[j] - phi_kk * phi_prev[k - 2 - j]);
        }
        phi.push(phi_kk);
        pacf.push(phi_kk);
        phi_prev = phi;
    }

    let band = 2.0 / (n as f64).sqrt();
    let flag = |vals: &[f64]| {
        vals.iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > band)
            .map(|(i, _)| i + 1)
            .collect::<Vec<usize>>()
    };
    Ok(Correlogram {
        significant_acf: flag(&acf),
        significant_pacf: flag(&pacf),
        acf,
        pacf,
        band,
        n,
        max_lag,
    })
}

/// Kolmogorov-Smirnov distance between the sample and a normal with the
/// sample's own mean and standard deviation.
fn ks_against_fitted_normal(x: &mut [f64]) -> Result<f64, DiagError> {
    let n = x.len();
    if n < 4 {
        return Err(DiagError::TooShort { required: 4, got: n });
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return Err(DiagError::ZeroVariance);
    }
    let normal = Normal::new(mean, var.sqrt()).expect("positive std");
    x.sort_by(f64::total_cmp);
    let mut d = 0.0f64;
    for (i, v) in x.iter().enumerate() {
        let f = normal.cdf(*v);
        d = d.max(f - i as f64 / n as f64);
        d = d.max((i + 1) as f64 / n as f64 - f);
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityTest {
    /// KS distance against the fitted normal.
    pub statistic: f64,
    /// Monte-Carlo p-value `(exceedances + 1) / (reps + 1)`.
    pub p_value: f64,
    pub reps: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// Normality test with estimated mean and variance: the null distribution of
/// the statistic is simulated by refitting on standard-normal samples of the
/// same size, so the estimation effect is accounted for.
pub fn lilliefors_test(x: &[f64], reps: usize, seed: u64) -> Result<NormalityTest, DiagError> {
    if reps == 0 {
        return Err(DiagError::BadReps);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DiagError::NonFinite);
    }
    let n = x.len();
    let mut sorted = x.to_vec();
    let statistic = ks_against_fitted_normal(&mut sorted)?;
    let mean = x.iter().sum::<f64>() / n as f64;
    let std =
        (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();

    // Each replicate gets its own generator seeded from the master stream,
    // so the p-value is reproducible and replicates are independent.
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut exceed = 0usize;
    for _ in 0..reps {
        let child_seed: u64 = master.gen();
        let mut child = ChaCha8Rng::seed_from_u64(child_seed);
        let mut sample: Vec<f64> = (0..n)
            .map(|_| StandardNormal.sample(&mut child))
            .collect();
        let d = ks_against_fitted_normal(&mut sample)?;
        if d >= statistic {
            exceed += 1;
        }
    }
    Ok(NormalityTest {
        statistic,
        p_value: (exceed + 1) as f64 / (reps + 1) as f64,
        reps,
        n,
        mean,
        std,
    })
}

/// One scored model inside a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportModel {
    pub model: String,
    pub mape: f64,
    pub rmse: f64,
}

/// Error reduction of the best model relative to one baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub baseline: String,
    pub mape_reduction_pct: f64,
}

/// Context numbers typical of full-scale runs of this pipeline shape, so
/// small-sample results can be read against something. They describe no
/// particular dataset in this repository.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMetrics {
    pub lstm_mape: f64,
    pub lstm_rmse: f64,
    pub garch_mape: f64,
    pub garch_rmse: f64,
    pub note: String,
}

impl Default for ReferenceMetrics {
    fn default() -> Self {
        Self {
            lstm_mape: 24.2,
            lstm_rmse: 2.89e-3,
            garch_mape: 34.9,
            garch_rmse: 3.13e-3,
            note: "typical full-scale daily-equity results for this pipeline shape; \
                   context only, not a target for small runs"
                .to_string(),
        }
    }
}

/// The evaluation summary written at the end of a run. Field order is the
/// JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scheme: Scheme,
    pub lag_len: usize,
    pub n_test_windows: usize,
    pub models: Vec<ReportModel>,
    pub best_model: String,
    pub improvements: Vec<Improvement>,
    pub reference: ReferenceMetrics,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table, one model per row, best model starred.
    pub fn to_table(&self) -> String {
        let name_w = self
            .models
            .iter()
            .map(|m| m.model.len())
            .max()
            .unwrap_or(5)
            .max("model".len());
        let mut out = format!(
            "{:<name_w$}  {:>10}  {:>12}  best\n",
            "model", "mape_pct", "rmse"
        );
        for m in &self.models {
            let star = if m.model == self.best_model { "*" } else { "" };
            out.push_str(&format!(
                "{:<name_w$}  {:>10.4}  {:>12.6e}  {}\n",
                m.model, m.mape, m.rmse, star
            ));
        }
        out
    }
}

/// Scores every model against the shared targets, picks the lowest MAPE as
/// best, and reports the best model's error reduction against each baseline.
pub fn build_report(
    scheme: Scheme,
    lag_len: usize,
    entries: &[(String, Vec<f64>)],
    targets: &[f64],
) -> Result<Report, DiagError> {
    if entries.is_empty() {
        return Err(DiagError::NoModels);
    }
    let mut models = Vec::with_capacity(entries.len());
    for (name, preds) in entries {
        let m = compute_metrics(preds, targets)?;
        models.push(ReportModel {
            model: name.clone(),
            mape: m.mape,
            rmse: m.rmse,
        });
    }
    let best = models
        .iter()
        .min_by(|a, b| a.mape.total_cmp(&b.mape))
        .expect("non-empty")
        .clone();
    let improvements = models
        .iter()
        .filter(|m| m.model != best.model)
        .map(|m| Improvement {
            baseline: m.model.clone(),
            mape_reduction_pct: relative_improvement(m.mape, best.mape),
        })
        .collect();
    Ok(Report {
        scheme,
        lag_len,
        n_test_windows: targets.len(),
        models,
        best_model: best.model,
        improvements,
        reference: ReferenceMetrics::default(),
    })
}
