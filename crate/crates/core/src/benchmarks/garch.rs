//! Conditional-variance recursion on returns, fitted by Gaussian maximum
//! likelihood.
//!
//! Convention used throughout this module: `alpha` multiplies the lagged
//! variance (persistence) and `beta` multiplies the lagged squared return
//! (innovation):
//!
//! ```text
//! sigma2_i = omega + alpha * sigma2_{i-1} + beta * r_{i-1}^2
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub omega: f64,
    /// Weight on the lagged conditional variance.
    pub alpha: f64,
    /// Weight on the lagged squared return.
    pub beta: f64,
}

impl GarchParams {
    /// Long-run variance `omega / (1 - alpha - beta)`, if the recursion is
    /// stationary.
    pub fn unconditional_variance(&self) -> Option<f64> {
        let persistence = self.alpha + self.beta;
        (persistence < 1.0).then(|| self.omega / (1.0 - persistence))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchFit {
    pub params: GarchParams,
    /// Gaussian log-likelihood at the optimum (conditioning observation
    /// excluded).
    pub log_likelihood: f64,
    pub n_obs: usize,
    /// Variance seed for the recursion: the sample variance of the series
    /// the model was fitted on.
    pub sigma0_sq: f64,
}

/// One-step-ahead volatility along the whole series: entry `i` is the
/// conditional sigma for period `i` given everything through `i-1`, with
/// entry 0 seeded at `sigma0_sq`.
pub fn garch_volatility_forecasts(fit: &GarchFit, returns: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(returns.len());
    let mut var = fit.sigma0_sq;
    for i in 0..returns.len() {
        if i > 0 {
            let r_prev = returns[i - 1];
            var = fit.params.omega + fit.params.alpha * var + fit.params.beta * r_prev * r_prev;
        }
        out.push(var.max(0.0).sqrt());
    }
    out
}

/// Negative Gaussian log-likelihood of the recursion, conditioning on
/// `sigma0_sq` for the first observation and scoring the rest.
fn neg_log_likelihood(params: &GarchParams, returns: &[f64], sigma0_sq: f64) -> f64 {
    const LN_2PI: f64 = 1.8378770664093453;
    let mut var = sigma0_sq;
    let mut nll = 0.0;
    for i in 1..returns.len() {
        let r_prev = returns[i - 1];
        var = params.omega + params.alpha * var + params.beta * r_prev * r_prev;
        if !(var.is_finite() && var > 0.0) {
            return f64::INFINITY;
        }
        let r = returns[i];
        nll += 0.5 * (LN_2PI + var.ln() + r * r / var);
    }
    if nll.is_finite() {
        nll
    } else {
        f64::INFINITY
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Unconstrained coordinates -> valid parameters: omega = exp(a), total
/// persistence sigmoid(b) < 1 split between the two terms by sigmoid(c).
/// The persistence is pulled a hair below 1 because sigmoid saturates to
/// exactly 1.0 in floating point for large inputs.
fn decode(x: &[f64]) -> GarchParams {
    let omega = x[0].exp();
    let total = sigmoid(x[1]) * (1.0 - 1e-10);
    let share = sigmoid(x[2]);
    GarchParams {
        omega,
        alpha: total * share,
        beta: total * (1.0 - share),
    }
}

/// Downhill simplex minimizer. Returns the best vertex and its value.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    tol: f64,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += step;
        let fv = f(&v);
        simplex.push((v, fv));
    }

    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if (worst - best).abs() <= tol * (1.0 + best.abs()) {
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for (v, _) in &simplex[..dim] {
            for (c, vi) in centroid.iter_mut().zip(v) {
                *c += vi;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= dim as f64);

        let blend = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = blend(1.0);
        let f_reflected = f(&reflected);
        if f_reflected < simplex[0].1 {
            let expanded = blend(2.0);
            let f_expanded = f(&expanded);
            simplex[dim] = if f_expanded < f_reflected {
                (expanded, f_expanded)
            } else {
                (reflected, f_reflected)
            };
            continue;
        }
        if f_reflected < simplex[dim - 1].1 {
            simplex[dim] = (reflected, f_reflected);
            continue;
        }
        let contracted = if f_reflected < simplex[dim].1 {
            blend(0.5)
        } else {
            blend(-0.5)
        };
        let f_contracted = f(&contracted);
        if f_contracted < simplex[dim].1.min(f_reflected) {
            simplex[dim] = (contracted, f_contracted);
            continue;
        }
        // Shrink toward the best vertex.
        let best_v = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            for (vi, bi) in entry.0.iter_mut().zip(&best_v) {
                *vi = bi + 0.5 * (*vi - bi);
            }
            entry.1 = f(&entry.0);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    (x, fx)
}

const MIN_OBS: usize = 20;
const NM_MAX_ITER: usize = 2000;
const NM_TOL: f64 = 1e-12;

/// Fits the recursion by maximum likelihood: several seeded starting points,
/// each refined by the simplex search, keeping the best optimum. The
/// parameterization enforces positivity and a stationary persistence.
pub fn garch_fit(returns: &[f64], seed: u64, n_restarts: usize) -> Result<GarchFit, BenchError> {
    if returns.len() < MIN_OBS {
        return Err(BenchError::TooShort {
            required: MIN_OBS,
            got: returns.len(),
        });
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(BenchError::NonFinite);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let sample_var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if sample_var <= 0.0 {
        return Err(BenchError::ZeroVariance);
    }

    let objective = |x: &[f64]| neg_log_likelihood(&decode(x), returns, sample_var);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..n_restarts.max(1) {
        let x0 = vec![
            (sample_var * rng.gen_range(0.02..0.5)).ln(),
            logit(rng.gen_range(0.6..0.98)),
            logit(rng.gen_range(0.2..0.8)),
        ];
        let (x, fx) = nelder_mead(&objective, &x0, 0.5, NM_MAX_ITER, NM_TOL);
        let better = match &best {
            None => true,
            Some((_, best_fx)) => fx < *best_fx,
        };
        if better {
            best = Some((x, fx));
        }
    }
    let (x, fx) = best.expect("at least one restart ran");
    if !fx.is_finite() {
        return Err(BenchError::NonFinite);
    }
    Ok(GarchFit {
        params: decode(&x),
        log_likelihood: -fx,
        n_obs: returns.len(),
        sigma0_sq: sample_var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn simulate(params: &GarchParams, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut var = params.unconditional_variance().unwrap();
        let mut out = Vec::with_capacity(n);
        let mut r_prev = 0.0;
        for i in 0..n {
            if i > 0 {
                var = params.omega + params.alpha * var + params.beta * r_prev * r_prev;
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            r_prev = var.sqrt() * z;
            out.push(r_prev);
        }
        out
    }

    #[test]
    fn likelihood_matches_hand_computation() {
        let params = GarchParams {
            omega: 0.1,
            alpha: 0.5,
            beta: 0.2,
        };
        let returns = [0.3, -0.4, 0.1];
        let s0 = 0.25;
        // var_1 = 0.1 + 0.5*0.25 + 0.2*0.09 = 0.243
        // var_2 = 0.1 + 0.5*0.243 + 0.2*0.16 = 0.2535
        let v1: f64 = 0.243;
        let v2: f64 = 0.2535;
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let expected = 0.5 * (ln_2pi + v1.ln() + 0.16 / v1)
            + 0.5 * (ln_2pi + v2.ln() + 0.01 / v2);
        let got = neg_log_likelihood(&params, &returns, s0);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn simplex_finds_the_rosenbrock_minimum() {
        let rosenbrock =
            |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let (x, fx) = nelder_mead(rosenbrock, &[-1.2, 1.0], 0.5, 5000, 1e-14);
        assert!(fx < 1e-8, "fx = {fx}");
        assert!((x[0] - 1.0).abs() < 1e-4);
        assert!((x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn simplex_handles_a_shifted_quadratic() {
        let f = |x: &[f64]| {
            (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) + 0.5 * (x[2] - 0.25).powi(2)
        };
        let (x, _) = nelder_mead(f, &[0.0, 0.0, 0.0], 1.0, 5000, 1e-14);
        assert!((x[0] - 3.0).abs() < 1e-5);
        assert!((x[1] + 1.0).abs() < 1e-5);
        assert!((x[2] - 0.25).abs() < 1e-5);
    }

    #[test]
    fn recovers_known_parameters_from_a_long_simulation() {
        let truth = GarchParams {
            omega: 1e-6,
            alpha: 0.85,
            beta: 0.10,
        };
        let returns = simulate(&truth, 20_000, 77);
        let fit = garch_fit(&returns, 5, 5).unwrap();
        assert!(
            (fit.params.alpha - truth.alpha).abs() < 0.05,
            "alpha {} vs {}",
            fit.params.alpha,
            truth.alpha
        );
        assert!(
            (fit.params.beta - truth.beta).abs() < 0.05,
            "beta {} vs {}",
            fit.params.beta,
            truth.beta
        );
        assert!(
            (fit.params.omega / truth.omega).ln().abs() < 0.7,
            "omega {} vs {}",
            fit.params.omega,
            truth.omega
        );
        assert!(fit.params.alpha + fit.params.beta < 1.0);
        // The optimum must score at least as well as the truth.
        let nll_truth = neg_log_likelihood(&truth, &returns, fit.sigma0_sq);
        assert!(-fit.log_likelihood <= nll_truth + 1e-6);
    }

    #[test]
    fn fit_is_deterministic_for_a_seed() {
        let returns = simulate(
            &GarchParams {
                omega: 5e-6,
                alpha: 0.7,
                beta: 0.2,
            },
            2_000,
            3,
        );
        let a = garch_fit(&returns, 42, 5).unwrap();
        let b = garch_fit(&returns, 42, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forecasts_follow_the_recursion_exactly() {
        let fit = GarchFit {
            params: GarchParams {
                omega: 0.01,
                alpha: 0.6,
                beta: 0.3,
            },
            log_likelihood: 0.0,
            n_obs: 4,
            sigma0_sq: 0.04,
        };
        let returns = [0.1, -0.2, 0.15, 0.05];
        let got = garch_volatility_forecasts(&fit, &returns);
        let mut var: f64 = 0.04;
        let mut want = vec![var.sqrt()];
        for i in 1..returns.len() {
            var = 0.01 + 0.6 * var + 0.3 * returns[i - 1] * returns[i - 1];
            want.push(var.sqrt());
        }
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(matches!(
            garch_fit(&[0.01; 10], 1, 3),
            Err(BenchError::TooShort { .. })
        ));
        // 0.25 is exactly representable, so the sample variance is exactly 0.
        assert!(matches!(
            garch_fit(&[0.25; 50], 1, 3),
            Err(BenchError::ZeroVariance)
        ));
        let mut with_nan = vec![0.01; 50];
        with_nan[10] = f64::NAN;
        assert!(matches!(
            garch_fit(&with_nan, 1, 3),
            Err(BenchError::NonFinite)
        ));
    }

    #[test]
    fn stationarity_is_structural() {
        // Any unconstrained coordinates decode to a stationary, positive
        // parameter set.
        for x in [
            [0.0, 50.0, 50.0],
            [-30.0, -50.0, 0.0],
            [5.0, 10.0, -10.0],
        ] {
            let p = decode(&x);
            assert!(p.omega > 0.0);
            assert!(p.alpha >= 0.0 && p.beta >= 0.0);
            assert!(p.alpha + p.beta < 1.0);
        }
    }
}
