//! Reference forecasters the recurrent model is measured against: penalized
//! linear regression on lagged features and a conditional-variance recursion
//! on returns.

mod garch;

pub use garch::{
    garch_fit, garch_volatility_forecasts, nelder_mead, GarchFit, GarchParams,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheme::SchemeDataset;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no rows to fit")]
    Empty,
    #[error("need at least {required} observations, got {got}")]
    TooShort { required: usize, got: usize },
    #[error("penalty weight must be positive and finite, got {0}")]
    BadPenalty(f64),
    #[error("row {index} has {got} values, expected {expected}")]
    RaggedRow {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("rows and targets differ in length: {rows} vs {targets}")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("target at row {index} is not positive; MAPE undefined")]
    NonPositiveTarget { index: usize },
    #[error("normal equations are singular")]
    SingularSystem,
    #[error("coordinate descent did not converge in {0} sweeps")]
    NoConvergence(usize),
    #[error("returns have zero variance")]
    ZeroVariance,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("penalty grid is empty")]
    EmptyGrid,
}

/// Flattened window inputs: one row per window, columns grouped by feature
/// and then by lag, lag 1 being the most recent period.
#[derive(Debug, Clone, PartialEq)]
pub struct LagMatrix {
    pub column_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub window_ends: Vec<usize>,
}

impl LagMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    fn slice(&self, range: std::ops::Range<usize>) -> LagMatrix {
        LagMatrix {
            column_names: self.column_names.clone(),
            rows: self.rows[range.clone()].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            window_ends: self.window_ends[range].to_vec(),
        }
    }
}

/// Rearranges dataset windows into a design matrix for the linear models.
/// Column `<feature>_lag<j>` of a row holds that feature `j` periods before
/// the window end.
pub fn build_lag_matrix(dataset: &SchemeDataset) -> Result<LagMatrix, BenchError> {
    if dataset.windows.is_empty() {
        return Err(BenchError::Empty);
    }
    let lag_len = dataset.lag_len;
    let mut column_names = Vec::with_capacity(dataset.n_features() * lag_len);
    for feature in &dataset.feature_names {
        for lag in 1..=lag_len {
            column_names.push(format!("{feature}_lag{lag}"));
        }
    }
    let mut rows = Vec::with_capacity(dataset.windows.len());
    let mut targets = Vec::with_capacity(dataset.windows.len());
    let mut window_ends = Vec::with_capacity(dataset.windows.len());
    for w in &dataset.windows {
        let mut row = Vec::with_capacity(column_names.len());
        for f in 0..dataset.n_features() {
            for lag in 1..=lag_len {
                row.push(w.inputs[lag_len - lag][f]);
            }
        }
        rows.push(row);
        targets.push(w.target);
        window_ends.push(w.window_end);
    }
    Ok(LagMatrix {
        column_names,
        rows,
        targets,
        window_ends,
    })
}

/// Which penalty shrinks the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    /// Quadratic penalty `(c/2) * sum(coef^2)`; closed-form solution.
    Ridge,
    /// Absolute penalty `c * sum(|coef|)`; sparse solution by coordinate
    /// descent.
    Lasso,
}

impl std::fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PenaltyKind::Ridge => "ridge",
            PenaltyKind::Lasso => "lasso",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub kind: PenaltyKind,
    pub c: f64,
    pub intercept: f64,
    pub coefs: Vec<f64>,
    pub column_names: Vec<String>,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefs
                .iter()
                .zip(row)
                .map(|(c, x)| c * x)
                .sum::<f64>()
    }

    pub fn predict(&self, m: &LagMatrix) -> Vec<f64> {
        m.rows.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn n_nonzero(&self) -> usize {
        self.coefs.iter().filter(|c| **c != 0.0).count()
    }

    /// `feature,lag,coef` rows; the intercept is reported as lag 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,lag,coef\n");
        out.push_str(&format!("intercept,0,{}\n", self.intercept));
        for (name, coef) in self.column_names.iter().zip(&self.coefs) {
            let (feature, lag) = match name.rfind("_lag") {
                Some(pos) => (&name[..pos], &name[pos + 4..]),
                None => (name.as_str(), "0"),
            };
            out.push_str(&format!("{feature},{lag},{coef}\n"));
        }
        out
    }
}

fn validate_design(rows: &[Vec<f64>], targets: &[f64]) -> Result<usize, BenchError> {
    if rows.is_empty() {
        return Err(BenchError::Empty);
    }
    if rows.len() != targets.len() {
        return Err(BenchError::LengthMismatch {
            rows: rows.len(),
            targets: targets.len(),
        });
    }
    let width = rows[0].len();
    for (index, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(BenchError::RaggedRow {
                index,
                expected: width,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(BenchError::NonFinite);
        }
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(BenchError::NonFinite);
    }
    Ok(width)
}

struct Centered {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_mean: Vec<f64>,
    y_mean: f64,
}

fn center(rows: &[Vec<f64>], targets: &[f64], width: usize) -> Centered {
    let n = rows.len();
    let mut x_mean = vec![0.0; width];
    for row in rows {
        for (m, v) in x_mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= n as f64);
    let y_mean = targets.iter().sum::<f64>() / n as f64;
    let x = DMatrix::from_fn(n, width, |i, j| rows[i][j] - x_mean[j]);
    let y = DVector::from_fn(n, |i, _| targets[i] - y_mean);
    Centered { x, y, x_mean, y_mean }
}

const LASSO_TOL: f64 = 1e-10;
const LASSO_MAX_SWEEPS: usize = 10_000;

/// Fits a penalized linear model. The intercept is never penalized; both
/// penalties are solved on mean-centered data, which is equivalent.
pub fn fit_linear(
    rows: &[Vec<f64>],
    targets: &[f64],
    kind: PenaltyKind,
    c: f64,
    column_names: &[String],
) -> Result<LinearModel, BenchError> {
    if !(c.is_finite() && c > 0.0) {
        return Err(BenchError::BadPenalty(c));
    }
    let width = validate_design(rows, targets)?;
    if rows.len() < 2 {
        return Err(BenchError::TooShort {
            required: 2,
            got: rows.len(),
        });
    }
    let centered = center(rows, targets, width);
    let coefs = match kind {
        PenaltyKind::Ridge => ridge_coefs(&centered, c)?,
        PenaltyKind::Lasso => lasso_coefs(&centered, c)?,
    };
    let intercept = centered.y_mean
        - centered
            .x_mean
            .iter()
            .zip(&coefs)
            .map(|(m, a)| m * a)
            .sum::<f64>();
    Ok(LinearModel {
        kind,
        c,
        intercept,
        coefs,
        column_names: column_names.to_vec(),
    })
}

fn ridge_coefs(centered: &Centered, c: f64) -> Result<Vec<f64>, BenchError> {
    let width = centered.x.ncols();
    let mut gram = centered.x.transpose() * &centered.x;
    for j in 0..width {
        gram[(j, j)] += c / 2.0;
    }
    let rhs = centered.x.transpose() * &centered.y;
    let solution = gram
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or(BenchError::SingularSystem)?;
    Ok(solution.iter().copied().collect())
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn lasso_coefs(centered: &Centered, c: f64) -> Result<Vec<f64>, BenchError> {
    let n = centered.x.nrows();
    let width = centered.x.ncols();
    let col_sq: Vec<f64> = (0..width)
        .map(|j| centered.x.column(j).iter().map(|v| v * v).sum())
        .collect();
    let mut coefs = vec![0.0; width];
    // Residual r = y - X coef, updated in place as coordinates move.
    let mut residual: Vec<f64> = centered.y.iter().copied().collect();
    for _sweep in 0..LASSO_MAX_SWEEPS {
        let mut max_delta = 0.0f64;
        for j in 0..width {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = centered.x.column(j);
            // rho = x_j . (r + x_j * coef_j): the correlation with the
            // residual if coordinate j were zero.
            let mut rho = 0.0;
            for i in 0..n {
                rho += col[i] * residual[i];
            }
            rho += col_sq[j] * coefs[j];
            let new = soft_threshold(rho, c / 2.0) / col_sq[j];
            let delta = new - coefs[j];
            if delta != 0.0 {
                for i in 0..n {
                    residual[i] -= delta * col[i];
                }
                coefs[j] = new;
            }
            max_delta = max_delta.max(delta.abs());
        }
        if max_delta < LASSO_TOL {
            return Ok(coefs);
        }
    }
    Err(BenchError::NoConvergence(LASSO_MAX_SWEEPS))
}

fn mape(preds: &[f64], targets: &[f64]) -> Result<f64, BenchError> {
    if preds.is_empty() {
        return Err(BenchError::Empty);
    }
    let mut sum = 0.0;
    for (i, (&p, &y)) in preds.iter().zip(targets).enumerate() {
        if y <= 0.0 {
            return Err(BenchError::NonPositiveTarget { index: i });
        }
        sum += (p - y).abs() / y;
    }
    Ok(100.0 * sum / preds.len() as f64)
}

/// The penalty weights tried during selection, strongest first.
pub fn default_c_grid() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSelection {
    pub model: LinearModel,
    pub val_mape: f64,
    /// Every candidate with its holdout MAPE, in grid order.
    pub candidates: Vec<(f64, f64)>,
}

/// Chooses the penalty weight on a chronological 80/20 split of the given
/// rows: fit on the first 80%, score MAPE on the last 20%, keep the winner.
/// The winning model is returned as fitted on the 80% split (no refit), so
/// its holdout score remains an honest estimate.
pub fn select_linear(
    matrix: &LagMatrix,
    kind: PenaltyKind,
    c_grid: &[f64],
) -> Result<LinearSelection, BenchError> {
    if c_grid.is_empty() {
        return Err(BenchError::EmptyGrid);
    }
    let n = matrix.n_rows();
    if n < 5 {
        return Err(BenchError::TooShort { required: 5, got: n });
    }
    let fit_n = (n as f64 * 0.8).floor() as usize;
    let fit_part = matrix.slice(0..fit_n);
    let val_part = matrix.slice(fit_n..n);

    let mut best: Option<(LinearModel, f64)> = None;
    let mut candidates = Vec::with_capacity(c_grid.len());
    for &c in c_grid {
        let model = fit_linear(
            &fit_part.rows,
            &fit_part.targets,
            kind,
            c,
            &matrix.column_names,
        )?;
        let val = mape(&model.predict(&val_part), &val_part.targets)?;
        candidates.push((c, val));
        let improves = match &best {
            None => true,
            Some((_, best_val)) => val < *best_val,
        };
        if improves {
            best = Some((model, val));
        }
    }
    let (model, val_mape) = best.expect("grid is non-empty");
    Ok(LinearSelection {
        model,
        val_mape,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::{NormWindow, Scheme, WindowSample};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|j| format!("f{j}_lag1")).collect()
    }

    /// y = 2 x0 - 3 x1 + 5 + noise, well-conditioned design.
    fn synthetic_regression(seed: u64, n: usize, noise: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let targets = rows
            .iter()
            .map(|r| 2.0 * r[0] - 3.0 * r[1] + 5.0 + noise * rng.gen_range(-1.0..1.0))
            .collect();
        (rows, targets)
    }

    fn residuals(model: &LinearModel, rows: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
        rows.iter()
            .zip(targets)
            .map(|(r, y)| y - model.predict_row(r))
            .collect()
    }

    #[test]
    fn ridge_satisfies_penalized_normal_equations() {
        // With the intercept appended as an all-ones column, the solution
        // must satisfy (X'X + (c/2) P) theta = X'y where P skips the
        // intercept coordinate.
        let (rows, targets) = synthetic_regression(1, 80, 0.1);
        let c = 0.37;
        let model = fit_linear(&rows, &targets, PenaltyKind::Ridge, c, &names(2)).unwrap();
        let eps = residuals(&model, &rows, &targets);
        for j in 0..2 {
            let xj_eps: f64 = rows.iter().zip(&eps).map(|(r, e)| r[j] * e).sum();
            // Stationarity in coef j: X_j' eps = (c/2) coef_j.
            assert!(
                (xj_eps - c / 2.0 * model.coefs[j]).abs() < 1e-8,
                "column {j}: {xj_eps} vs {}",
                c / 2.0 * model.coefs[j]
            );
        }
        let sum_eps: f64 = eps.iter().sum();
        assert!(sum_eps.abs() < 1e-8, "intercept row: {sum_eps}");
    }

    #[test]
    fn ridge_with_tiny_penalty_recovers_ols_coefficients() {
        let (rows, targets) = synthetic_regression(2, 400, 0.0);
        let model = fit_linear(&rows, &targets, PenaltyKind::Ridge, 1e-12, &names(2)).unwrap();
        assert!((model.coefs[0] - 2.0).abs() < 1e-5);
        assert!((model.coefs[1] + 3.0).abs() < 1e-5);
        assert!((model.intercept - 5.0).abs() < 1e-5);
    }

    #[test]
    fn ridge_shrinks_toward_zero_as_penalty_grows() {
        let (rows, targets) = synthetic_regression(3, 100, 0.05);
        let weak = fit_linear(&rows, &targets, PenaltyKind::Ridge, 1e-6, &names(2)).unwrap();
        let strong = fit_linear(&rows, &targets, PenaltyKind::Ridge, 1e4, &names(2)).unwrap();
        let norm = |m: &LinearModel| m.coefs.iter().map(|c| c * c).sum::<f64>();
        assert!(norm(&strong) < norm(&weak) * 1e-3);
    }

    #[test]
    fn lasso_satisfies_kkt_conditions() {
        // Active coordinates: X_j' eps = (c/2) sign(coef_j) exactly (up to
        // the descent tolerance). Inactive: |X_j' eps| <= c/2.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..120)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        // Only two of six columns matter; the rest should deactivate.
        let targets: Vec<f64> = rows
            .iter()
            .map(|r| 1.5 * r[0] - 2.0 * r[3] + 0.3 + 0.01 * rng.gen_range(-1.0..1.0))
            .collect();
        let c = 1.0;
        let model = fit_linear(&rows, &targets, PenaltyKind::Lasso, c, &names(6)).unwrap();
        let eps = residuals(&model, &rows, &targets);
        for j in 0..6 {
            let xj_eps: f64 = rows.iter().zip(&eps).map(|(r, e)| r[j] * e).sum();
            if model.coefs[j] == 0.0 {
                assert!(
                    xj_eps.abs() <= c / 2.0 + 1e-6,
                    "inactive column {j} violates bound: {xj_eps}"
                );
            } else {
                let want = c / 2.0 * model.coefs[j].signum();
                assert!(
                    (xj_eps - want).abs() < 1e-6,
                    "active column {j}: {xj_eps} vs {want}"
                );
            }
        }
    }

    #[test]
    fn lasso_zeroes_irrelevant_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<f64> = rows.iter().map(|r| 3.0 * r[1] + 1.0).collect();
        let model = fit_linear(&rows, &targets, PenaltyKind::Lasso, 0.5, &names(5)).unwrap();
        assert!(model.coefs[1] > 2.0);
        for j in [0, 2, 3, 4] {
            assert_eq!(model.coefs[j], 0.0, "column {j} should be inactive");
        }
        assert_eq!(model.n_nonzero(), 1);
    }

    #[test]
    fn huge_lasso_penalty_kills_every_coefficient() {
        let (rows, targets) = synthetic_regression(4, 60, 0.0);
        let model = fit_linear(&rows, &targets, PenaltyKind::Lasso, 1e6, &names(2)).unwrap();
        assert_eq!(model.n_nonzero(), 0);
        let y_mean = targets.iter().sum::<f64>() / targets.len() as f64;
        assert!((model.intercept - y_mean).abs() < 1e-12);
    }

    #[test]
    fn bad_penalties_are_rejected() {
        let (rows, targets) = synthetic_regression(5, 20, 0.0);
        for c in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                fit_linear(&rows, &targets, PenaltyKind::Ridge, c, &names(2)),
                Err(BenchError::BadPenalty(_))
            ));
        }
    }

    fn tiny_dataset() -> SchemeDataset {
        // Two features, lag 3, two windows with recognizable values.
        let mk = |base: f64| WindowSample {
            inputs: vec![
                vec![base, base + 0.1],
                vec![base + 1.0, base + 1.1],
                vec![base + 2.0, base + 2.1],
            ],
            raw_sigma: vec![0.01, 0.02, 0.03],
            seed_sigma: 0.005,
            target: 0.04,
            window_end: 0,
        };
        let mut w0 = mk(10.0);
        w0.window_end = 3;
        let mut w1 = mk(20.0);
        w1.window_end = 4;
        SchemeDataset {
            scheme: Scheme::new(1, NormWindow::Infinite).unwrap(),
            lag_len: 3,
            feature_names: vec!["return".into(), "volatility".into()],
            train_stats: None,
            target_stats: None,
            normalized_target: false,
            windows: vec![w0, w1],
        }
    }

    #[test]
    fn lag_matrix_orders_columns_feature_major_most_recent_first() {
        let m = build_lag_matrix(&tiny_dataset()).unwrap();
        assert_eq!(
            m.column_names,
            vec![
                "return_lag1",
                "return_lag2",
                "return_lag3",
                "volatility_lag1",
                "volatility_lag2",
                "volatility_lag3"
            ]
        );
        // Window rows are oldest-first internally; lag 1 is the last row.
        assert_eq!(m.rows[0], vec![12.0, 11.0, 10.0, 12.1, 11.1, 10.1]);
        assert_eq!(m.rows[1], vec![22.0, 21.0, 20.0, 22.1, 21.1, 20.1]);
        assert_eq!(m.targets, vec![0.04, 0.04]);
        assert_eq!(m.window_ends, vec![3, 4]);
    }

    #[test]
    fn csv_export_splits_feature_and_lag() {
        let model = LinearModel {
            kind: PenaltyKind::Ridge,
            c: 0.01,
            intercept: 0.5,
            coefs: vec![1.25, -0.75],
            column_names: vec!["return_lag1".into(), "big_move_lag12".into()],
        };
        let csv = model.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "feature,lag,coef");
        assert_eq!(lines[1], "intercept,0,0.5");
        assert_eq!(lines[2], "return,1,1.25");
        // Feature names may themselves contain underscores.
        assert_eq!(lines[3], "big_move,12,-0.75");
    }

    #[test]
    fn selection_prefers_the_penalty_with_lowest_holdout_mape() {
        // Data from a sparse truth: lasso with a sensible penalty must beat
        // an absurdly strong one, and selection must report the right c.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<f64> = rows
            .iter()
            .map(|r| 5.0 + r[0] + 0.02 * rng.gen_range(-1.0..1.0))
            .collect();
        let matrix = LagMatrix {
            column_names: names(4),
            rows,
            targets,
            window_ends: (0..n).collect(),
        };
        let sel = select_linear(&matrix, PenaltyKind::Lasso, &[1e4, 1e-3]).unwrap();
        assert_eq!(sel.model.c, 1e-3);
        assert_eq!(sel.candidates.len(), 2);
        assert!(sel.candidates[1].1 < sel.candidates[0].1);
        assert_eq!(sel.val_mape, sel.candidates[1].1);
        // No refit: the stored model was fitted on the first 80% only.
        let refit = fit_linear(
            &matrix.rows[..80],
            &matrix.targets[..80],
            PenaltyKind::Lasso,
            1e-3,
            &matrix.column_names,
        )
        .unwrap();
        assert_eq!(sel.model, refit);
    }

    #[test]
    fn selection_needs_enough_rows_and_a_grid() {
        let m = build_lag_matrix(&tiny_dataset()).unwrap();
        assert!(matches!(
            select_linear(&m, PenaltyKind::Ridge, &[1e-3]),
            Err(BenchError::TooShort { .. })
        ));
        let bigger = LagMatrix {
            column_names: names(1),
            rows: vec![vec![1.0]; 10],
            targets: vec![1.0; 10],
            window_ends: (0..10).collect(),
        };
        assert!(matches!(
            select_linear(&bigger, PenaltyKind::Ridge, &[]),
            Err(BenchError::EmptyGrid)
        ));
    }
}
