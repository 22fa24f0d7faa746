//! Single-block recurrent volatility forecaster.
//!
//! Each step consumes the previous prediction concatenated with the current
//! normalized feature row, updates an internal memory vector through forget,
//! update, candidate, and output gates, and emits the next-period volatility
//! estimate through an affine readout:
//!
//! ```text
//! v_t     = [sigma_hat_t, x_t]
//! f_t     = sigmoid(W_f v_t + b_f)          forget gate
//! c_t     = sigmoid(W_c v_t + b_c)          update gate
//! g_t     = tanh(W_g v_t + b_g)             candidate memory
//! I_t     = f_t * I_{t-1} + c_t * g_t       memory carry
//! o_t     = sigmoid(W_o v_t + b_o)          output gate
//! sigma_hat_{t+1} = alpha + beta . (o_t * tanh(I_t))
//! ```
//!
//! The prediction feeds back as an input, so a window runs free: errors
//! compound through both the memory and the feedback path, and training
//! differentiates through both.

mod grad;
mod train;

pub use grad::grad_window;
pub use train::{train, AdamState, EpochStats, TrainHistory};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheme::{Scheme, SchemeDataset, Stats, WindowSample};

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("{what} must be at least 1")]
    BadDim { what: &'static str },
    #[error("invalid config: {reason}")]
    BadConfig { reason: String },
    #[error("dataset has no windows")]
    EmptyDataset,
    #[error("predictions and targets differ in length: {preds} vs {targets}")]
    LengthMismatch { preds: usize, targets: usize },
    #[error("target at index {index} is not positive; MAPE undefined")]
    NonPositiveTarget { index: usize },
    #[error("training diverged at epoch {epoch}: non-finite loss or parameter")]
    Diverged {
        epoch: usize,
        history: TrainHistory,
    },
    #[error("window has {got} features, model expects {expected}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Gate weights and readout for one forecaster. Weight matrices are
/// `cell_dim` rows by `1 + n_features` columns (the leading input is the
/// fed-back prediction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub cell_dim: usize,
    pub n_features: usize,
    pub w_forget: Vec<Vec<f64>>,
    pub b_forget: Vec<f64>,
    pub w_update: Vec<Vec<f64>>,
    pub b_update: Vec<f64>,
    pub w_candidate: Vec<Vec<f64>>,
    pub b_candidate: Vec<f64>,
    pub w_output: Vec<Vec<f64>>,
    pub b_output: Vec<f64>,
    pub alpha: f64,
    pub beta: Vec<f64>,
}

impl LstmParams {
    pub fn input_dim(&self) -> usize {
        1 + self.n_features
    }

    /// Total scalar parameter count.
    pub fn n_params(&self) -> usize {
        4 * self.cell_dim * (self.input_dim() + 1) + 1 + self.cell_dim
    }

    /// All-zero parameters of the given shape, a scaffold for `assign_flat`.
    pub fn zero_shaped(cell_dim: usize, n_features: usize) -> Self {
        let mat = || vec![vec![0.0; 1 + n_features]; cell_dim];
        let vec0 = || vec![0.0; cell_dim];
        Self {
            cell_dim,
            n_features,
            w_forget: mat(),
            b_forget: vec0(),
            w_update: mat(),
            b_update: vec0(),
            w_candidate: mat(),
            b_candidate: vec0(),
            w_output: mat(),
            b_output: vec0(),
            alpha: 0.0,
            beta: vec0(),
        }
    }

    /// Same shapes, all zeros; the accumulator for gradients.
    pub fn zeros_like(&self) -> Self {
        Self::zero_shaped(self.cell_dim, self.n_features)
    }

    /// Deterministic flattening: gate matrices row-major in declaration
    /// order, each followed by its bias, then `alpha`, then `beta`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in [
            (&self.w_forget, &self.b_forget),
            (&self.w_update, &self.b_update),
            (&self.w_candidate, &self.b_candidate),
            (&self.w_output, &self.b_output),
        ] {
            for row in w.iter() {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(b);
        }
        out.push(self.alpha);
        out.extend_from_slice(&self.beta);
        out
    }

    /// Inverse of [`flatten`](Self::flatten); shapes come from `self`.
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let mut it = flat.iter().copied();
        let mut next = || it.next().expect("length checked above");
        for gate in 0..4 {
            let (w, b) = match gate {
                0 => (&mut self.w_forget, &mut self.b_forget),
                1 => (&mut self.w_update, &mut self.b_update),
                2 => (&mut self.w_candidate, &mut self.b_candidate),
                _ => (&mut self.w_output, &mut self.b_output),
            };
            for row in w.iter_mut() {
                for slot in row.iter_mut() {
                    *slot = next();
                }
            }
            for slot in b.iter_mut() {
                *slot = next();
            }
        }
        self.alpha = next();
        for slot in self.beta.iter_mut() {
            *slot = next();
        }
    }

    /// Largest prediction deviation from `alpha` the readout can produce.
    pub fn beta_budget(&self) -> f64 {
        self.beta.iter().map(|b| b.abs()).sum()
    }
}

/// How initial weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Every gate weight and bias set to `init_constant`.
    #[default]
    Constant,
    /// Glorot-uniform gate weights, zero biases.
    Normalized,
}

/// Constant initialization: every gate weight and bias is `init_constant`,
/// `beta` too; `alpha` is set separately (callers pass the training-set mean
/// target so the readout starts centered).
pub fn init_params(
    n_features: usize,
    cell_dim: usize,
    init_constant: f64,
    alpha: f64,
) -> Result<LstmParams, LstmError> {
    if n_features < 1 {
        return Err(LstmError::BadDim { what: "n_features" });
    }
    if cell_dim < 1 {
        return Err(LstmError::BadDim { what: "cell_dim" });
    }
    let mut p = LstmParams::zero_shaped(cell_dim, n_features);
    let flat = vec![init_constant; p.n_params()];
    p.assign_flat(&flat);
    p.alpha = alpha;
    Ok(p)
}

/// Recurrent state carried across steps of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    /// Memory vector `I`.
    pub cell: Vec<f64>,
    /// Most recent prediction, fed back as the first input.
    pub sigma_hat: f64,
}

impl LstmState {
    /// Window-start state: zero memory, the pre-window observed sigma as the
    /// stand-in prediction.
    pub fn seeded(cell_dim: usize, seed_sigma: f64) -> Self {
        Self {
            cell: vec![0.0; cell_dim],
            sigma_hat: seed_sigma,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn affine(w: &[Vec<f64>], b: &[f64], v: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, bias)| row.iter().zip(v).map(|(wi, vi)| wi * vi).sum::<f64>() + bias)
        .collect()
}

/// Everything the backward pass needs about one forward step.
#[derive(Debug, Clone)]
pub(crate) struct StepTrace {
    pub v: Vec<f64>,
    pub f: Vec<f64>,
    pub c: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub cell_prev: Vec<f64>,
    pub tanh_cell: Vec<f64>,
}

pub(crate) fn forward_step_traced(
    params: &LstmParams,
    state: &LstmState,
    x: &[f64],
) -> (LstmState, f64, StepTrace) {
    debug_assert_eq!(x.len(), params.n_features, "feature row width");
    let mut v = Vec::with_capacity(params.input_dim());
    v.push(state.sigma_hat);
    v.extend_from_slice(x);

    let f: Vec<f64> = affine(&params.w_forget, &params.b_forget, &v)
        .into_iter()
        .map(sigmoid)
        .collect();
    let c: Vec<f64> = affine(&params.w_update, &params.b_update, &v)
        .into_iter()
        .map(sigmoid)
        .collect();
    let g: Vec<f64> = affine(&params.w_candidate, &params.b_candidate, &v)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let o: Vec<f64> = affine(&params.w_output, &params.b_output, &v)
        .into_iter()
        .map(sigmoid)
        .collect();

    let cell: Vec<f64> = (0..params.cell_dim)
        .map(|i| f[i] * state.cell[i] + c[i] * g[i])
        .collect();
    let tanh_cell: Vec<f64> = cell.iter().map(|x| x.tanh()).collect();
    let sigma_hat = params.alpha
        + params
            .beta
            .iter()
            .zip(&tanh_cell)
            .zip(&o)
            .map(|((b, t), o)| b * o * t)
            .sum::<f64>();

    let trace = StepTrace {
        v,
        f,
        c,
        g,
        o,
        cell_prev: state.cell.clone(),
        tanh_cell,
    };
    (LstmState { cell, sigma_hat }, sigma_hat, trace)
}

/// One recurrence step: new state plus the prediction it emits.
pub fn forward_step(params: &LstmParams, state: &LstmState, x: &[f64]) -> (LstmState, f64) {
    let (state, sigma_hat, _) = forward_step_traced(params, state, x);
    (state, sigma_hat)
}

/// Runs a whole window and returns the final prediction (the next-period
/// volatility estimate).
///
/// With `teacher_forcing` the feedback input of step `t > 0` is the observed
/// sigma of the previous period instead of the model's own prediction;
/// inference always runs free.
pub fn forward_window(
    params: &LstmParams,
    window: &WindowSample,
    teacher_forcing: bool,
) -> Result<f64, LstmError> {
    if window.inputs[0].len() != params.n_features {
        return Err(LstmError::FeatureMismatch {
            expected: params.n_features,
            got: window.inputs[0].len(),
        });
    }
    let mut state = LstmState::seeded(params.cell_dim, window.seed_sigma);
    let mut pred = state.sigma_hat;
    for (t, x) in window.inputs.iter().enumerate() {
        if teacher_forcing && t > 0 {
            state.sigma_hat = window.raw_sigma[t - 1];
        }
        let (next, p) = forward_step(params, &state, x);
        state = next;
        pred = p;
    }
    Ok(pred)
}

/// Free-running predictions for every window in the dataset.
pub fn predict(params: &LstmParams, dataset: &SchemeDataset) -> Result<Vec<f64>, LstmError> {
    dataset
        .windows
        .iter()
        .map(|w| forward_window(params, w, false))
        .collect()
}

/// Mean absolute percentage error, in percent.
pub fn loss_mape(preds: &[f64], targets: &[f64]) -> Result<f64, LstmError> {
    if preds.len() != targets.len() {
        return Err(LstmError::LengthMismatch {
            preds: preds.len(),
            targets: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(LstmError::EmptyDataset);
    }
    let mut sum = 0.0;
    for (i, (&p, &y)) in preds.iter().zip(targets).enumerate() {
        if y <= 0.0 {
            return Err(LstmError::NonPositiveTarget { index: i });
        }
        sum += (p - y).abs() / y;
    }
    Ok(100.0 * sum / preds.len() as f64)
}

/// Training configuration; serialized into the model file so a run can be
/// reproduced from its artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub cell_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of windows held out, always the chronologically last ones.
    pub validation_fraction: f64,
    pub seed: u64,
    pub init_constant: f64,
    pub init_mode: InitMode,
    pub teacher_forcing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            cell_dim: 1,
            batch_size: 32,
            epochs: 600,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            validation_fraction: 0.2,
            seed: 0,
            init_constant: 0.05,
            init_mode: InitMode::Constant,
            teacher_forcing: false,
        }
    }
}

impl TrainConfig {
    pub(crate) fn validate(&self) -> Result<(), LstmError> {
        let fail = |reason: &str| {
            Err(LstmError::BadConfig {
                reason: reason.to_string(),
            })
        };
        if self.cell_dim < 1 {
            return fail("cell_dim must be at least 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// A trained forecaster plus everything needed to apply it to fresh data:
/// the scheme, feature order, and normalization fitted during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub params: LstmParams,
    pub feature_order: Vec<String>,
    pub scheme: Scheme,
    pub lag_len: usize,
    pub train_stats: Option<Vec<Stats>>,
    pub target_stats: Option<Stats>,
    pub normalized_target: bool,
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub best_val_mape: f64,
}

impl LstmModel {
    pub fn to_json(&self) -> Result<String, LstmError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, LstmError> {
        Ok(serde_json::from_str(text)?)
    }

    /// The dataset must have been produced by the same scheme, features, and
    /// normalization this model was trained with.
    pub fn matches_dataset(&self, dataset: &SchemeDataset) -> bool {
        self.scheme == dataset.scheme
            && self.lag_len == dataset.lag_len
            && self.feature_order == dataset.feature_names
            && self.train_stats == dataset.train_stats
            && self.target_stats == dataset.target_stats
            && self.normalized_target == dataset.normalized_target
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::{NormWindow, Scheme};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_params(seed: u64, n_features: usize, cell_dim: usize) -> LstmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = LstmParams::zero_shaped(cell_dim, n_features);
        let flat: Vec<f64> = (0..p.n_params()).map(|_| rng.gen_range(-0.8..0.8)).collect();
        p.assign_flat(&flat);
        p.alpha = 1.0 + rng.gen_range(-0.2..0.2);
        p
    }

    pub(crate) fn random_window(seed: u64, lag_len: usize, n_features: usize) -> WindowSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        WindowSample {
            inputs: (0..lag_len)
                .map(|_| (0..n_features).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            raw_sigma: (0..lag_len).map(|_| rng.gen_range(0.5..1.5)).collect(),
            seed_sigma: rng.gen_range(0.5..1.5),
            target: rng.gen_range(0.5..2.0),
            window_end: lag_len,
        }
    }

    #[test]
    fn init_constant_sets_every_weight() {
        let p = init_params(2, 1, 0.1, 0.7).unwrap();
        let flat = p.flatten();
        // All but alpha (second to last position group) equal the constant.
        let alpha_idx = flat.len() - 1 - p.cell_dim;
        for (i, v) in flat.iter().enumerate() {
            if i == alpha_idx {
                assert_eq!(*v, 0.7);
            } else {
                assert_eq!(*v, 0.1);
            }
        }
        assert_eq!(p.n_params(), 4 * (3 + 1) + 2);
    }

    #[test]
    fn flatten_assign_round_trip() {
        let p = random_params(1, 3, 2);
        let flat = p.flatten();
        assert_eq!(flat.len(), p.n_params());
        let mut q = p.zeros_like();
        q.assign_flat(&flat);
        assert_eq!(p, q);
    }

    #[test]
    fn forget_one_update_zero_carries_memory_unchanged() {
        // Saturate the forget gate open and the update gate closed: the
        // memory vector must pass through every step untouched.
        let mut p = init_params(2, 3, 0.0, 0.5).unwrap();
        for row in p.w_forget.iter_mut() {
            row.iter_mut().for_each(|w| *w = 0.0);
        }
        p.b_forget.iter_mut().for_each(|b| *b = 60.0); // sigmoid -> 1
        p.b_update.iter_mut().for_each(|b| *b = -60.0); // sigmoid -> 0
        let state = LstmState {
            cell: vec![0.3, -0.2, 0.9],
            sigma_hat: 0.5,
        };
        let (next, _) = forward_step(&p, &state, &[0.4, -1.0]);
        for (a, b) in next.cell.iter().zip(&state.cell) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_beta_pins_prediction_to_alpha() {
        let mut p = random_params(2, 2, 2);
        p.beta.iter_mut().for_each(|b| *b = 0.0);
        p.alpha = 0.42;
        let w = random_window(3, 5, 2);
        let pred = forward_window(&p, &w, false).unwrap();
        assert_eq!(pred, 0.42);
    }

    #[test]
    fn teacher_forcing_substitutes_observed_sigma() {
        let p = random_params(4, 2, 1);
        let w = random_window(5, 4, 2);
        let free = forward_window(&p, &w, false).unwrap();
        let forced = forward_window(&p, &w, true).unwrap();
        // Same first step, different feedback afterwards.
        assert_ne!(free, forced);
    }

    #[test]
    fn loss_mape_matches_hand_computation() {
        let mape = loss_mape(&[1.1, 0.9], &[1.0, 1.0]).unwrap();
        assert!((mape - 10.0).abs() < 1e-12);
        assert!(matches!(
            loss_mape(&[1.0], &[0.0]),
            Err(LstmError::NonPositiveTarget { index: 0 })
        ));
        assert!(loss_mape(&[], &[]).is_err());
    }

    #[test]
    fn model_json_round_trips_bit_exactly() {
        let model = LstmModel {
            params: random_params(7, 3, 2),
            feature_order: vec!["return".into(), "volatility".into(), "jobs".into()],
            scheme: Scheme::new(3, NormWindow::Infinite).unwrap(),
            lag_len: 10,
            train_stats: Some(vec![
                crate::scheme::Stats { mean: 0.1, std: 1.7 },
                crate::scheme::Stats { mean: -0.03, std: 0.2 },
                crate::scheme::Stats {
                    mean: 55.5,
                    std: 12.25,
                },
            ]),
            target_stats: None,
            normalized_target: false,
            config: TrainConfig::default(),
            best_epoch: 41,
            best_val_mape: 23.75,
        };
        let json = model.to_json().unwrap();
        let back = LstmModel::from_json(&json).unwrap();
        assert_eq!(model, back);
        // Serializing again yields the same bytes.
        assert_eq!(json, back.to_json().unwrap());
    }

    proptest! {
        #[test]
        fn prediction_stays_within_beta_budget(
            seed in 0u64..500,
            lag in 1usize..8,
        ) {
            let p = random_params(seed, 3, 2);
            let w = random_window(seed ^ 0xabcd, lag, 3);
            let pred = forward_window(&p, &w, false).unwrap();
            prop_assert!((pred - p.alpha).abs() <= p.beta_budget() + 1e-12);
        }
    }
}
