//! Adam optimizer and the epoch loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    forward_window, grad_window, init_params, InitMode, LstmError, LstmParams, TrainConfig,
};
use crate::scheme::SchemeDataset;

/// Adam over a flat parameter vector: first and second moment estimates with
/// bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// One update in place. Panics if lengths disagree with the state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Per-epoch losses, both measured free-running so they are comparable to
/// inference even when training used teacher forcing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mape: f64,
    pub val_mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_mape: f64,
}

fn mean_mape(
    params: &LstmParams,
    windows: &[crate::scheme::WindowSample],
) -> Result<f64, LstmError> {
    let mut sum = 0.0;
    for w in windows {
        let pred = forward_window(params, w, false)?;
        if w.target <= 0.0 {
            return Err(LstmError::NonPositiveTarget {
                index: w.window_end,
            });
        }
        sum += (pred - w.target).abs() / w.target;
    }
    Ok(100.0 * sum / windows.len() as f64)
}

fn glorot_init(
    n_features: usize,
    cell_dim: usize,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> LstmParams {
    let mut p = init_params(n_features, cell_dim, 0.0, alpha).expect("dims validated by caller");
    let input_dim = p.input_dim();
    let gate_limit = (6.0 / (input_dim + cell_dim) as f64).sqrt();
    for w in [
        &mut p.w_forget,
        &mut p.w_update,
        &mut p.w_candidate,
        &mut p.w_output,
    ] {
        for row in w.iter_mut() {
            for slot in row.iter_mut() {
                *slot = rng.gen_range(-gate_limit..gate_limit);
            }
        }
    }
    let beta_limit = (6.0 / (cell_dim + 1) as f64).sqrt();
    for slot in p.beta.iter_mut() {
        *slot = rng.gen_range(-beta_limit..beta_limit);
    }
    p
}

/// Trains a forecaster on the dataset windows.
///
/// The chronologically last `validation_fraction` of windows is held out;
/// every epoch shuffles the training windows (seeded), walks them in
/// mini-batches of mean gradients, and scores both splits free-running. The
/// returned parameters are the snapshot from the epoch with the lowest
/// validation MAPE. A non-finite loss or parameter aborts with the finite
/// history preserved inside the error.
pub fn train(
    dataset: &SchemeDataset,
    cfg: &TrainConfig,
) -> Result<(LstmParams, TrainHistory), LstmError> {
    cfg.validate()?;
    let windows = &dataset.windows;
    if windows.is_empty() {
        return Err(LstmError::EmptyDataset);
    }
    let n = windows.len();
    let val_n = (n as f64 * cfg.validation_fraction).floor() as usize;
    let train_n = n - val_n;
    let train_windows = &windows[..train_n];
    // Degenerate case (tiny datasets or fraction 0): score on the training
    // split so best-epoch selection stays defined.
    let val_windows = if val_n == 0 {
        train_windows
    } else {
        &windows[train_n..]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let alpha0 =
        train_windows.iter().map(|w| w.target).sum::<f64>() / train_windows.len() as f64;
    let n_features = dataset.n_features();
    let mut params = match cfg.init_mode {
        InitMode::Constant => init_params(n_features, cfg.cell_dim, cfg.init_constant, alpha0)?,
        InitMode::Normalized => glorot_init(n_features, cfg.cell_dim, alpha0, &mut rng),
    };

    let mut adam = AdamState::new(params.n_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_mape: f64::INFINITY,
    };
    let mut best_params = params.clone();
    let mut order: Vec<usize> = (0..train_n).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = vec![0.0; params.n_params()];
            for &idx in batch {
                let (g, _, _) = grad_window(&params, &train_windows[idx], cfg.teacher_forcing)?;
                for (a, gi) in acc.iter_mut().zip(g.flatten()) {
                    *a += gi;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            acc.iter_mut().for_each(|a| *a *= scale);
            let mut flat = params.flatten();
            adam.step(&mut flat, &acc);
            params.assign_flat(&flat);
        }

        let train_mape = mean_mape(&params, train_windows)?;
        let val_mape = mean_mape(&params, val_windows)?;
        let finite_params = params.flatten().iter().all(|p| p.is_finite());
        if !train_mape.is_finite() || !val_mape.is_finite() || !finite_params {
            return Err(LstmError::Diverged { epoch, history });
        }
        history.epochs.push(EpochStats {
            epoch,
            train_mape,
            val_mape,
        });
        if val_mape < history.best_val_mape {
            history.best_val_mape = val_mape;
            history.best_epoch = epoch;
            best_params = params.clone();
        }
    }

    Ok((best_params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::tests::{random_params, random_window};
    use crate::lstm::predict;
    use crate::scheme::{NormWindow, Scheme, WindowSample};

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = AdamState::new(3, 0.01, 0.9, 0.999, 1e-8);
        let mut params = vec![1.0, -2.0, 0.5];
        adam.step(&mut params, &[0.0, 0.0, 0.0]);
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert_eq!(adam.t(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_in_gradient_direction() {
        // After bias correction the first update is lr * g / (|g| + eps),
        // i.e. lr times the gradient sign to within eps.
        let mut adam = AdamState::new(2, 0.01, 0.9, 0.999, 1e-8);
        let mut params = vec![1.0, 1.0];
        adam.step(&mut params, &[3.7, -0.002]);
        assert!((params[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((params[1] - (1.0 + 0.01)).abs() < 1e-7);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut adam = AdamState::new(1, 0.1, 0.9, 0.999, 1e-8);
        let mut x = vec![0.0];
        for _ in 0..2000 {
            let g = 2.0 * (x[0] - 3.0);
            adam.step(&mut x, &[g]);
        }
        assert!((x[0] - 3.0).abs() < 1e-3, "converged to {}", x[0]);
    }

    /// Windows labeled by a fixed random teacher network, so a student of the
    /// same shape can drive the loss toward zero.
    pub(crate) fn teacher_dataset(seed: u64, n_windows: usize, lag: usize) -> SchemeDataset {
        let n_features = 2;
        let mut teacher = random_params(seed, n_features, 1);
        teacher.alpha = 1.0;
        // Half the budget keeps every label comfortably positive.
        teacher.beta.iter_mut().for_each(|b| *b *= 0.5);
        let mut windows: Vec<WindowSample> = (0..n_windows)
            .map(|i| random_window(seed.wrapping_mul(1009).wrapping_add(i as u64), lag, n_features))
            .collect();
        for (i, w) in windows.iter_mut().enumerate() {
            w.target = forward_window(&teacher, w, false).unwrap();
            w.window_end = lag + i;
            assert!(w.target > 0.1);
        }
        SchemeDataset {
            scheme: Scheme::new(1, NormWindow::Infinite).unwrap(),
            lag_len: lag,
            feature_names: vec!["return".into(), "volatility".into()],
            train_stats: None,
            target_stats: None,
            normalized_target: false,
            windows,
        }
    }

    #[test]
    fn training_reduces_loss_and_selects_best_epoch() {
        let dataset = teacher_dataset(42, 60, 6);
        let cfg = TrainConfig {
            epochs: 120,
            lr: 5e-3,
            seed: 7,
            ..TrainConfig::default()
        };
        let (params, history) = train(&dataset, &cfg).unwrap();
        assert_eq!(history.epochs.len(), 120);
        let first = history.epochs.first().unwrap().train_mape;
        let last = history.epochs.last().unwrap().train_mape;
        assert!(
            last < first,
            "loss should fall over training: {first} -> {last}"
        );
        // best_val_mape is the minimum of the recorded curve, and the
        // returned parameters reproduce it.
        let min_val = history
            .epochs
            .iter()
            .map(|e| e.val_mape)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(history.best_val_mape, min_val);
        let val_start = dataset.windows.len() - dataset.windows.len() / 5;
        let rescored = mean_mape(&params, &dataset.windows[val_start..]).unwrap();
        assert!((rescored - history.best_val_mape).abs() < 1e-12);
    }

    #[test]
    fn same_seed_reproduces_training_bit_for_bit() {
        let dataset = teacher_dataset(3, 40, 5);
        let cfg = TrainConfig {
            epochs: 25,
            lr: 2e-3,
            seed: 11,
            ..TrainConfig::default()
        };
        let (a, ha) = train(&dataset, &cfg).unwrap();
        let (b, hb) = train(&dataset, &cfg).unwrap();
        assert_eq!(a.flatten(), b.flatten());
        assert_eq!(ha, hb);
        let cfg2 = TrainConfig { seed: 12, ..cfg };
        let (c, _) = train(&dataset, &cfg2).unwrap();
        assert_ne!(a.flatten(), c.flatten());
    }

    #[test]
    fn normalized_init_trains_and_differs_from_constant() {
        let dataset = teacher_dataset(19, 40, 5);
        let cfg = TrainConfig {
            epochs: 15,
            init_mode: InitMode::Normalized,
            seed: 4,
            ..TrainConfig::default()
        };
        let (a, _) = train(&dataset, &cfg).unwrap();
        let cfg_const = TrainConfig {
            init_mode: InitMode::Constant,
            ..cfg
        };
        let (b, _) = train(&dataset, &cfg_const).unwrap();
        assert_ne!(a.flatten(), b.flatten());
        assert!(predict(&a, &dataset).unwrap().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn teacher_forcing_changes_the_training_path() {
        let dataset = teacher_dataset(23, 40, 6);
        let cfg = TrainConfig {
            epochs: 10,
            seed: 2,
            ..TrainConfig::default()
        };
        let (free, _) = train(&dataset, &cfg).unwrap();
        let cfg_tf = TrainConfig {
            teacher_forcing: true,
            ..cfg
        };
        let (forced, _) = train(&dataset, &cfg_tf).unwrap();
        assert_ne!(free.flatten(), forced.flatten());
    }

    #[test]
    fn degenerate_target_scale_reports_divergence() {
        // Targets at the very bottom of the f64 range overflow the
        // percentage loss; training must stop with the finite history kept.
        let mut dataset = teacher_dataset(5, 30, 4);
        for w in dataset.windows.iter_mut() {
            w.target = 1e-320;
        }
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        match train(&dataset, &cfg) {
            Err(LstmError::Diverged { epoch, history }) => {
                assert_eq!(epoch, 1);
                assert!(history.epochs.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut dataset = teacher_dataset(1, 10, 4);
        dataset.windows.clear();
        assert!(matches!(
            train(&dataset, &TrainConfig::default()),
            Err(LstmError::EmptyDataset)
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let dataset = teacher_dataset(1, 10, 4);
        for cfg in [
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr: -1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                validation_fraction: 1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(
                train(&dataset, &cfg),
                Err(LstmError::BadConfig { .. })
            ));
        }
    }
}
