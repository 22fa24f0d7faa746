//! Backpropagation through the window recurrence.
//!
//! Two chains carry gradient backwards across steps: the memory vector
//! (through the forget gate) and the fed-back prediction (through the first
//! input slot). Under teacher forcing the feedback input is an observed
//! constant, so that second chain is cut.

use super::{forward_step_traced, LstmError, LstmParams, LstmState, StepTrace};
use crate::scheme::WindowSample;

/// Gradient of the window loss `100 * |pred - target| / target` with respect
/// to every parameter, plus the prediction and the loss value itself.
///
/// The absolute value takes subgradient zero at `pred == target`.
pub fn grad_window(
    params: &LstmParams,
    window: &WindowSample,
    teacher_forcing: bool,
) -> Result<(LstmParams, f64, f64), LstmError> {
    if window.inputs[0].len() != params.n_features {
        return Err(LstmError::FeatureMismatch {
            expected: params.n_features,
            got: window.inputs[0].len(),
        });
    }
    if window.target <= 0.0 {
        return Err(LstmError::NonPositiveTarget {
            index: window.window_end,
        });
    }

    // Forward, keeping per-step activations.
    let mut state = LstmState::seeded(params.cell_dim, window.seed_sigma);
    let mut traces: Vec<StepTrace> = Vec::with_capacity(window.inputs.len());
    let mut pred = state.sigma_hat;
    for (t, x) in window.inputs.iter().enumerate() {
        if teacher_forcing && t > 0 {
            state.sigma_hat = window.raw_sigma[t - 1];
        }
        let (next, p, trace) = forward_step_traced(params, &state, x);
        traces.push(trace);
        state = next;
        pred = p;
    }

    let diff = pred - window.target;
    let loss = 100.0 * diff.abs() / window.target;
    let dloss_dpred = if diff == 0.0 {
        0.0
    } else {
        100.0 * diff.signum() / window.target
    };

    let mut grads = params.zeros_like();
    let d = params.cell_dim;
    // d(loss)/d(sigma_hat emitted by the step being processed).
    let mut ds = dloss_dpred;
    // d(loss)/d(memory vector of the step being processed), from the future.
    let mut dcell = vec![0.0; d];

    for (t, tr) in traces.iter().enumerate().rev() {
        // Readout: sigma_hat = alpha + sum_i beta_i * o_i * tanh(cell_i).
        grads.alpha += ds;
        let mut dcell_local = vec![0.0; d];
        let mut da_o = vec![0.0; d];
        for i in 0..d {
            grads.beta[i] += ds * tr.o[i] * tr.tanh_cell[i];
            let do_i = ds * params.beta[i] * tr.tanh_cell[i];
            let dtanh_i = ds * params.beta[i] * tr.o[i];
            da_o[i] = do_i * tr.o[i] * (1.0 - tr.o[i]);
            dcell_local[i] = dtanh_i * (1.0 - tr.tanh_cell[i] * tr.tanh_cell[i]) + dcell[i];
        }

        // Memory update: cell = f * cell_prev + c * g.
        let mut da_f = vec![0.0; d];
        let mut da_c = vec![0.0; d];
        let mut da_g = vec![0.0; d];
        for i in 0..d {
            let di = dcell_local[i];
            da_f[i] = di * tr.cell_prev[i] * tr.f[i] * (1.0 - tr.f[i]);
            da_c[i] = di * tr.g[i] * tr.c[i] * (1.0 - tr.c[i]);
            da_g[i] = di * tr.c[i] * (1.0 - tr.g[i] * tr.g[i]);
        }

        // Accumulate weight gradients and fold gate activity back to the
        // step input.
        let mut dv = vec![0.0; params.input_dim()];
        for (da, w, gw, gb) in [
            (&da_f, &params.w_forget, &mut grads.w_forget, &mut grads.b_forget),
            (&da_c, &params.w_update, &mut grads.w_update, &mut grads.b_update),
            (&da_g, &params.w_candidate, &mut grads.w_candidate, &mut grads.b_candidate),
            (&da_o, &params.w_output, &mut grads.w_output, &mut grads.b_output),
        ] {
            for i in 0..d {
                gb[i] += da[i];
                for (j, dvj) in dv.iter_mut().enumerate() {
                    gw[i][j] += da[i] * tr.v[j];
                    *dvj += da[i] * w[i][j];
                }
            }
        }

        // Chains into the previous step: memory through the forget gate,
        // prediction through the feedback slot. Step 0 was fed the observed
        // seed sigma, and teacher forcing replaces feedback with constants.
        for i in 0..d {
            dcell[i] = dcell_local[i] * tr.f[i];
        }
        ds = if t == 0 || teacher_forcing { 0.0 } else { dv[0] };
    }

    Ok((grads, pred, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::tests::{random_params, random_window};
    use crate::lstm::{forward_window, init_params};

    fn loss_at(params: &LstmParams, window: &WindowSample, tf: bool) -> f64 {
        let pred = forward_window(params, window, tf).unwrap();
        100.0 * (pred - window.target).abs() / window.target
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
    }

    fn check_against_finite_differences(seed: u64, n_features: usize, cell_dim: usize, tf: bool) {
        let params = random_params(seed, n_features, cell_dim);
        let mut window = random_window(seed ^ 0x5eed, 6, n_features);
        // Keep the evaluation point away from the |.| kink so the central
        // difference sees a smooth function.
        let pred = forward_window(&params, &window, tf).unwrap();
        if (pred - window.target).abs() < 1e-3 {
            window.target += 0.25;
        }

        let (grads, _, _) = grad_window(&params, &window, tf).unwrap();
        let analytic = grads.flatten();
        let theta = params.flatten();
        let mut worst = 0.0f64;
        for i in 0..theta.len() {
            let h = 1e-6 * theta[i].abs().max(1.0);
            let mut plus = params.clone();
            let mut bumped = theta.clone();
            bumped[i] += h;
            plus.assign_flat(&bumped);
            let mut minus = params.clone();
            bumped[i] = theta[i] - h;
            minus.assign_flat(&bumped);
            let fd = (loss_at(&plus, &window, tf) - loss_at(&minus, &window, tf)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i], fd));
        }
        assert!(
            worst < 1e-5,
            "seed {seed} tf {tf}: worst relative gradient error {worst:e}"
        );
    }

    #[test]
    fn gradients_match_finite_differences_free_running() {
        for seed in [2, 9, 21, 33] {
            check_against_finite_differences(seed, 3, 1, false);
        }
        check_against_finite_differences(55, 2, 3, false);
    }

    #[test]
    fn gradients_match_finite_differences_teacher_forced() {
        check_against_finite_differences(7, 3, 1, true);
        check_against_finite_differences(8, 1, 2, true);
    }

    #[test]
    fn all_zero_params_leave_only_the_intercept_gradient() {
        // With every weight at zero the candidate memory is tanh(0) = 0, so
        // the prediction is exactly alpha at each step and only alpha can
        // move the loss: d(loss)/d(alpha) = 100 * sign(alpha - y) / y.
        let params = init_params(2, 1, 0.0, 0.9).unwrap();
        let window = random_window(17, 5, 2);
        let (grads, pred, _) = grad_window(&params, &window, false).unwrap();
        assert_eq!(pred, 0.9);
        let expected = 100.0 * (0.9 - window.target).signum() / window.target;
        assert!((grads.alpha - expected).abs() < 1e-12);
        let flat = grads.flatten();
        let alpha_idx = flat.len() - 1 - params.cell_dim;
        for (i, g) in flat.iter().enumerate() {
            if i != alpha_idx {
                assert_eq!(*g, 0.0, "parameter index {i} should have zero gradient");
            }
        }
    }

    #[test]
    fn exact_hit_takes_zero_subgradient() {
        let mut params = random_params(3, 2, 1);
        params.beta.iter_mut().for_each(|b| *b = 0.0);
        let mut window = random_window(4, 4, 2);
        params.alpha = 1.234;
        window.target = 1.234;
        let (grads, pred, loss) = grad_window(&params, &window, false).unwrap();
        assert_eq!(pred, window.target);
        assert_eq!(loss, 0.0);
        assert!(grads.flatten().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn feedback_path_carries_gradient() {
        // Same setup, free-running vs teacher-forced: the free-running
        // gradient must differ because errors flow through the feedback.
        let params = random_params(11, 2, 1);
        let window = random_window(12, 6, 2);
        let (g_free, _, _) = grad_window(&params, &window, false).unwrap();
        let (g_forced, _, _) = grad_window(&params, &window, true).unwrap();
        assert_ne!(g_free.flatten(), g_forced.flatten());
    }
}
