//! Finite-difference validation of reverse-mode gradients.
//!
//! For a single example, [`grad_check`] compares every parameter's
//! analytic gradient of `loss(f(x), y)` against a central difference with
//! step 1e-5, reporting the worst relative error with denominator
//! `max(1, |g|)`. Non-smooth points poison finite differences, so the base
//! point is screened first: a ReLU pre-activation at a kink, an L1 or
//! Huber residual at one, or a cross-entropy probability at the clamp
//! boundary skips the check and says so in the report rather than failing
//! spuriously.

use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::nnet::loss::{LossSpec, CE_EPS};
use crate::nnet::train::{accumulate_backward, output_delta, Grads};
use crate::nnet::{Activation, Network};

/// Central-difference step.
const FD_STEP: f64 = 1e-5;
/// A ReLU pre-activation closer to zero than this marks a kink.
const RELU_KINK_TOL: f64 = 1e-4;
/// An L1/Huber residual this close to a kink skips the check.
const LOSS_KINK_TOL: f64 = 1e-3;

/// Outcome of one gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|fd − g| / max(1, |g|)` over the checked parameters; 0 when
    /// the check was skipped.
    pub max_rel_error: f64,
    pub params_checked: usize,
    /// Parameters skipped because the base point sits on a kink.
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    pub fn skipped(&self) -> bool {
        self.skipped_kinks > 0
    }
}

/// True when finite differences at this base point would straddle a
/// non-smooth point of the activation or the loss.
fn near_kink(
    net: &Network,
    pre: &[ndarray::Array2<f64>],
    output: ArrayView1<f64>,
    target: ArrayView1<f64>,
    loss: LossSpec,
) -> bool {
    if net.spec().activation == Activation::Relu {
        let hidden = net.spec().layer_count() - 1;
        for layer_pre in pre.iter().take(hidden) {
            if layer_pre.iter().any(|&z| z.abs() < RELU_KINK_TOL) {
                return true;
            }
        }
    }
    match loss {
        LossSpec::L1 => output
            .iter()
            .zip(target.iter())
            .any(|(&p, &t)| (p - t).abs() < LOSS_KINK_TOL),
        LossSpec::Huber { delta } => output
            .iter()
            .zip(target.iter())
            .any(|(&p, &t)| ((p - t).abs() - delta).abs() < LOSS_KINK_TOL),
        LossSpec::CrossEntropy => output
            .iter()
            .zip(target.iter())
            .any(|(&p, &t)| t > 0.0 && p <= 10.0 * CE_EPS),
        LossSpec::Mse => false,
    }
}

/// Compare reverse-mode parameter gradients against central finite
/// differences on one example.
pub fn grad_check(
    net: &Network,
    input: ArrayView1<f64>,
    target: ArrayView1<f64>,
    loss: LossSpec,
) -> Result<GradCheckReport> {
    loss.validate()?;
    if input.iter().chain(target.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("grad check requires a finite example".into()));
    }
    let batch = input.insert_axis(ndarray::Axis(0));
    let pass = net.forward_batch(batch)?;
    if near_kink(net, &pass.pre, pass.outputs().row(0), target, loss) {
        return Ok(GradCheckReport {
            max_rel_error: 0.0,
            params_checked: 0,
            skipped_kinks: net.param_count(),
        });
    }

    let targets_2d = target.insert_axis(ndarray::Axis(0));
    let (d_pre, _, _) = output_delta(loss, net.spec().head, pass.outputs(), targets_2d, 1.0)?;
    let mut grads = Grads::zeros_like(net);
    accumulate_backward(net, &pass, d_pre, None, &mut grads);

    let eval = |probe: &Network| -> Result<f64> {
        let pass = probe.forward_batch(batch)?;
        loss.value(pass.outputs().row(0), target)
    };

    let mut probe = net.clone();
    let mut max_rel: f64 = 0.0;
    let mut checked = 0usize;
    for l in 0..net.spec().layer_count() {
        let (rows, cols) = net.weights()[l].dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = probe.weights()[l][[r, c]];
                probe.weights_mut()[l][[r, c]] = orig + FD_STEP;
                let f_plus = eval(&probe)?;
                probe.weights_mut()[l][[r, c]] = orig - FD_STEP;
                let f_minus = eval(&probe)?;
                probe.weights_mut()[l][[r, c]] = orig;
                let fd = (f_plus - f_minus) / (2.0 * FD_STEP);
                let g = grads.w[l][[r, c]];
                max_rel = max_rel.max((fd - g).abs() / g.abs().max(1.0));
                checked += 1;
            }
        }
        for r in 0..net.biases()[l].len() {
            let orig = probe.biases()[l][r];
            probe.biases_mut()[l][r] = orig + FD_STEP;
            let f_plus = eval(&probe)?;
            probe.biases_mut()[l][r] = orig - FD_STEP;
            let f_minus = eval(&probe)?;
            probe.biases_mut()[l][r] = orig;
            let fd = (f_plus - f_minus) / (2.0 * FD_STEP);
            let g = grads.b[l][r];
            max_rel = max_rel.max((fd - g).abs() / g.abs().max(1.0));
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error: max_rel, params_checked: checked, skipped_kinks: 0 })
}
