//! Loss functions over prediction/target vector pairs.
//!
//! All losses are sums over components (MSE is the squared Euclidean norm,
//! not a mean), so a loss value is comparable across batch sizes only after
//! averaging over examples — which the trainer does.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability floor for cross-entropy; predictions at or below it are
/// clamped and the clamp is counted, not fatal.
pub const CE_EPS: f64 = 1e-12;

/// Which loss to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossSpec {
    /// Squared Euclidean norm of the residual.
    Mse,
    /// −Σ target·log(pred) for probability-vector predictions and one-hot
    /// (or otherwise nonnegative, sum-1) targets.
    CrossEntropy,
    /// Sum of absolute residuals.
    L1,
    /// Quadratic inside ±delta, linear outside.
    Huber { delta: f64 },
}

impl LossSpec {
    /// Validate parameterized variants.
    pub fn validate(&self) -> Result<()> {
        if let LossSpec::Huber { delta } = self {
            if !(*delta > 0.0) || !delta.is_finite() {
                return Err(Error::Validation(format!(
                    "Huber delta must be finite and > 0, got {delta}"
                )));
            }
        }
        Ok(())
    }

    /// Loss value plus the number of clamped cross-entropy terms.
    pub fn value_counting(
        &self,
        pred: ArrayView1<f64>,
        target: ArrayView1<f64>,
    ) -> Result<(f64, usize)> {
        if pred.len() != target.len() {
            return Err(Error::Shape(format!(
                "loss over {} predictions vs {} targets",
                pred.len(),
                target.len()
            )));
        }
        let mut clamped = 0;
        let value = match self {
            LossSpec::Mse => pred
                .iter()
                .zip(target.iter())
                .map(|(p, t)| (p - t) * (p - t))
                .sum(),
            LossSpec::CrossEntropy => {
                let mut acc = 0.0;
                for (&p, &t) in pred.iter().zip(target.iter()) {
                    if t == 0.0 {
                        continue;
                    }
                    let p_safe = if p > CE_EPS {
                        p
                    } else {
                        clamped += 1;
                        CE_EPS
                    };
                    acc -= t * p_safe.ln();
                }
                acc
            }
            LossSpec::L1 => pred
                .iter()
                .zip(target.iter())
                .map(|(p, t)| (p - t).abs())
                .sum(),
            LossSpec::Huber { delta } => pred
                .iter()
                .zip(target.iter())
                .map(|(p, t)| {
                    let r = (p - t).abs();
                    if r <= *delta {
                        0.5 * r * r
                    } else {
                        delta * (r - 0.5 * delta)
                    }
                })
                .sum(),
        };
        Ok((value, clamped))
    }

    /// Loss value alone.
    pub fn value(&self, pred: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<f64> {
        Ok(self.value_counting(pred, target)?.0)
    }

    /// Gradient of the loss with respect to the prediction vector.
    ///
    /// For cross-entropy the gradient is of the clamped objective: flat in
    /// components that sit below the floor. (Softmax + cross-entropy
    /// training bypasses this via the fused `p − y` form.)
    pub fn grad(&self, pred: ArrayView1<f64>, target: ArrayView1<f64>) -> Result<Array1<f64>> {
        if pred.len() != target.len() {
            return Err(Error::Shape(format!(
                "loss gradient over {} predictions vs {} targets",
                pred.len(),
                target.len()
            )));
        }
        let g = match self {
            LossSpec::Mse => pred
                .iter()
                .zip(target.iter())
                .map(|(p, t)| 2.0 * (p - t))
                .collect(),
            LossSpec::CrossEntropy => pred
                .iter()
                .zip(target.iter())
                .map(|(&p, &t)| if t != 0.0 && p > CE_EPS { -t / p } else { 0.0 })
                .collect(),
            LossSpec::L1 => pred
                .iter()
                .zip(target.iter())
                .map(|(p, t)| {
                    let r = p - t;
                    if r > 0.0 {
                        1.0
                    } else if r < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            LossSpec::Huber { delta } => pred
                .iter()
                .zip(target.iter())
                .map(|(p, t)| {
                    let r = p - t;
                    if r.abs() <= *delta {
                        r
                    } else {
                        delta * r.signum()
                    }
                })
                .collect(),
        };
        Ok(Array1::from_vec(g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn zero_residual_means_zero_loss_for_all_kinds() {
        let p = array![0.25, 0.75];
        for spec in [
            LossSpec::Mse,
            LossSpec::CrossEntropy,
            LossSpec::L1,
            LossSpec::Huber { delta: 1.0 },
        ] {
            let target = match spec {
                // CE's zero point is a one-hot target on a certain
                // prediction, not pred == target; use loss ≥ 0 instead.
                LossSpec::CrossEntropy => continue,
                _ => p.clone(),
            };
            assert_eq!(spec.value(p.view(), target.view()).unwrap(), 0.0);
        }
        // CE at a certain, correct prediction.
        let certain = array![1.0, 0.0];
        assert_eq!(
            LossSpec::CrossEntropy.value(certain.view(), certain.view()).unwrap(),
            0.0
        );
    }

    #[test]
    fn mse_is_the_squared_norm() {
        let v = LossSpec::Mse
            .value(array![0.0, 0.0].view(), array![3.0, 4.0].view())
            .unwrap();
        assert_relative_eq!(v, 25.0, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_of_a_fifty_fifty_guess_is_ln_two() {
        let v = LossSpec::CrossEntropy
            .value(array![0.5, 0.5].view(), array![1.0, 0.0].view())
            .unwrap();
        assert_relative_eq!(v, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_clamps_and_counts() {
        let (v, clamped) = LossSpec::CrossEntropy
            .value_counting(array![0.0, 1.0].view(), array![1.0, 0.0].view())
            .unwrap();
        assert_eq!(clamped, 1);
        assert_relative_eq!(v, -(CE_EPS.ln()), epsilon = 1e-9);
    }

    #[test]
    fn l1_and_huber_values() {
        let p = array![2.0, -1.0];
        let t = array![0.0, 0.0];
        assert_relative_eq!(LossSpec::L1.value(p.view(), t.view()).unwrap(), 3.0);
        // Huber(1): |2| outside → 1·(2−0.5); |−1| at the boundary → 0.5·1².
        assert_relative_eq!(
            LossSpec::Huber { delta: 1.0 }.value(p.view(), t.view()).unwrap(),
            1.5 + 0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gradients_match_central_differences_off_kinks() {
        let p = array![0.7, -0.4, 1.3];
        let t = array![0.2, 0.1, -0.9];
        for spec in [LossSpec::Mse, LossSpec::L1, LossSpec::Huber { delta: 0.5 }] {
            let g = spec.grad(p.view(), t.view()).unwrap();
            for j in 0..p.len() {
                let h = 1e-6;
                let mut hi = p.clone();
                hi[j] += h;
                let mut lo = p.clone();
                lo[j] -= h;
                let fd = (spec.value(hi.view(), t.view()).unwrap()
                    - spec.value(lo.view(), t.view()).unwrap())
                    / (2.0 * h);
                assert_relative_eq!(g[j], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn huber_requires_positive_delta() {
        assert!(LossSpec::Huber { delta: 0.0 }.validate().is_err());
        assert!(LossSpec::Huber { delta: 1.0 }.validate().is_ok());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let err = LossSpec::Mse.value(array![1.0].view(), array![1.0, 2.0].view());
        assert!(matches!(err, Err(Error::Shape(_))));
    }
}
