//! Linear dynamical system simulator.
//!
//! The recurrence is `x_{t+1} = A x_t + ε_t` with `ε_t ∼ N(0, σ² I)`. The
//! parameterized form uses a diagonal `A = diag(α, β)`; the matrix form
//! accepts an arbitrary square `A` and is what the mismatch sweep uses for
//! perturbed dynamics.

use ndarray::{Array1, Array2};

use super::{ModelTag, Trajectory};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::RngStream;

/// States whose magnitude exceeds this are treated as divergence.
const STATE_CAP: f64 = 1e12;

/// Roll out `x_{t+1} = A x_t + ε_t` for `steps` steps from `x0`.
pub fn simulate_lds_matrix(
    a: &Array2<f64>,
    steps: usize,
    x0: &[f64],
    sigma: f64,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    let d = a.nrows();
    if a.ncols() != d {
        return Err(Error::Shape(format!("dynamics matrix must be square, got {:?}", a.dim())));
    }
    if x0.len() != d {
        return Err(Error::Shape(format!(
            "x0 has length {}, dynamics matrix is {d}×{d}",
            x0.len()
        )));
    }
    if steps < 1 {
        return Err(Error::Validation("steps must be ≥ 1".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Validation(format!("sigma must be finite and ≥ 0, got {sigma}")));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("dynamics matrix has non-finite entries".into()));
    }

    let mut states = Array2::zeros((steps + 1, d));
    let mut x = Array1::from(x0.to_vec());
    states.row_mut(0).assign(&x);
    for t in 0..steps {
        let mut next = a.dot(&x);
        if sigma > 0.0 {
            for v in next.iter_mut() {
                *v += sigma * rng.next_gaussian();
            }
        }
        if next.iter().any(|v| !v.is_finite() || v.abs() > STATE_CAP) {
            return Err(Error::Blowup {
                step: t + 1,
                detail: format!("LDS state magnitude exceeded {STATE_CAP:e}"),
            });
        }
        states.row_mut(t + 1).assign(&next);
        x = next;
    }
    Ok(Trajectory { states, model: ModelTag::Lds })
}

/// Roll out the diagonal system `A = diag(α, β)` from the named parameters.
pub fn simulate_lds(
    theta: &ParamVector,
    steps: usize,
    x0: &[f64],
    sigma: f64,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    let alpha = theta.get("alpha")?;
    let beta = theta.get("beta")?;
    if !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::Validation(format!(
            "LDS parameters must be finite, got alpha={alpha}, beta={beta}"
        )));
    }
    let a = Array2::from_diag(&Array1::from(vec![alpha, beta]));
    simulate_lds_matrix(&a, steps, x0, sigma, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn theta(alpha: f64, beta: f64) -> ParamVector {
        ParamVector::new(
            vec!["alpha".into(), "beta".into()],
            vec![alpha, beta],
            vec![(0.0, 2.0), (0.0, 2.0)],
        )
        .unwrap()
    }

    #[test]
    fn identity_dynamics_hold_state() {
        let mut rng = RngStream::new(0, 0);
        let traj = simulate_lds(&theta(1.0, 1.0), 10, &[1.0, 1.0], 0.0, &mut rng).unwrap();
        assert_eq!(traj.len(), 11);
        for row in traj.states.rows() {
            assert_eq!(row.to_vec(), vec![1.0, 1.0]);
        }
    }

    #[test]
    fn one_step_matches_hand_recurrence() {
        let mut rng = RngStream::new(0, 0);
        let traj = simulate_lds(&theta(0.5, 1.5), 1, &[1.0, 1.0], 0.0, &mut rng).unwrap();
        assert_eq!(traj.states.row(1).to_vec(), vec![0.5, 1.5]);
    }

    #[test]
    fn noiseless_rollout_matches_closed_form() {
        // With sigma = 0, states[t] = (alpha^t, beta^t) elementwise times x0.
        let (alpha, beta) = (0.7, 1.3);
        let mut rng = RngStream::new(0, 0);
        let traj = simulate_lds(&theta(alpha, beta), 10, &[1.0, 1.0], 0.0, &mut rng).unwrap();
        for t in 0..=10 {
            assert_relative_eq!(
                traj.states[[t, 0]],
                alpha.powi(t as i32),
                max_relative = 1e-12
            );
            assert_relative_eq!(
                traj.states[[t, 1]],
                beta.powi(t as i32),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn paper_task_shape_flattens_to_twenty() {
        let mut rng = RngStream::new(1, 0);
        let traj = simulate_lds(&theta(0.9, 1.1), 10, &[1.0, 1.0], 0.1, &mut rng).unwrap();
        // Rows 1..=10 observed in full: 10 × 2 = 20 input entries.
        assert_eq!((traj.len() - 1) * 2, 20);
    }

    #[test]
    fn noise_is_deterministic_per_stream() {
        let a = simulate_lds(&theta(0.9, 0.8), 10, &[1.0, 1.0], 0.3, &mut RngStream::new(5, 2))
            .unwrap();
        let b = simulate_lds(&theta(0.9, 0.8), 10, &[1.0, 1.0], 0.3, &mut RngStream::new(5, 2))
            .unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn rejects_non_finite_parameters() {
        let bad = ParamVector::new(
            vec!["alpha".into(), "beta".into()],
            vec![f64::INFINITY, 1.0],
            vec![(0.0, f64::INFINITY), (0.0, 2.0)],
        )
        .unwrap();
        let mut rng = RngStream::new(0, 0);
        assert!(simulate_lds(&bad, 5, &[1.0, 1.0], 0.0, &mut rng).is_err());
    }

    #[test]
    fn divergent_matrix_reports_blowup_step() {
        let a = Array2::from_diag(&Array1::from(vec![1e4, 1e4]));
        let mut rng = RngStream::new(0, 0);
        let err = simulate_lds_matrix(&a, 10, &[1.0, 1.0], 0.0, &mut rng).unwrap_err();
        match err {
            Error::Blowup { step, .. } => assert_eq!(step, 4),
            other => panic!("expected blowup, got {other:?}"),
        }
    }
}
