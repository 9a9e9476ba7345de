//! Mechanistic simulators and observation models.
//!
//! Three discrete-time models are provided: a linear dynamical system with
//! additive Gaussian process noise ([`lds`]), and the SIR/SEIR compartment
//! models with unit population ([`compartmental`]). A [`Trajectory`] is the
//! raw latent rollout; [`apply_observation`] turns it into what a learner
//! sees by selecting state dimensions and adding i.i.d. Gaussian noise.
//!
//! Row 0 of every trajectory is the (deterministic) initial state; row `t`
//! is the state after `t` update steps. Downstream windowing drops row 0,
//! so "the observed series" always means the generated rows `1..=steps`.

pub mod compartmental;
pub mod lds;

pub use compartmental::simulate_compartmental;
pub use lds::{simulate_lds, simulate_lds_matrix};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Which mechanistic family produced a trajectory or example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelTag {
    Lds,
    Sir,
    Seir,
}

impl ModelTag {
    /// State dimension of the model (LDS defaults to 2-D).
    pub fn state_dim(&self) -> usize {
        match self {
            ModelTag::Lds => 2,
            ModelTag::Sir => 3,
            ModelTag::Seir => 4,
        }
    }

    /// Index of the infected compartment, the observed quantity in the
    /// epidemic tasks.
    pub fn infected_index(&self) -> Result<usize> {
        match self {
            ModelTag::Lds => Err(Error::Validation("LDS has no infected compartment".into())),
            ModelTag::Sir => Ok(1),
            ModelTag::Seir => Ok(2),
        }
    }

    /// Standard initial state: epidemics seed 1% infected, LDS starts at
    /// the all-ones vector.
    pub fn default_init(&self) -> Vec<f64> {
        match self {
            ModelTag::Lds => vec![1.0, 1.0],
            ModelTag::Sir => vec![0.99, 0.01, 0.0],
            ModelTag::Seir => vec![0.99, 0.0, 0.01, 0.0],
        }
    }

    /// Parameter names expected by the simulator, in order.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ModelTag::Lds => &["alpha", "beta"],
            ModelTag::Sir => &["beta", "gamma"],
            ModelTag::Seir => &["beta", "gamma", "sigma_e"],
        }
    }

    /// Stable one-byte code used in the dataset file format.
    pub fn file_code(&self) -> u8 {
        match self {
            ModelTag::Lds => 0,
            ModelTag::Sir => 1,
            ModelTag::Seir => 2,
        }
    }

    /// Inverse of [`ModelTag::file_code`].
    pub fn from_file_code(code: u8) -> Result<ModelTag> {
        match code {
            0 => Ok(ModelTag::Lds),
            1 => Ok(ModelTag::Sir),
            2 => Ok(ModelTag::Seir),
            other => Err(Error::Validation(format!("unknown model tag code {other}"))),
        }
    }
}

/// A latent rollout: `states` is time-major with `steps + 1` rows, row 0
/// being the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Array2<f64>,
    pub model: ModelTag,
}

impl Trajectory {
    /// Number of rows (steps + 1).
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    /// True if the trajectory has no rows (never produced by simulators).
    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }
}

/// How a trajectory is observed: which dimensions, and how much Gaussian
/// measurement noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSpec {
    noise_sigma: f64,
    observed_dims: Vec<usize>,
}

impl ObservationSpec {
    /// Build an observation spec; `noise_sigma ≥ 0`, at least one dimension.
    pub fn new(noise_sigma: f64, observed_dims: Vec<usize>) -> Result<ObservationSpec> {
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::Validation(format!(
                "observation noise sigma must be finite and ≥ 0, got {noise_sigma}"
            )));
        }
        if observed_dims.is_empty() {
            return Err(Error::Validation("observed_dims must be nonempty".into()));
        }
        Ok(ObservationSpec { noise_sigma, observed_dims })
    }

    /// Observe every state dimension of `model` without noise.
    pub fn full_noiseless(model: ModelTag) -> ObservationSpec {
        ObservationSpec {
            noise_sigma: 0.0,
            observed_dims: (0..model.state_dim()).collect(),
        }
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn observed_dims(&self) -> &[usize] {
        &self.observed_dims
    }
}

/// Extract the observed dimensions of every trajectory row and add i.i.d.
/// Gaussian noise with the spec's sigma. Output shape: rows × |observed_dims|.
pub fn apply_observation(
    traj: &Trajectory,
    obs: &ObservationSpec,
    rng: &mut RngStream,
) -> Result<Array2<f64>> {
    let d = traj.states.ncols();
    for &dim in obs.observed_dims() {
        if dim >= d {
            return Err(Error::Shape(format!(
                "observed dim {dim} out of range for state dimension {d}"
            )));
        }
    }
    let mut out = Array2::zeros((traj.states.nrows(), obs.observed_dims().len()));
    for (t, row) in traj.states.rows().into_iter().enumerate() {
        for (j, &dim) in obs.observed_dims().iter().enumerate() {
            let noise = if obs.noise_sigma() > 0.0 {
                obs.noise_sigma() * rng.next_gaussian()
            } else {
                0.0
            };
            out[[t, j]] = row[dim] + noise;
        }
    }
    Ok(out)
}
