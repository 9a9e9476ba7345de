//! Synthetic supervised dataset generation.
//!
//! A [`TaskSpec`] bundles a simulator configuration, a parameter prior, and
//! a labeling rule; [`generate_dataset`] turns it into N `(input, target)`
//! pairs by drawing θ from the prior, rolling the simulator, and windowing
//! the observed series. Example `i` always consumes the derived stream
//! `(seed, DATA_SAMPLE, i)`, so generation order — including parallel
//! generation — cannot change a single example.
//!
//! Windowing convention: the observed series is trajectory rows `1..=steps`
//! (row 0 is the fixed initial state and carries no information). A
//! `Params` or `ModelClass` input is the whole observed series flattened
//! row-major; a `Forecast` input is the first `input_len` observed rows and
//! its target the next `horizon` rows *without* observation noise, so the
//! irreducible forecast error is parameter uncertainty, not measurement
//! noise.

pub mod format;

pub use format::{export_csv, load_dataset, save_dataset};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::sha256_hex;
use crate::error::{Error, Result};
use crate::oracle::ReferenceLibrary;
use crate::params::{ParamVector, PriorSpec};
use crate::rng::{domains, RngStream};
use crate::sim::{
    apply_observation, simulate_compartmental, simulate_lds_matrix, ModelTag, ObservationSpec,
};

/// What the target vector of each example encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetSpec {
    /// Target = the sampled simulator parameters θ.
    Params,
    /// Input = first `input_len` observed rows; target = next `horizon`
    /// observed rows, noiseless.
    Forecast { input_len: usize, horizon: usize },
    /// Target = which model family generated the series, one-hot over
    /// (SIR, SEIR); examples alternate tags for exact balance.
    ModelClass,
}

/// Optional dynamics perturbation for LDS tasks: the example's diagonal
/// matrix `diag(θ)` is replaced by `diag(θ) + δU` with `‖U‖_F = 1` drawn
/// once from `perturb_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MismatchSpec {
    pub delta: f64,
    pub perturb_seed: u64,
}

/// Full recipe for a synthetic supervised task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Base model family. Ignored by `ModelClass` targets, which alternate
    /// SIR and SEIR per example.
    pub model: ModelTag,
    /// Simulated update steps; trajectories have `steps + 1` rows.
    pub steps: usize,
    /// Which dimensions are observed and with how much measurement noise.
    /// `ModelClass` tasks must declare `observed_dims = [1]` (infected, in
    /// SIR numbering); generation observes the infected compartment of
    /// whichever family produced each example.
    pub obs: ObservationSpec,
    /// LDS process-noise standard deviation (unused by SIR/SEIR).
    pub process_sigma: f64,
    /// Initial state; `None` means the model family's standard seeding.
    pub init: Option<Vec<f64>>,
    /// Prior over θ. For `ModelClass` this is the SEIR prior
    /// (beta, gamma, sigma_e); SIR examples use the first two dimensions.
    pub prior: PriorSpec,
    /// Labeling rule.
    pub target: TargetSpec,
    /// Optional LDS dynamics mismatch (test-time distribution shift).
    pub mismatch: Option<MismatchSpec>,
}

impl TaskSpec {
    /// Validate cross-field constraints.
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Validation("steps must be ≥ 1".into()));
        }
        if let TargetSpec::Forecast { input_len, horizon } = self.target {
            if input_len < 1 || horizon < 1 {
                return Err(Error::Validation(
                    "forecast input_len and horizon must be ≥ 1".into(),
                ));
            }
            if input_len + horizon > self.steps {
                return Err(Error::Validation(format!(
                    "forecast window {} + {} exceeds steps {}",
                    input_len, horizon, self.steps
                )));
            }
        }
        if let Some(m) = &self.mismatch {
            if !(m.delta >= 0.0) || !m.delta.is_finite() {
                return Err(Error::Validation(format!(
                    "mismatch delta must be finite and ≥ 0, got {}",
                    m.delta
                )));
            }
            if self.model != ModelTag::Lds || self.target == TargetSpec::ModelClass {
                return Err(Error::Validation(
                    "mismatch perturbation applies only to LDS tasks".into(),
                ));
            }
        }
        if self.target == TargetSpec::ModelClass {
            if self.prior.len() != 3 {
                return Err(Error::Validation(
                    "ModelClass tasks need a 3-dim prior (beta, gamma, sigma_e)".into(),
                ));
            }
            if self.obs.observed_dims() != [1] {
                return Err(Error::Validation(
                    "ModelClass tasks observe the infected compartment: declare observed_dims = [1]"
                        .into(),
                ));
            }
        } else {
            let expected: Vec<&str> = self.model.param_names().to_vec();
            let have: Vec<&str> = self.prior.names().iter().map(|s| s.as_str()).collect();
            if have != expected {
                return Err(Error::Validation(format!(
                    "prior names {have:?} do not match {:?} parameters {expected:?}",
                    self.model
                )));
            }
        }
        if !(self.process_sigma >= 0.0) || !self.process_sigma.is_finite() {
            return Err(Error::Validation(format!(
                "process sigma must be finite and ≥ 0, got {}",
                self.process_sigma
            )));
        }
        Ok(())
    }

    /// Flattened input width implied by the spec.
    pub fn input_dim(&self) -> usize {
        let per_row = self.obs.observed_dims().len();
        match self.target {
            TargetSpec::Forecast { input_len, .. } => input_len * per_row,
            _ => self.steps * per_row,
        }
    }

    /// Target width implied by the spec (one-hot width 2 for ModelClass).
    pub fn target_dim(&self) -> usize {
        match self.target {
            TargetSpec::Params => self.prior.len(),
            TargetSpec::Forecast { horizon, .. } => horizon * self.obs.observed_dims().len(),
            TargetSpec::ModelClass => 2,
        }
    }

    /// Stable content digest used in manifests.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

/// How targets are represented in dataset files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    /// Targets stored as plain vectors.
    Vector,
    /// Targets are one-hot class indicators in memory, integer labels in
    /// files.
    ClassLabel,
}

/// Generation metadata carried alongside a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub task_digest: String,
    /// Size at creation time (splits keep the original value).
    pub created_n: usize,
    pub target_kind: TargetKind,
    pub theta_names: Vec<String>,
    pub theta_bounds: Vec<(f64, f64)>,
}

/// An immutable collection of homogeneous supervised examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Array2<f64>,
    targets: Array2<f64>,
    thetas: Array2<f64>,
    tags: Vec<ModelTag>,
    manifest: DatasetManifest,
}

impl Dataset {
    /// Assemble a dataset from raw parts, validating shape agreement and
    /// finiteness.
    pub fn from_parts(
        inputs: Array2<f64>,
        targets: Array2<f64>,
        thetas: Array2<f64>,
        tags: Vec<ModelTag>,
        manifest: DatasetManifest,
    ) -> Result<Dataset> {
        let n = inputs.nrows();
        if n == 0 {
            return Err(Error::Validation("dataset must contain at least one example".into()));
        }
        if targets.nrows() != n || thetas.nrows() != n || tags.len() != n {
            return Err(Error::Shape(format!(
                "row counts disagree: {} inputs, {} targets, {} thetas, {} tags",
                n,
                targets.nrows(),
                thetas.nrows(),
                tags.len()
            )));
        }
        if manifest.theta_names.len() != thetas.ncols()
            || manifest.theta_bounds.len() != thetas.ncols()
        {
            return Err(Error::Shape(format!(
                "manifest declares {} theta names / {} bounds for {} theta columns",
                manifest.theta_names.len(),
                manifest.theta_bounds.len(),
                thetas.ncols()
            )));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("dataset contains non-finite entries".into()));
        }
        Ok(Dataset { inputs, targets, thetas, tags, manifest })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn theta_dim(&self) -> usize {
        self.thetas.ncols()
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &Array2<f64> {
        &self.targets
    }

    pub fn thetas(&self) -> &Array2<f64> {
        &self.thetas
    }

    pub fn tags(&self) -> &[ModelTag] {
        &self.tags
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    /// The i-th parameter vector with names and bounds restored.
    pub fn theta(&self, i: usize) -> Result<ParamVector> {
        ParamVector::new(
            self.manifest.theta_names.clone(),
            self.thetas.row(i).to_vec(),
            self.manifest.theta_bounds.clone(),
        )
    }

    /// New dataset holding the given example indices, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Validation("subset must be nonempty".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Validation(format!(
                "subset index {bad} out of range for {} examples",
                self.len()
            )));
        }
        let take = |src: &Array2<f64>| {
            let mut out = Array2::zeros((indices.len(), src.ncols()));
            for (row, &i) in indices.iter().enumerate() {
                out.row_mut(row).assign(&src.row(i));
            }
            out
        };
        Ok(Dataset {
            inputs: take(&self.inputs),
            targets: take(&self.targets),
            thetas: take(&self.thetas),
            tags: indices.iter().map(|&i| self.tags[i]).collect(),
            manifest: self.manifest.clone(),
        })
    }
}

/// Return `a0 + delta·U` where `U` has unit Frobenius norm, drawn
/// deterministically from `seed`. The same seed always yields the same
/// direction, so sweeping `delta` moves along a fixed ray.
pub fn perturb_lds_matrix(a0: &Array2<f64>, delta: f64, seed: u64) -> Result<Array2<f64>> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::Validation(format!("delta must be finite and ≥ 0, got {delta}")));
    }
    if a0.nrows() != a0.ncols() {
        return Err(Error::Shape(format!("a0 must be square, got {:?}", a0.dim())));
    }
    if delta == 0.0 {
        return Ok(a0.clone());
    }
    let u = perturbation_direction(a0.nrows(), seed);
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("degenerate zero perturbation direction".into()));
    }
    Ok(a0 + &(delta * &u))
}

/// The deterministic direction used by [`perturb_lds_matrix`] for a seed.
pub fn perturbation_direction(dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = RngStream::derived(seed, domains::PERTURB_DIRECTION, 0);
    let mut u = Array2::zeros((dim, dim));
    for v in u.iter_mut() {
        *v = rng.next_gaussian();
    }
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u / norm
}

/// One generated example before assembly into arrays.
struct RawExample {
    input: Vec<f64>,
    /// The input window before observation noise was applied (process noise,
    /// when the model has any, is part of the trajectory and stays in).
    noiseless_input: Vec<f64>,
    target: Vec<f64>,
    theta: Vec<f64>,
    tag: ModelTag,
}

fn generate_one(task: &TaskSpec, i: usize, seed: u64) -> Result<RawExample> {
    let mut rng = RngStream::derived(seed, domains::DATA_SAMPLE, i as u64);
    let tag = match task.target {
        TargetSpec::ModelClass => {
            if i % 2 == 0 {
                ModelTag::Sir
            } else {
                ModelTag::Seir
            }
        }
        _ => task.model,
    };
    let theta = task.prior.sample(&mut rng);
    let init = task.init.clone().unwrap_or_else(|| tag.default_init());

    let traj = match tag {
        ModelTag::Lds => {
            let alpha = theta.get("alpha")?;
            let beta = theta.get("beta")?;
            let mut a = Array2::from_diag(&Array1::from(vec![alpha, beta]));
            if let Some(m) = &task.mismatch {
                a = perturb_lds_matrix(&a, m.delta, m.perturb_seed)?;
            }
            simulate_lds_matrix(&a, task.steps, &init, task.process_sigma, &mut rng)?
        }
        ModelTag::Sir | ModelTag::Seir => {
            simulate_compartmental(tag, &theta, task.steps, &init)?
        }
    };
    // ModelClass examples observe their own family's infected compartment.
    let obs = match task.target {
        TargetSpec::ModelClass => {
            ObservationSpec::new(task.obs.noise_sigma(), vec![tag.infected_index()?])?
        }
        _ => task.obs.clone(),
    };
    let observed = apply_observation(&traj, &obs, &mut rng)?;

    // Observed series = rows 1..=steps; row 0 is the fixed initial state.
    let window = |rows: std::ops::Range<usize>, src: &Array2<f64>| -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * src.ncols());
        for t in rows {
            out.extend(src.row(t).iter().copied());
        }
        out
    };

    // The same window taken from the trajectory itself, skipping the
    // observation-noise step.
    let clean_window = |rows: std::ops::Range<usize>| -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * obs.observed_dims().len());
        for t in rows {
            for &dim in obs.observed_dims() {
                out.push(traj.states[[t, dim]]);
            }
        }
        out
    };

    let (input, noiseless_input, target) = match task.target {
        TargetSpec::Params => (
            window(1..task.steps + 1, &observed),
            clean_window(1..task.steps + 1),
            theta.values().to_vec(),
        ),
        TargetSpec::Forecast { input_len, horizon } => {
            // Targets come from the noiseless trajectory, restricted to the
            // observed dimensions.
            let mut tgt = Vec::with_capacity(horizon * task.obs.observed_dims().len());
            for t in input_len + 1..input_len + horizon + 1 {
                for &dim in task.obs.observed_dims() {
                    tgt.push(traj.states[[t, dim]]);
                }
            }
            (
                window(1..input_len + 1, &observed),
                clean_window(1..input_len + 1),
                tgt,
            )
        }
        TargetSpec::ModelClass => {
            let one_hot = match tag {
                ModelTag::Sir => vec![1.0, 0.0],
                ModelTag::Seir => vec![0.0, 1.0],
                ModelTag::Lds => unreachable!("validated"),
            };
            (
                window(1..task.steps + 1, &observed),
                clean_window(1..task.steps + 1),
                one_hot,
            )
        }
    };

    Ok(RawExample { input, noiseless_input, target, theta: theta.values().to_vec(), tag })
}

/// Generate `n` examples of `task` under `seed`. Parallel over examples;
/// the result is identical to sequential generation.
pub fn generate_dataset(task: &TaskSpec, n: usize, seed: u64) -> Result<Dataset> {
    task.validate()?;
    if n == 0 {
        return Err(Error::Validation("n must be ≥ 1".into()));
    }
    let raw: Vec<RawExample> = (0..n)
        .into_par_iter()
        .map(|i| generate_one(task, i, seed))
        .collect::<Result<_>>()?;

    let input_dim = task.input_dim();
    let target_dim = task.target_dim();
    let theta_dim = task.prior.len();
    let mut inputs = Array2::zeros((n, input_dim));
    let mut targets = Array2::zeros((n, target_dim));
    let mut thetas = Array2::zeros((n, theta_dim));
    let mut tags = Vec::with_capacity(n);
    for (i, ex) in raw.into_iter().enumerate() {
        if ex.input.len() != input_dim || ex.target.len() != target_dim {
            return Err(Error::Shape(format!(
                "example {i}: got {}×{} example for {input_dim}×{target_dim} task",
                ex.input.len(),
                ex.target.len()
            )));
        }
        inputs.row_mut(i).assign(&Array1::from(ex.input));
        targets.row_mut(i).assign(&Array1::from(ex.target));
        thetas.row_mut(i).assign(&Array1::from(ex.theta));
        tags.push(ex.tag);
    }

    let manifest = DatasetManifest {
        seed,
        task_digest: task.digest()?,
        created_n: n,
        target_kind: match task.target {
            TargetSpec::ModelClass => TargetKind::ClassLabel,
            _ => TargetKind::Vector,
        },
        theta_names: task.prior.names().to_vec(),
        theta_bounds: task.prior.bounds().to_vec(),
    };
    Dataset::from_parts(inputs, targets, thetas, tags, manifest)
}

/// Generate a reference library of `m` atoms: θ, the noisy input window,
/// and the same window without observation noise. Atoms follow exactly the
/// same per-index stream discipline as [`generate_dataset`], so a library
/// and a dataset built from *different* seeds are independent.
pub fn generate_library(task: &TaskSpec, m: usize, seed: u64) -> Result<ReferenceLibrary> {
    task.validate()?;
    if m == 0 {
        return Err(Error::Validation("library size must be ≥ 1".into()));
    }
    if matches!(task.target, TargetSpec::ModelClass) {
        return Err(Error::Validation(
            "reference libraries require a fixed model family, not a classification task".into(),
        ));
    }
    let raw: Vec<RawExample> = (0..m)
        .into_par_iter()
        .map(|i| generate_one(task, i, seed))
        .collect::<Result<_>>()?;

    let input_dim = task.input_dim();
    let theta_dim = task.prior.len();
    let mut thetas = Array2::zeros((m, theta_dim));
    let mut inputs = Array2::zeros((m, input_dim));
    let mut noiseless = Array2::zeros((m, input_dim));
    for (i, ex) in raw.into_iter().enumerate() {
        inputs.row_mut(i).assign(&Array1::from(ex.input));
        noiseless.row_mut(i).assign(&Array1::from(ex.noiseless_input));
        thetas.row_mut(i).assign(&Array1::from(ex.theta));
    }
    ReferenceLibrary::new(
        thetas,
        inputs,
        noiseless,
        task.prior.names().to_vec(),
        task.prior.bounds().to_vec(),
    )
}

/// Deterministically shuffle and split into train/test parts.
pub fn split_dataset(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Validation(format!(
            "fraction {train_fraction} leaves an empty part for n = {n}"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    RngStream::derived(seed, domains::DATA_SPLIT, 0).shuffle(&mut indices);
    let train = ds.subset(&indices[..n_train])?;
    let test = ds.subset(&indices[n_train..])?;
    Ok((train, test))
}
