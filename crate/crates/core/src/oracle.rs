//! Nonparametric stand-ins for the Bayes-optimal predictor.
//!
//! A [`ReferenceLibrary`] holds M simulator runs `(θ_i, x_i)` plus each
//! run's noiseless observation window. Two weightings over its atoms are
//! provided:
//!
//! * [`kernel_bayes_estimate`] — Nadaraya–Watson weighting of the θ_i by
//!   input-space RBF similarity, the kernel Monte Carlo approximation of
//!   E[θ | x] that the trained networks are compared against;
//! * [`discrete_posterior`] — likelihood weighting by the Gaussian
//!   observation model against the atoms' *noiseless* windows, which
//!   realizes the posterior-over-atoms target that attribution weights are
//!   trained to match (the priors here are uniform, so likelihoods are all
//!   that matters).
//!
//! All weight computation happens in log space with max-subtraction; only
//! when every exponent underflows anyway does the computation fall back to
//! a point mass on the nearest atom, and the result says so.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::{domains, RngStream};

/// Pairs the bandwidth heuristic samples at most this many distances.
const MAX_BANDWIDTH_PAIRS: usize = 1_000_000;

/// Fixed internal stream seed for pair subsampling, so the heuristic is a
/// pure function of its input set.
const BANDWIDTH_SEED: u64 = 0x0BAD_5EED;

/// Probability floor shared by every KL computation in the crate.
pub const KL_EPS: f64 = 1e-12;

/// M reference simulator runs with everything attribution needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLibrary {
    /// θ_i, one row per atom.
    thetas: Array2<f64>,
    /// Observed (noisy) input windows x_i, one row per atom.
    inputs: Array2<f64>,
    /// The same windows without observation noise, for likelihood targets.
    noiseless: Array2<f64>,
    theta_names: Vec<String>,
    theta_bounds: Vec<(f64, f64)>,
    /// Snapshot of network embeddings φ(x_i), filled in after training.
    embeddings: Option<Array2<f64>>,
}

impl ReferenceLibrary {
    /// Assemble a library; all row counts must agree and M ≥ 1.
    pub fn new(
        thetas: Array2<f64>,
        inputs: Array2<f64>,
        noiseless: Array2<f64>,
        theta_names: Vec<String>,
        theta_bounds: Vec<(f64, f64)>,
    ) -> Result<ReferenceLibrary> {
        let m = thetas.nrows();
        if m == 0 {
            return Err(Error::Validation("reference library needs at least one atom".into()));
        }
        if inputs.nrows() != m || noiseless.nrows() != m {
            return Err(Error::Shape(format!(
                "library rows disagree: {m} thetas, {} inputs, {} noiseless",
                inputs.nrows(),
                noiseless.nrows()
            )));
        }
        if inputs.ncols() != noiseless.ncols() {
            return Err(Error::Shape(format!(
                "input width {} vs noiseless width {}",
                inputs.ncols(),
                noiseless.ncols()
            )));
        }
        if theta_names.len() != thetas.ncols() || theta_bounds.len() != thetas.ncols() {
            return Err(Error::Shape(format!(
                "{} names / {} bounds for {} theta columns",
                theta_names.len(),
                theta_bounds.len(),
                thetas.ncols()
            )));
        }
        Ok(ReferenceLibrary {
            thetas,
            inputs,
            noiseless,
            theta_names,
            theta_bounds,
            embeddings: None,
        })
    }

    /// Attach per-atom embeddings (row count must match the atom count).
    pub fn set_embeddings(&mut self, embeddings: Array2<f64>) -> Result<()> {
        if embeddings.nrows() != self.len() {
            return Err(Error::Shape(format!(
                "{} embedding rows for {} atoms",
                embeddings.nrows(),
                self.len()
            )));
        }
        self.embeddings = Some(embeddings);
        Ok(())
    }

    pub fn embeddings(&self) -> Option<&Array2<f64>> {
        self.embeddings.as_ref()
    }

    pub fn len(&self) -> usize {
        self.thetas.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.nrows() == 0
    }

    pub fn thetas(&self) -> &Array2<f64> {
        &self.thetas
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn noiseless(&self) -> &Array2<f64> {
        &self.noiseless
    }

    pub fn theta_names(&self) -> &[String] {
        &self.theta_names
    }

    pub fn theta_bounds(&self) -> &[(f64, f64)] {
        &self.theta_bounds
    }

    /// θ of one atom as a named vector.
    pub fn theta(&self, i: usize) -> Result<ParamVector> {
        ParamVector::new(
            self.theta_names.clone(),
            self.thetas.row(i).to_vec(),
            self.theta_bounds.clone(),
        )
    }
}

/// A probability distribution over a subset of library atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionDistribution {
    /// Atom indices into the originating library.
    pub indices: Vec<usize>,
    /// Matching normalized weights.
    pub weights: Vec<f64>,
    /// True when every kernel value underflowed and the distribution is a
    /// point mass on the nearest atom.
    pub fallback: bool,
}

impl AttributionDistribution {
    /// Check the probability-vector invariant (weights ≥ 0, sum 1).
    pub fn validate(&self) -> Result<()> {
        if self.indices.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "{} indices vs {} weights",
                self.indices.len(),
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Validation("attribution weights must be ≥ 0".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Squared Euclidean distance between two equal-length rows.
fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Normalized weights `w_i ∝ exp(−‖query − refs_i‖² / denom)` computed in
/// log space. Returns the weights and whether the nearest-atom fallback
/// fired (all exponentials underflowed after max-subtraction — possible
/// only through non-finite inputs, but handled for robustness).
pub(crate) fn softmax_neg_sq_dist(
    query: ArrayView1<f64>,
    refs: ArrayView2<f64>,
    denom: f64,
) -> (Vec<f64>, bool) {
    let m = refs.nrows();
    let mut logits = Vec::with_capacity(m);
    for i in 0..m {
        logits.push(-sq_dist(query, refs.row(i)) / denom);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut weights = Vec::with_capacity(m);
    for &l in &logits {
        let w = (l - max).exp();
        weights.push(w);
        sum += w;
    }
    if !(sum > 0.0) || !sum.is_finite() {
        // Point mass on the nearest atom (largest logit).
        let best = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let mut w = vec![0.0; m];
        w[best] = 1.0;
        return (w, true);
    }
    for w in &mut weights {
        *w /= sum;
    }
    (weights, false)
}

/// Median of squared pairwise distances, excluding zero-distance pairs.
///
/// Exact over all pairs when there are at most 10^6 of them; otherwise a
/// fixed-seed uniform subsample of 10^6 pairs. Errors when every pair is at
/// distance zero.
pub fn median_sq_bandwidth(inputs: ArrayView2<f64>) -> Result<f64> {
    let n = inputs.nrows();
    if n < 2 {
        return Err(Error::Validation(format!(
            "bandwidth heuristic needs ≥ 2 vectors, got {n}"
        )));
    }
    let total_pairs = n * (n - 1) / 2;
    let mut dists = Vec::with_capacity(total_pairs.min(MAX_BANDWIDTH_PAIRS));
    if total_pairs <= MAX_BANDWIDTH_PAIRS {
        for i in 0..n {
            for j in i + 1..n {
                let d = sq_dist(inputs.row(i), inputs.row(j));
                if d > 0.0 {
                    dists.push(d);
                }
            }
        }
    } else {
        let mut rng = RngStream::derived(BANDWIDTH_SEED, domains::BANDWIDTH_PAIRS, n as u64);
        while dists.len() < MAX_BANDWIDTH_PAIRS {
            let i = rng.next_index(n);
            let j = rng.next_index(n);
            if i == j {
                continue;
            }
            let d = sq_dist(inputs.row(i), inputs.row(j));
            if d > 0.0 {
                dists.push(d);
            }
            // All-identical inputs would loop forever; bail after enough
            // tries produce nothing.
            if dists.is_empty() && rng.next_f64() < 1e-6 {
                return Err(Error::DegenerateBandwidth);
            }
        }
    }
    if dists.is_empty() {
        return Err(Error::DegenerateBandwidth);
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    Ok(median)
}

/// A kernel Monte Carlo estimate of E[θ | x].
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub theta: ParamVector,
    /// True when the nearest-atom fallback fired.
    pub fallback: bool,
}

/// Nadaraya–Watson estimate: weights ∝ exp(−‖x − x_i‖²/(2σ²)) over the
/// library inputs, applied to the atom θ values.
pub fn kernel_bayes_estimate(
    query: ArrayView1<f64>,
    lib: &ReferenceLibrary,
    sigma_sq: f64,
) -> Result<KernelEstimate> {
    if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
        return Err(Error::Validation(format!(
            "bandwidth sigma_sq must be finite and > 0, got {sigma_sq}"
        )));
    }
    if query.len() != lib.inputs.ncols() {
        return Err(Error::Shape(format!(
            "query width {} vs library input width {}",
            query.len(),
            lib.inputs.ncols()
        )));
    }
    let (weights, fallback) = softmax_neg_sq_dist(query, lib.inputs.view(), 2.0 * sigma_sq);
    let mut theta = Array1::zeros(lib.thetas.ncols());
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            theta = theta + w * &lib.thetas.row(i);
        }
    }
    Ok(KernelEstimate {
        theta: ParamVector::new(
            lib.theta_names.clone(),
            theta.to_vec(),
            lib.theta_bounds.clone(),
        )?,
        fallback,
    })
}

/// Likelihood-weighted posterior over library atoms for a Gaussian
/// observation model: weight_i ∝ exp(−‖query − noiseless_i‖²/(2σ_obs²)).
/// Priors are uniform, so no prior factor appears.
pub fn discrete_posterior(
    query: ArrayView1<f64>,
    lib: &ReferenceLibrary,
    obs_sigma: f64,
) -> Result<AttributionDistribution> {
    if !(obs_sigma > 0.0) || !obs_sigma.is_finite() {
        return Err(Error::Validation(format!(
            "obs_sigma must be finite and > 0, got {obs_sigma}"
        )));
    }
    if query.len() != lib.noiseless.ncols() {
        return Err(Error::Shape(format!(
            "query width {} vs library window width {}",
            query.len(),
            lib.noiseless.ncols()
        )));
    }
    let (weights, fallback) =
        softmax_neg_sq_dist(query, lib.noiseless.view(), 2.0 * obs_sigma * obs_sigma);
    Ok(AttributionDistribution {
        indices: (0..lib.len()).collect(),
        weights,
        fallback,
    })
}

/// As [`discrete_posterior`] but restricted to a subset of atoms (used by
/// the per-batch alignment hook).
pub fn discrete_posterior_subset(
    query: ArrayView1<f64>,
    lib: &ReferenceLibrary,
    atom_indices: &[usize],
    obs_sigma: f64,
) -> Result<AttributionDistribution> {
    if atom_indices.is_empty() {
        return Err(Error::Validation("atom subset must be nonempty".into()));
    }
    let mut refs = Array2::zeros((atom_indices.len(), lib.noiseless.ncols()));
    for (row, &i) in atom_indices.iter().enumerate() {
        if i >= lib.len() {
            return Err(Error::Validation(format!("atom index {i} out of range")));
        }
        refs.row_mut(row).assign(&lib.noiseless.row(i));
    }
    if !(obs_sigma > 0.0) || !obs_sigma.is_finite() {
        return Err(Error::Validation(format!(
            "obs_sigma must be finite and > 0, got {obs_sigma}"
        )));
    }
    let (weights, fallback) =
        softmax_neg_sq_dist(query, refs.view(), 2.0 * obs_sigma * obs_sigma);
    Ok(AttributionDistribution { indices: atom_indices.to_vec(), weights, fallback })
}

/// KL(target ‖ attr) with the attr side floored at [`KL_EPS`]: returns the
/// divergence and how many terms hit the floor. Terms with `target_i = 0`
/// contribute nothing.
pub fn kl_divergence_floored(target: &[f64], attr: &[f64]) -> (f64, usize) {
    debug_assert_eq!(target.len(), attr.len());
    let mut kl = 0.0;
    let mut floored = 0;
    for (&t, &w) in target.iter().zip(attr.iter()) {
        if t <= 0.0 {
            continue;
        }
        let w_safe = if w > KL_EPS {
            w
        } else {
            floored += 1;
            KL_EPS
        };
        kl += t * (t / w_safe).ln();
    }
    (kl.max(0.0), floored)
}
