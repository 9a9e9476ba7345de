//! Convergence of a trained predictor toward the kernel Bayes oracle.
//!
//! The experiment trains parameter-regression networks on nested synthetic
//! datasets of increasing size for the diagonal linear dynamical system
//! (θ = (α, β) drawn from U([0.5, 1.5]²), ten steps from x₀ = [1, 1],
//! trajectories flattened to R²⁰) and measures, on a held-out test set,
//!
//! * `mse_to_oracle` — MSE between network predictions and the kernel
//!   Monte Carlo approximation of the posterior mean built from a fixed
//!   reference library;
//! * `mse_to_theta` — MSE between network predictions and the true
//!   generating parameters;
//! * `kernel_baseline_mse` — MSE between the kernel oracle itself and the
//!   true parameters (independent of training size).
//!
//! Datasets are nested by construction: every example is generated from a
//! counter keyed by its index, so the 10³-example set is literally the
//! first 10³ rows of the 10⁵-example set. This removes dataset lottery
//! noise from the size axis.

use ndarray::Array2;

use crate::artifact::{csv_document, fmt_f64};
use crate::bounds::Predictor;
use crate::datagen::{generate_dataset, generate_library, Dataset, TargetSpec, TaskSpec};
use crate::error::{Error, Result};
use crate::nnet::{
    train, Activation, LossSpec, Network, NetworkSpec, Optimizer, OutputHead, TrainConfig,
};
use crate::oracle::{kernel_bayes_estimate, median_sq_bandwidth, ReferenceLibrary};
use crate::params::PriorSpec;
use crate::rng::{domains, RngStream};
use crate::sim::{ModelTag, ObservationSpec};

/// The parameter-recovery task: observe a ten-step diagonal-LDS
/// trajectory, predict the diagonal (α, β).
pub fn lds_theta_task(process_sigma: f64) -> TaskSpec {
    TaskSpec {
        model: ModelTag::Lds,
        steps: 10,
        obs: ObservationSpec::new(0.0, vec![0, 1]).expect("static observation spec"),
        process_sigma,
        init: None,
        prior: PriorSpec::new(vec![
            ("alpha".into(), 0.5, 1.5),
            ("beta".into(), 0.5, 1.5),
        ])
        .expect("static prior"),
        target: TargetSpec::Params,
        mismatch: None,
    }
}

/// Configuration of the oracle-convergence experiment.
#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    /// Training set sizes, ascending; datasets are nested across sizes.
    pub train_sizes: Vec<usize>,
    /// Number of reference atoms behind the kernel oracle.
    pub library_size: usize,
    pub test_size: usize,
    pub seeds: Vec<u64>,
    /// Process noise σ of the linear system.
    pub process_sigma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            train_sizes: vec![1_000, 10_000, 100_000],
            library_size: 10_000,
            test_size: 2_000,
            seeds: vec![0, 1, 2],
            process_sigma: 0.1,
            epochs: 3,
            batch_size: 128,
            learning_rate: 1e-3,
            hidden: vec![128, 128],
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_sizes.is_empty() {
            return Err(Error::Validation("need at least one training size".into()));
        }
        if self.train_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Validation("training sizes must be ≥ 1".into()));
        }
        if self.train_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation(
                "training sizes must be strictly ascending".into(),
            ));
        }
        if self.library_size < 2 {
            return Err(Error::Validation(
                "kernel library needs ≥ 2 atoms for a bandwidth".into(),
            ));
        }
        if self.test_size == 0 {
            return Err(Error::Validation("test size must be ≥ 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Validation("need at least one seed".into()));
        }
        if !(self.process_sigma >= 0.0) {
            return Err(Error::Validation(format!(
                "process sigma must be ≥ 0, got {}",
                self.process_sigma
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch size must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One (seed, training size) measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub seed: u64,
    pub n: usize,
    pub mse_to_oracle: f64,
    pub mse_to_theta: f64,
    /// Kernel oracle's own parameter error; constant across n within a seed.
    pub kernel_baseline_mse: f64,
}

/// Seed-median aggregate for one training size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceAggregate {
    pub n: usize,
    pub mse_to_oracle: f64,
    pub mse_to_theta: f64,
    pub kernel_baseline_mse: f64,
}

/// Full experiment result.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceOutcome {
    /// One row per (seed, n), seeds outer, sizes inner.
    pub rows: Vec<ConvergenceRow>,
    /// One row per n, medians across seeds.
    pub aggregates: Vec<ConvergenceAggregate>,
    /// Test queries that underflowed every kernel weight and fell back to
    /// the nearest atom, summed over seeds.
    pub kernel_fallbacks: usize,
}

/// Mean squared difference over all entries of two equal-shaped matrices.
fn matrix_mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let diff = a - b;
    diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64
}

fn median(mut vals: Vec<f64>) -> f64 {
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

/// Kernel oracle predictions for every row of `inputs`.
fn kernel_predictions(
    inputs: &Array2<f64>,
    lib: &ReferenceLibrary,
    sigma_sq: f64,
) -> Result<(Array2<f64>, usize)> {
    let mut preds = Array2::zeros((inputs.nrows(), lib.thetas().ncols()));
    let mut fallbacks = 0;
    for (r, query) in inputs.outer_iter().enumerate() {
        let est = kernel_bayes_estimate(query, lib, sigma_sq)?;
        if est.fallback {
            fallbacks += 1;
        }
        for (c, &v) in est.theta.values().iter().enumerate() {
            preds[[r, c]] = v;
        }
    }
    Ok((preds, fallbacks))
}

/// Train one network per (seed, n) on nested datasets and compare its test
/// predictions against the kernel oracle and the generating parameters.
pub fn run_convergence_experiment(cfg: &ConvergenceConfig) -> Result<ConvergenceOutcome> {
    cfg.validate()?;
    let task = lds_theta_task(cfg.process_sigma);

    let mut rows = Vec::with_capacity(cfg.seeds.len() * cfg.train_sizes.len());
    let mut kernel_fallbacks = 0;
    for &seed in &cfg.seeds {
        let lib_seed = RngStream::derived(seed, domains::EXP_LIBRARY, 0).next_u64();
        let test_seed = RngStream::derived(seed, domains::EXP_TEST, 0).next_u64();
        let train_seed = RngStream::derived(seed, domains::EXP_TRAIN, 0).next_u64();

        let library = generate_library(&task, cfg.library_size, lib_seed)?;
        let sigma_sq = median_sq_bandwidth(library.inputs().view())?;
        let test: Dataset = generate_dataset(&task, cfg.test_size, test_seed)?;

        let (oracle_preds, fallbacks) =
            kernel_predictions(test.inputs(), &library, sigma_sq)?;
        kernel_fallbacks += fallbacks;
        let kernel_baseline_mse = matrix_mse(&oracle_preds, test.targets());

        for &n in &cfg.train_sizes {
            let train_ds = generate_dataset(&task, n, train_seed)?;
            let mut widths = Vec::with_capacity(cfg.hidden.len() + 2);
            widths.push(train_ds.input_dim());
            widths.extend_from_slice(&cfg.hidden);
            widths.push(train_ds.target_dim());
            let spec = NetworkSpec::new(widths, Activation::Gelu, OutputHead::Linear)?;
            let train_cfg = TrainConfig::new(
                Optimizer::adam(cfg.learning_rate),
                cfg.epochs,
                cfg.batch_size,
                seed,
            );
            let (net, _) = train(Network::init(spec, seed), &train_ds, &train_cfg, LossSpec::Mse)?;

            let net_preds = net.predict_batch(test.inputs().view())?;
            rows.push(ConvergenceRow {
                seed,
                n,
                mse_to_oracle: matrix_mse(&net_preds, &oracle_preds),
                mse_to_theta: matrix_mse(&net_preds, test.targets()),
                kernel_baseline_mse,
            });
        }
    }

    let aggregates = cfg
        .train_sizes
        .iter()
        .map(|&n| {
            let at: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.n == n).collect();
            ConvergenceAggregate {
                n,
                mse_to_oracle: median(at.iter().map(|r| r.mse_to_oracle).collect()),
                mse_to_theta: median(at.iter().map(|r| r.mse_to_theta).collect()),
                kernel_baseline_mse: median(
                    at.iter().map(|r| r.kernel_baseline_mse).collect(),
                ),
            }
        })
        .collect();

    Ok(ConvergenceOutcome { rows, aggregates, kernel_fallbacks })
}

/// CSV of the per-(seed, n) rows.
pub fn convergence_rows_csv(rows: &[ConvergenceRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.n.to_string(),
                fmt_f64(r.mse_to_oracle),
                fmt_f64(r.mse_to_theta),
                fmt_f64(r.kernel_baseline_mse),
            ]
        })
        .collect();
    csv_document(
        &["seed", "n", "mse_to_oracle", "mse_to_theta", "kernel_baseline_mse"],
        &body,
    )
}

/// CSV of the seed-median aggregates.
pub fn convergence_aggregate_csv(aggregates: &[ConvergenceAggregate]) -> String {
    let body: Vec<Vec<String>> = aggregates
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                fmt_f64(r.mse_to_oracle),
                fmt_f64(r.mse_to_theta),
                fmt_f64(r.kernel_baseline_mse),
            ]
        })
        .collect();
    csv_document(&["n", "mse_to_oracle", "mse_to_theta", "kernel_baseline_mse"], &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ConvergenceConfig {
        ConvergenceConfig {
            train_sizes: vec![30, 60],
            library_size: 50,
            test_size: 12,
            seeds: vec![0, 1],
            epochs: 2,
            batch_size: 16,
            hidden: vec![8],
            ..ConvergenceConfig::default()
        }
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let mut cfg = tiny_config();
        cfg.train_sizes = vec![60, 30];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.train_sizes = vec![30, 30];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.library_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn training_sets_are_nested_across_sizes() {
        let task = lds_theta_task(0.1);
        let small = generate_dataset(&task, 25, 7).unwrap();
        let large = generate_dataset(&task, 50, 7).unwrap();
        for i in 0..25 {
            assert_eq!(
                small.inputs().row(i).to_vec(),
                large.inputs().row(i).to_vec(),
                "example {i} differs between nested sets"
            );
            assert_eq!(small.targets().row(i).to_vec(), large.targets().row(i).to_vec());
        }
    }

    #[test]
    fn smoke_run_produces_consistent_rows() {
        let cfg = tiny_config();
        let out = run_convergence_experiment(&cfg).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert_eq!(out.aggregates.len(), 2);
        for row in &out.rows {
            assert!(row.mse_to_oracle.is_finite() && row.mse_to_oracle >= 0.0);
            assert!(row.mse_to_theta.is_finite() && row.mse_to_theta >= 0.0);
            assert!(row.kernel_baseline_mse.is_finite() && row.kernel_baseline_mse > 0.0);
        }
        // The kernel baseline does not depend on the training size.
        for seed in [0u64, 1] {
            let per_seed: Vec<f64> = out
                .rows
                .iter()
                .filter(|r| r.seed == seed)
                .map(|r| r.kernel_baseline_mse)
                .collect();
            assert_eq!(per_seed.len(), 2);
            assert_eq!(per_seed[0].to_bits(), per_seed[1].to_bits());
        }
        let csv = convergence_rows_csv(&out.rows);
        assert!(csv.starts_with("seed,n,mse_to_oracle,mse_to_theta,kernel_baseline_mse\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn kernel_column_matches_a_direct_oracle_call() {
        let cfg = tiny_config();
        let task = lds_theta_task(cfg.process_sigma);
        let seed = cfg.seeds[0];
        let lib_seed = RngStream::derived(seed, domains::EXP_LIBRARY, 0).next_u64();
        let test_seed = RngStream::derived(seed, domains::EXP_TEST, 0).next_u64();
        let library = generate_library(&task, cfg.library_size, lib_seed).unwrap();
        let sigma_sq = median_sq_bandwidth(library.inputs().view()).unwrap();
        let test = generate_dataset(&task, cfg.test_size, test_seed).unwrap();
        let (preds, _) = kernel_predictions(test.inputs(), &library, sigma_sq).unwrap();
        let direct =
            kernel_bayes_estimate(test.inputs().row(3), &library, sigma_sq).unwrap();
        for (c, &v) in direct.theta.values().iter().enumerate() {
            assert_eq!(preds[[3, c]].to_bits(), v.to_bits());
        }
        let expected = matrix_mse(&preds, test.targets());
        let out = run_convergence_experiment(&cfg).unwrap();
        assert_eq!(out.rows[0].kernel_baseline_mse.to_bits(), expected.to_bits());
    }

    #[test]
    fn experiment_is_deterministic() {
        let cfg = tiny_config();
        let a = run_convergence_experiment(&cfg).unwrap();
        let b = run_convergence_experiment(&cfg).unwrap();
        assert_eq!(convergence_rows_csv(&a.rows), convergence_rows_csv(&b.rows));
        assert_eq!(a.kernel_fallbacks, b.kernel_fallbacks);
    }
}
