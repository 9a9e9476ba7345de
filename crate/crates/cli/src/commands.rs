//! Subcommand implementations.
//!
//! `run` (and its single-experiment aliases) executes one experiment from a
//! config file into an output directory: the config is copied in, the
//! driver's CSVs are written, and a manifest with checksums and per-stage
//! seeds is written atomically last. `gen`, `train`, and `eval` are the
//! dataset utilities. All progress goes to standard error; data only ever
//! goes to files.

use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};
use sgnn_core::artifact::atomic_write;
use sgnn_core::attribution::run_attribution_experiment;
use sgnn_core::bounds::{
    estimate_risk, mismatch_sweep, sweep_aggregate_csv, sweep_rows_csv, Predictor,
};
use sgnn_core::convergence::{
    convergence_aggregate_csv, convergence_rows_csv, run_convergence_experiment,
};
use sgnn_core::datagen::{
    export_csv, generate_dataset, load_dataset, save_dataset, Dataset, TargetKind,
};
use sgnn_core::modelselect::{
    run_selection_with_config, selection_audit_csv, selection_epoch_csv,
};
use sgnn_core::nnet::{
    train_observed, LossSpec, Network, NetworkSpec, Optimizer, OutputHead, TrainConfig,
};
use sgnn_core::rng::{domains, RngStream};

use crate::config::{
    self, parse_config, resolve_experiment, resolve_gen, resolve_train, ExperimentKnobs,
    ExperimentPlan, ExperimentTag,
};
use crate::error::{CliError, Result};
use crate::manifest::RunManifest;

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn read_config_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))
}

/// Write one artifact into the run directory and return its checksum.
fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<String> {
    atomic_write(&dir.join(name), contents.as_bytes())?;
    Ok(sha256_hex(contents.as_bytes()))
}

fn derived_seed(seed: u64, domain: u64) -> u64 {
    RngStream::derived(seed, domain, 0).next_u64()
}

// ---------------------------------------------------------------------------
// Experiment runs.
// ---------------------------------------------------------------------------

/// Execute one experiment end to end. `implied` is the tag fixed by the
/// `attribute`/`sweep`/`select` aliases; `run` passes `None` and requires
/// `experiment.tag` in the config.
pub fn cmd_run(config_path: &Path, implied: Option<ExperimentTag>) -> Result<()> {
    let config_bytes = read_config_file(config_path)?;
    let text = String::from_utf8(config_bytes.clone())
        .map_err(|_| CliError::Config(format!("config {} is not UTF-8", config_path.display())))?;
    let raw = parse_config(&text)?;
    let plan = resolve_experiment(&raw, implied, config::env_seed()?)?;

    std::fs::create_dir_all(&plan.out_dir).map_err(|e| {
        CliError::Runtime(format!("cannot create {}: {e}", plan.out_dir.display()))
    })?;

    eprintln!("running {} (seed {}) into {}", plan.tag.as_str(), plan.seed, plan.out_dir.display());
    let started = Instant::now();

    let mut manifest =
        RunManifest::new(plan.tag.as_str(), sha256_hex(&config_bytes), plan.seed);
    // The config that produced the run travels with it.
    atomic_write(&plan.out_dir.join("config.toml"), &config_bytes)?;
    manifest.artifacts.insert("config.toml".into(), sha256_hex(&config_bytes));

    run_experiment(&plan, &mut manifest)?;

    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    manifest.save(&plan.out_dir)?;
    eprintln!(
        "done in {:.1}s; {} artifacts listed in {}",
        manifest.wall_clock_seconds,
        manifest.artifacts.len(),
        plan.out_dir.join("manifest.json").display()
    );
    Ok(())
}

/// Dispatch to the driver, write its CSVs, and record stage seeds.
fn run_experiment(plan: &ExperimentPlan, manifest: &mut RunManifest) -> Result<()> {
    let dir = &plan.out_dir;
    let seeds = &mut manifest.stage_seeds;
    match &plan.knobs {
        ExperimentKnobs::Convergence(cfg) => {
            seeds.insert("experiment".into(), cfg.seeds.clone());
            for (stage, domain) in [
                ("library", domains::EXP_LIBRARY),
                ("test", domains::EXP_TEST),
                ("train", domains::EXP_TRAIN),
            ] {
                let derived = cfg.seeds.iter().map(|&s| derived_seed(s, domain)).collect();
                seeds.insert(stage.into(), derived);
            }
            let out = run_convergence_experiment(cfg)?;
            for (name, csv) in [
                ("convergence_rows.csv", convergence_rows_csv(&out.rows)),
                ("convergence_aggregate.csv", convergence_aggregate_csv(&out.aggregates)),
            ] {
                let sha = write_artifact(dir, name, &csv)?;
                manifest.artifacts.insert(name.into(), sha);
            }
            if let Some(last) = out.aggregates.last() {
                eprintln!(
                    "largest n={}: mse_to_oracle {:.4e}, mse_to_theta {:.4e}, kernel {:.4e}",
                    last.n, last.mse_to_oracle, last.mse_to_theta, last.kernel_baseline_mse
                );
            }
        }
        ExperimentKnobs::Sweep(cfg) => {
            // The sweep feeds each experiment seed straight into its
            // train/test samplers; there are no separately derived seeds.
            seeds.insert("experiment".into(), cfg.seeds.clone());
            let out = mismatch_sweep(cfg)?;
            for (name, csv) in [
                ("sweep_rows.csv", sweep_rows_csv(&out.rows)),
                ("sweep_aggregate.csv", sweep_aggregate_csv(&out.aggregates)),
            ] {
                let sha = write_artifact(dir, name, &csv)?;
                manifest.artifacts.insert(name.into(), sha);
            }
            if let (Some(first), Some(last)) = (out.aggregates.first(), out.aggregates.last()) {
                eprintln!(
                    "delta {:.2} → {:.2}: real loss {:.4} → {:.4}",
                    first.delta, last.delta, first.real_loss, last.real_loss
                );
            }
        }
        ExperimentKnobs::Attribution(cfg) => {
            seeds.insert("experiment".into(), vec![cfg.seed]);
            seeds.insert("library".into(), vec![derived_seed(cfg.seed, domains::EXP_LIBRARY)]);
            seeds.insert("train".into(), vec![derived_seed(cfg.seed, domains::EXP_TRAIN)]);
            seeds.insert("query".into(), vec![derived_seed(cfg.seed, domains::EXP_QUERY)]);
            let report = run_attribution_experiment(cfg)?;
            let sha = write_artifact(dir, "attribution_epochs.csv", &report.epoch_csv())?;
            manifest.artifacts.insert("attribution_epochs.csv".into(), sha);
            if let (Some(first), Some(last)) =
                (report.epoch_rows.first(), report.epoch_rows.last())
            {
                eprintln!("mean KL {:.4} → {:.4}", first.mean_kl, last.mean_kl);
            }
            eprintln!(
                "theta MSE: attribution {:.4e} vs prior mean {:.4e}",
                report.theta_mse_attribution, report.theta_mse_prior_mean
            );
        }
        ExperimentKnobs::Selection(cfg) => {
            seeds.insert("experiment".into(), vec![cfg.seed]);
            seeds.insert("data".into(), vec![derived_seed(cfg.seed, domains::EXP_TRAIN)]);
            seeds.insert("split".into(), vec![derived_seed(cfg.seed, domains::EXP_TEST)]);
            let report = run_selection_with_config(cfg)?;
            for (name, csv) in [
                ("selection_epochs.csv", selection_epoch_csv(&report)),
                ("selection_audit.csv", selection_audit_csv(&report)),
            ] {
                let sha = write_artifact(dir, name, &csv)?;
                manifest.artifacts.insert(name.into(), sha);
            }
            eprintln!(
                "classifier error {:.4} vs AIC error {:.4} ({} abstentions)",
                report.final_sgnn_error(),
                report.aic_error,
                report.abstentions
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dataset utilities.
// ---------------------------------------------------------------------------

/// Generate a dataset from the `[gen]` section and save it (binary +
/// checksum sidecar), optionally also as CSV.
pub fn cmd_gen(config_path: &Path, out: &Path, csv_out: Option<&Path>) -> Result<()> {
    let bytes = read_config_file(config_path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Config(format!("config {} is not UTF-8", config_path.display())))?;
    let plan = resolve_gen(&parse_config(&text)?, config::env_seed()?)?;

    eprintln!(
        "generating {} examples ({:?}, {:?} target, seed {})",
        plan.n, plan.task.model, plan.task.target, plan.seed
    );
    let ds = generate_dataset(&plan.task, plan.n, plan.seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    save_dataset(&ds, out)?;
    eprintln!("wrote {} ({} × {} inputs)", out.display(), ds.len(), ds.input_dim());
    if let Some(csv) = csv_out {
        export_csv(&ds, csv)?;
        eprintln!("wrote {}", csv.display());
    }
    Ok(())
}

/// Loss and output head implied by what the dataset stores.
fn loss_and_head(ds: &Dataset) -> (LossSpec, OutputHead) {
    match ds.manifest().target_kind {
        TargetKind::ClassLabel => (LossSpec::CrossEntropy, OutputHead::Softmax),
        TargetKind::Vector => (LossSpec::Mse, OutputHead::Linear),
    }
}

/// Train a network on a saved dataset and write a checkpoint.
pub fn cmd_train(config_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let bytes = read_config_file(config_path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Config(format!("config {} is not UTF-8", config_path.display())))?;
    let plan = resolve_train(&parse_config(&text)?, config::env_seed()?)?;

    let ds = load_dataset(data)?;
    let (loss, head) = loss_and_head(&ds);
    let mut widths = Vec::with_capacity(plan.hidden.len() + 2);
    widths.push(ds.input_dim());
    widths.extend_from_slice(&plan.hidden);
    widths.push(ds.target_dim());
    let spec = NetworkSpec::new(widths, plan.activation, head)
        .map_err(|e| CliError::Config(format!("invalid section [train]: {e}")))?;
    let net = Network::init(spec, plan.seed);
    let cfg = TrainConfig::new(
        Optimizer::adam(plan.learning_rate),
        plan.epochs,
        plan.batch_size,
        plan.seed,
    );

    eprintln!(
        "training on {} examples ({} → {}), {} epochs",
        ds.len(),
        ds.input_dim(),
        ds.target_dim(),
        plan.epochs
    );
    let (trained, _history) = train_observed(net, &ds, &cfg, loss, |epoch, _, stats| {
        eprintln!("epoch {:>3}: mean loss {:.6}", epoch + 1, stats.mean_loss);
        Ok(())
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    trained.save_checkpoint(out)?;
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Evaluate a checkpoint on a dataset; write `metric,value` rows.
pub fn cmd_eval(model: &Path, data: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(data)?;
    let net = Network::load_checkpoint(model)?;
    let (loss, _) = loss_and_head(&ds);
    let risk = estimate_risk(&net, &ds, loss)?;

    let mut rows = vec![
        ("mean_loss".to_string(), risk.mean),
        ("std_error".to_string(), risk.std_error),
        ("n".to_string(), risk.n as f64),
    ];
    if ds.manifest().target_kind == TargetKind::ClassLabel {
        rows.push(("classification_error".to_string(), classification_error(&net, &ds)?));
    }

    let mut csv = String::from("metric,value\n");
    for (metric, value) in &rows {
        csv.push_str(&format!("{metric},{value}\n"));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    atomic_write(out, csv.as_bytes())?;
    for (metric, value) in &rows {
        eprintln!("{metric} = {value}");
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Fraction of examples whose arg-max prediction differs from the arg-max
/// one-hot target.
fn classification_error(net: &Network, ds: &Dataset) -> Result<f64> {
    fn argmax(row: impl Iterator<Item = f64>) -> usize {
        row.enumerate()
            .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0
    }
    let preds = net.predict_batch(ds.inputs().view())?;
    let targets = ds.targets();
    let wrong = (0..ds.len())
        .filter(|&i| {
            argmax(preds.row(i).iter().copied()) != argmax(targets.row(i).iter().copied())
        })
        .count();
    Ok(wrong as f64 / ds.len() as f64)
}
