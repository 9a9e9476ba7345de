//! End-to-end tests of the `sgnn` binary: exit codes, artifact layout,
//! manifest checksums, rerun determinism, figure export, the dataset
//! utilities, and the SGNN_SEED override. Every test runs the real binary
//! in its own temporary directory.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn sgnn(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sgnn"));
    cmd.args(args);
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary should spawn")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(out.status.code(), Some(code), "stderr:\n{}", stderr_of(out));
}

/// The last stderr line of a failed invocation is the JSON error report.
fn error_report(out: &Output) -> Value {
    let text = stderr_of(out);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("bad error line `{line}`: {e}"))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn read_manifest(dir: &Path) -> Value {
    let bytes = std::fs::read(dir.join("manifest.json")).unwrap();
    serde_json::from_slice(&bytes).unwrap()
}

/// Every artifact listed in a manifest exists and matches its checksum.
fn assert_artifacts_verify(run_dir: &Path, manifest: &Value) {
    let artifacts = manifest["artifacts"].as_object().expect("artifacts map");
    assert!(!artifacts.is_empty());
    for (name, sha) in artifacts {
        let bytes = std::fs::read(run_dir.join(name))
            .unwrap_or_else(|e| panic!("missing artifact {name}: {e}"));
        assert_eq!(sha.as_str().unwrap(), sha256_hex(&bytes), "checksum mismatch for {name}");
    }
}

fn tiny_convergence_config(out_dir: &Path) -> String {
    format!(
        "[experiment]\n\
         tag = \"bayes_convergence\"\n\
         seed = 0\n\
         out_dir = \"{}\"\n\
         \n\
         [convergence]\n\
         train_sizes = [30, 60]\n\
         library_size = 50\n\
         test_size = 12\n\
         seeds = [0]\n\
         epochs = 1\n\
         batch_size = 16\n\
         hidden = [8]\n",
        out_dir.display()
    )
}

#[test]
fn empty_config_exits_2_naming_the_missing_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = run(sgnn(&["run", "--config"]).arg(&cfg));
    assert_exit(&out, 2);
    let report = error_report(&out);
    assert_eq!(report["error"], "config");
    assert!(
        report["message"].as_str().unwrap().contains("experiment.tag"),
        "report: {report}"
    );
}

#[test]
fn unknown_tag_and_unreadable_config_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[experiment]\ntag = \"nope\"\nout_dir = \"o\"\n");
    let out = run(sgnn(&["run", "--config"]).arg(&cfg));
    assert_exit(&out, 2);
    assert!(stderr_of(&out).contains("nope"));

    let out = run(sgnn(&["run", "--config"]).arg(dir.path().join("absent.toml")));
    assert_exit(&out, 2);
    assert_eq!(error_report(&out)["error"], "config");
}

#[test]
fn zero_threads_is_rejected_as_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = run(sgnn(&["--threads", "0", "run", "--config"]).arg(&cfg));
    assert_exit(&out, 2);
    assert!(stderr_of(&out).contains("--threads"));
}

#[test]
fn tiny_convergence_run_writes_checksummed_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let cfg = write_config(dir.path(), &tiny_convergence_config(&run_dir));

    let out = run(sgnn(&["--threads", "1", "run", "--config"]).arg(&cfg));
    assert_exit(&out, 0);

    let manifest = read_manifest(&run_dir);
    assert_eq!(manifest["experiment"], "bayes_convergence");
    assert_eq!(manifest["master_seed"], 0);
    assert_eq!(
        manifest["config_sha256"].as_str().unwrap(),
        sha256_hex(&std::fs::read(&cfg).unwrap())
    );
    for name in ["config.toml", "convergence_rows.csv", "convergence_aggregate.csv"] {
        assert!(
            manifest["artifacts"].get(name).is_some(),
            "manifest must list {name}: {manifest}"
        );
    }
    assert_artifacts_verify(&run_dir, &manifest);

    // Stage seeds: the experiment seed list plus one derived seed per stage.
    assert_eq!(manifest["stage_seeds"]["experiment"], serde_json::json!([0]));
    for stage in ["library", "test", "train"] {
        assert_eq!(
            manifest["stage_seeds"][stage].as_array().unwrap().len(),
            1,
            "stage {stage}"
        );
    }
    assert!(manifest["versions"].get("sgnn-core").is_some());
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);

    let agg = std::fs::read_to_string(run_dir.join("convergence_aggregate.csv")).unwrap();
    assert!(agg.starts_with("n,mse_to_oracle,mse_to_theta,kernel_baseline_mse\n"));
    assert_eq!(agg.lines().count(), 1 + 2, "one aggregate row per train size");
}

#[test]
fn rerunning_the_same_config_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let cfg = write_config(dir.path(), &tiny_convergence_config(&run_dir));

    assert_exit(&run(sgnn(&["run", "--config"]).arg(&cfg)), 0);
    let rows_1 = std::fs::read(run_dir.join("convergence_rows.csv")).unwrap();
    let agg_1 = std::fs::read(run_dir.join("convergence_aggregate.csv")).unwrap();
    let artifacts_1 = read_manifest(&run_dir)["artifacts"].clone();

    assert_exit(&run(sgnn(&["run", "--config"]).arg(&cfg)), 0);
    let rows_2 = std::fs::read(run_dir.join("convergence_rows.csv")).unwrap();
    let agg_2 = std::fs::read(run_dir.join("convergence_aggregate.csv")).unwrap();
    let artifacts_2 = read_manifest(&run_dir)["artifacts"].clone();

    assert_eq!(rows_1, rows_2);
    assert_eq!(agg_1, agg_2);
    assert_eq!(artifacts_1, artifacts_2);
}

#[test]
fn sweep_alias_runs_and_export_produces_only_fig3() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    // No experiment.tag: the subcommand implies it.
    let cfg = write_config(
        dir.path(),
        &format!(
            "[experiment]\nout_dir = \"{}\"\n\n\
             [sweep]\n\
             deltas = [0.0, 0.25]\n\
             train_size = 200\n\
             test_size = 60\n\
             seeds = [0]\n\
             epochs = 2\n\
             batch_size = 32\n\
             hidden = [8]\n",
            run_dir.display()
        ),
    );
    assert_exit(&run(sgnn(&["sweep", "--config"]).arg(&cfg)), 0);
    assert_eq!(read_manifest(&run_dir)["experiment"], "mismatch_sweep");

    assert_exit(&run(sgnn(&["export", "--run"]).arg(&run_dir)), 0);
    assert!(run_dir.join("fig3.csv").exists());
    for absent in ["fig2.csv", "fig4.csv", "fig5.csv"] {
        assert!(!run_dir.join(absent).exists(), "{absent} must not exist for a sweep run");
    }

    let fig3 = std::fs::read(run_dir.join("fig3.csv")).unwrap();
    assert!(fig3.starts_with(b"delta,series,value\n"));
    // 2 deltas x 5 series.
    assert_eq!(std::str::from_utf8(&fig3).unwrap().lines().count(), 1 + 10);

    // Export records the new checksum; the rewritten manifest still verifies.
    let manifest = read_manifest(&run_dir);
    assert_eq!(manifest["artifacts"]["fig3.csv"], sha256_hex(&fig3));
    assert_artifacts_verify(&run_dir, &manifest);
}

#[test]
fn attribute_alias_runs_and_exports_fig4() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        &format!(
            "[experiment]\ntag = \"attribution\"\nseed = 1\nout_dir = \"{}\"\n\n\
             [attribution]\n\
             library_size = 60\n\
             train_size = 48\n\
             query_count = 10\n\
             moment_query_count = 5\n\
             subsample = 32\n\
             epochs = 2\n\
             batch_size = 16\n\
             hidden = [16]\n",
            run_dir.display()
        ),
    );
    assert_exit(&run(sgnn(&["attribute", "--config"]).arg(&cfg)), 0);

    let epochs = std::fs::read_to_string(run_dir.join("attribution_epochs.csv")).unwrap();
    assert!(epochs.starts_with("epoch,mean_kl,moment_err_k1,moment_err_k2\n"));
    assert_eq!(epochs.lines().count(), 1 + 2, "one row per epoch");

    assert_exit(&run(sgnn(&["export", "--run"]).arg(&run_dir)), 0);
    let fig4 = std::fs::read_to_string(run_dir.join("fig4.csv")).unwrap();
    assert!(fig4.starts_with("epoch,series,value\n"));
    assert_eq!(fig4.lines().count(), 1 + 2 * 3);
}

#[test]
fn select_alias_runs_and_fig5_has_the_pinned_columns() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        &format!(
            "[experiment]\nout_dir = \"{}\"\n\n\
             [selection]\n\
             n_total = 120\n\
             epochs = 2\n\
             batch_size = 32\n\
             hidden = [16]\n\
             multistart = 2\n",
            run_dir.display()
        ),
    );
    assert_exit(&run(sgnn(&["select", "--config"]).arg(&cfg)), 0);

    let audit = std::fs::read_to_string(run_dir.join("selection_audit.csv")).unwrap();
    assert!(audit.starts_with("index,truth,aic_choice,sgnn_choice\n"));

    assert_exit(&run(sgnn(&["export", "--run"]).arg(&run_dir)), 0);
    let fig5 = std::fs::read_to_string(run_dir.join("fig5.csv")).unwrap();
    let lines: Vec<&str> = fig5.lines().collect();
    assert_eq!(lines[0], "epoch,sgnn_error,aic_error");
    assert_eq!(lines.len(), 1 + 2, "one row per epoch");
    let aic_values: Vec<&str> =
        lines[1..].iter().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert!(
        aic_values.windows(2).all(|w| w[0] == w[1]),
        "aic_error must repeat the summary value: {aic_values:?}"
    );
}

#[test]
fn export_without_a_manifest_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(sgnn(&["export", "--run"]).arg(dir.path()));
    assert_exit(&out, 1);
    assert_eq!(error_report(&out)["error"], "runtime");
}

#[test]
fn export_detects_tampered_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let cfg = write_config(dir.path(), &tiny_convergence_config(&run_dir));
    assert_exit(&run(sgnn(&["run", "--config"]).arg(&cfg)), 0);

    let target = run_dir.join("convergence_aggregate.csv");
    let mut bytes = std::fs::read(&target).unwrap();
    bytes.push(b'x');
    std::fs::write(&target, bytes).unwrap();

    let out = run(sgnn(&["export", "--run"]).arg(&run_dir));
    assert_exit(&out, 1);
    assert!(
        error_report(&out)["message"].as_str().unwrap().contains("checksum"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn gen_train_eval_round_trip_on_a_forecast_free_task() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[gen]\nmodel = \"sir\"\nn = 60\nsteps = 30\nseed = 5\n\n\
         [train]\nhidden = [8]\nepochs = 2\nbatch_size = 16\n",
    );
    let data = dir.path().join("ds.bin");
    let csv = dir.path().join("ds.csv");
    let ckpt = dir.path().join("net.bin");
    let metrics = dir.path().join("metrics.csv");

    let out = run(sgnn(&["gen", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&data)
        .arg("--export-csv")
        .arg(&csv));
    assert_exit(&out, 0);
    assert!(data.exists());
    let sidecar = PathBuf::from(format!("{}.manifest.json", data.display()));
    assert!(sidecar.exists(), "dataset checksum sidecar must be written");
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("model,"));

    let out = run(sgnn(&["train", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&ckpt));
    assert_exit(&out, 0);
    assert!(stderr_of(&out).contains("epoch"));

    let out = run(sgnn(&["eval", "--model"])
        .arg(&ckpt)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&metrics));
    assert_exit(&out, 0);
    let metrics_text = std::fs::read_to_string(&metrics).unwrap();
    assert!(metrics_text.starts_with("metric,value\n"));
    assert!(metrics_text.lines().any(|l| l.starts_with("mean_loss,")));
    let n_row = metrics_text.lines().find(|l| l.starts_with("n,")).unwrap();
    assert_eq!(n_row, "n,60");
}

#[test]
fn class_datasets_get_a_classification_error_metric() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[gen]\ntarget = \"model_class\"\nn = 40\nsteps = 30\nseed = 2\n\n\
         [train]\nhidden = [8]\nepochs = 1\nbatch_size = 16\n",
    );
    let data = dir.path().join("ds.bin");
    let ckpt = dir.path().join("net.bin");
    let metrics = dir.path().join("metrics.csv");

    assert_exit(&run(sgnn(&["gen", "--config"]).arg(&cfg).arg("--out").arg(&data)), 0);
    assert_exit(
        &run(sgnn(&["train", "--config"]).arg(&cfg).arg("--data").arg(&data).arg("--out").arg(&ckpt)),
        0,
    );
    assert_exit(
        &run(sgnn(&["eval", "--model"]).arg(&ckpt).arg("--data").arg(&data).arg("--out").arg(&metrics)),
        0,
    );
    let text = std::fs::read_to_string(&metrics).unwrap();
    let row = text.lines().find(|l| l.starts_with("classification_error,")).unwrap();
    let rate: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&rate));
}

#[test]
fn sgnn_seed_env_overrides_the_configured_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_seed_1 = write_config(dir.path(), "[gen]\nmodel = \"sir\"\nn = 20\nseed = 1\n");
    let cfg_dir_2 = tempfile::tempdir().unwrap();
    let cfg_seed_5 = write_config(cfg_dir_2.path(), "[gen]\nmodel = \"sir\"\nn = 20\nseed = 5\n");

    let from_env = dir.path().join("env.bin");
    let from_cfg = dir.path().join("cfg.bin");
    let baseline = dir.path().join("base.bin");

    let out = run(sgnn(&["gen", "--config"])
        .arg(&cfg_seed_1)
        .arg("--out")
        .arg(&from_env)
        .env("SGNN_SEED", "5"));
    assert_exit(&out, 0);
    assert_exit(
        &run(sgnn(&["gen", "--config"]).arg(&cfg_seed_5).arg("--out").arg(&from_cfg)),
        0,
    );
    assert_exit(
        &run(sgnn(&["gen", "--config"]).arg(&cfg_seed_1).arg("--out").arg(&baseline)),
        0,
    );

    let env_bytes = std::fs::read(&from_env).unwrap();
    assert_eq!(env_bytes, std::fs::read(&from_cfg).unwrap(), "env seed must win");
    assert_ne!(env_bytes, std::fs::read(&baseline).unwrap(), "seeds 1 and 5 must differ");

    let out = run(sgnn(&["gen", "--config"])
        .arg(&cfg_seed_1)
        .arg("--out")
        .arg(dir.path().join("bad.bin"))
        .env("SGNN_SEED", "not-a-number"));
    assert_exit(&out, 2);
    assert!(stderr_of(&out).contains("SGNN_SEED"));
}
