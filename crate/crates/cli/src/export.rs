//! Tidy per-figure CSV export from a completed run directory.
//!
//! Each experiment's wide result CSVs are reshaped into one long-format
//! file per figure — `fig2.csv` (oracle convergence), `fig3.csv` (mismatch
//! sweep), `fig4.csv` (attribution alignment), `fig5.csv` (model
//! selection) — so any external plotter can consume them directly. Only the
//! figure belonging to the run's experiment is produced. Source files are
//! verified against the manifest checksums before reshaping, and the
//! exported files are recorded back into the manifest.

use std::path::Path;

use sha2::{Digest, Sha256};
use sgnn_core::artifact::atomic_write;

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;

fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Export the figure CSV for the experiment recorded in the run manifest,
/// and record its checksum back into the manifest.
pub fn cmd_export(run_dir: &Path) -> Result<()> {
    let mut manifest = RunManifest::load(run_dir)?;
    let (name, csv) = match manifest.experiment.as_str() {
        "bayes_convergence" => {
            let src = read_verified(run_dir, &manifest, "convergence_aggregate.csv")?;
            ("fig2.csv", fig2_csv(&src)?)
        }
        "mismatch_sweep" => {
            let src = read_verified(run_dir, &manifest, "sweep_aggregate.csv")?;
            ("fig3.csv", fig3_csv(&src)?)
        }
        "attribution" => {
            let src = read_verified(run_dir, &manifest, "attribution_epochs.csv")?;
            ("fig4.csv", fig4_csv(&src)?)
        }
        "model_selection" => {
            let src = read_verified(run_dir, &manifest, "selection_epochs.csv")?;
            ("fig5.csv", fig5_csv(&src)?)
        }
        other => {
            return Err(CliError::Runtime(format!(
                "manifest names unknown experiment `{other}`"
            )))
        }
    };

    atomic_write(&run_dir.join(name), csv.as_bytes())?;
    manifest.artifacts.insert(name.to_string(), sha256_hex(csv.as_bytes()));
    manifest.save(run_dir)?;
    eprintln!("wrote {} and updated the manifest", run_dir.join(name).display());
    Ok(())
}

/// Read a run artifact and fail if it is missing or no longer matches the
/// checksum the manifest recorded for it.
fn read_verified(dir: &Path, manifest: &RunManifest, name: &str) -> Result<String> {
    let expected = manifest.artifacts.get(name).ok_or_else(|| {
        CliError::Runtime(format!("manifest lists no artifact `{name}`; was the run completed?"))
    })?;
    let path = dir.join(name);
    let bytes = std::fs::read(&path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let actual = sha256_hex(&bytes);
    if &actual != expected {
        return Err(CliError::Runtime(format!(
            "checksum mismatch for {name}: manifest records {expected}, file has {actual}"
        )));
    }
    String::from_utf8(bytes)
        .map_err(|_| CliError::Runtime(format!("artifact {name} is not UTF-8")))
}

/// Split a headered CSV into rows, verifying the header is exactly as the
/// run wrote it. Values stay as strings so exported bytes match the source.
fn parse_rows<'a>(text: &'a str, header: &str, name: &str) -> Result<Vec<Vec<&'a str>>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first == header => {}
        other => {
            return Err(CliError::Runtime(format!(
                "artifact {name} has header {other:?}, expected {header:?}"
            )))
        }
    }
    Ok(lines.map(|l| l.split(',').collect()).collect())
}

fn long_csv(key: &str, triples: &[(String, &str, String)]) -> String {
    let mut out = format!("{key},series,value\n");
    for (k, series, value) in triples {
        out.push_str(&format!("{k},{series},{value}\n"));
    }
    out
}

/// Wide → long for the convergence aggregate
/// (`n,mse_to_oracle,mse_to_theta,kernel_baseline_mse`).
fn fig2_csv(src: &str) -> Result<String> {
    let rows = parse_rows(
        src,
        "n,mse_to_oracle,mse_to_theta,kernel_baseline_mse",
        "convergence_aggregate.csv",
    )?;
    let mut triples = Vec::with_capacity(rows.len() * 3);
    for row in &rows {
        let [n, oracle, theta, kernel] = row.as_slice() else {
            return Err(CliError::Runtime(format!(
                "convergence_aggregate.csv row has {} fields, expected 4",
                row.len()
            )));
        };
        triples.push((n.to_string(), "sgnn_vs_oracle_mse", oracle.to_string()));
        triples.push((n.to_string(), "sgnn_vs_theta_mse", theta.to_string()));
        triples.push((n.to_string(), "kernel_vs_theta_mse", kernel.to_string()));
    }
    Ok(long_csv("n", &triples))
}

/// Wide → long for the sweep aggregate: the measured loss, the excesses,
/// and both bound variants per mismatch level.
fn fig3_csv(src: &str) -> Result<String> {
    let rows = parse_rows(
        src,
        "delta,real_loss,bayes_risk,real_excess,syn_excess,l_max,tv_worst,tv_empirical,\
         bound_worst,bound_empirical",
        "sweep_aggregate.csv",
    )?;
    // (column index in the source row, series name in the figure)
    let series: [(usize, &str); 5] = [
        (1, "real_loss"),
        (3, "real_excess"),
        (4, "syn_excess"),
        (9, "bound_empirical"),
        (8, "bound_worst"),
    ];
    let mut triples = Vec::with_capacity(rows.len() * series.len());
    for row in &rows {
        if row.len() != 10 {
            return Err(CliError::Runtime(format!(
                "sweep_aggregate.csv row has {} fields, expected 10",
                row.len()
            )));
        }
        for (col, name) in series {
            triples.push((row[0].to_string(), name, row[col].to_string()));
        }
    }
    Ok(long_csv("delta", &triples))
}

/// Wide → long for the attribution per-epoch diagnostics.
fn fig4_csv(src: &str) -> Result<String> {
    let rows = parse_rows(
        src,
        "epoch,mean_kl,moment_err_k1,moment_err_k2",
        "attribution_epochs.csv",
    )?;
    let mut triples = Vec::with_capacity(rows.len() * 3);
    for row in &rows {
        let [epoch, kl, k1, k2] = row.as_slice() else {
            return Err(CliError::Runtime(format!(
                "attribution_epochs.csv row has {} fields, expected 4",
                row.len()
            )));
        };
        triples.push((epoch.to_string(), "mean_kl", kl.to_string()));
        triples.push((epoch.to_string(), "moment_err_k1", k1.to_string()));
        triples.push((epoch.to_string(), "moment_err_k2", k2.to_string()));
    }
    Ok(long_csv("epoch", &triples))
}

/// Selection epochs → `epoch,sgnn_error,aic_error`. The source carries the
/// AIC error as a trailing summary row; the figure repeats it per epoch as
/// the constant baseline the classifier is compared against.
fn fig5_csv(src: &str) -> Result<String> {
    let rows = parse_rows(src, "epoch,sgnn_error", "selection_epochs.csv")?;
    let Some((summary, epochs)) = rows.split_last() else {
        return Err(CliError::Runtime("selection_epochs.csv has no rows".into()));
    };
    let aic = match summary.as_slice() {
        ["aic_error", value] => *value,
        _ => {
            return Err(CliError::Runtime(
                "selection_epochs.csv is missing its aic_error summary row".into(),
            ))
        }
    };
    let mut out = String::from("epoch,sgnn_error,aic_error\n");
    for row in epochs {
        let [epoch, err] = row.as_slice() else {
            return Err(CliError::Runtime(format!(
                "selection_epochs.csv row has {} fields, expected 2",
                row.len()
            )));
        };
        out.push_str(&format!("{epoch},{err},{aic}\n"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig2_reshapes_each_aggregate_row_into_three_series_rows() {
        let src = "n,mse_to_oracle,mse_to_theta,kernel_baseline_mse\n\
                   1000,0.5,0.4,0.3\n10000,0.2,0.1,0.3\n";
        let out = fig2_csv(src).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "n,series,value");
        assert_eq!(lines[1], "1000,sgnn_vs_oracle_mse,0.5");
        assert_eq!(lines[3], "1000,kernel_vs_theta_mse,0.3");
        assert_eq!(lines.len(), 1 + 6);
    }

    #[test]
    fn fig3_takes_loss_excess_and_bounds_columns() {
        let src = "delta,real_loss,bayes_risk,real_excess,syn_excess,l_max,tv_worst,\
                   tv_empirical,bound_worst,bound_empirical\n\
                   0,1,2,3,4,5,6,7,8,9\n";
        let out = fig3_csv(src).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "delta,series,value");
        assert_eq!(lines[1], "0,real_loss,1");
        assert_eq!(lines[2], "0,real_excess,3");
        assert_eq!(lines[3], "0,syn_excess,4");
        assert_eq!(lines[4], "0,bound_empirical,9");
        assert_eq!(lines[5], "0,bound_worst,8");
    }

    #[test]
    fn fig5_repeats_the_aic_summary_per_epoch() {
        let src = "epoch,sgnn_error\n1,0.2\n2,0.1\naic_error,0.15\n";
        let out = fig5_csv(src).unwrap();
        assert_eq!(out, "epoch,sgnn_error,aic_error\n1,0.2,0.15\n2,0.1,0.15\n");
    }

    #[test]
    fn fig5_requires_the_summary_row() {
        let src = "epoch,sgnn_error\n1,0.2\n";
        let err = fig5_csv(src).unwrap_err();
        assert!(err.to_string().contains("aic_error"), "{err}");
    }

    #[test]
    fn unexpected_headers_are_rejected() {
        let err = fig4_csv("epoch,wrong\n1,2\n").unwrap_err();
        assert!(err.to_string().contains("attribution_epochs.csv"), "{err}");
    }
}
