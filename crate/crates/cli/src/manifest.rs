//! Run manifests: the JSON receipt written at the end of every experiment.
//!
//! A manifest records what produced a run directory — the config digest,
//! crate versions, master seed and the derived per-stage seeds — and a
//! SHA-256 checksum for every emitted file, so a run can be audited or
//! reproduced long after the fact. It is written atomically as the final
//! step, so a `manifest.json` on disk always describes completed output.
//! Maps are ordered, which keeps reruns byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sgnn_core::artifact::atomic_write;

use crate::error::{CliError, Result};

pub const MANIFEST_NAME: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Schema version of this manifest file.
    pub format_version: u32,
    /// Experiment tag the run executed.
    pub experiment: String,
    /// SHA-256 of the config file bytes as given.
    pub config_sha256: String,
    /// Crate versions that produced the artifacts.
    pub versions: BTreeMap<String, String>,
    /// Master seed after any environment override.
    pub master_seed: u64,
    /// Seeds handed to each pipeline stage, derived from the master seed.
    pub stage_seeds: BTreeMap<String, Vec<u64>>,
    /// Wall-clock duration of the run in seconds.
    pub wall_clock_seconds: f64,
    /// File name → SHA-256 for every artifact in the run directory.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(experiment: &str, config_sha256: String, master_seed: u64) -> RunManifest {
        RunManifest {
            format_version: FORMAT_VERSION,
            experiment: experiment.to_string(),
            config_sha256,
            versions: versions(),
            master_seed,
            stage_seeds: BTreeMap::new(),
            wall_clock_seconds: 0.0,
            artifacts: BTreeMap::new(),
        }
    }

    /// Write `manifest.json` into `dir` atomically.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(format!("cannot serialize manifest: {e}")))?;
        text.push('\n');
        atomic_write(&dir.join(MANIFEST_NAME), text.as_bytes())?;
        Ok(())
    }

    /// Load `manifest.json` from `dir`. Missing or unparsable manifests are
    /// runtime errors: the run directory is unusable, not the config.
    pub fn load(dir: &Path) -> Result<RunManifest> {
        let path = dir.join(MANIFEST_NAME);
        let bytes = std::fs::read(&path).map_err(|e| {
            CliError::Runtime(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        serde_json::from_slice(&bytes).map_err(|e| {
            CliError::Runtime(format!("corrupt manifest {}: {e}", path.display()))
        })
    }
}

/// Crate versions recorded in every manifest.
pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("sgnn-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("sgnn-core".to_string(), sgnn_core::VERSION.to_string()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("mismatch_sweep", "ab".repeat(32), 7);
        m.stage_seeds.insert("experiment".into(), vec![7, 8, 9]);
        m.artifacts.insert("sweep_rows.csv".into(), "cd".repeat(32));
        m.wall_clock_seconds = 1.25;
        m.save(dir.path()).unwrap();
        let back = RunManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn loading_a_missing_or_corrupt_manifest_is_a_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = RunManifest::load(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 1);

        std::fs::write(dir.path().join(MANIFEST_NAME), b"not json").unwrap();
        let err = RunManifest::load(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("corrupt"), "{err}");
    }

    #[test]
    fn versions_cover_both_crates() {
        let v = versions();
        assert!(v.contains_key("sgnn-cli"));
        assert!(v.contains_key("sgnn-core"));
    }

    #[test]
    fn serialized_manifest_key_order_is_stable() {
        let mut m = RunManifest::new("attribution", "00".repeat(32), 0);
        m.artifacts.insert("b.csv".into(), "11".repeat(32));
        m.artifacts.insert("a.csv".into(), "22".repeat(32));
        let text = serde_json::to_string(&m).unwrap();
        let a = text.find("a.csv").unwrap();
        let b = text.find("b.csv").unwrap();
        assert!(a < b, "artifact keys must serialize sorted");
    }
}
