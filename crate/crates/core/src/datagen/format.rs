//! Dataset persistence: little-endian binary payload + JSON manifest
//! sidecar, and a CSV export for inspection.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic "SGNN" | version u16 | target_kind u8 | reserved u8
//! n u64 | input_dim u32 | file_target_dim u32 | theta_dim u32
//! tags: n × u8 | inputs: n·input_dim × f64
//! targets: n·file_target_dim × f64 | thetas: n·theta_dim × f64
//! ```
//!
//! Class targets are one-hot vectors in memory but integer labels in files
//! (`file_target_dim = 1`). The sidecar `<path>.manifest.json` records the
//! generation seed, task digest, parameter names/bounds, and a SHA-256 of
//! the binary file, so artifacts can be verified byte-for-byte across
//! platforms.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest, TargetKind};
use crate::artifact::sha256_hex;
use crate::error::{Error, Result};
use crate::sim::ModelTag;

const MAGIC: &[u8; 4] = b"SGNN";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 8 + 4 + 4 + 4;

/// Sidecar path for a dataset file: `<path>.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    PathBuf::from(format!("{}.manifest.json", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    seed: u64,
    task_digest: String,
    created_n: usize,
    n: usize,
    target_kind: TargetKind,
    theta_names: Vec<String>,
    theta_bounds: Vec<(f64, f64)>,
    data_sha256: String,
}

fn target_kind_code(kind: TargetKind) -> u8 {
    match kind {
        TargetKind::Vector => 0,
        TargetKind::ClassLabel => 1,
    }
}

fn target_kind_from_code(code: u8) -> Option<TargetKind> {
    match code {
        0 => Some(TargetKind::Vector),
        1 => Some(TargetKind::ClassLabel),
        _ => None,
    }
}

fn encode(ds: &Dataset) -> Result<Vec<u8>> {
    let kind = ds.manifest().target_kind;
    let file_target_dim = match kind {
        TargetKind::Vector => ds.target_dim(),
        TargetKind::ClassLabel => 1,
    };
    let n = ds.len();
    let mut bytes = Vec::with_capacity(
        HEADER_LEN + n + 8 * n * (ds.input_dim() + file_target_dim + ds.theta_dim()),
    );
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.push(target_kind_code(kind));
    bytes.push(0); // reserved
    bytes.extend_from_slice(&(n as u64).to_le_bytes());
    bytes.extend_from_slice(&(ds.input_dim() as u32).to_le_bytes());
    bytes.extend_from_slice(&(file_target_dim as u32).to_le_bytes());
    bytes.extend_from_slice(&(ds.theta_dim() as u32).to_le_bytes());
    for tag in ds.tags() {
        bytes.push(tag.file_code());
    }
    for v in ds.inputs().iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    match kind {
        TargetKind::Vector => {
            for v in ds.targets().iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        TargetKind::ClassLabel => {
            for row in ds.targets().rows() {
                let label = if row[0] >= row[1] { 0.0 } else { 1.0 };
                bytes.extend_from_slice(&f64::to_le_bytes(label));
            }
        }
    }
    for v in ds.thetas().iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(bytes)
}

/// Write the binary dataset and its manifest sidecar.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode(ds)?;
    let sidecar = Sidecar {
        seed: ds.manifest().seed,
        task_digest: ds.manifest().task_digest.clone(),
        created_n: ds.manifest().created_n,
        n: ds.len(),
        target_kind: ds.manifest().target_kind,
        theta_names: ds.manifest().theta_names.clone(),
        theta_bounds: ds.manifest().theta_bounds.clone(),
        data_sha256: sha256_hex(&bytes),
    };
    fs::write(path, &bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mpath = manifest_path(path);
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&mpath, json).map_err(|e| Error::io(mpath.display().to_string(), e))?;
    Ok(())
}

/// Little-endian reader over a byte slice.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> &'a [u8] {
        let out = &self.bytes[self.pos..self.pos + k];
        self.pos += k;
        out
    }

    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take(2).try_into().unwrap())
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }

    fn f64_block(&mut self, count: usize) -> Vec<f64> {
        (0..count)
            .map(|_| f64::from_le_bytes(self.take(8).try_into().unwrap()))
            .collect()
    }
}

/// Read a dataset written by [`save_dataset`], verifying the recorded
/// checksum and reconstructing one-hot class targets.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let pathstr = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&*pathstr, e))?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader {
            path: pathstr,
            detail: format!("file is {} bytes, header needs {HEADER_LEN}", bytes.len()),
        });
    }
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(4) != MAGIC {
        return Err(Error::MalformedHeader {
            path: pathstr,
            detail: "bad magic (expected \"SGNN\")".into(),
        });
    }
    let version = r.u16();
    if version != VERSION {
        return Err(Error::MalformedHeader {
            path: pathstr,
            detail: format!("unsupported version {version} (expected {VERSION})"),
        });
    }
    let kind = target_kind_from_code(r.take(1)[0]).ok_or_else(|| Error::MalformedHeader {
        path: pathstr.clone(),
        detail: "unknown target-kind code".into(),
    })?;
    let _reserved = r.take(1);
    let n = r.u64() as usize;
    let input_dim = r.u32() as usize;
    let file_target_dim = r.u32() as usize;
    let theta_dim = r.u32() as usize;

    let expected = n + 8 * n * (input_dim + file_target_dim + theta_dim);
    let found = bytes.len() - HEADER_LEN;
    if found != expected {
        return Err(Error::TruncatedFile {
            path: pathstr,
            expected: expected as u64,
            found: found as u64,
        });
    }

    let mut tags = Vec::with_capacity(n);
    for &code in r.take(n) {
        tags.push(ModelTag::from_file_code(code).map_err(|_| Error::MalformedHeader {
            path: pathstr.clone(),
            detail: format!("unknown model tag code {code}"),
        })?);
    }
    let inputs = ndarray::Array2::from_shape_vec((n, input_dim), r.f64_block(n * input_dim))
        .map_err(|e| Error::Shape(e.to_string()))?;
    let raw_targets = r.f64_block(n * file_target_dim);
    let targets = match kind {
        TargetKind::Vector => {
            ndarray::Array2::from_shape_vec((n, file_target_dim), raw_targets)
                .map_err(|e| Error::Shape(e.to_string()))?
        }
        TargetKind::ClassLabel => {
            let mut one_hot = ndarray::Array2::zeros((n, 2));
            for (i, &label) in raw_targets.iter().enumerate() {
                match label {
                    l if l == 0.0 => one_hot[[i, 0]] = 1.0,
                    l if l == 1.0 => one_hot[[i, 1]] = 1.0,
                    other => {
                        return Err(Error::MalformedHeader {
                            path: pathstr,
                            detail: format!("class label {other} is not 0 or 1 (row {i})"),
                        })
                    }
                }
            }
            one_hot
        }
    };
    let thetas = ndarray::Array2::from_shape_vec((n, theta_dim), r.f64_block(n * theta_dim))
        .map_err(|e| Error::Shape(e.to_string()))?;

    let mpath = manifest_path(path);
    let json = fs::read_to_string(&mpath).map_err(|e| Error::io(mpath.display().to_string(), e))?;
    let sidecar: Sidecar = serde_json::from_str(&json)?;
    if sidecar.data_sha256 != sha256_hex(&bytes) {
        return Err(Error::Validation(format!(
            "checksum mismatch for {pathstr}: file does not match its manifest"
        )));
    }
    if sidecar.n != n {
        return Err(Error::Shape(format!(
            "manifest records {} examples, file holds {n}",
            sidecar.n
        )));
    }

    let manifest = DatasetManifest {
        seed: sidecar.seed,
        task_digest: sidecar.task_digest,
        created_n: sidecar.created_n,
        target_kind: sidecar.target_kind,
        theta_names: sidecar.theta_names,
        theta_bounds: sidecar.theta_bounds,
    };
    Dataset::from_parts(inputs, targets, thetas, tags, manifest)
}

/// Write the dataset as an RFC-4180-style CSV with a header row: model tag,
/// parameters, targets (integer `label` for class tasks), then inputs.
pub fn export_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let pathstr = path.display().to_string();
    let file = fs::File::create(path).map_err(|e| Error::io(&*pathstr, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut write = |line: &str| -> Result<()> {
        writeln!(w, "{line}").map_err(|e| Error::io(&*pathstr, e))
    };

    let mut header: Vec<String> = vec!["model".into()];
    header.extend(ds.manifest().theta_names.iter().map(|n| format!("theta_{n}")));
    match ds.manifest().target_kind {
        TargetKind::ClassLabel => header.push("label".into()),
        TargetKind::Vector => {
            header.extend((0..ds.target_dim()).map(|j| format!("target_{j}")))
        }
    }
    header.extend((0..ds.input_dim()).map(|j| format!("input_{j}")));
    write(&header.join(","))?;

    for i in 0..ds.len() {
        let mut fields: Vec<String> = vec![format!("{:?}", ds.tags()[i])];
        fields.extend(ds.thetas().row(i).iter().map(|v| v.to_string()));
        match ds.manifest().target_kind {
            TargetKind::ClassLabel => {
                let row = ds.targets().row(i);
                fields.push(if row[0] >= row[1] { "0".into() } else { "1".into() });
            }
            TargetKind::Vector => {
                fields.extend(ds.targets().row(i).iter().map(|v| v.to_string()))
            }
        }
        fields.extend(ds.inputs().row(i).iter().map(|v| v.to_string()));
        write(&fields.join(","))?;
    }
    w.flush().map_err(|e| Error::io(&*pathstr, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, TargetSpec, TaskSpec};
    use crate::params::PriorSpec;
    use crate::sim::ObservationSpec;

    fn sample_dataset(n: usize, target: TargetSpec) -> Dataset {
        let task = TaskSpec {
            model: ModelTag::Sir,
            steps: 30,
            obs: ObservationSpec::new(0.01, vec![1]).unwrap(),
            process_sigma: 0.0,
            init: None,
            prior: match target {
                TargetSpec::ModelClass => PriorSpec::new(vec![
                    ("beta".into(), 0.1, 0.5),
                    ("gamma".into(), 0.05, 0.2),
                    ("sigma_e".into(), 0.1, 0.3),
                ])
                .unwrap(),
                _ => PriorSpec::new(vec![
                    ("beta".into(), 0.1, 0.5),
                    ("gamma".into(), 0.05, 0.2),
                ])
                .unwrap(),
            },
            target,
            mismatch: None,
        };
        generate_dataset(&task, n, 99).unwrap()
    }

    #[test]
    fn round_trip_preserves_every_field() {
        let dir = tempfile::tempdir().unwrap();
        for target in [
            TargetSpec::Params,
            TargetSpec::Forecast { input_len: 20, horizon: 5 },
            TargetSpec::ModelClass,
        ] {
            let ds = sample_dataset(100, target);
            let path = dir.path().join("ds.bin");
            save_dataset(&ds, &path).unwrap();
            let back = load_dataset(&path).unwrap();
            assert_eq!(ds, back);
        }
    }

    #[test]
    fn wrong_magic_is_a_malformed_header() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_dataset(5, TargetSpec::Params);
        let path = dir.path().join("ds.bin");
        save_dataset(&ds, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::MalformedHeader { .. })
        ));
    }

    #[test]
    fn truncation_is_detected_with_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_dataset(5, TargetSpec::Params);
        let path = dir.path().join("ds.bin");
        save_dataset(&ds, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        match load_dataset(&path) {
            Err(Error::TruncatedFile { expected, found, .. }) => {
                assert_eq!(expected, found + 16);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_payload_fails_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_dataset(5, TargetSpec::Params);
        let path = dir.path().join("ds.bin");
        save_dataset(&ds, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xFF;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn recorded_checksum_matches_file_bytes() {
        // The manifest checksum is the cross-platform identity witness: the
        // same seed must yield the same bytes everywhere.
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_dataset(10, TargetSpec::Params);
        let path = dir.path().join("ds.bin");
        save_dataset(&ds, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let json = fs::read_to_string(manifest_path(&path)).unwrap();
        let sidecar: Sidecar = serde_json::from_str(&json).unwrap();
        assert_eq!(sidecar.data_sha256, sha256_hex(&bytes));
    }

    #[test]
    fn csv_export_writes_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_dataset(4, TargetSpec::ModelClass);
        let path = dir.path().join("ds.csv");
        export_csv(&ds, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[0].starts_with("model,theta_beta,theta_gamma,theta_sigma_e,label,input_0"));
        assert!(lines[1].starts_with("Sir,"));
        assert!(lines[2].starts_with("Seir,"));
    }
}
