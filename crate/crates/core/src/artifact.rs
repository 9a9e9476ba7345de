//! Deterministic artifact plumbing: checksums, CSV writing, atomic file
//! replacement.
//!
//! Experiment outputs must be byte-identical across reruns, so all CSV
//! emission funnels through [`write_csv`] (fixed header, `\n` line endings,
//! shortest round-trip float formatting via `Display`) and manifests are
//! written with [`atomic_write`] so a crashed run never leaves a torn file.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Lowercase hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(sha256_hex(&bytes))
}

/// Shortest round-trip decimal rendering of a float (what `Display` does);
/// the single formatting used in every CSV cell.
pub fn fmt_f64(v: f64) -> String {
    v.to_string()
}

/// Build a CSV document in memory: header row plus one row per record.
/// Values must already be rendered; commas and newlines are not escaped
/// because no emitted field ever contains them.
pub fn csv_document(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut doc = String::new();
    doc.push_str(&header.join(","));
    doc.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len(), "CSV row width must match header");
        doc.push_str(&row.join(","));
        doc.push('\n');
    }
    doc
}

/// Write a CSV file and return the SHA-256 of its bytes.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let doc = csv_document(header, rows);
    fs::write(path, doc.as_bytes()).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(sha256_hex(doc.as_bytes()))
}

/// Write `bytes` to `path` via a temporary sibling + rename, so readers
/// never observe a partially written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f =
            fs::File::create(&tmp).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        f.write_all(bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        f.sync_all().map_err(|e| Error::io(tmp.display().to_string(), e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_matches_known_vector() {
        // FIPS 180-2 test vector for "abc".
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn csv_document_layout() {
        let doc = csv_document(
            &["a", "b"],
            &[vec!["1".into(), "2".into()], vec!["3".into(), "4".into()]],
        );
        assert_eq!(doc, "a,b\n1,2\n3,4\n");
    }

    #[test]
    fn float_formatting_round_trips() {
        for &v in &[0.0, 1.0, -0.25, 1.0 / 3.0, 1e-12, 123456.789, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "render {s}");
        }
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn write_csv_returns_checksum_of_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let sum = write_csv(&path, &["x"], &[vec!["5".into()]]).unwrap();
        assert_eq!(sum, sha256_hex(&fs::read(&path).unwrap()));
    }
}
