//! CSV tables with round-trip float formatting, and the hashed run manifest.

use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Result;

pub const MANIFEST_NAME: &str = "manifest.json";

/// 17 significant digits: parses back to the identical double.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn timestamp() -> String {
    humantime::format_rfc3339_millis(SystemTime::now()).to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table { header: header.iter().map(|h| h.as_ref().to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Pushes a row of numbers.
    pub fn push_nums(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&x| fmt_f64(x)).collect());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(std::io::Error::other)?;
        w.write_record(&self.header).map_err(std::io::Error::other)?;
        for r in &self.rows {
            w.write_record(r).map_err(std::io::Error::other)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileHash {
    /// Hash of `root/rel`, recorded under the name `rel`.
    pub fn of(root: &Path, rel: &str) -> Result<Self> {
        let p = root.join(rel);
        Ok(FileHash { path: rel.to_string(), sha256: sha256_file(&p)?, bytes: std::fs::metadata(&p)?.len() })
    }

    /// Hash recorded under the path as given.
    pub fn of_path(p: &Path) -> Result<Self> {
        Ok(FileHash { path: p.display().to_string(), sha256: sha256_file(p)?, bytes: std::fs::metadata(p)?.len() })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub started: String,
    pub finished: String,
    /// The config as parsed, defaults filled.
    pub config: serde_json::Value,
    /// Derived run quantities (couplings, T, T_bound, seed, ...).
    pub resolved: serde_json::Value,
    pub inputs: Vec<FileHash>,
    /// Relative to the manifest's directory.
    pub outputs: Vec<FileHash>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(MANIFEST_NAME);
        std::fs::write(&p, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(p)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_NAME))?)?)
    }

    /// Outputs whose current content no longer matches the recorded hash.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|f| sha256_file(&dir.join(&f.path)).map(|h| h != f.sha256).unwrap_or(true))
            .map(|f| f.path.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -644.4, 7.3e6, f64::MIN_POSITIVE, 2.0f64.sqrt(), 1e-300, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17);
        }
    }

    #[test]
    fn manifest_detects_edits() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(&["s", "x"]);
        t.push_nums(&[0.0, 1.5]);
        t.write(&dir.path().join("a.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert_eq!(text, "s,x\n0.0000000000000000e0,1.5000000000000000e0\n");
        let m = RunManifest {
            command: "test".into(),
            version: "0".into(),
            started: timestamp(),
            finished: timestamp(),
            config: serde_json::json!({}),
            resolved: serde_json::json!({}),
            inputs: vec![],
            outputs: vec![FileHash::of(dir.path(), "a.csv").unwrap()],
        };
        m.write(dir.path()).unwrap();
        let m = RunManifest::read(dir.path()).unwrap();
        assert!(m.verify(dir.path()).is_empty());
        std::fs::write(dir.path().join("a.csv"), text.replace("1.5", "1.6")).unwrap();
        assert_eq!(m.verify(dir.path()), vec!["a.csv".to_string()]);
        std::fs::remove_file(dir.path().join("a.csv")).unwrap();
        assert_eq!(m.verify(dir.path()).len(), 1);
    }
}
