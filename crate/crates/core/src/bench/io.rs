//! Result persistence: CSV tables tagged with the config hash, and run
//! manifests.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{Error, Result};

/// Reals are written with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV table whose first column is `config_hash`.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    hash: String,
}

impl Table {
    pub fn new(hash: &str, columns: &[&str]) -> Self {
        let mut header = vec!["config_hash".to_string()];
        header.extend(columns.iter().map(|c| c.to_string()));
        Table {
            header,
            rows: Vec::new(),
            hash: hash.to_string(),
        }
    }

    pub fn push(&mut self, fields: Vec<String>) {
        assert_eq!(fields.len() + 1, self.header.len(), "row width does not match the header");
        let mut row = vec![self.hash.clone()];
        row.extend(fields);
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Machine-readable record of one CLI run.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
    pub wall_time_s: f64,
    /// Files written by the run, relative to the output directory.
    pub outputs: Vec<PathBuf>,
    /// Per-item wall times, keyed by a short label.
    pub timings: Vec<(String, f64)>,
    /// Problems that did not abort the run.
    pub warnings: Vec<String>,
    /// The fully resolved configuration.
    pub config: toml::Value,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let s = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        write_file(path, s.as_bytes())
    }
}

/// `pgdro <version>`, with the git revision when built from a checkout.
pub fn version_string() -> String {
    match option_env!("PGDRO_GIT_REV") {
        Some(rev) => format!("pgdro {} ({rev})", env!("CARGO_PKG_VERSION")),
        None => format!("pgdro {}", env!("CARGO_PKG_VERSION")),
    }
}
