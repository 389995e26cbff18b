//! Atomic JSON/CSV writers and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qdpair::io_util::write_atomic;
use serde::{Deserialize, Serialize};

use crate::config::SCHEMA_VERSION;
use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn ensure_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

/// Pretty JSON with the schema and tool version prepended to the object.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut v = serde_json::to_value(value).map_err(|e| CliError::Data(e.to_string()))?;
    if let serde_json::Value::Object(map) = &mut v {
        let mut out = serde_json::Map::new();
        out.insert("schema_version".into(), SCHEMA_VERSION.into());
        out.insert("tool_version".into(), TOOL_VERSION.into());
        for (k, val) in std::mem::take(map) {
            out.entry(k).or_insert(val);
        }
        v = serde_json::Value::Object(out);
    }
    let mut text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(CliError::from)
}

/// CSV from a header and rows of numbers (shortest round-trip formatting).
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> CliResult {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                s.push(',');
            }
            first = false;
            if v.is_nan() {
                s.push_str("nan");
            } else {
                let _ = write!(s, "{v}");
            }
        }
        s.push('\n');
    }
    write_atomic(path, s.as_bytes()).map_err(CliError::from)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub basis: String,
    pub records: u64,
}

/// Provenance written next to simulated streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u16,
    pub config_sha256: String,
    pub seed: u64,
    /// Iteration index, or `None` for the top level of a multi-iteration run.
    pub iteration: Option<u64>,
    pub iterations: u64,
    /// Start of this iteration on the run clock, s.
    pub t_start_s: f64,
    pub rep_rate_ghz: f64,
    pub pulses_per_combination: u64,
    pub combination_duration_s: f64,
    pub files: Vec<FileEntry>,
    pub subdirectories: Vec<String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> CliResult<Option<Manifest>> {
        let p = dir.join(MANIFEST);
        if !p.is_file() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
    }

    pub fn rep_period_ps(&self) -> f64 {
        1000.0 / self.rep_rate_ghz
    }
}

/// Default output location `<input>/<name>` unless `--out` was given.
pub fn out_dir(out: &Option<PathBuf>, input: &Path, name: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| input.join(name))
}
