//! Provenance headers and atomic file output.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const TOOL_VERSION: &str = concat!("exoval ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub config_sha256: String,
    /// CRC-32 of the model payload, when a model was involved.
    pub model_crc32: Option<String>,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(cfg: &RunConfig, model_crc32: Option<u32>) -> Self {
        Self {
            tool: TOOL_VERSION.into(),
            config_sha256: cfg.sha256(),
            model_crc32: model_crc32.map(|c| format!("{c:08x}")),
            config: cfg.to_json(),
        }
    }

    /// Lines for a `#`-commented CSV preamble.
    pub fn comment_lines(&self) -> Vec<String> {
        vec![
            format!("tool: {}", self.tool),
            format!("config_sha256: {}", self.config_sha256),
            format!(
                "model_crc32: {}",
                self.model_crc32.as_deref().unwrap_or("none")
            ),
            format!("config: {}", self.config),
        ]
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Write via a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    ensure_dir(dir)?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

fn escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn csv_bytes(prov: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = String::new();
    for line in prov.comment_lines() {
        out.push_str("# ");
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let fields: Vec<String> = row.iter().map(|f| escape(f)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn write_csv(
    path: &Path,
    prov: &Provenance,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    write_atomic(path, &csv_bytes(prov, header, rows))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Document<T> {
    pub provenance: Provenance,
    pub data: T,
}

pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, data: &T) -> Result<()> {
    let doc = Document {
        provenance: prov.clone(),
        data,
    };
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn num(x: f64) -> String {
    x.to_string()
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
