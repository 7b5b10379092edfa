//! Result files and their manifests.

use std::path::{Path, PathBuf};

use oim_core::export::Table;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::Format;
use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_VAR: &str = "OIM_OUTPUT_DIR";

/// A finished command: its table, resolved configuration and any
/// per-point failures that did not abort the run.
pub struct Report {
    pub command: &'static str,
    pub config: Value,
    pub table: Table,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub alpha_sq: f64,
    pub target: f64,
    pub error: String,
    /// Exit code the failure maps to.
    #[serde(skip)]
    pub code: u8,
}

pub fn render(report: &Report, format: Format) -> String {
    match format {
        Format::Csv => report.table.to_csv(&report.config),
        Format::Json => report.table.to_json(&report.config),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Explicit path, else `$OIM_OUTPUT_DIR/<command>.<ext>`, else `None`
/// for stdout.
pub fn destination(out: Option<PathBuf>, command: &str, format: Format) -> Option<PathBuf> {
    out.or_else(|| {
        std::env::var_os(OUTPUT_DIR_VAR)
            .filter(|d| !d.is_empty())
            .map(|d| PathBuf::from(d).join(format!("{command}.{}", format.extension())))
    })
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes the result and, for file outputs, a manifest next to it.
/// Returns the path written, if any.
pub fn emit(
    report: &Report,
    format: Format,
    out: Option<PathBuf>,
) -> Result<Option<PathBuf>, CliError> {
    let body = render(report, format);
    for f in &report.failures {
        eprintln!(
            "warning: alpha_sq={} target={}: {}",
            f.alpha_sq, f.target, f.error
        );
    }
    let Some(path) = destination(out, report.command, format) else {
        print!("{body}");
        return Ok(None);
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    write(&path, body.as_bytes())?;
    let manifest = json!({
        "tool": "oim",
        "version": env!("CARGO_PKG_VERSION"),
        "command": report.command,
        "output": path.file_name().map(|n| n.to_string_lossy().into_owned()),
        "format": format,
        "sha256": sha256_hex(body.as_bytes()),
        "rows": report.table.rows.len(),
        "config": report.config,
        "failures": report.failures,
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(&manifest_path(&path), text.as_bytes())?;
    Ok(Some(path))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            manifest_path(Path::new("runs/a.csv")),
            PathBuf::from("runs/a.csv.manifest.json")
        );
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
