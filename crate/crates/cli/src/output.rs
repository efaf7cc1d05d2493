//! Artifact writers. Every file carries the config hash and tool version.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use uap_core::constructor::{ConstructionReport, DirectionSource, Pipeline, ScaleRecord};
use uap_core::NetworkDocument;

use crate::CliError;

pub const TOOL_VERSION: &str = concat!("uap ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub tool_version: String,
}

impl Provenance {
    pub fn of<T: Serialize>(config: &T) -> Self {
        let canonical = serde_json::to_string(config).unwrap_or_default();
        Self::of_bytes(canonical.as_bytes())
    }

    pub fn of_bytes(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let config_hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Provenance { config_hash, tool_version: TOOL_VERSION.to_string() }
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("cannot write {}: {e}", path.display()))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<PathBuf, CliError> {
    fs::write(path, text).map_err(|e| io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<PathBuf, CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn network_document(report: &ConstructionReport, prov: &Provenance) -> NetworkDocument {
    let mut doc = NetworkDocument::from_weights(&report.weights, &report.sigma);
    doc.config_hash = Some(prov.config_hash.clone());
    doc.tool_version = Some(prov.tool_version.clone());
    doc
}

#[derive(Serialize)]
struct HistoryRow<'a> {
    k: usize,
    lambda: f64,
    lo: f64,
    hi: f64,
    crossing: f64,
    ratio: f64,
    minimax_error: f64,
    lambda_prime: f64,
    source: String,
    condition: f64,
    coefficient_norm: f64,
    max_output_weight: f64,
    min_input_norm: f64,
    certified: f64,
    outcome: &'a str,
    config_hash: &'a str,
    tool_version: &'a str,
}

fn source_label(s: Option<DirectionSource>) -> String {
    match s {
        None => String::new(),
        Some(DirectionSource::SchurSeed) => "schur_seed".into(),
        Some(DirectionSource::Redraw { attempt }) => format!("redraw_{attempt}"),
        Some(DirectionSource::Frozen { seed }) => format!("frozen_{seed}"),
        Some(DirectionSource::Injected) => "injected".into(),
    }
}

fn history_row<'a>(r: &'a ScaleRecord, prov: &'a Provenance) -> HistoryRow<'a> {
    HistoryRow {
        k: r.k,
        lambda: r.lambda,
        lo: r.lo,
        hi: r.hi,
        crossing: r.crossing,
        ratio: r.ratio,
        minimax_error: r.minimax_error,
        lambda_prime: r.lambda_prime,
        source: source_label(r.source),
        condition: r.condition,
        coefficient_norm: r.coefficient_norm,
        max_output_weight: r.max_output_weight,
        min_input_norm: r.min_input_norm,
        certified: r.certified,
        outcome: &r.outcome,
        config_hash: &prov.config_hash,
        tool_version: &prov.tool_version,
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    config_hash: &'a str,
    tool_version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a ConstructionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// network.json, report.csv and report.json for a finished construction.
pub fn write_build(dir: &Path, report: &ConstructionReport, prov: &Provenance) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(dir)?;
    let doc = network_document(report, prov);
    let text = doc.to_json().map_err(|e| io(dir, e))? + "\n";
    let rows: Vec<HistoryRow> = report.history.iter().map(|r| history_row(r, prov)).collect();
    let file = ReportFile { config_hash: &prov.config_hash, tool_version: &prov.tool_version, report: Some(report), error: None };
    Ok(vec![
        write_text(&dir.join("network.json"), &text)?,
        write_csv(&dir.join("report.csv"), &rows)?,
        write_json(&dir.join("report.json"), &file)?,
    ])
}

/// report.json recording a construction that produced no network.
pub fn write_failure(dir: &Path, message: &str, prov: &Provenance) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(dir)?;
    let file = ReportFile {
        config_hash: &prov.config_hash,
        tool_version: &prov.tool_version,
        report: None,
        error: Some(message.to_string()),
    };
    Ok(vec![write_json(&dir.join("report.json"), &file)?])
}

pub fn summary(name: &str, report: &ConstructionReport) -> String {
    let mut s = String::new();
    let line = |s: &mut String, k: &str, v: String| s.push_str(&format!("  {k:<22}{v}\n"));
    s.push_str(&format!("{name}: {:?}\n", report.status));
    line(&mut s, "pipeline", format!("{:?}", report.pipeline));
    line(&mut s, "activation", report.sigma.name().to_string());
    line(&mut s, "hidden units N", report.hidden_units.to_string());
    line(&mut s, "active units", report.active_units.to_string());
    line(&mut s, "degree", report.degree.to_string());
    if let Some(d) = report.diagnostics.d_epsilon {
        line(&mut s, "d_eps", d.to_string());
    }
    if let Some(k) = report.scale_index_used {
        let label = if report.pipeline == Pipeline::RandomFeatures { "accepted attempt" } else { "scale index k" };
        line(&mut s, label, k.to_string());
    }
    let errs: Vec<String> = report.certified_error.iter().map(|e| format!("{e:.6e}")).collect();
    line(&mut s, "certified error", errs.join(", "));
    line(&mut s, "certification grid", format!("{:?} ({} points)", report.certificate.resolution, report.certificate.points));
    line(&mut s, "max |W2|", format!("{:.6e}", report.constraint_audit.max_output_weight));
    line(&mut s, "min ||w||", format!("{:.6e}", report.constraint_audit.min_input_norm));
    line(&mut s, "constraints satisfied", report.constraint_audit.satisfied.to_string());
    for note in &report.diagnostics.notes {
        line(&mut s, "note", note.clone());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_hex() {
        let a = Provenance::of_bytes(b"abc");
        assert_eq!(a.config_hash, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(a, Provenance::of_bytes(b"abc"));
        assert_ne!(a, Provenance::of_bytes(b"abd"));
        assert!(a.tool_version.starts_with("uap "));
    }
}
