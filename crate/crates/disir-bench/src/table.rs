//! Output files: CSV for raw rows, JSON for summaries, both carrying a
//! metadata header (command, seed, config hash, git revision).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::BenchError;

/// Provenance block written into every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub git_revision: String,
}

impl Metadata {
    pub fn new(command: &str, seed: u64, config_sha256: String) -> Self {
        Metadata {
            tool: "disir-bench".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_sha256,
            git_revision: option_env!("DISIR_GIT_REVISION").unwrap_or("unknown").to_string(),
        }
    }
}

/// One raw benchmark observation: which estimator/kernel, which coordinate
/// (gradient coordinate, K value, or epoch depending on the command), which
/// replicate, and the observed value.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub name: String,
    pub coordinate: i64,
    pub replicate: i64,
    pub value: f64,
}

/// A command result: streamable raw rows plus a JSON summary that is
/// recomputable from them.
pub trait Table {
    fn raw_rows(&self) -> Box<dyn Iterator<Item = RawRow> + '_>;
    fn summary(&self) -> serde_json::Value;
}

fn write_meta_header<W: Write>(w: &mut W, meta: &Metadata) -> std::io::Result<()> {
    writeln!(w, "# tool = {} {}", meta.tool, meta.version)?;
    writeln!(w, "# command = {}", meta.command)?;
    writeln!(w, "# seed = {}", meta.seed)?;
    writeln!(w, "# config_sha256 = {}", meta.config_sha256)?;
    writeln!(w, "# git_revision = {}", meta.git_revision)?;
    Ok(())
}

/// Formats a float with shortest-roundtrip precision; deterministic.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Writes the raw rows of a [`Table`] as CSV.
pub fn write_raw_csv(path: &Path, meta: &Metadata, table: &dyn Table) -> Result<(), BenchError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_meta_header(&mut w, meta)?;
    writeln!(w, "name,coordinate,replicate,value")?;
    for row in table.raw_rows() {
        writeln!(
            w,
            "{},{},{},{}",
            row.name,
            row.coordinate,
            row.replicate,
            fmt_f64(row.value)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a free-form CSV with the metadata header; used for trace-style
/// outputs that do not fit the raw-row shape.
pub fn write_csv_rows(
    path: &Path,
    meta: &Metadata,
    header: &str,
    rows: impl Iterator<Item = String>,
) -> Result<(), BenchError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_meta_header(&mut w, meta)?;
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `{ "meta": ..., "summary": ... }` as pretty JSON.
pub fn write_summary_json(
    path: &Path,
    meta: &Metadata,
    summary: &serde_json::Value,
) -> Result<(), BenchError> {
    let doc = serde_json::json!({
        "meta": meta,
        "summary": summary,
    });
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &doc)
        .map_err(|e| BenchError::Numerical(format!("summary serialization: {e}")))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Reads back the `value` column grouped by `(name, coordinate)` in file
/// order; the recompute-check utility for summaries.
pub fn read_raw_csv_values(
    path: &Path,
) -> Result<Vec<((String, i64), Vec<f64>)>, BenchError> {
    let text = std::fs::read_to_string(path)?;
    let mut groups: Vec<((String, i64), Vec<f64>)> = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("name,") || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(BenchError::Numerical(format!("malformed raw row: {line}")));
        }
        let key = (
            parts[0].to_string(),
            parts[1]
                .parse::<i64>()
                .map_err(|e| BenchError::Numerical(e.to_string()))?,
        );
        let value = parts[3]
            .parse::<f64>()
            .map_err(|e| BenchError::Numerical(e.to_string()))?;
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, vs)) => vs.push(value),
            None => groups.push((key, vec![value])),
        }
    }
    Ok(groups)
}
