//! Output assembly. Every artifact carries the version and the fully
//! resolved configuration, so a rerun with the same inputs is byte-identical.

use std::io::Write;

use anyhow::Context;
use serde::Serialize;

use crate::config::{Format, RunConfig};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("MMLAT_GIT_DESCRIBE"), ")");

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    version: &'a str,
    command: &'a str,
    config: &'a RunConfig,
    result: &'a T,
}

/// Command output: a JSON document, or a table that can also be rendered
/// as CSV. Table cells are JSON scalars; `null` renders as an empty cell.
pub enum Artifact {
    Json(serde_json::Value),
    Table { header: Vec<&'static str>, rows: Vec<Vec<serde_json::Value>> },
}

fn csv_cell(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => String::new(),
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn render(command: &str, cfg: &RunConfig, artifact: &Artifact) -> anyhow::Result<Vec<u8>> {
    let format = cfg.output.format.unwrap_or(match artifact {
        Artifact::Json(_) => Format::Json,
        Artifact::Table { .. } => Format::Csv,
    });
    let mut buf = Vec::new();
    match (format, artifact) {
        (Format::Json, Artifact::Json(result)) => {
            serde_json::to_writer_pretty(&mut buf, &Envelope { version: VERSION, command, config: cfg, result })?;
            buf.push(b'\n');
        }
        (Format::Json, Artifact::Table { header, rows }) => {
            let records: Vec<serde_json::Map<String, serde_json::Value>> = rows
                .iter()
                .map(|row| header.iter().map(|h| h.to_string()).zip(row.iter().cloned()).collect())
                .collect();
            serde_json::to_writer_pretty(&mut buf, &Envelope { version: VERSION, command, config: cfg, result: &records })?;
            buf.push(b'\n');
        }
        (Format::Csv, Artifact::Table { header, rows }) => {
            writeln!(buf, "# mmlat {VERSION}")?;
            writeln!(buf, "# command: {command}")?;
            writeln!(buf, "# config: {}", serde_json::to_string(cfg)?)?;
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for row in rows {
                w.write_record(row.iter().map(csv_cell))?;
            }
            w.flush()?;
        }
        (Format::Csv, Artifact::Json(_)) => {
            anyhow::bail!("command `{command}` has no tabular output; use output.format = \"json\"")
        }
    }
    Ok(buf)
}

pub fn emit(command: &str, cfg: &RunConfig, artifact: &Artifact) -> anyhow::Result<()> {
    let bytes = render(command, cfg, artifact)?;
    match &cfg.output.path {
        Some(path) => std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(&bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}
