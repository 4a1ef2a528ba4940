use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Informational output without an inequality to check.
    Info,
}

/// Tabular view of a result for csv and text output.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Table {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push<S: ToString>(&mut self, row: impl IntoIterator<Item = S>) {
        self.rows.push(row.into_iter().map(|c| c.to_string()).collect());
    }
}

pub struct Outcome {
    pub verdict: Verdict,
    pub result: Value,
    pub table: Table,
}

/// First 16 hex digits of the SHA-256 of the canonical configuration JSON.
pub fn config_hash(config: &Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn render(command: &str, config: &Value, seed: u64, outcome: &Outcome, format: Format) -> String {
    let hash = config_hash(config);
    let version = env!("CARGO_PKG_VERSION");
    match format {
        Format::Json => {
            let doc = json!({
                "tool": "subriemann",
                "version": version,
                "command": command,
                "config_hash": hash,
                "seed": seed,
                "config": config,
                "verdict": outcome.verdict,
                "result": outcome.result,
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("values serialise");
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut s = format!("# subriemann {version} {command} config_hash={hash} seed={seed}\n");
            s.push_str(&outcome.table.header.join(","));
            s.push('\n');
            for row in &outcome.table.rows {
                s.push_str(&row.iter().map(|c| csv_cell(c)).collect::<Vec<_>>().join(","));
                s.push('\n');
            }
            s
        }
        Format::Text => {
            let mut s = format!("subriemann {version}  {command}\nconfig_hash {hash}\nseed {seed}\n");
            let widths: Vec<usize> = (0..outcome.table.header.len())
                .map(|c| {
                    outcome
                        .table
                        .rows
                        .iter()
                        .map(|r| r.get(c).map_or(0, |v| v.chars().count()))
                        .chain(std::iter::once(outcome.table.header[c].chars().count()))
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |cells: &[String]| {
                cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
            };
            s.push_str(&line(&outcome.table.header));
            s.push('\n');
            for row in &outcome.table.rows {
                s.push_str(&line(row));
                s.push('\n');
            }
            let _ = writeln!(s, "verdict {}", serde_json::to_value(outcome.verdict).expect("enum").as_str().unwrap_or("?"));
            s
        }
    }
}

fn csv_cell(c: &str) -> String {
    if c.contains([',', '"', '\n']) {
        format!("\"{}\"", c.replace('"', "\"\""))
    } else {
        c.to_string()
    }
}

pub fn num(v: f64) -> String {
    format!("{v:.6e}")
}
