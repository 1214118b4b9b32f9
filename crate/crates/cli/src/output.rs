//! Output layout, stage digests and the table writer.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Fixed layout under the run's output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn features(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn matrix(&self) -> PathBuf {
        self.features().join("matrix.csv")
    }

    pub fn qc(&self) -> PathBuf {
        self.features().join("qc.csv")
    }

    pub fn screen(&self) -> PathBuf {
        self.features().join("screen.csv")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn forest(&self) -> PathBuf {
        self.model().join("forest.json")
    }

    pub fn split(&self) -> PathBuf {
        self.model().join("split.csv")
    }

    pub fn oob(&self) -> PathBuf {
        self.model().join("oob_scores.csv")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn explain(&self) -> PathBuf {
        self.root.join("explain")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
}

pub fn ensure_dir(p: &Path) -> CliResult<()> {
    std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

/// First 16 hex digits of SHA-256 over the JSON form of `value`.
pub fn digest_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    hex16(&Sha256::digest(bytes))
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex16(&Sha256::digest(bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hex16(d: &[u8]) -> String {
    d.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Provenance line written at the top of every table.
pub fn header_line(stage: &str, digest: &str) -> String {
    format!("histoforest {VERSION} stage={stage} digest={digest}")
}

/// The `digest=` value of a provenance line, if any.
pub fn parse_digest(comment: &str) -> Option<String> {
    comment
        .split_whitespace()
        .find_map(|t| t.strip_prefix("digest="))
        .map(str::to_string)
}

/// Reads the provenance digest from a table's first line.
pub fn file_digest(path: &Path) -> CliResult<Option<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .and_then(parse_digest))
}

/// Fails unless `path` exists and carries `expected` as its digest.
pub fn require_artifact(
    path: &Path,
    artifact: &'static str,
    stage: &'static str,
    expected: &str,
) -> CliResult<()> {
    if !path.is_file() {
        return Err(CliError::MissingPrerequisite {
            artifact,
            stage,
            path: path.to_path_buf(),
        });
    }
    let found = file_digest(path)?.unwrap_or_default();
    if found != expected {
        return Err(CliError::StaleArtifact {
            artifact,
            stage,
            path: path.to_path_buf(),
            found,
            expected: expected.to_string(),
        });
    }
    Ok(())
}

/// A comma-separated table with a provenance line and one header row.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path, stage: &str, digest: &str) -> CliResult<()> {
        let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "# {}", header_line(stage, digest)).map_err(|e| CliError::io(path, e))?;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| CliError::io(path, std::io::Error::other(e.to_string()));
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }
}

/// Rows of a table written by [`Table::write`], header excluded.
pub fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let body: String = text
        .lines()
        .skip_while(|l| l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let bad = |e: csv::Error| CliError::io(path, std::io::Error::other(e.to_string()));
    let header = r.headers().map_err(bad)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(bad)?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
