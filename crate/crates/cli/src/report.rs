//! `report.json`: versions, digests, timings, counts and the output
//! inventory, updated by every command.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::output::{sha256_hex, VERSION};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Relative to the output directory when inside it.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub digest: String,
    pub seconds: f64,
    pub outputs: Vec<OutputEntry>,
    /// Stage-specific numbers (AUC, OOB accuracy, ...).
    #[serde(default)]
    pub summary: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tiles_in: usize,
    pub tiles_kept: usize,
    pub tiles_dropped: usize,
    pub dropped_by_reason: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub model_format_version: u32,
    /// Digest of the whole configuration of the latest command.
    pub config_digest: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageReport>,
    pub counts: Counts,
    /// Union of all stage outputs.
    pub outputs: Vec<OutputEntry>,
}

impl RunReport {
    /// The report at `path`, or a fresh one when absent or unreadable.
    pub fn load_or_new(path: &Path) -> Self {
        std::fs::read_to_string(path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default()
    }

    pub fn record_stage(
        &mut self,
        stage: &str,
        digest: &str,
        seconds: f64,
        files: &[std::path::PathBuf],
        root: &Path,
        summary: BTreeMap<String, serde_json::Value>,
    ) -> CliResult<()> {
        let mut outputs = Vec::with_capacity(files.len());
        for f in files {
            outputs.push(entry(f, root)?);
        }
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.stages.insert(
            stage.to_string(),
            StageReport {
                digest: digest.to_string(),
                seconds,
                outputs,
                summary,
            },
        );
        Ok(())
    }

    /// Drops entries whose files vanished or are empty, rebuilds the
    /// inventory and writes the report.
    pub fn save(&mut self, path: &Path, root: &Path, config_digest: &str, seed: u64) -> CliResult<()> {
        self.tool = "histoforest".into();
        self.version = VERSION.into();
        self.model_format_version = histoforest_core::forest::FORMAT_VERSION;
        self.config_digest = config_digest.to_string();
        self.seed = seed;
        for st in self.stages.values_mut() {
            st.outputs.retain(|o| {
                let p = if Path::new(&o.path).is_absolute() {
                    std::path::PathBuf::from(&o.path)
                } else {
                    root.join(&o.path)
                };
                std::fs::metadata(p).map(|m| m.len() > 0).unwrap_or(false)
            });
        }
        let mut all: Vec<OutputEntry> = self.stages.values().flat_map(|s| s.outputs.clone()).collect();
        all.sort_by(|a, b| a.path.cmp(&b.path));
        all.dedup_by(|a, b| a.path == b.path);
        self.outputs = all;
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

fn entry(file: &Path, root: &Path) -> CliResult<OutputEntry> {
    let bytes = std::fs::read(file).map_err(|e| CliError::io(file, e))?;
    let path = match file.strip_prefix(root) {
        Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
        Err(_) => file.to_string_lossy().into_owned(),
    };
    Ok(OutputEntry {
        path,
        bytes: bytes.len() as u64,
        sha256: sha256_hex(&bytes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inventory_tracks_existing_files() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let a = root.join("a.csv");
        let b = root.join("b.csv");
        std::fs::write(&a, "x").unwrap();
        std::fs::write(&b, "y").unwrap();
        let mut r = RunReport::default();
        r.record_stage("extract", "d1", 0.5, &[a.clone(), b.clone()], root, BTreeMap::new())
            .unwrap();
        std::fs::remove_file(&b).unwrap();
        let rp = root.join("report.json");
        r.save(&rp, root, "cfg", 7).unwrap();
        let back = RunReport::load_or_new(&rp);
        assert_eq!(back.outputs.len(), 1);
        assert_eq!(back.outputs[0].path, "a.csv");
        assert_eq!(back.seed, 7);
        assert_eq!(back.stages["extract"].digest, "d1");
    }
}
