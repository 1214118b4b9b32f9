//! Tile manifests, patient-level train/test splitting and tile QC.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::channel::quantile_sorted;
use crate::features::{FeatureCatalog, FeatureVector};
use crate::seed::{self, salt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "MSI")]
    Msi,
    #[serde(rename = "MSS")]
    Mss,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Msi, Label::Mss];

    /// Class index used by the forest: MSI = 0, MSS = 1. Scores are P(MSS).
    pub fn index(self) -> usize {
        match self {
            Label::Msi => 0,
            Label::Mss => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::Msi
        } else {
            Label::Mss
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Msi => "MSI",
            Label::Mss => "MSS",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "MSI" => Ok(Label::Msi),
            "MSS" => Ok(Label::Mss),
            other => Err(format!("label must be MSI or MSS, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileRecord {
    pub tile_id: String,
    pub patient_id: String,
    pub label: Label,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<TileRecord>,
    pub cohort_name: String,
}

const HEADER: [&str; 3] = ["tile_path", "patient_id", "label"];

impl DatasetManifest {
    /// Validates the invariants and builds a manifest.
    pub fn new(records: Vec<TileRecord>, cohort_name: impl Into<String>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::NoRecords);
        }
        let mut ids = BTreeSet::new();
        let mut labels: BTreeMap<&str, Label> = BTreeMap::new();
        for r in &records {
            if !ids.insert(r.tile_id.as_str()) {
                return Err(Error::DuplicateTile(r.tile_id.clone()));
            }
            if let Some(prev) = labels.insert(&r.patient_id, r.label) {
                if prev != r.label {
                    return Err(Error::InconsistentPatient(r.patient_id.clone()));
                }
            }
        }
        for class in Label::ALL {
            if !records.iter().any(|r| r.label == class) {
                return Err(Error::MissingClass(class.as_str()));
            }
        }
        Ok(Self {
            records,
            cohort_name: cohort_name.into(),
        })
    }

    /// Reads `tile_path,patient_id,label[,cohort]`. Relative tile paths are
    /// resolved against the manifest's directory; the tile id is the file
    /// stem.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut rows = reader.records();
        let header = match rows.next() {
            None => return Err(Error::NoRecords),
            Some(h) => h.map_err(|e| parse_error(1, e))?,
        };
        let cols: Vec<&str> = header.iter().map(str::trim).collect();
        let with_cohort = match cols.as_slice() {
            [a, b, c] if [*a, *b, *c] == HEADER => false,
            [a, b, c, "cohort"] if [*a, *b, *c] == HEADER => true,
            _ => {
                return Err(Error::Parse {
                    row: 1,
                    message: "header must be tile_path,patient_id,label[,cohort]".into(),
                })
            }
        };
        let mut records = Vec::new();
        let mut cohort = None;
        for (i, rec) in rows.enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| parse_error(row, e))?;
            if rec.iter().all(|c| c.trim().is_empty()) {
                continue;
            }
            let expected = if with_cohort { 4 } else { 3 };
            if rec.len() != expected {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {expected} columns, got {}", rec.len()),
                });
            }
            let rel = PathBuf::from(rec[0].trim());
            let full = if rel.is_absolute() { rel } else { base.join(rel) };
            if !full.is_file() {
                return Err(Error::MissingTile { row, path: full });
            }
            let tile_id = full
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Parse {
                    row,
                    message: "tile path has no usable file name".into(),
                })?
                .to_string();
            let patient_id = rec[1].trim().to_string();
            if patient_id.is_empty() {
                return Err(Error::Parse {
                    row,
                    message: "empty patient_id".into(),
                });
            }
            let label = rec[2].parse().map_err(|message| Error::Parse { row, message })?;
            if with_cohort && cohort.is_none() {
                cohort = Some(rec[3].trim().to_string());
            }
            records.push(TileRecord {
                tile_id,
                patient_id,
                label,
                path: full,
            });
        }
        let name = cohort.unwrap_or_else(|| {
            path.file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("cohort")
                .to_string()
        });
        Self::new(records, name)
    }

    /// Writes the manifest with a cohort column. Paths under the manifest's
    /// directory are written relative to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse {
            row: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        let io = |e: csv::Error| Error::Parse {
            row: 0,
            message: e.to_string(),
        };
        w.write_record(HEADER.iter().chain(&["cohort"])).map_err(io)?;
        for r in &self.records {
            let p = r.path.strip_prefix(base).unwrap_or(&r.path);
            w.write_record([
                p.to_string_lossy().as_ref(),
                &r.patient_id,
                r.label.as_str(),
                &self.cohort_name,
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Patient ids with their label, sorted by id.
    pub fn patients(&self) -> BTreeMap<String, Label> {
        self.records
            .iter()
            .map(|r| (r.patient_id.clone(), r.label))
            .collect()
    }
}

fn parse_error(row: usize, e: csv::Error) -> Error {
    Error::Parse {
        row,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_patients: BTreeSet<String>,
    pub test_patients: BTreeSet<String>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn is_train(&self, patient: &str) -> bool {
        self.train_patients.contains(patient)
    }

    /// Indices of records whose patient is in the training (or test) set.
    pub fn record_indices(&self, records: &[TileRecord], train: bool) -> Vec<usize> {
        let side = if train {
            &self.train_patients
        } else {
            &self.test_patients
        };
        records
            .iter()
            .enumerate()
            .filter(|(_, r)| side.contains(&r.patient_id))
            .map(|(i, _)| i)
            .collect()
    }
}

fn take_train(pool: &mut Vec<String>, fraction: f64, rng: &mut impl rand::Rng, what: &str) -> Result<Vec<String>> {
    if pool.len() < 2 {
        return Err(Error::TooFewPatients(format!(
            "{what} has {} patient(s); at least 2 are needed",
            pool.len()
        )));
    }
    pool.shuffle(rng);
    let n = ((fraction * pool.len() as f64).floor() as usize).clamp(1, pool.len() - 1);
    Ok(pool.drain(..n).collect())
}

/// Random patient-level split. With `stratified`, each class contributes
/// `floor(train_fraction * n_class)` training patients (at least one per
/// side); otherwise the pooled patient list is split the same way.
pub fn split_patients(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
    stratified: bool,
) -> Result<SplitAssignment> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let patients = manifest.patients();
    let mut train = BTreeSet::new();
    let mut test = BTreeSet::new();
    if stratified {
        for class in Label::ALL {
            let mut pool: Vec<String> = patients
                .iter()
                .filter(|(_, &l)| l == class)
                .map(|(p, _)| p.clone())
                .collect();
            let mut rng = seed::rng(seed, &[salt::SPLIT, class.index() as u64]);
            train.extend(take_train(&mut pool, train_fraction, &mut rng, class.as_str())?);
            test.extend(pool);
        }
    } else {
        let mut pool: Vec<String> = patients.keys().cloned().collect();
        let mut rng = seed::rng(seed, &[salt::SPLIT]);
        train.extend(take_train(&mut pool, train_fraction, &mut rng, "the cohort")?);
        test.extend(pool);
    }
    Ok(SplitAssignment {
        train_patients: train,
        test_patients: test,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QcParams {
    /// Two-sided tail mass trimmed from the immune-count distribution.
    pub immune_tail: f64,
    pub min_roi_fraction: f64,
    pub min_gray_variance: f64,
}

impl Default for QcParams {
    fn default() -> Self {
        Self {
            immune_tail: 0.01,
            min_roi_fraction: 0.05,
            min_gray_variance: 25.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Anomalous,
    ImmuneOutlier,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Anomalous => "anomalous",
            DropReason::ImmuneOutlier => "immune_outlier",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcOutcome {
    /// Indices into the input, in input order.
    pub kept: Vec<usize>,
    pub dropped: Vec<(usize, DropReason)>,
    /// Closed immune-count band that was kept.
    pub immune_band: (f64, f64),
}

impl QcOutcome {
    pub fn kept_records(&self, records: &[TileRecord]) -> Vec<TileRecord> {
        self.kept.iter().map(|&i| records[i].clone()).collect()
    }
}

/// Anomaly predicate: too little stained tissue, or too flat (blurred).
pub fn is_anomalous(v: &FeatureVector, params: &QcParams) -> bool {
    v.qc.roi_fraction < params.min_roi_fraction || v.qc.gray_variance < params.min_gray_variance
}

/// Drops anomalous tiles, then tiles whose immune count falls outside the
/// `[tail/2, 1 - tail/2]` empirical quantile band of the remaining tiles.
pub fn qc_filter(
    records: &[TileRecord],
    features: &[FeatureVector],
    catalog: &FeatureCatalog,
    params: &QcParams,
) -> Result<QcOutcome> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    if records.len() != features.len() {
        return Err(Error::LengthMismatch {
            expected: records.len(),
            got: features.len(),
        });
    }
    let immune = catalog.require("immune_num")?;
    let mut dropped = Vec::new();
    let mut candidates = Vec::new();
    for (i, v) in features.iter().enumerate() {
        if v.tile_id != records[i].tile_id {
            return Err(Error::UnknownTile(v.tile_id.clone()));
        }
        if is_anomalous(v, params) {
            dropped.push((i, DropReason::Anomalous));
        } else {
            candidates.push(i);
        }
    }
    let mut counts: Vec<f64> = candidates.iter().map(|&i| features[i].values[immune]).collect();
    counts.sort_by(f64::total_cmp);
    let band = if counts.is_empty() {
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        let t = params.immune_tail / 2.0;
        (quantile_sorted(&counts, t), quantile_sorted(&counts, 1.0 - t))
    };
    let mut kept = Vec::new();
    for i in candidates {
        let c = features[i].values[immune];
        if c < band.0 || c > band.1 {
            dropped.push((i, DropReason::ImmuneOutlier));
        } else {
            kept.push(i);
        }
    }
    dropped.sort_by_key(|d| d.0);
    Ok(QcOutcome {
        kept,
        dropped,
        immune_band: band,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, p: &str, l: Label) -> TileRecord {
        TileRecord {
            tile_id: id.into(),
            patient_id: p.into(),
            label: l,
            path: PathBuf::from(format!("{id}.png")),
        }
    }

    #[test]
    fn manifest_invariants() {
        assert!(matches!(DatasetManifest::new(vec![], "c"), Err(Error::NoRecords)));
        let mixed = vec![rec("a", "P1", Label::Msi), rec("b", "P1", Label::Mss)];
        assert!(matches!(DatasetManifest::new(mixed, "c"), Err(Error::InconsistentPatient(p)) if p == "P1"));
        let one_class = vec![rec("a", "P1", Label::Msi)];
        assert!(matches!(DatasetManifest::new(one_class, "c"), Err(Error::MissingClass("MSS"))));
        let dup = vec![rec("a", "P1", Label::Msi), rec("a", "P2", Label::Mss)];
        assert!(matches!(DatasetManifest::new(dup, "c"), Err(Error::DuplicateTile(_))));
    }

    fn ten_patients() -> DatasetManifest {
        let mut r = Vec::new();
        for p in 0..10 {
            let l = if p < 5 { Label::Msi } else { Label::Mss };
            for t in 0..3 {
                r.push(rec(&format!("p{p}_t{t}"), &format!("P{p}"), l));
            }
        }
        DatasetManifest::new(r, "c").unwrap()
    }

    #[test]
    fn stratified_split_counts() {
        let m = ten_patients();
        let s = split_patients(&m, 0.7, 1, true).unwrap();
        let pats = m.patients();
        for class in Label::ALL {
            let tr = s.train_patients.iter().filter(|p| pats[*p] == class).count();
            let te = s.test_patients.iter().filter(|p| pats[*p] == class).count();
            assert_eq!((tr, te), (3, 2));
        }
        assert!(s.train_patients.is_disjoint(&s.test_patients));
        assert_eq!(s, split_patients(&m, 0.7, 1, true).unwrap());
        let u = split_patients(&m, 0.7, 1, false).unwrap();
        assert_eq!(u.train_patients.len(), 7);
    }

    #[test]
    fn split_rejects_tiny_classes() {
        let m = DatasetManifest::new(
            vec![rec("a", "P1", Label::Msi), rec("b", "P2", Label::Mss), rec("c", "P3", Label::Mss)],
            "c",
        )
        .unwrap();
        assert!(matches!(split_patients(&m, 0.7, 1, true), Err(Error::TooFewPatients(_))));
        assert!(split_patients(&m, 1.0, 1, false).is_err());
    }
}
