//! The six subcommands. Each reads its inputs from the output layout,
//! checks their provenance digests, writes its tables and figures, and
//! updates `report.json`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};

use histoforest_core::dataset::{qc_filter, split_patients, DatasetManifest, Label, TileRecord};
use histoforest_core::explain::{conditional_depth, importance_report, prediction_grid, DEPTH_CAP};
use histoforest_core::features::extract::extract_tile;
use histoforest_core::features::matrix::MatrixRow;
use histoforest_core::forest::{fit_forest, patient_scores, Forest, PatientScore, TileScore};
use histoforest_core::pretreat::{detect_background, neutralize_rgb_mean, StainBasis};
use histoforest_core::stats::{feature_screen, roc_auc, score_separation, RocCurve};
use histoforest_core::synthgen::{generate_corpus, ground_truth};
use histoforest_core::table::num;
use histoforest_core::{FeatureCatalog, FeatureMatrix, FeatureVector, TileImage};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{digest_bytes, digest_of, ensure_dir, header_line, require_artifact, Layout, Table, VERSION};
use crate::report::RunReport;
use crate::svg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Extract,
    Train,
    Evaluate,
    Explain,
    Screen,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Extract => "extract",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Explain => "explain",
            Command::Screen => "screen",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    pub ablate_rgb_mean: bool,
}

/// What a command wrote, for the report.
struct Outcome {
    digest: String,
    files: Vec<PathBuf>,
    summary: BTreeMap<String, Value>,
    counts: Option<crate::report::Counts>,
}

pub struct Runner {
    cfg: RunConfig,
    layout: Layout,
    catalog: FeatureCatalog,
    basis: StainBasis,
    opts: Options,
}

impl Runner {
    pub fn new(cfg: RunConfig, opts: Options) -> CliResult<Self> {
        cfg.validate()?;
        let catalog = match &cfg.paths.catalog {
            Some(p) => FeatureCatalog::load(&cfg.resolve(p))?,
            None => FeatureCatalog::default_catalog(),
        };
        let basis = match &cfg.paths.stain_basis {
            Some(p) => StainBasis::load(&cfg.resolve(p))?,
            None => StainBasis::default_he(),
        };
        let layout = Layout::new(cfg.output_dir());
        Ok(Self {
            cfg,
            layout,
            catalog,
            basis,
            opts,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn run(&self, cmd: Command) -> CliResult<()> {
        let t0 = Instant::now();
        log::info!("{}: start", cmd.as_str());
        let out = match cmd {
            Command::Synth => self.synth()?,
            Command::Extract => self.extract()?,
            Command::Train => self.train()?,
            Command::Evaluate => self.evaluate()?,
            Command::Explain => self.explain()?,
            Command::Screen => self.screen()?,
        };
        let seconds = t0.elapsed().as_secs_f64();
        ensure_dir(&self.layout.root)?;
        let rp = self.layout.report();
        let mut report = RunReport::load_or_new(&rp);
        report.record_stage(cmd.as_str(), &out.digest, seconds, &out.files, &self.layout.root, out.summary)?;
        if let Some(c) = out.counts {
            report.counts = c;
        }
        report.save(&rp, &self.layout.root, &digest_of(&self.cfg), self.cfg.run.seed)?;
        log::info!("{}: done in {seconds:.1}s", cmd.as_str());
        Ok(())
    }

    fn seed(&self) -> u64 {
        self.cfg.run.seed
    }

    fn synth_digest(&self) -> String {
        digest_of(&json!({"stage": "synth", "version": VERSION, "spec": self.cfg.synth_spec()}))
    }

    fn extract_digest(&self) -> CliResult<String> {
        let path = self.cfg.manifest_path();
        let bytes = std::fs::read(&path).map_err(|_| CliError::MissingPrerequisite {
            artifact: "tile manifest",
            stage: "synth",
            path: path.clone(),
        })?;
        Ok(digest_of(&json!({
            "stage": "extract",
            "version": VERSION,
            "seed": self.seed(),
            "manifest": digest_bytes(&bytes),
            "catalog": self.catalog.digest(),
            "basis": self.basis.vectors(),
            "pretreat": self.cfg.pretreat,
            "segment": self.cfg.segment,
            "features": self.cfg.features,
            "qc": self.cfg.dataset.qc,
        })))
    }

    fn train_digest(&self) -> CliResult<String> {
        Ok(digest_of(&json!({
            "stage": "train",
            "extract": self.extract_digest()?,
            "seed": self.seed(),
            "train_fraction": self.cfg.dataset.train_fraction,
            "stratified": self.cfg.dataset.stratified,
            "forest": self.cfg.forest,
        })))
    }

    fn synth(&self) -> CliResult<Outcome> {
        let spec = self.cfg.synth_spec();
        let dir = self.cfg.corpus_dir();
        ensure_dir(&dir)?;
        let manifest = generate_corpus(&spec, &dir)?;
        let digest = self.synth_digest();
        let mut truth = Table::new([
            "tile_id",
            "patient_id",
            "label",
            "nuclei",
            "immune",
            "circles",
            "tint_r",
            "tint_g",
            "tint_b",
        ]);
        for r in &manifest.records {
            let t = ground_truth(&spec, &r.tile_id)?;
            truth.push(vec![
                r.tile_id.clone(),
                r.patient_id.clone(),
                r.label.to_string(),
                t.nucleus_count().to_string(),
                t.immune_count().to_string(),
                t.circle_count().to_string(),
                num(t.tint[0]),
                num(t.tint[1]),
                num(t.tint[2]),
            ]);
        }
        let truth_path = dir.join("truth.csv");
        truth.write(&truth_path, "synth", &digest)?;
        let mut summary = BTreeMap::new();
        summary.insert("tiles".into(), json!(manifest.records.len()));
        summary.insert("patients".into(), json!(manifest.patients().len()));
        summary.insert("preset".into(), json!(self.cfg.synth.preset.as_str()));
        Ok(Outcome {
            digest,
            files: vec![dir.join("manifest.csv"), truth_path],
            summary,
            counts: None,
        })
    }

    fn load_manifest(&self) -> CliResult<DatasetManifest> {
        let path = self.cfg.manifest_path();
        if !path.is_file() {
            return Err(CliError::MissingPrerequisite {
                artifact: "tile manifest",
                stage: "synth",
                path,
            });
        }
        Ok(DatasetManifest::load(&path)?)
    }

    fn extract_all(&self, records: &[TileRecord], tiles: Option<&[TileImage]>) -> CliResult<Vec<FeatureVector>> {
        let params = self.cfg.extract_params();
        let seed = self.seed();
        let out: Result<Vec<FeatureVector>, histoforest_core::Error> = records
            .par_iter()
            .enumerate()
            .map(|(i, r)| {
                let loaded;
                let tile = match tiles {
                    Some(t) => &t[i],
                    None => {
                        loaded = TileImage::load_png(&r.path)?;
                        &loaded
                    }
                };
                extract_tile(&r.tile_id, tile, &self.catalog, &params, &self.basis, seed)
            })
            .collect();
        Ok(out?)
    }

    fn extract(&self) -> CliResult<Outcome> {
        let manifest = self.load_manifest()?;
        let digest = self.extract_digest()?;
        let vectors = self.extract_all(&manifest.records, None)?;
        log::info!("extracted {} tiles", vectors.len());
        let qc = qc_filter(&manifest.records, &vectors, &self.catalog, &self.cfg.dataset.qc)?;
        let names: Vec<String> = self.catalog.names().map(str::to_string).collect();
        let mut matrix = FeatureMatrix::new(names);
        for &i in &qc.kept {
            let r = &manifest.records[i];
            matrix.push(MatrixRow::from_vector(vectors[i].clone(), &r.patient_id, r.label))?;
        }
        ensure_dir(&self.layout.features())?;
        matrix.write_csv(&self.layout.matrix(), Some(&header_line("extract", &digest)))?;

        let reasons: HashMap<usize, &str> = qc.dropped.iter().map(|(i, r)| (*i, r.as_str())).collect();
        let immune = self.catalog.require("immune_num")?;
        let mut t = Table::new([
            "tile_id",
            "patient_id",
            "label",
            "status",
            "reason",
            "roi_fraction",
            "gray_variance",
            "immune_num",
        ]);
        let mut by_reason: BTreeMap<String, usize> = BTreeMap::new();
        for (i, r) in manifest.records.iter().enumerate() {
            let v = &vectors[i];
            let reason = reasons.get(&i).copied();
            if let Some(reason) = reason {
                *by_reason.entry(reason.to_string()).or_default() += 1;
            }
            t.push(vec![
                r.tile_id.clone(),
                r.patient_id.clone(),
                r.label.to_string(),
                if reason.is_some() { "dropped" } else { "kept" }.into(),
                reason.unwrap_or("").into(),
                num(v.qc.roi_fraction),
                num(v.qc.gray_variance),
                num(v.values[immune]),
            ]);
        }
        t.write(&self.layout.qc(), "extract", &digest)?;
        let flagged = vectors.iter().filter(|v| v.flags.any()).count();
        let mut summary = BTreeMap::new();
        summary.insert("flagged_tiles".into(), json!(flagged));
        summary.insert("immune_band".into(), json!([qc.immune_band.0, qc.immune_band.1]));
        summary.insert("features".into(), json!(self.catalog.len()));
        Ok(Outcome {
            digest,
            files: vec![self.layout.matrix(), self.layout.qc()],
            summary,
            counts: Some(crate::report::Counts {
                tiles_in: manifest.records.len(),
                tiles_kept: qc.kept.len(),
                tiles_dropped: qc.dropped.len(),
                dropped_by_reason: by_reason,
            }),
        })
    }

    fn read_matrix(&self) -> CliResult<FeatureMatrix> {
        let digest = self.extract_digest()?;
        require_artifact(&self.layout.matrix(), "feature matrix", "extract", &digest)?;
        let (m, _) = FeatureMatrix::read_csv(&self.layout.matrix())?;
        if m.names.iter().map(String::as_str).ne(self.catalog.names()) {
            return Err(histoforest_core::Error::CatalogMismatch {
                model: "feature matrix columns".into(),
                catalog: self.catalog.digest(),
            }
            .into());
        }
        Ok(m)
    }

    fn train(&self) -> CliResult<Outcome> {
        let m = self.read_matrix()?;
        let digest = self.train_digest()?;
        let manifest = records_of(&m)?;
        let split = split_patients(
            &manifest,
            self.cfg.dataset.train_fraction,
            self.seed(),
            self.cfg.dataset.stratified,
        )?;
        let train_idx = split.record_indices(&manifest.records, true);
        let rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| m.rows[i].values.clone()).collect();
        let labels: Vec<Label> = train_idx.iter().map(|&i| m.rows[i].label).collect();
        let mut forest = fit_forest(&rows, &labels, &self.cfg.forest, self.seed())?.with_catalog(&self.catalog);
        forest.training_ids = train_idx.iter().map(|&i| m.rows[i].tile_id.clone()).collect();
        forest.provenance = digest.clone();
        ensure_dir(&self.layout.model())?;
        forest.save(&self.layout.forest())?;

        let mut tiles_per_patient: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &m.rows {
            *tiles_per_patient.entry(r.patient_id.as_str()).or_default() += 1;
        }
        let mut st = Table::new(["patient_id", "label", "set", "n_tiles"]);
        for (p, label) in manifest.patients() {
            st.push(vec![
                p.clone(),
                label.to_string(),
                if split.is_train(&p) { "train" } else { "test" }.into(),
                tiles_per_patient[p.as_str()].to_string(),
            ]);
        }
        st.write(&self.layout.split(), "train", &digest)?;

        let oob = forest.oob_scores(&rows);
        let mut ot = Table::new(["tile_id", "patient_id", "label", "oob_msi_score"]);
        let (mut hits, mut scored) = (0usize, 0usize);
        for (k, &i) in train_idx.iter().enumerate() {
            let r = &m.rows[i];
            if let Some(mss) = oob[k] {
                scored += 1;
                let pred = if mss >= 0.5 { Label::Mss } else { Label::Msi };
                hits += usize::from(pred == r.label);
            }
            ot.push(vec![
                r.tile_id.clone(),
                r.patient_id.clone(),
                r.label.to_string(),
                oob[k].map(|s| num(1.0 - s)).unwrap_or_default(),
            ]);
        }
        ot.write(&self.layout.oob(), "train", &digest)?;
        let mut summary = BTreeMap::new();
        summary.insert("train_patients".into(), json!(split.train_patients.len()));
        summary.insert("test_patients".into(), json!(split.test_patients.len()));
        summary.insert("train_tiles".into(), json!(rows.len()));
        summary.insert("n_trees".into(), json!(forest.n_trees()));
        if scored > 0 {
            summary.insert("oob_accuracy".into(), json!(hits as f64 / scored as f64));
        }
        Ok(Outcome {
            digest,
            files: vec![self.layout.forest(), self.layout.split(), self.layout.oob()],
            summary,
            counts: None,
        })
    }

    /// Matrix, test-patient set and forest, all checked against the current
    /// configuration.
    fn load_model(&self) -> CliResult<(FeatureMatrix, HashSet<String>, Forest)> {
        let m = self.read_matrix()?;
        let td = self.train_digest()?;
        require_artifact(&self.layout.split(), "patient split", "train", &td)?;
        let fp = self.layout.forest();
        if !fp.is_file() {
            return Err(CliError::MissingPrerequisite {
                artifact: "model",
                stage: "train",
                path: fp,
            });
        }
        let forest = Forest::load(&fp)?;
        if forest.provenance != td {
            return Err(CliError::StaleArtifact {
                artifact: "model",
                stage: "train",
                path: fp,
                found: forest.provenance.clone(),
                expected: td,
            });
        }
        forest.check_catalog(&self.catalog)?;
        let (_, rows) = crate::output::read_table(&self.layout.split())?;
        let test = rows
            .into_iter()
            .filter(|r| r.get(2).map(String::as_str) == Some("test"))
            .map(|r| r[0].clone())
            .collect();
        Ok((m, test, forest))
    }

    fn score(&self, forest: &Forest, ids: &[&str], rows: &[&[f64]]) -> CliResult<Vec<TileScore>> {
        ids.par_iter()
            .zip(rows)
            .map(|(id, x)| forest.predict_row(id, x).map_err(CliError::from))
            .collect()
    }

    fn patient_roc(&self, scores: &[TileScore], records: &[TileRecord]) -> CliResult<(Vec<PatientScore>, Vec<Label>, RocCurve)> {
        let ps = patient_scores(scores, records)?;
        let label_of: HashMap<&str, Label> = records.iter().map(|r| (r.patient_id.as_str(), r.label)).collect();
        let labels: Vec<Label> = ps.iter().map(|p| label_of[p.patient_id.as_str()]).collect();
        let msi: Vec<f64> = ps.iter().map(|p| p.msi_score).collect();
        let roc = roc_auc(&msi, &labels, self.cfg.stats.n_boot, self.seed())?;
        Ok((ps, labels, roc))
    }

    fn evaluate(&self) -> CliResult<Outcome> {
        let (m, test, forest) = self.load_model()?;
        let digest = digest_of(&json!({
            "stage": "evaluate",
            "train": self.train_digest()?,
            "stats": self.cfg.stats,
            "ablate_rgb_mean": self.opts.ablate_rgb_mean,
        }));
        let idx: Vec<usize> = (0..m.n_rows()).filter(|&i| test.contains(&m.rows[i].patient_id)).collect();
        let records: Vec<TileRecord> = idx.iter().map(|&i| record_of(&m.rows[i])).collect();
        let ids: Vec<&str> = records.iter().map(|r| r.tile_id.as_str()).collect();
        let xs: Vec<&[f64]> = idx.iter().map(|&i| m.rows[i].values.as_slice()).collect();
        let scores = self.score(&forest, &ids, &xs)?;
        let tile_labels: Vec<Label> = records.iter().map(|r| r.label).collect();
        let (ps, p_labels, roc) = self.patient_roc(&scores, &records)?;
        let sep = score_separation(&scores, &tile_labels)?;
        let dir = self.layout.eval();
        ensure_dir(&dir)?;
        let mut files = Vec::new();

        let mut t = Table::new(["tile_id", "patient_id", "label", "mss_score", "msi_score", "predicted"]);
        for (s, r) in scores.iter().zip(&records) {
            t.push(vec![
                s.tile_id.clone(),
                r.patient_id.clone(),
                r.label.to_string(),
                num(s.mss_score),
                num(s.msi_score()),
                s.predicted.to_string(),
            ]);
        }
        files.push(write(&t, dir.join("tile_scores.csv"), &digest)?);

        let mut t = Table::new(["patient_id", "label", "msi_score", "n_tiles"]);
        for (p, l) in ps.iter().zip(&p_labels) {
            t.push(vec![p.patient_id.clone(), l.to_string(), num(p.msi_score), p.n_tiles.to_string()]);
        }
        files.push(write(&t, dir.join("patient_scores.csv"), &digest)?);

        let mut t = Table::new(["threshold", "fpr", "tpr"]);
        for k in 0..roc.fpr.len() {
            let thr = if k == 0 { f64::INFINITY } else { roc.thresholds[k - 1] };
            t.push(vec![num(thr), num(roc.fpr[k]), num(roc.tpr[k])]);
        }
        files.push(write(&t, dir.join("roc.csv"), &digest)?);
        let caption = format!("AUC {:.3} [{:.3}, {:.3}]", roc.auc, roc.ci_low, roc.ci_high);
        files.push(write_svg(
            svg::roc_curve("Patient-level ROC (MSI positive)", &roc.fpr, &roc.tpr, &caption, &header_line("evaluate", &digest)),
            dir.join("roc.svg"),
        )?);

        // Tile score distribution by class.
        let bins = 10;
        let mut counts = vec![[0usize; 2]; bins];
        for (s, l) in scores.iter().zip(&tile_labels) {
            let b = ((s.msi_score() * bins as f64) as usize).min(bins - 1);
            counts[b][l.index()] += 1;
        }
        let mut t = Table::new(["bin_low", "bin_high", "n_msi", "n_mss"]);
        let mut labels = Vec::new();
        for (b, c) in counts.iter().enumerate() {
            let (lo, hi) = (b as f64 / bins as f64, (b + 1) as f64 / bins as f64);
            t.push(vec![num(lo), num(hi), c[0].to_string(), c[1].to_string()]);
            labels.push(format!("MSI score {lo:.1}-{hi:.1}"));
        }
        files.push(write(&t, dir.join("score_histogram.csv"), &digest)?);
        let stacks: Vec<Vec<f64>> = counts.iter().map(|c| vec![c[0] as f64, c[1] as f64]).collect();
        files.push(write_svg(
            svg::stacked_bars(
                "Test tile MSI scores by true class",
                "tiles",
                &labels,
                &stacks,
                &["MSI".into(), "MSS".into()],
                &header_line("evaluate", &digest),
            ),
            dir.join("score_histogram.svg"),
        )?);

        let mut metrics: Vec<(&str, String)> = vec![
            ("test_tiles", records.len().to_string()),
            ("test_patients", ps.len().to_string()),
            ("auc", num(roc.auc)),
            ("auc_ci_low", num(roc.ci_low)),
            ("auc_ci_high", num(roc.ci_high)),
            ("n_boot", roc.n_boot.to_string()),
            ("tile_separation_u", num(sep.statistic)),
            ("tile_separation_p", num(sep.p_two_sided)),
            ("tile_separation_method", sep.method.as_str().into()),
        ];
        let mut summary = BTreeMap::new();
        summary.insert("auc".into(), json!(roc.auc));
        summary.insert("auc_ci".into(), json!([roc.ci_low, roc.ci_high]));
        summary.insert("tile_separation_p".into(), json!(sep.p_two_sided));

        if self.opts.ablate_rgb_mean {
            let (ab_scores, ab_roc) = self.ablate(&forest, &records)?;
            let mut t = Table::new(["tile_id", "patient_id", "label", "mss_score"]);
            for (s, r) in ab_scores.iter().zip(&records) {
                t.push(vec![s.tile_id.clone(), r.patient_id.clone(), r.label.to_string(), num(s.mss_score)]);
            }
            files.push(write(&t, dir.join("ablation_tile_scores.csv"), &digest)?);
            let delta = roc.auc - ab_roc.auc;
            metrics.push(("auc_ablated", num(ab_roc.auc)));
            metrics.push(("auc_drop", num(delta)));
            summary.insert("auc_ablated".into(), json!(ab_roc.auc));
            summary.insert("auc_drop".into(), json!(delta));
        }
        let mut t = Table::new(["metric", "value"]);
        for (k, v) in metrics {
            t.push(vec![k.to_string(), v]);
        }
        files.push(write(&t, dir.join("summary.csv"), &digest)?);
        Ok(Outcome {
            digest,
            files,
            summary,
            counts: None,
        })
    }

    /// Neutralizes the RGB means of the test tiles, re-extracts and
    /// re-scores them.
    fn ablate(&self, forest: &Forest, records: &[TileRecord]) -> CliResult<(Vec<TileScore>, RocCurve)> {
        let manifest = self.load_manifest()?;
        let path_of: HashMap<&str, &Path> = manifest
            .records
            .iter()
            .map(|r| (r.tile_id.as_str(), r.path.as_path()))
            .collect();
        let tiles: Vec<TileImage> = records
            .par_iter()
            .map(|r| {
                let p = path_of
                    .get(r.tile_id.as_str())
                    .ok_or_else(|| histoforest_core::Error::UnknownTile(r.tile_id.clone()))?;
                TileImage::load_png(p)
            })
            .collect::<Result<_, histoforest_core::Error>>()?;
        let thr = self.cfg.pretreat.white_threshold;
        let rois: Vec<_> = tiles.iter().map(|t| detect_background(t, thr)).collect();
        let neutral = neutralize_rgb_mean(&tiles, &rois)?;
        let vectors = self.extract_all(records, Some(&neutral))?;
        let ids: Vec<&str> = records.iter().map(|r| r.tile_id.as_str()).collect();
        let xs: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
        let scores = self.score(forest, &ids, &xs)?;
        let (_, _, roc) = self.patient_roc(&scores, records)?;
        Ok((scores, roc))
    }

    fn explain(&self) -> CliResult<Outcome> {
        let (m, _, forest) = self.load_model()?;
        let ec = &self.cfg.explain;
        let digest = digest_of(&json!({"stage": "explain", "train": self.train_digest()?, "explain": ec}));
        let pos: HashMap<&str, usize> = m.rows.iter().enumerate().map(|(i, r)| (r.tile_id.as_str(), i)).collect();
        let mut rows = Vec::with_capacity(forest.training_ids.len());
        let mut labels = Vec::with_capacity(forest.training_ids.len());
        for id in &forest.training_ids {
            let i = *pos
                .get(id.as_str())
                .ok_or_else(|| histoforest_core::Error::UnknownTile(id.clone()))?;
            rows.push(m.rows[i].values.clone());
            labels.push(m.rows[i].label);
        }
        let report = importance_report(&forest, &m.names, &rows, &labels, ec.n_repeats, self.seed())?;
        let dir = self.layout.explain();
        ensure_dir(&dir)?;
        let prov = header_line("explain", &digest);
        let mut files = Vec::new();

        let mut header: Vec<String> = [
            "feature",
            "permutation_importance",
            "importance_se",
            "mean_minimal_depth",
            "trees_using",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let bucket_names: Vec<String> = (0..=DEPTH_CAP)
            .map(|d| if d == DEPTH_CAP { format!("{d}+") } else { d.to_string() })
            .chain(["absent".to_string()])
            .collect();
        header.extend(bucket_names.iter().map(|b| format!("depth_{}", b.replace('+', "_plus"))));
        let mut t = Table::new(header);
        for f in &report.features {
            let mut row = vec![
                f.name.clone(),
                num(f.permutation_importance),
                num(f.importance_se),
                num(f.mean_minimal_depth),
                f.trees_using.to_string(),
            ];
            row.extend(f.depth_histogram.iter().map(|c| c.to_string()));
            t.push(row);
        }
        files.push(write(&t, dir.join("importance.csv"), &digest)?);

        let top = ec.plot_top.min(report.features.len());
        let mut by_imp: Vec<&_> = report.features.iter().collect();
        by_imp.sort_by(|a, b| {
            b.permutation_importance
                .total_cmp(&a.permutation_importance)
                .then(a.feature.cmp(&b.feature))
        });
        let by_imp = &by_imp[..top];
        files.push(write_svg(
            svg::bar_chart(
                "Permutation importance (mean OOB accuracy decrease)",
                "importance",
                &by_imp.iter().map(|f| f.name.clone()).collect::<Vec<_>>(),
                &by_imp.iter().map(|f| f.permutation_importance).collect::<Vec<_>>(),
                Some(&by_imp.iter().map(|f| f.importance_se).collect::<Vec<_>>()),
                &prov,
            ),
            dir.join("importance.svg"),
        )?);
        let mut by_depth: Vec<&_> = report.features.iter().collect();
        by_depth.sort_by(|a, b| {
            a.mean_minimal_depth
                .total_cmp(&b.mean_minimal_depth)
                .then(a.feature.cmp(&b.feature))
        });
        let by_depth = &by_depth[..top];
        files.push(write_svg(
            svg::stacked_bars(
                "Distribution of minimal depth",
                "trees",
                &by_depth
                    .iter()
                    .map(|f| format!("{} ({:.2})", f.name, f.mean_minimal_depth))
                    .collect::<Vec<_>>(),
                &by_depth
                    .iter()
                    .map(|f| f.depth_histogram.iter().map(|&c| c as f64).collect())
                    .collect::<Vec<_>>(),
                &bucket_names,
                &prov,
            ),
            dir.join("minimal_depth.svg"),
        )?);

        let inter = conditional_depth(&forest, ec.top_k);
        let mut t = Table::new([
            "rank",
            "parent",
            "child",
            "occurrences",
            "mean_conditional_depth",
            "unconditional_mean_depth",
            "depth_decrease",
        ]);
        for (k, r) in inter.iter().enumerate() {
            t.push(vec![
                (k + 1).to_string(),
                m.names[r.parent].clone(),
                m.names[r.child].clone(),
                r.occurrences.to_string(),
                num(r.mean_conditional_depth),
                num(r.unconditional_mean_depth),
                num(r.depth_decrease()),
            ]);
        }
        files.push(write(&t, dir.join("interactions.csv"), &digest)?);
        files.push(write_svg(
            svg::bar_chart(
                "Most frequent interactions (parent : child)",
                "maximal subtrees containing the child",
                &inter
                    .iter()
                    .map(|r| format!("{} : {}", m.names[r.parent], m.names[r.child]))
                    .collect::<Vec<_>>(),
                &inter.iter().map(|r| r.occurrences as f64).collect::<Vec<_>>(),
                None,
                &prov,
            ),
            dir.join("interactions.svg"),
        )?);

        let mut seen = HashSet::new();
        let pairs: Vec<(usize, usize)> = inter
            .iter()
            .filter(|r| r.parent != r.child)
            .map(|r| (r.parent, r.child))
            .filter(|&(a, b)| seen.insert((a.min(b), a.max(b))))
            .take(ec.grid_pairs)
            .collect();
        for (k, &(fx, fy)) in pairs.iter().enumerate() {
            let g = prediction_grid(&forest, &rows, fx, fy, ec.grid_size)?;
            let mut t = Table::new([m.names[fx].clone(), m.names[fy].clone(), "msi_probability".to_string()]);
            for (iy, &yv) in g.y_axis.iter().enumerate() {
                for (ix, &xv) in g.x_axis.iter().enumerate() {
                    t.push(vec![num(xv), num(yv), num(g.msi[iy][ix])]);
                }
            }
            files.push(write(&t, dir.join(format!("grid_{}.csv", k + 1)), &digest)?);
            files.push(write_svg(
                svg::heatmap(
                    "Forest MSI probability",
                    &m.names[fx],
                    &m.names[fy],
                    &g.x_axis,
                    &g.y_axis,
                    &g.msi,
                    &prov,
                ),
                dir.join(format!("grid_{}.svg", k + 1)),
            )?);
        }
        let mut t = Table::new(["metric", "value"]);
        t.push(vec!["n_trees".into(), forest.n_trees().to_string()]);
        t.push(vec!["n_repeats".into(), report.n_repeats.to_string()]);
        t.push(vec!["fill_depth".into(), num(report.fill_depth)]);
        t.push(vec!["training_tiles".into(), rows.len().to_string()]);
        files.push(write(&t, dir.join("summary.csv"), &digest)?);

        let mut summary = BTreeMap::new();
        summary.insert(
            "top_features".into(),
            json!(by_imp.iter().take(5).map(|f| f.name.clone()).collect::<Vec<_>>()),
        );
        summary.insert("interactions".into(), json!(inter.len()));
        Ok(Outcome {
            digest,
            files,
            summary,
            counts: None,
        })
    }

    fn screen(&self) -> CliResult<Outcome> {
        let m = self.read_matrix()?;
        let digest = digest_of(&json!({"stage": "screen", "extract": self.extract_digest()?}));
        let rows = feature_screen(&m)?;
        let mut t = Table::new(["feature", "u_statistic", "p_value", "method", "n_msi", "n_mss"]);
        let mut significant = 0usize;
        for r in &rows {
            significant += usize::from(r.result.p_two_sided < 0.05);
            t.push(vec![
                r.feature.clone(),
                num(r.result.statistic),
                num(r.result.p_two_sided),
                r.result.method.as_str().into(),
                r.result.n_x.to_string(),
                r.result.n_y.to_string(),
            ]);
        }
        ensure_dir(&self.layout.features())?;
        t.write(&self.layout.screen(), "screen", &digest)?;
        let mut summary = BTreeMap::new();
        summary.insert("features_p_below_0.05".into(), json!(significant));
        Ok(Outcome {
            digest,
            files: vec![self.layout.screen()],
            summary,
            counts: None,
        })
    }
}

fn record_of(r: &MatrixRow) -> TileRecord {
    TileRecord {
        tile_id: r.tile_id.clone(),
        patient_id: r.patient_id.clone(),
        label: r.label,
        path: PathBuf::new(),
    }
}

fn records_of(m: &FeatureMatrix) -> CliResult<DatasetManifest> {
    Ok(DatasetManifest::new(m.rows.iter().map(record_of).collect(), "features")?)
}

fn write(t: &Table, path: PathBuf, digest: &str) -> CliResult<PathBuf> {
    let stage = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|s| s.to_str())
        .map(|s| if s == "eval" { "evaluate" } else { s })
        .unwrap_or("run")
        .to_string();
    t.write(&path, &stage, digest)?;
    Ok(path)
}

fn write_svg(body: String, path: PathBuf) -> CliResult<PathBuf> {
    std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}
