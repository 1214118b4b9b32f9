//! TOML run configuration. Sections mirror the core modules; every key is
//! optional and falls back to the documented default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use histoforest_core::dataset::QcParams;
use histoforest_core::features::extract::ExtractParams;
use histoforest_core::features::glcm::GlcmParams;
use histoforest_core::pretreat::PretreatParams;
use histoforest_core::segment::SegmentParams;
use histoforest_core::synthgen::{Preset, SynthSpec};
use histoforest_core::ForestParams;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// Defaults to `<synth.out_dir>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    pub stain_basis: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub preset: Preset,
    pub out_dir: PathBuf,
    pub n_patients_per_class: Option<usize>,
    pub tiles_per_patient: Option<usize>,
    pub size: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub patient_tint_sigma: Option<f64>,
    /// Multiplier on the preset tint difference.
    pub tint_gap: Option<f64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            preset: Preset::Planted,
            out_dir: PathBuf::from("corpus"),
            n_patients_per_class: None,
            tiles_per_patient: None,
            size: None,
            noise_sigma: None,
            patient_tint_sigma: None,
            tint_gap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub train_fraction: f64,
    pub stratified: bool,
    pub qc: QcParams,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            stratified: true,
            qc: QcParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub glcm: GlcmParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub n_repeats: usize,
    pub top_k: usize,
    pub grid_size: usize,
    /// Number of interaction pairs that get a prediction grid.
    pub grid_pairs: usize,
    /// Features shown in the importance and depth figures.
    pub plot_top: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            n_repeats: 10,
            top_k: 30,
            grid_size: 25,
            grid_pairs: 3,
            plot_top: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub n_boot: usize,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self { n_boot: 1000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub paths: PathsSection,
    pub synth: SynthSection,
    pub dataset: DatasetSection,
    pub pretreat: PretreatParams,
    pub segment: SegmentParams,
    pub features: FeaturesSection,
    pub forest: ForestParams,
    pub explain: ExplainSection,
    pub stats: StatsSection,
    /// Directory relative paths resolve against (the config file's).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn field_error(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("byte {}", s.start))
                .unwrap_or_else(|| "config".into());
            field_error(&field, e.message().to_string())
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| field_error("--config", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.run.output_dir)
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.resolve(&self.synth.out_dir)
    }

    pub fn manifest_path(&self) -> PathBuf {
        match &self.paths.manifest {
            Some(p) => self.resolve(p),
            None => self.corpus_dir().join("manifest.csv"),
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        let s = &self.synth;
        let mut spec = SynthSpec::preset(s.preset, self.run.seed);
        if let Some(g) = s.tint_gap {
            spec = spec.with_tint_gap(g);
        }
        if let Some(v) = s.n_patients_per_class {
            spec.n_patients_per_class = v;
        }
        if let Some(v) = s.tiles_per_patient {
            spec.tiles_per_patient = v;
        }
        if let Some(v) = s.size {
            spec.size = v;
        }
        if let Some(v) = s.noise_sigma {
            spec.noise_sigma = v;
        }
        if let Some(v) = s.patient_tint_sigma {
            spec.patient_tint_sigma = v;
        }
        spec
    }

    pub fn extract_params(&self) -> ExtractParams {
        ExtractParams {
            pretreat: self.pretreat.clone(),
            segment: self.segment.clone(),
            glcm: self.features.glcm.clone(),
        }
    }

    /// Range checks; the error names the offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        let check = |ok: bool, field: &str, msg: &str| if ok { Ok(()) } else { Err(field_error(field, msg)) };
        let d = &self.dataset;
        check(
            d.train_fraction > 0.0 && d.train_fraction < 1.0,
            "dataset.train_fraction",
            "must lie in (0, 1)",
        )?;
        check(
            (0.0..1.0).contains(&d.qc.immune_tail),
            "dataset.qc.immune_tail",
            "must lie in [0, 1)",
        )?;
        check(
            (0.0..=1.0).contains(&d.qc.min_roi_fraction),
            "dataset.qc.min_roi_fraction",
            "must lie in [0, 1]",
        )?;
        check(d.qc.min_gray_variance >= 0.0, "dataset.qc.min_gray_variance", "must be non-negative")?;
        check(
            self.pretreat.target_brightness > 0.0 && self.pretreat.target_brightness <= 255.0,
            "pretreat.target_brightness",
            "must lie in (0, 255]",
        )?;
        let seg = &self.segment;
        check(seg.gmm.components >= 1, "segment.gmm.components", "must be at least 1")?;
        check(seg.gmm.max_iter >= 1, "segment.gmm.max_iter", "must be at least 1")?;
        check(seg.gmm.tol > 0.0, "segment.gmm.tol", "must be positive")?;
        check(
            seg.nucleus.min_area <= seg.nucleus.max_area,
            "segment.nucleus.min_area",
            "must not exceed segment.nucleus.max_area",
        )?;
        check(seg.nucleus.smooth_sigma >= 0.0, "segment.nucleus.smooth_sigma", "must be non-negative")?;
        check(seg.nucleus.cell_expansion >= 0.0, "segment.nucleus.cell_expansion", "must be non-negative")?;
        check(
            seg.immune.area_band.0 <= seg.immune.area_band.1,
            "segment.immune.area_band",
            "lower bound exceeds upper bound",
        )?;
        check(
            seg.immune.intensity_band.0 <= seg.immune.intensity_band.1,
            "segment.immune.intensity_band",
            "lower bound exceeds upper bound",
        )?;
        check(seg.hough.r_min >= 1, "segment.hough.r_min", "must be at least 1")?;
        check(seg.hough.r_min <= seg.hough.r_max, "segment.hough.r_min", "must not exceed segment.hough.r_max")?;
        let g = &self.features.glcm;
        check((2..=256).contains(&g.levels), "features.glcm.levels", "must lie in [2, 256]")?;
        check(g.od_max > 0.0, "features.glcm.od_max", "must be positive")?;
        check(g.od_sum_max > 0.0, "features.glcm.od_sum_max", "must be positive")?;
        check(self.forest.n_trees >= 1, "forest.n_trees", "must be at least 1")?;
        check(self.forest.min_samples_split >= 2, "forest.min_samples_split", "must be at least 2")?;
        check(
            self.forest.max_features.map_or(true, |m| m >= 1),
            "forest.max_features",
            "must be at least 1",
        )?;
        let e = &self.explain;
        check(e.n_repeats >= 1, "explain.n_repeats", "must be at least 1")?;
        check(e.top_k >= 1, "explain.top_k", "must be at least 1")?;
        check(e.grid_size >= 2, "explain.grid_size", "must be at least 2")?;
        check(e.plot_top >= 1, "explain.plot_top", "must be at least 1")?;
        check(self.stats.n_boot >= 1, "stats.n_boot", "must be at least 1")?;
        if let Some(v) = self.synth.tint_gap {
            check(v >= 0.0, "synth.tint_gap", "must be non-negative")?;
        }
        self.synth_spec()
            .validate()
            .map_err(|e| field_error("synth", e.to_string()))?;
        for (field, p) in [("paths.stain_basis", &self.paths.stain_basis), ("paths.catalog", &self.paths.catalog)] {
            if let Some(p) = p {
                let full = self.resolve(p);
                check(full.is_file(), field, &format!("file not found: {}", full.display()))?;
            }
        }
        Ok(())
    }
}
