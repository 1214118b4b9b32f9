//! Deterministic synthetic tile corpora with planted class differences.
//!
//! Tiles are rendered in stain space: per-pixel hematoxylin and eosin
//! concentrations are mixed with the default H&E basis, converted to
//! intensities by Beer-Lambert, then tinted, gain-adjusted and perturbed
//! with Gaussian noise.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, Label, TileRecord};
use crate::error::{Error, Result};
use crate::image::{Grid, TileImage};
use crate::pretreat::StainBasis;
use crate::seed::{self, salt};
use crate::segment::cells::gaussian_blur;

/// Generator parameters for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassParams {
    /// Expected fraction of unstained background.
    pub background_fraction: f64,
    /// Inclusive range of nuclei per tile.
    pub nuclei: (usize, usize),
    /// Range of nucleus semi-axes, pixels.
    pub nucleus_radius: (f64, f64),
    pub nucleus_h: f64,
    /// Mean eosin concentration of the tissue.
    pub eosin_level: f64,
    /// Standard deviation of the eosin texture.
    pub eosin_amplitude: f64,
    /// Gaussian correlation length of the eosin texture, pixels; values
    /// below 0.3 give white noise.
    pub eosin_grain: f64,
    /// Additive RGB shift applied to stained pixels.
    pub tint: [f64; 3],
    /// Mean immune blobs per tile (Poisson).
    pub immune_rate: f64,
    /// Mean gland rings per tile (Poisson, capped at 3).
    pub gland_rate: f64,
}

impl Default for ClassParams {
    fn default() -> Self {
        Self {
            background_fraction: 0.25,
            nuclei: (8, 14),
            nucleus_radius: (4.0, 6.5),
            nucleus_h: 0.55,
            eosin_level: 0.45,
            eosin_amplitude: 0.10,
            eosin_grain: 1.2,
            tint: [0.0; 3],
            immune_rate: 3.0,
            gland_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Tint and texture differ between classes.
    Planted,
    /// No class differences.
    Null,
    TintOnly,
    TextureOnly,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Planted => "planted",
            Preset::Null => "null",
            Preset::TintOnly => "tint_only",
            Preset::TextureOnly => "texture_only",
        }
    }
}

/// Class tint gap used by the presets: MSI gets `+gap/2`, MSS `-gap/2`.
pub const PRESET_TINT: [f64; 3] = [14.0, -12.0, 10.0];
/// Eosin grain (MSI, MSS) used by the texture presets.
pub const PRESET_GRAIN: (f64, f64) = (2.5, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_patients_per_class: usize,
    pub tiles_per_patient: usize,
    /// Tile edge length, pixels.
    pub size: usize,
    /// Per-channel noise standard deviation, intensity units.
    pub noise_sigma: f64,
    /// Per-patient tint jitter standard deviation.
    pub patient_tint_sigma: f64,
    pub msi: ClassParams,
    pub mss: ClassParams,
    pub seed: u64,
    pub cohort_name: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::preset(Preset::Planted, 7)
    }
}

impl SynthSpec {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let mut msi = ClassParams::default();
        let mut mss = ClassParams::default();
        if matches!(preset, Preset::Planted | Preset::TintOnly) {
            msi.tint = PRESET_TINT.map(|t| t / 2.0);
            mss.tint = PRESET_TINT.map(|t| -t / 2.0);
        }
        if matches!(preset, Preset::Planted | Preset::TextureOnly) {
            msi.eosin_grain = PRESET_GRAIN.0;
            mss.eosin_grain = PRESET_GRAIN.1;
        }
        Self {
            n_patients_per_class: 40,
            tiles_per_patient: 25,
            size: 96,
            noise_sigma: 2.0,
            patient_tint_sigma: 2.0,
            msi,
            mss,
            seed,
            cohort_name: format!("synthetic-{}", preset.as_str()),
        }
    }

    /// Scales the tint difference between the classes to `gap` times the
    /// preset tint.
    pub fn with_tint_gap(mut self, gap: f64) -> Self {
        self.msi.tint = PRESET_TINT.map(|t| gap * t / 2.0);
        self.mss.tint = PRESET_TINT.map(|t| -gap * t / 2.0);
        self
    }

    pub fn class(&self, label: Label) -> &ClassParams {
        match label {
            Label::Msi => &self.msi,
            Label::Mss => &self.mss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("synth spec: {m}")));
        if self.n_patients_per_class == 0 || self.tiles_per_patient == 0 {
            return bad("patient and tile counts must be positive");
        }
        if self.size < 48 {
            return bad("tile size must be at least 48");
        }
        for c in [&self.msi, &self.mss] {
            if !(0.0..0.9).contains(&c.background_fraction) {
                return bad("background_fraction must lie in [0, 0.9)");
            }
            if c.nuclei.0 > c.nuclei.1 || c.nucleus_radius.0 <= 0.0 || c.nucleus_radius.0 > c.nucleus_radius.1 {
                return bad("nucleus count/radius ranges must be ordered and positive");
            }
            if c.nucleus_h <= 0.0 || c.eosin_level <= 0.0 || c.eosin_amplitude < 0.0 || c.eosin_grain < 0.0 {
                return bad("stain levels must be positive");
            }
            if c.immune_rate < 0.0 || c.gland_rate < 0.0 {
                return bad("rates must be non-negative");
            }
        }
        Ok(())
    }

    pub fn n_tiles(&self) -> usize {
        2 * self.n_patients_per_class * self.tiles_per_patient
    }

    /// `(label, patient index within class, tile index within patient)` of
    /// the global tile index.
    fn locate(&self, index: usize) -> (Label, usize, usize) {
        let per_class = self.n_patients_per_class * self.tiles_per_patient;
        let label = if index < per_class { Label::Msi } else { Label::Mss };
        let rest = index % per_class;
        (label, rest / self.tiles_per_patient, rest % self.tiles_per_patient)
    }

    fn index_of(&self, label: Label, patient: usize, tile: usize) -> usize {
        label.index() * self.n_patients_per_class * self.tiles_per_patient + patient * self.tiles_per_patient + tile
    }
}

pub fn patient_id(label: Label, patient: usize) -> String {
    format!("{label}-P{patient:03}")
}

pub fn tile_id(label: Label, patient: usize, tile: usize) -> String {
    format!("{}-T{tile:03}", patient_id(label, patient))
}

fn parse_tile_id(id: &str) -> Option<(Label, usize, usize)> {
    let mut parts = id.split('-');
    let label = parts.next()?.parse().ok()?;
    let p = parts.next()?.strip_prefix('P')?.parse().ok()?;
    let t = parts.next()?.strip_prefix('T')?.parse().ok()?;
    parts.next().is_none().then_some((label, p, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }

    fn extent(&self) -> f64 {
        self.rx.max(self.ry)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub width: f64,
}

/// Planted per-tile generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileTruth {
    pub tile_id: String,
    pub label: Label,
    pub nuclei: Vec<Ellipse>,
    pub immune: Vec<Ellipse>,
    pub glands: Vec<Ring>,
    pub tint: [f64; 3],
    pub gain: [f64; 3],
}

impl TileTruth {
    pub fn nucleus_count(&self) -> usize {
        self.nuclei.len()
    }

    pub fn immune_count(&self) -> usize {
        self.immune.len()
    }

    pub fn circle_count(&self) -> usize {
        self.glands.len()
    }
}

const IMMUNE_H: f64 = 1.1;
const GLAND_H: f64 = 0.45;
const GLAND_WIDTH: f64 = 4.0;

fn patient_tint(spec: &SynthSpec, label: Label, patient: usize) -> [f64; 3] {
    let mut rng = seed::rng(spec.seed, &[salt::SYNTH, 1 << 40, label.index() as u64, patient as u64]);
    let base = spec.class(label).tint;
    let n = Normal::new(0.0, spec.patient_tint_sigma.max(0.0)).expect("valid sigma");
    base.map(|b| b + n.sample(&mut rng))
}

/// Samples the object layout. Consumes `rng` in a fixed order so rendering
/// can continue from the same stream.
fn layout(spec: &SynthSpec, label: Label, patient: usize, tile: usize, rng: &mut ChaCha8Rng) -> TileTruth {
    let c = spec.class(label);
    let size = spec.size as f64;
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    let fits = |placed: &[(f64, f64, f64)], x: f64, y: f64, r: f64, gap: f64| {
        placed
            .iter()
            .all(|&(px, py, pr)| ((px - x).powi(2) + (py - y).powi(2)).sqrt() > pr + r + gap)
    };

    let n_glands = if c.gland_rate > 0.0 {
        (Poisson::new(c.gland_rate).expect("positive rate").sample(rng) as usize).min(3)
    } else {
        0
    };
    let mut glands = Vec::new();
    for _ in 0..n_glands {
        let radius = rng.gen_range(10.0..13.0);
        let outer = radius + GLAND_WIDTH / 2.0;
        for _ in 0..100 {
            let x = rng.gen_range(outer + 2.0..size - outer - 2.0);
            let y = rng.gen_range(outer + 2.0..size - outer - 2.0);
            if fits(&placed, x, y, outer, 6.0) {
                placed.push((x, y, outer));
                glands.push(Ring {
                    cx: x,
                    cy: y,
                    radius,
                    width: GLAND_WIDTH,
                });
                break;
            }
        }
    }

    let mut immune = Vec::new();
    let n_immune = if c.immune_rate > 0.0 {
        Poisson::new(c.immune_rate).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    for _ in 0..n_immune {
        let r = rng.gen_range(2.7..3.3);
        for _ in 0..100 {
            let x = rng.gen_range(r + 2.0..size - r - 2.0);
            let y = rng.gen_range(r + 2.0..size - r - 2.0);
            if fits(&placed, x, y, r, 4.0) {
                placed.push((x, y, r));
                immune.push(Ellipse {
                    cx: x,
                    cy: y,
                    rx: r,
                    ry: r,
                    angle: 0.0,
                });
                break;
            }
        }
    }

    let mut nuclei = Vec::new();
    let n_nuclei = rng.gen_range(c.nuclei.0..=c.nuclei.1);
    for _ in 0..n_nuclei {
        let rx = rng.gen_range(c.nucleus_radius.0..=c.nucleus_radius.1);
        let ry = rx * rng.gen_range(0.7..=1.0);
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        for _ in 0..100 {
            let x = rng.gen_range(rx + 1.0..size - rx - 1.0);
            let y = rng.gen_range(rx + 1.0..size - rx - 1.0);
            if fits(&placed, x, y, rx, 3.0) {
                placed.push((x, y, rx));
                nuclei.push(Ellipse { cx: x, cy: y, rx, ry, angle });
                break;
            }
        }
    }

    let gain = [0; 3].map(|_| rng.gen_range(0.92..=1.0));
    TileTruth {
        tile_id: tile_id(label, patient, tile),
        label,
        nuclei,
        immune,
        glands,
        tint: patient_tint(spec, label, patient),
        gain,
    }
}

fn tile_rng(spec: &SynthSpec, index: usize) -> ChaCha8Rng {
    seed::rng(spec.seed, &[salt::SYNTH, index as u64])
}

/// Planted parameters of a generated tile.
pub fn ground_truth(spec: &SynthSpec, tile_id: &str) -> Result<TileTruth> {
    let (label, p, t) = parse_tile_id(tile_id)
        .filter(|&(_, p, t)| p < spec.n_patients_per_class && t < spec.tiles_per_patient)
        .ok_or_else(|| Error::UnknownTile(tile_id.to_string()))?;
    let mut rng = tile_rng(spec, spec.index_of(label, p, t));
    Ok(layout(spec, label, p, t, &mut rng))
}

/// Unit-variance Gaussian random field with correlation length `grain`.
fn texture_field(size: usize, grain: f64, rng: &mut ChaCha8Rng) -> Grid<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let white = Grid::from_vec(size, size, (0..size * size).map(|_| n.sample(rng)).collect());
    let field = if grain >= 0.3 {
        gaussian_blur(&white, grain)
    } else {
        white
    };
    let d = field.data();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
    Grid::from_vec(size, size, d.iter().map(|v| (v - m) / sd.max(1e-12)).collect())
}

/// Smooth random field thresholded at its `fraction` quantile: true where
/// the tile is unstained background.
fn background_mask(size: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let freq = rng.gen_range(0.02..0.06) * std::f64::consts::TAU;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (theta, freq, phase)
        })
        .collect();
    let field: Vec<f64> = (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64, (i / size) as f64);
            waves
                .iter()
                .map(|&(t, f, p)| (f * (x * t.cos() + y * t.sin()) + p).cos())
                .sum()
        })
        .collect();
    if fraction <= 0.0 {
        return vec![false; size * size];
    }
    let mut sorted = field.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((fraction * sorted.len() as f64) as usize).min(sorted.len() - 1);
    let cut = sorted[k];
    field.iter().map(|&v| v > cut).collect()
}

/// Renders one tile and returns it with its ground truth.
pub fn render_tile(spec: &SynthSpec, index: usize) -> (TileImage, TileTruth) {
    let (label, p, t) = spec.locate(index);
    let mut rng = tile_rng(spec, index);
    let truth = layout(spec, label, p, t, &mut rng);
    let c = spec.class(label);
    let size = spec.size;
    let background = background_mask(size, c.background_fraction, &mut rng);
    let texture = texture_field(size, c.eosin_grain, &mut rng);
    let basis = StainBasis::default_he();
    let noise = Normal::new(0.0, spec.noise_sigma.max(1e-12)).expect("valid sigma");

    let mut h = vec![0.0; size * size];
    let mut e = vec![0.0; size * size];
    for i in 0..size * size {
        if !background[i] {
            e[i] = (c.eosin_level + c.eosin_amplitude * texture.data()[i]).max(0.12);
        }
    }
    let mut paint = |shape: &dyn Fn(f64, f64) -> bool, extent: (f64, f64, f64), hv: f64, ev: f64| {
        let (cx, cy, r) = extent;
        let x0 = (cx - r - 1.0).floor().max(0.0) as usize;
        let y0 = (cy - r - 1.0).floor().max(0.0) as usize;
        let x1 = ((cx + r + 1.0).ceil() as usize).min(size - 1);
        let y1 = ((cy + r + 1.0).ceil() as usize).min(size - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if shape(x as f64, y as f64) {
                    h[y * size + x] = hv;
                    e[y * size + x] = ev;
                }
            }
        }
    };
    for g in &truth.glands {
        let shape = |x: f64, y: f64| {
            let d = ((x - g.cx).powi(2) + (y - g.cy).powi(2)).sqrt();
            (d - g.radius).abs() <= g.width / 2.0
        };
        paint(&shape, (g.cx, g.cy, g.radius + g.width), GLAND_H, 0.2);
    }
    for n in &truth.nuclei {
        paint(&|x, y| n.contains(x, y), (n.cx, n.cy, n.extent()), c.nucleus_h, 0.2);
    }
    for n in &truth.immune {
        paint(&|x, y| n.contains(x, y), (n.cx, n.cy, n.extent()), IMMUNE_H, 0.1);
    }

    let mut pixels = Vec::with_capacity(size * size);
    for i in 0..size * size {
        let od = basis.compose([h[i], e[i], 0.0]);
        let stained = h[i] > 0.0 || e[i] > 0.0;
        let mut px = [0u8; 3];
        for ch in 0..3 {
            let mut v = 255.0 * 10f64.powf(-od[ch]) * truth.gain[ch];
            if stained {
                v += truth.tint[ch];
            }
            v += noise.sample(&mut rng);
            px[ch] = v.round().clamp(0.0, 255.0) as u8;
        }
        pixels.push(px);
    }
    let tile = TileImage::new(size, size, pixels).expect("dimensions match");
    (tile, truth)
}

/// Writes every tile as `tiles/<tile_id>.png` and the manifest as
/// `manifest.csv` under `out_dir`.
pub fn generate_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let tiles_dir = out_dir.join("tiles");
    std::fs::create_dir_all(&tiles_dir).map_err(|e| Error::io(&tiles_dir, e))?;
    let records: Vec<TileRecord> = (0..spec.n_tiles())
        .into_par_iter()
        .map(|i| {
            let (label, p, _) = spec.locate(i);
            let (tile, truth) = render_tile(spec, i);
            let path: PathBuf = tiles_dir.join(format!("{}.png", truth.tile_id));
            tile.save_png(&path)?;
            Ok(TileRecord {
                tile_id: truth.tile_id,
                patient_id: patient_id(label, p),
                label,
                path,
            })
        })
        .collect::<Result<_>>()?;
    let manifest = DatasetManifest::new(records, spec.cohort_name.clone())?;
    manifest.save(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}
