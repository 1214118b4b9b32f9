//! Tile pretreatment: background detection, white balance, brightness
//! normalization and Beer-Lambert color deconvolution.
//!
//! The fixed order used by the extraction chain is
//! `detect_background -> white_balance -> normalize_brightness -> to_od -> deconvolve`.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{gray_of, Grid, Mask, RoiMask, TileImage};

const DEFAULT_BASIS: &str = include_str!("../data/stain_basis_he.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretreatParams {
    /// Pixels with `min(r, g, b) >= white_threshold` are unstained background.
    pub white_threshold: u8,
    /// Target mean grayscale of the background after brightness normalization.
    pub target_brightness: f64,
}

impl Default for PretreatParams {
    fn default() -> Self {
        Self {
            white_threshold: 220,
            target_brightness: 245.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PretreatWarning {
    /// No unstained pixels to use as a reference; the tile was left as is.
    EmptyBackground,
}

/// A pretreatment result: the adjusted tile plus an optional warning.
#[derive(Debug, Clone)]
pub struct Adjusted {
    pub tile: TileImage,
    pub warning: Option<PretreatWarning>,
}

pub fn detect_background(tile: &TileImage, white_threshold: u8) -> RoiMask {
    let bits = tile
        .pixels()
        .iter()
        .map(|p| p[0].min(p[1]).min(p[2]) < white_threshold)
        .collect();
    Mask::from_vec(tile.width(), tile.height(), bits)
}

fn scale_channel(v: u8, gain: f64) -> u8 {
    (v as f64 * gain).round().clamp(0.0, 255.0) as u8
}

/// Background channel means, or `None` when the ROI covers the whole tile.
fn background_means(tile: &TileImage, roi: &RoiMask) -> Option<[f64; 3]> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (p, &stained) in tile.pixels().iter().zip(roi.bits()) {
        if !stained {
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
            n += 1;
        }
    }
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

/// Gray-world white balance on the unstained region: every channel is scaled
/// so its background mean becomes 255.
pub fn white_balance(tile: &TileImage, white_threshold: u8) -> Adjusted {
    let roi = detect_background(tile, white_threshold);
    white_balance_with(tile, &roi)
}

pub fn white_balance_with(tile: &TileImage, roi: &RoiMask) -> Adjusted {
    let Some(means) = background_means(tile, roi) else {
        return Adjusted {
            tile: tile.clone(),
            warning: Some(PretreatWarning::EmptyBackground),
        };
    };
    let gains = means.map(|m| if m > 0.0 { 255.0 / m } else { 1.0 });
    let mut out = tile.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            p[c] = scale_channel(p[c], gains[c]);
        }
    }
    Adjusted {
        tile: out,
        warning: None,
    }
}

/// Uniform gain so that the background's mean grayscale equals `target`.
pub fn normalize_brightness(tile: &TileImage, white_threshold: u8, target: f64) -> Adjusted {
    let roi = detect_background(tile, white_threshold);
    normalize_brightness_with(tile, &roi, target)
}

pub fn normalize_brightness_with(tile: &TileImage, roi: &RoiMask, target: f64) -> Adjusted {
    let Some(means) = background_means(tile, roi) else {
        return Adjusted {
            tile: tile.clone(),
            warning: Some(PretreatWarning::EmptyBackground),
        };
    };
    let gray = gray_of(means);
    let gain = if gray > 0.0 { target / gray } else { 1.0 };
    let mut out = tile.clone();
    for p in out.pixels_mut() {
        for v in p.iter_mut() {
            *v = scale_channel(*v, gain);
        }
    }
    Adjusted {
        tile: out,
        warning: None,
    }
}

/// Per-pixel optical densities, one triplet per pixel, all `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdImage {
    pub od: Grid<[f64; 3]>,
}

impl OdImage {
    pub fn width(&self) -> usize {
        self.od.width()
    }

    pub fn height(&self) -> usize {
        self.od.height()
    }

    /// Sum of the three channel densities per pixel.
    pub fn od_sum(&self) -> Grid<f64> {
        Grid::from_vec(
            self.width(),
            self.height(),
            self.od.data().iter().map(|v| v[0] + v[1] + v[2]).collect(),
        )
    }
}

/// `-log10(max(I, 1) / 255)`.
pub fn od_of_intensity(i: u8) -> f64 {
    -((i.max(1) as f64) / 255.0).log10()
}

pub fn to_od(tile: &TileImage) -> OdImage {
    // 256-entry lookup keeps the conversion bit-exact with od_of_intensity.
    let lut: Vec<f64> = (0..=255u8).map(od_of_intensity).collect();
    let data = tile
        .pixels()
        .iter()
        .map(|p| [lut[p[0] as usize], lut[p[1] as usize], lut[p[2] as usize]])
        .collect();
    OdImage {
        od: Grid::from_vec(tile.width(), tile.height(), data),
    }
}

/// Three unit OD-space vectors: hematoxylin, eosin, residual.
#[derive(Debug, Clone, PartialEq)]
pub struct StainBasis {
    vectors: [[f64; 3]; 3],
    inverse: Matrix3<f64>,
}

/// Condition numbers above this are treated as singular.
const MAX_CONDITION: f64 = 1e8;

fn normalize(v: [f64; 3]) -> Result<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if !(n.is_finite() && n > 1e-12) {
        return Err(Error::InvalidInput(format!(
            "stain vector {v:?} has zero norm"
        )));
    }
    Ok(v.map(|x| x / n))
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl StainBasis {
    /// Builds a basis from three vectors (renormalized to unit length).
    pub fn new(hematoxylin: [f64; 3], eosin: [f64; 3], residual: [f64; 3]) -> Result<Self> {
        let vectors = [normalize(hematoxylin)?, normalize(eosin)?, normalize(residual)?];
        let m = Matrix3::from_columns(&vectors.map(Vector3::from));
        let sv = m.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !cond.is_finite() || cond > MAX_CONDITION {
            return Err(Error::SingularBasis(cond));
        }
        let inverse = m.try_inverse().ok_or(Error::SingularBasis(cond))?;
        Ok(Self { vectors, inverse })
    }

    /// Two stains; the residual is their normalized cross product.
    pub fn from_two(hematoxylin: [f64; 3], eosin: [f64; 3]) -> Result<Self> {
        let h = normalize(hematoxylin)?;
        let e = normalize(eosin)?;
        Self::new(h, e, cross(h, e))
    }

    /// Parses the stain-basis text format: two or three rows of three
    /// decimals, `#` comments allowed. Rows off unit norm by more than 1e-6
    /// are renormalized with a warning.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>().map_err(|e| Error::Parse {
                        row: i + 1,
                        message: format!("bad stain value {s:?}: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != 3 {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("expected 3 values, found {}", vals.len()),
                });
            }
            let v = [vals[0], vals[1], vals[2]];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                log::warn!("stain vector on line {} has norm {norm:.6}; renormalizing", i + 1);
            }
            rows.push(v);
        }
        match rows.len() {
            2 => Self::from_two(rows[0], rows[1]),
            3 => Self::new(rows[0], rows[1], rows[2]),
            n => Err(Error::Parse {
                row: 0,
                message: format!("stain basis needs 2 or 3 rows, found {n}"),
            }),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The H&E basis shipped with the crate.
    pub fn default_he() -> Self {
        static BASIS: std::sync::OnceLock<StainBasis> = std::sync::OnceLock::new();
        BASIS
            .get_or_init(|| Self::parse(DEFAULT_BASIS).expect("bundled stain basis is valid"))
            .clone()
    }

    pub fn vectors(&self) -> &[[f64; 3]; 3] {
        &self.vectors
    }

    /// Optical density produced by the given stain concentrations.
    pub fn compose(&self, c: [f64; 3]) -> [f64; 3] {
        let mut od = [0.0; 3];
        for (s, v) in self.vectors.iter().enumerate() {
            for ch in 0..3 {
                od[ch] += c[s] * v[ch];
            }
        }
        od
    }

    /// Unclamped concentrations `B^-1 od`.
    pub fn unmix(&self, od: [f64; 3]) -> [f64; 3] {
        let c = self.inverse * Vector3::from(od);
        [c[0], c[1], c[2]]
    }
}

impl Default for StainBasis {
    fn default() -> Self {
        Self::default_he()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StainMaps {
    pub hematoxylin: Grid<f64>,
    pub eosin: Grid<f64>,
    pub residual: Grid<f64>,
    /// Mean reconstruction error `|B c_clamped - od|` over the tile.
    pub reconstruction_error: f64,
}

pub fn deconvolve(od: &OdImage, basis: &StainBasis) -> StainMaps {
    let (w, h) = (od.width(), od.height());
    let n = w * h;
    let mut hema = Vec::with_capacity(n);
    let mut eosin = Vec::with_capacity(n);
    let mut resid = Vec::with_capacity(n);
    let mut err_sum = 0.0;
    for &v in od.od.data() {
        let c = basis.unmix(v);
        let clamped = [c[0].max(0.0), c[1].max(0.0), c[2]];
        let back = basis.compose(clamped);
        err_sum += ((back[0] - v[0]).powi(2) + (back[1] - v[1]).powi(2) + (back[2] - v[2]).powi(2))
            .sqrt();
        hema.push(clamped[0]);
        eosin.push(clamped[1]);
        resid.push(clamped[2]);
    }
    StainMaps {
        hematoxylin: Grid::from_vec(w, h, hema),
        eosin: Grid::from_vec(w, h, eosin),
        residual: Grid::from_vec(w, h, resid),
        reconstruction_error: if n > 0 { err_sum / n as f64 } else { 0.0 },
    }
}

/// Shifts every tile's ROI pixels additively, channel by channel, so that
/// its ROI mean equals the population mean (the mean of the per-tile ROI
/// means). Used for the RGB-mean ablation.
pub fn neutralize_rgb_mean(tiles: &[TileImage], rois: &[RoiMask]) -> Result<Vec<TileImage>> {
    if tiles.is_empty() {
        return Err(Error::InvalidInput("neutralize_rgb_mean: empty tile list".into()));
    }
    if tiles.len() != rois.len() {
        return Err(Error::InvalidInput(format!(
            "neutralize_rgb_mean: {} tiles but {} ROI masks",
            tiles.len(),
            rois.len()
        )));
    }
    let mut tile_means = Vec::with_capacity(tiles.len());
    for (i, (tile, roi)) in tiles.iter().zip(rois).enumerate() {
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for (p, &m) in tile.pixels().iter().zip(roi.bits()) {
            if m {
                for c in 0..3 {
                    sum[c] += p[c] as f64;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::InvalidInput(format!(
                "neutralize_rgb_mean: tile {i} has an empty ROI"
            )));
        }
        tile_means.push(sum.map(|s| s / n as f64));
    }
    // Index-ordered reduction keeps the population mean deterministic.
    let mut pop = [0.0; 3];
    for m in &tile_means {
        for c in 0..3 {
            pop[c] += m[c];
        }
    }
    let pop = pop.map(|s| s / tile_means.len() as f64);
    Ok(tiles
        .iter()
        .zip(rois)
        .zip(&tile_means)
        .map(|((tile, roi), mean)| {
            let shift = [pop[0] - mean[0], pop[1] - mean[1], pop[2] - mean[2]];
            let mut out = tile.clone();
            for (p, &m) in out.pixels_mut().iter_mut().zip(roi.bits()) {
                if m {
                    for c in 0..3 {
                        p[c] = (p[c] as f64 + shift[c]).round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
            out
        })
        .collect())
}

/// Output of the full pretreatment chain for one tile.
#[derive(Debug, Clone)]
pub struct Pretreated {
    pub tile: TileImage,
    pub roi: RoiMask,
    pub od: OdImage,
    pub stains: StainMaps,
    pub warnings: Vec<PretreatWarning>,
}

pub fn pretreat(tile: &TileImage, params: &PretreatParams, basis: &StainBasis) -> Pretreated {
    let mut warnings = Vec::new();
    let balanced = white_balance(tile, params.white_threshold);
    warnings.extend(balanced.warning);
    let bright = normalize_brightness(
        &balanced.tile,
        params.white_threshold,
        params.target_brightness,
    );
    warnings.extend(bright.warning);
    let tile = bright.tile;
    let roi = detect_background(&tile, params.white_threshold);
    let od = to_od(&tile);
    let stains = deconvolve(&od, basis);
    warnings.dedup();
    Pretreated {
        tile,
        roi,
        od,
        stains,
        warnings,
    }
}
