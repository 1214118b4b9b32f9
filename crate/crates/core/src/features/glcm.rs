//! Gray-level co-occurrence matrices and the thirteen Haralick statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Grid, Mask};

/// Pixel offsets `(dx, dy)` at distance 1: horizontal, vertical and both
/// diagonals.
pub const DEFAULT_OFFSETS: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];

pub const HARALICK_NAMES: [&str; 13] = [
    "Angular_second_moment",
    "Contrast",
    "Correlation",
    "Sum_of_squares",
    "Inverse_difference_moment",
    "Sum_average",
    "Sum_variance",
    "Sum_entropy",
    "Entropy",
    "Difference_variance",
    "Difference_entropy",
    "Information_measure_of_correlation_1",
    "Information_measure_of_correlation_2",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlcmParams {
    pub levels: usize,
    /// Optical density mapped to the top gray level for the stain channels.
    pub od_max: f64,
    /// Same, for the optical-density-sum channel.
    pub od_sum_max: f64,
}

impl Default for GlcmParams {
    fn default() -> Self {
        Self {
            levels: 32,
            od_max: 2.5,
            od_sum_max: 5.0,
        }
    }
}

/// Symmetric, normalized co-occurrence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Glcm {
    levels: usize,
    p: Vec<f64>,
}

impl Glcm {
    /// Builds a GLCM from a raw (not necessarily normalized) square matrix,
    /// normalizing it. Used by tests and by callers with precomputed counts.
    pub fn from_counts(levels: usize, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != levels * levels {
            return Err(Error::InvalidInput("GLCM counts must be levels^2".into()));
        }
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) || counts.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidInput("GLCM counts must be non-negative with positive sum".into()));
        }
        Ok(Self {
            levels,
            p: counts.into_iter().map(|c| c / total).collect(),
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.levels + j]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }
}

pub fn quantize(v: f64, max: f64, levels: usize) -> u8 {
    debug_assert!(levels <= 256);
    let q = (v.max(0.0) / max * levels as f64).floor();
    if q.is_nan() {
        return 0;
    }
    (q as usize).min(levels - 1) as u8
}

pub fn quantize_grid(map: &Grid<f64>, max: f64, levels: usize) -> Grid<u8> {
    Grid::from_vec(
        map.width(),
        map.height(),
        map.data().iter().map(|&v| quantize(v, max, levels)).collect(),
    )
}

/// Accumulates co-occurrences of pixel pairs that both lie in `region`,
/// counting each pair in both directions, then normalizes.
pub fn compute_glcm(
    levels_img: &Grid<u8>,
    region: &Mask,
    levels: usize,
    offsets: &[(isize, isize)],
) -> Result<Glcm> {
    let (w, h) = (levels_img.width() as isize, levels_img.height() as isize);
    let mut counts = vec![0.0; levels * levels];
    let mut pairs = 0usize;
    for i in region.indices() {
        let x = i as isize % w;
        let y = i as isize / w;
        let a = levels_img.data()[i] as usize;
        for &(dx, dy) in offsets {
            let nx = x + dx;
            let ny = y + dy;
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                continue;
            }
            let j = (ny * w + nx) as usize;
            if !region.bits()[j] {
                continue;
            }
            let b = levels_img.data()[j] as usize;
            counts[a * levels + b] += 1.0;
            counts[b * levels + a] += 1.0;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::InvalidInput("region has no co-occurring pixel pairs".into()));
    }
    Glcm::from_counts(levels, counts)
}

/// F0..F12 in the order of [`HARALICK_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaralickSet(pub [f64; 13]);

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Haralick statistics with base-2 logarithms, `0 log 0 = 0`, gray levels
/// indexed from 0, and correlation 0 when a marginal has zero variance.
pub fn haralick(glcm: &Glcm) -> HaralickSet {
    let n = glcm.levels;
    let p = &glcm.p;
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut psum = vec![0.0; 2 * n - 1];
    let mut pdiff = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let v = p[i * n + j];
            px[i] += v;
            py[j] += v;
            psum[i + j] += v;
            pdiff[i.abs_diff(j)] += v;
        }
    }
    let mu_x: f64 = px.iter().enumerate().map(|(i, v)| i as f64 * v).sum();
    let mu_y: f64 = py.iter().enumerate().map(|(j, v)| j as f64 * v).sum();
    let var_x: f64 = px.iter().enumerate().map(|(i, v)| (i as f64 - mu_x).powi(2) * v).sum();
    let var_y: f64 = py.iter().enumerate().map(|(j, v)| (j as f64 - mu_y).powi(2) * v).sum();

    let mut asm = 0.0;
    let mut idm = 0.0;
    let mut cross = 0.0;
    let mut entropy = 0.0;
    let mut hxy1 = 0.0;
    let mut hxy2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = p[i * n + j];
            let d = i as f64 - j as f64;
            asm += v * v;
            idm += v / (1.0 + d * d);
            cross += i as f64 * j as f64 * v;
            entropy -= plogp(v);
            let q = px[i] * py[j];
            if q > 0.0 {
                hxy1 -= v * q.log2();
                hxy2 -= q * q.log2();
            }
        }
    }
    let contrast: f64 = pdiff.iter().enumerate().map(|(k, v)| (k * k) as f64 * v).sum();
    let correlation = if var_x > 0.0 && var_y > 0.0 {
        (cross - mu_x * mu_y) / (var_x * var_y).sqrt()
    } else {
        0.0
    };
    let sum_avg: f64 = psum.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let sum_var: f64 = psum.iter().enumerate().map(|(k, v)| (k as f64 - sum_avg).powi(2) * v).sum();
    let sum_entropy: f64 = -psum.iter().map(|&v| plogp(v)).sum::<f64>();
    let diff_mean: f64 = pdiff.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let diff_var: f64 = pdiff.iter().enumerate().map(|(k, v)| (k as f64 - diff_mean).powi(2) * v).sum();
    let diff_entropy: f64 = -pdiff.iter().map(|&v| plogp(v)).sum::<f64>();
    let hx: f64 = -px.iter().map(|&v| plogp(v)).sum::<f64>();
    let hy: f64 = -py.iter().map(|&v| plogp(v)).sum::<f64>();
    let imc1 = if hx.max(hy) > 0.0 {
        (entropy - hxy1) / hx.max(hy)
    } else {
        0.0
    };
    let imc2 = (1.0 - (-2.0 * (hxy2 - entropy)).exp()).max(0.0).sqrt();
    HaralickSet([
        asm,
        contrast,
        correlation,
        var_x,
        idm,
        sum_avg,
        sum_var,
        sum_entropy,
        entropy,
        diff_var,
        diff_entropy,
        imc1,
        imc2,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(w: usize, h: usize) -> Mask {
        Mask::from_fn(w, h, |_, _| true)
    }

    #[test]
    fn constant_region() {
        let img = Grid::new(5, 5, 3u8);
        let g = compute_glcm(&img, &full(5, 5), 8, &DEFAULT_OFFSETS).unwrap();
        assert_eq!(g.get(3, 3), 1.0);
        let h = haralick(&g).0;
        assert_eq!(h[0], 1.0);
        assert_eq!(h[1], 0.0);
        assert_eq!(h[8], 0.0);
        assert_eq!(h[2], 0.0);
    }

    #[test]
    fn checkerboard_pairs() {
        let img = Grid::from_vec(2, 2, vec![0u8, 1, 1, 0]);
        // Four offsets: horizontal and vertical pairs are off-diagonal (4
        // pairs), the two diagonals are on-diagonal (one each).
        let g = compute_glcm(&img, &full(2, 2), 2, &DEFAULT_OFFSETS).unwrap();
        assert!((g.get(0, 1) - 4.0 / 12.0).abs() < 1e-15);
        assert!((g.get(1, 0) - 4.0 / 12.0).abs() < 1e-15);
        assert!((g.get(0, 0) - 2.0 / 12.0).abs() < 1e-15);
        assert!((g.get(1, 1) - 2.0 / 12.0).abs() < 1e-15);
        let hv = compute_glcm(&img, &full(2, 2), 2, &[(1, 0), (0, 1)]).unwrap();
        assert_eq!(hv.get(0, 1), 0.5);
        assert_eq!(haralick(&hv).0[1], 1.0);
    }

    #[test]
    fn no_pairs_is_an_error() {
        let img = Grid::new(3, 3, 0u8);
        let single = Mask::from_fn(3, 3, |x, y| x == 1 && y == 1);
        assert!(compute_glcm(&img, &single, 4, &DEFAULT_OFFSETS).is_err());
    }

    #[test]
    fn quantization_edges() {
        assert_eq!(quantize(-1.0, 2.5, 32), 0);
        assert_eq!(quantize(0.0, 2.5, 32), 0);
        assert_eq!(quantize(2.5, 2.5, 32), 31);
        assert_eq!(quantize(10.0, 2.5, 32), 31);
        assert_eq!(quantize(1.25, 2.5, 32), 16);
    }
}
