//! Expectation-maximization fit of a Gaussian mixture over RGB pixels.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{gray_of, Grid, RoiMask, TileImage};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// k-means++ seeding runs on at most this many pixels.
const INIT_SUBSAMPLE: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Full,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmParams {
    pub components: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub reg: f64,
    pub covariance: CovarianceKind,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self {
            components: 3,
            tol: 1e-6,
            max_iter: 200,
            reg: 1e-6,
            covariance: CovarianceKind::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
}

/// Fitted mixture. Components are sorted by ascending mean grayscale, so
/// label 0 is always the darkest cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
    /// Final mean per-pixel log-likelihood.
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Mean per-pixel log-likelihood after every E-step, in order.
    pub trace: Vec<f64>,
}

/// Precomputed Cholesky factor and normalizer for fast density evaluation.
struct Density {
    log_weight: f64,
    mean: Vector3<f64>,
    inv_chol: Matrix3<f64>,
    log_norm: f64,
}

impl Density {
    fn new(c: &GmmComponent) -> Result<Self> {
        let cov = Matrix3::from_fn(|i, j| c.covariance[i][j]);
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln() + l[(2, 2)].ln());
        let inv_chol = l
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        Ok(Self {
            log_weight: c.weight.ln(),
            mean: Vector3::from(c.mean),
            inv_chol,
            log_norm: -0.5 * (3.0 * LN_2PI + log_det),
        })
    }

    fn log_pdf(&self, x: &Vector3<f64>) -> f64 {
        let z = self.inv_chol * (x - self.mean);
        self.log_norm - 0.5 * z.norm_squared()
    }
}

fn to_vec(p: [f64; 3]) -> Vector3<f64> {
    Vector3::from(p)
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// k-means++ seeding over an evenly strided subsample.
fn kmeanspp<R: Rng>(pixels: &[[f64; 3]], k: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let stride = pixels.len().div_ceil(INIT_SUBSAMPLE).max(1);
    let sample: Vec<[f64; 3]> = pixels.iter().step_by(stride).copied().collect();
    let mut centers = vec![sample[rng.gen_range(0..sample.len())]];
    let mut d2: Vec<f64> = sample.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = sample.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            sample[chosen]
        } else {
            // Degenerate data: every remaining center coincides.
            centers[0]
        };
        for (d, p) in d2.iter_mut().zip(&sample) {
            *d = d.min(dist2(p, &next));
        }
        centers.push(next);
    }
    centers
}

fn m_step(
    pixels: &[[f64; 3]],
    resp: &[f64],
    k: usize,
    params: &GmmParams,
    fallback: &[[f64; 3]],
) -> Vec<GmmComponent> {
    let n = pixels.len() as f64;
    (0..k)
        .map(|j| {
            let mut nk = 0.0;
            let mut mean = [0.0; 3];
            for (i, p) in pixels.iter().enumerate() {
                let r = resp[i * k + j];
                nk += r;
                for c in 0..3 {
                    mean[c] += r * p[c];
                }
            }
            let nk_safe = nk.max(f64::MIN_POSITIVE);
            // An emptied component keeps its previous location.
            mean = if nk > 1e-9 { mean.map(|m| m / nk_safe) } else { fallback[j] };
            let mut cov = [[0.0; 3]; 3];
            for (i, p) in pixels.iter().enumerate() {
                let r = resp[i * k + j];
                if r == 0.0 {
                    continue;
                }
                let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
                for a in 0..3 {
                    for b in a..3 {
                        cov[a][b] += r * d[a] * d[b];
                    }
                }
            }
            for a in 0..3 {
                for b in a..3 {
                    cov[a][b] /= nk_safe;
                    if params.covariance == CovarianceKind::Diagonal && a != b {
                        cov[a][b] = 0.0;
                    }
                    cov[b][a] = cov[a][b];
                }
                cov[a][a] += params.reg;
            }
            GmmComponent {
                weight: (nk / n).max(f64::MIN_POSITIVE),
                mean,
                covariance: cov,
            }
        })
        .collect()
}

/// E-step: fills responsibilities, returns the mean log-likelihood.
fn e_step(pixels: &[[f64; 3]], comps: &[GmmComponent], resp: &mut [f64]) -> Result<f64> {
    let k = comps.len();
    let dens: Vec<Density> = comps.iter().map(Density::new).collect::<Result<_>>()?;
    let mut ll = 0.0;
    let mut logp = vec![0.0; k];
    for (i, p) in pixels.iter().enumerate() {
        let x = to_vec(*p);
        let mut max = f64::NEG_INFINITY;
        for (j, d) in dens.iter().enumerate() {
            logp[j] = d.log_weight + d.log_pdf(&x);
            max = max.max(logp[j]);
        }
        let s: f64 = logp.iter().map(|l| (l - max).exp()).sum();
        let lse = max + s.ln();
        for j in 0..k {
            resp[i * k + j] = (logp[j] - lse).exp();
        }
        ll += lse;
    }
    let ll = ll / pixels.len() as f64;
    if !ll.is_finite() {
        return Err(Error::Numerical("non-finite GMM log-likelihood".into()));
    }
    Ok(ll)
}

/// Fits a `params.components`-component mixture to RGB pixels by EM.
///
/// Initialization is k-means++ (hard assignment to the nearest seed, then one
/// M-step). EM stops when the relative improvement of the mean
/// log-likelihood drops below `tol` or after `max_iter` iterations.
pub fn fit_gmm(pixels: &[[f64; 3]], params: &GmmParams, seed: u64) -> Result<GmmModel> {
    let k = params.components;
    if k == 0 {
        return Err(Error::InvalidInput("GMM needs at least one component".into()));
    }
    if pixels.len() < 10 * k {
        return Err(Error::InvalidInput(format!(
            "GMM with {k} components needs at least {} pixels, got {}",
            10 * k,
            pixels.len()
        )));
    }
    let mut rng = crate::seed::rng(seed, &[crate::seed::salt::GMM]);
    let centers = kmeanspp(pixels, k, &mut rng);
    let mut resp = vec![0.0; pixels.len() * k];
    // Ties (coincident seeds) share the pixel equally.
    for (i, p) in pixels.iter().enumerate() {
        let d: Vec<f64> = centers.iter().map(|c| dist2(p, c)).collect();
        let best_d = d.iter().copied().fold(f64::INFINITY, f64::min);
        let tied = d.iter().filter(|&&x| x == best_d).count() as f64;
        for (j, &x) in d.iter().enumerate() {
            if x == best_d {
                resp[i * k + j] = 1.0 / tied;
            }
        }
    }
    let mut comps = m_step(pixels, &resp, k, params, &centers);
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let ll = e_step(pixels, &comps, &mut resp)?;
        let converged = trace
            .last()
            .map(|&prev: &f64| (ll - prev).abs() <= params.tol * prev.abs().max(1e-12))
            .unwrap_or(false);
        trace.push(ll);
        if converged || iterations >= params.max_iter {
            break;
        }
        let prev: Vec<[f64; 3]> = comps.iter().map(|c| c.mean).collect();
        comps = m_step(pixels, &resp, k, params, &prev);
        iterations += 1;
    }
    comps.sort_by(|a, b| gray_of(a.mean).total_cmp(&gray_of(b.mean)));
    Ok(GmmModel {
        components: comps,
        log_likelihood: *trace.last().expect("at least one E-step"),
        iterations,
        trace,
    })
}

/// Per-pixel cluster labels over a tile's ROI; `None` outside the ROI.
pub type LabelMap = Grid<Option<u8>>;

impl GmmModel {
    /// Index of the component with the highest posterior; ties go to the
    /// lower index.
    pub fn classify(&self, rgb: [f64; 3]) -> Result<usize> {
        let dens: Vec<Density> = self
            .components
            .iter()
            .map(Density::new)
            .collect::<Result<_>>()?;
        Ok(argmax_posterior(&dens, &to_vec(rgb)))
    }
}

fn argmax_posterior(dens: &[Density], x: &Vector3<f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (j, d) in dens.iter().enumerate() {
        let v = d.log_weight + d.log_pdf(x);
        if v > best_v {
            best_v = v;
            best = j;
        }
    }
    best
}

pub fn assign_labels(model: &GmmModel, tile: &TileImage, roi: &RoiMask) -> Result<LabelMap> {
    let dens: Vec<Density> = model
        .components
        .iter()
        .map(Density::new)
        .collect::<Result<_>>()?;
    let data = tile
        .pixels()
        .iter()
        .zip(roi.bits())
        .map(|(p, &m)| {
            m.then(|| {
                let x = Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
                argmax_posterior(&dens, &x) as u8
            })
        })
        .collect();
    Ok(Grid::from_vec(tile.width(), tile.height(), data))
}

/// ROI pixels of a tile as float RGB triples, raster order.
pub fn roi_pixels(tile: &TileImage, roi: &RoiMask) -> Vec<[f64; 3]> {
    tile.pixels()
        .iter()
        .zip(roi.bits())
        .filter(|(_, &m)| m)
        .map(|(p, _)| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn clusters(means: &[[f64; 3]], counts: &[usize], sigma: f64, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut out = Vec::new();
        for (m, &n) in means.iter().zip(counts) {
            for _ in 0..n {
                out.push(m.map(|v| v + noise.sample(&mut rng)));
            }
        }
        out
    }

    #[test]
    fn identical_pixels_degenerate_fit() {
        let pixels = vec![[120.0, 80.0, 150.0]; 100];
        let m = fit_gmm(&pixels, &GmmParams::default(), 1).unwrap();
        assert!(m.log_likelihood.is_finite());
        for c in &m.components {
            for (a, b) in c.mean.iter().zip([120.0, 80.0, 150.0]) {
                assert!((a - b).abs() < 1e-9, "{:?}", c.mean);
            }
        }
        let wsum: f64 = m.components.iter().map(|c| c.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_separated_clusters() {
        let means = [[60.0, 40.0, 100.0], [120.0, 100.0, 160.0], [180.0, 160.0, 220.0]];
        let counts = [500, 300, 200];
        let pixels = clusters(&means, &counts, 5.0, 11);
        let m = fit_gmm(&pixels, &GmmParams::default(), 3).unwrap();
        // Sorted by grayscale, which matches the generation order here.
        for (c, (gm, &n)) in m.components.iter().zip(means.iter().zip(&counts)) {
            for ch in 0..3 {
                assert!((c.mean[ch] - gm[ch]).abs() < 2.0, "{:?} vs {:?}", c.mean, gm);
            }
            assert!((c.weight - n as f64 / 1000.0).abs() < 0.05);
        }
        let wsum: f64 = m.components.iter().map(|c| c.weight).sum();
        assert!((wsum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_component_is_closed_form_mle() {
        let pixels = clusters(&[[100.0, 50.0, 75.0]], &[400], 12.0, 5);
        let params = GmmParams {
            components: 1,
            ..GmmParams::default()
        };
        let m = fit_gmm(&pixels, &params, 0).unwrap();
        let n = pixels.len() as f64;
        let mut mean = [0.0; 3];
        for p in &pixels {
            for c in 0..3 {
                mean[c] += p[c] / n;
            }
        }
        for a in 0..3 {
            assert!((m.components[0].mean[a] - mean[a]).abs() < 1e-6);
            for b in 0..3 {
                let s: f64 = pixels
                    .iter()
                    .map(|p| (p[a] - mean[a]) * (p[b] - mean[b]))
                    .sum::<f64>()
                    / n
                    + if a == b { params.reg } else { 0.0 };
                assert!((m.components[0].covariance[a][b] - s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn too_few_pixels_is_an_error() {
        assert!(fit_gmm(&vec![[1.0; 3]; 29], &GmmParams::default(), 0).is_err());
    }

    #[test]
    fn labels_follow_posterior() {
        let means = [[50.0, 50.0, 50.0], [150.0, 150.0, 150.0], [250.0, 250.0, 250.0]];
        let pixels = clusters(&means, &[100, 100, 100], 4.0, 9);
        let m = fit_gmm(&pixels, &GmmParams::default(), 2).unwrap();
        assert_eq!(m.classify(m.components[0].mean).unwrap(), 0);
        assert_eq!(m.classify(m.components[2].mean).unwrap(), 2);
        let tile = TileImage::filled(3, 3, [52, 49, 51]);
        let roi = RoiMask::from_fn(3, 3, |x, _| x > 0);
        let labels = assign_labels(&m, &tile, &roi).unwrap();
        assert_eq!(labels.data().iter().filter(|l| l.is_none()).count(), 3);
        assert!(labels.data().iter().flatten().all(|&l| l == 0));
    }

    #[test]
    fn diagonal_covariance_has_zero_off_diagonals() {
        let pixels = clusters(&[[100.0, 90.0, 80.0], [30.0, 20.0, 10.0]], &[200, 200], 6.0, 1);
        let params = GmmParams {
            components: 2,
            covariance: CovarianceKind::Diagonal,
            ..GmmParams::default()
        };
        let m = fit_gmm(&pixels, &params, 4).unwrap();
        for c in &m.components {
            assert_eq!(c.covariance[0][1], 0.0);
            assert_eq!(c.covariance[1][2], 0.0);
        }
    }
}
