//! Nucleus and cell detection on the hematoxylin channel, plus the
//! size/grayscale-gated immune-cell detector.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::components::{connected_components, Blob, NEIGHBORS_8};
use crate::image::{Grid, Mask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NucleusParams {
    pub smooth_sigma: f64,
    pub od_threshold: f64,
    pub min_area: usize,
    pub max_area: usize,
    /// Cell expansion distance around each nucleus, pixels.
    pub cell_expansion: f64,
    /// Minimum distance between watershed seeds, pixels.
    pub min_seed_separation: f64,
}

impl Default for NucleusParams {
    fn default() -> Self {
        Self {
            smooth_sigma: 1.5,
            od_threshold: 0.15,
            min_area: 30,
            max_area: 800,
            cell_expansion: 5.0,
            min_seed_separation: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImmuneParams {
    pub od_threshold: f64,
    /// Closed interval of accepted blob areas, pixels.
    pub area_band: (usize, usize),
    /// Closed interval of accepted mean grayscale on the tile.
    pub intensity_band: (f64, f64),
}

impl Default for ImmuneParams {
    fn default() -> Self {
        Self {
            od_threshold: 0.15,
            area_band: (20, 150),
            intensity_band: (0.0, 65.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellDetection {
    pub nucleus: Blob,
    pub cell: Blob,
    /// Cell pixels outside the nucleus, raster order.
    pub cytoplasm: Vec<(usize, usize)>,
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(src: &Grid<f64>, sigma: f64) -> Grid<f64> {
    if sigma <= 0.0 {
        return src.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / ksum).collect();
    let (w, h) = (src.width() as isize, src.height() as isize);
    let mut tmp = Grid::new(src.width(), src.height(), 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sx = (x + k as isize - radius).clamp(0, w - 1);
                s += kv * src.at(sx as usize, y as usize);
            }
            *tmp.at_mut(x as usize, y as usize) = s;
        }
    }
    let mut out = Grid::new(src.width(), src.height(), 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sy = (y + k as isize - radius).clamp(0, h - 1);
                s += kv * tmp.at(x as usize, sy as usize);
            }
            *out.at_mut(x as usize, y as usize) = s;
        }
    }
    out
}

#[derive(PartialEq)]
struct Queued {
    value: f64,
    order: usize,
    index: usize,
    label: usize,
}

impl Eq for Queued {}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        // Highest value first; FIFO among equal values.
        self.value
            .total_cmp(&other.value)
            .then(other.order.cmp(&self.order))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Seeds: 8-neighbourhood local maxima of `field` inside `fg`, greedily
/// thinned by value so no two seeds are closer than `min_sep`.
fn watershed_seeds(field: &Grid<f64>, fg: &Mask, min_sep: f64) -> Vec<usize> {
    let (w, h) = (field.width(), field.height());
    let d = field.data();
    let neighbors = |i: usize| {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        NEIGHBORS_8.iter().filter_map(move |&(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            (nx >= 0 && ny >= 0 && nx < w as isize && ny < h as isize).then(|| ny as usize * w + nx as usize)
        })
    };
    // Regional maxima: equal-valued plateaus with no strictly higher neighbor.
    // Each contributes the pixel nearest its centroid.
    let mut seen = vec![false; w * h];
    let mut cands: Vec<usize> = Vec::new();
    for start in fg.indices() {
        if seen[start] {
            continue;
        }
        let v = d[start];
        let mut plateau = vec![start];
        seen[start] = true;
        let mut is_max = true;
        let mut k = 0;
        while k < plateau.len() {
            for n in neighbors(plateau[k]) {
                if d[n] > v {
                    is_max = false;
                } else if d[n] == v && fg.bits()[n] && !seen[n] {
                    seen[n] = true;
                    plateau.push(n);
                }
            }
            k += 1;
        }
        if !is_max {
            continue;
        }
        let m = plateau.len() as f64;
        let cx = plateau.iter().map(|&i| (i % w) as f64).sum::<f64>() / m;
        let cy = plateau.iter().map(|&i| (i / w) as f64).sum::<f64>() / m;
        let best = plateau
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = ((a % w) as f64 - cx).powi(2) + ((a / w) as f64 - cy).powi(2);
                let db = ((b % w) as f64 - cx).powi(2) + ((b / w) as f64 - cy).powi(2);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("plateau is non-empty");
        cands.push(best);
    }
    cands.sort_by(|&a, &b| field.data()[b].total_cmp(&field.data()[a]).then(a.cmp(&b)));
    let mut seeds: Vec<usize> = Vec::new();
    for c in cands {
        let (cx, cy) = ((c % w) as f64, (c / w) as f64);
        let far = seeds.iter().all(|&s| {
            let (sx, sy) = ((s % w) as f64, (s / w) as f64);
            (sx - cx).powi(2) + (sy - cy).powi(2) >= min_sep * min_sep
        });
        if far {
            seeds.push(c);
        }
    }
    seeds
}

/// Marker-controlled watershed (priority flood, brightest first) restricted
/// to `fg`. Returns one label per pixel, 0 = unlabeled.
fn watershed(field: &Grid<f64>, fg: &Mask, seeds: &[usize]) -> Vec<usize> {
    let (w, h) = (field.width(), field.height());
    let mut labels = vec![0usize; w * h];
    let mut heap = BinaryHeap::new();
    let mut order = 0;
    for (k, &s) in seeds.iter().enumerate() {
        labels[s] = k + 1;
        heap.push(Queued {
            value: field.data()[s],
            order,
            index: s,
            label: k + 1,
        });
        order += 1;
    }
    while let Some(q) = heap.pop() {
        let (x, y) = ((q.index % w) as isize, (q.index / w) as isize);
        for (dx, dy) in NEIGHBORS_8 {
            let nx = x + dx;
            let ny = y + dy;
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if fg.bits()[j] && labels[j] == 0 {
                labels[j] = q.label;
                heap.push(Queued {
                    value: field.data()[j],
                    order,
                    index: j,
                    label: q.label,
                });
                order += 1;
            }
        }
    }
    labels
}

/// Smooth, threshold, split touching nuclei by watershed, filter by area,
/// then grow every nucleus into a cell by `cell_expansion` pixels with
/// nearest-nucleus (Voronoi) clipping.
pub fn detect_nuclei(hema: &Grid<f64>, params: &NucleusParams) -> Vec<CellDetection> {
    let (w, h) = (hema.width(), hema.height());
    let smooth = gaussian_blur(hema, params.smooth_sigma);
    let fg = Mask::from_vec(
        w,
        h,
        smooth.data().iter().map(|&v| v >= params.od_threshold).collect(),
    );
    if fg.is_empty() {
        return Vec::new();
    }
    let seeds = watershed_seeds(&smooth, &fg, params.min_seed_separation);
    let labels = watershed(&smooth, &fg, &seeds);
    let mut regions: Vec<Vec<(usize, usize)>> = vec![Vec::new(); seeds.len()];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            regions[l - 1].push((i % w, i / w));
        }
    }
    let mut nuclei: Vec<Blob> = regions
        .into_iter()
        .filter(|r| (params.min_area..=params.max_area).contains(&r.len()))
        .map(|r| Blob::new(r, w, h))
        .collect();
    nuclei.sort_by_key(|b| {
        let (x0, y0, _, _) = b.bbox();
        (y0, x0)
    });
    expand_cells(nuclei, params.cell_expansion)
}

fn expand_cells(nuclei: Vec<Blob>, expansion: f64) -> Vec<CellDetection> {
    let Some(first) = nuclei.first() else {
        return Vec::new();
    };
    let (w, h) = (first.width, first.height);
    let mut best = vec![f64::INFINITY; w * h];
    let mut owner = vec![usize::MAX; w * h];
    let pad = expansion.ceil() as isize;
    for (n, nuc) in nuclei.iter().enumerate() {
        let inside = nuc.to_mask();
        let boundary = nuc.boundary();
        let (x0, y0, x1, y1) = nuc.bbox();
        let ys = (y0 as isize - pad).max(0)..=(y1 as isize + pad).min(h as isize - 1);
        for y in ys {
            let xs = (x0 as isize - pad).max(0)..=(x1 as isize + pad).min(w as isize - 1);
            for x in xs {
                let (xu, yu) = (x as usize, y as usize);
                let d = if inside.get(xu, yu) {
                    0.0
                } else {
                    boundary
                        .iter()
                        .map(|&(bx, by)| ((bx as f64 - x as f64).powi(2) + (by as f64 - y as f64).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min)
                };
                let i = yu * w + xu;
                // Strict comparison: equidistant pixels stay with the lower index.
                if d <= expansion && d < best[i] {
                    best[i] = d;
                    owner[i] = n;
                }
            }
        }
    }
    let mut cells: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nuclei.len()];
    for (i, &o) in owner.iter().enumerate() {
        if o != usize::MAX {
            cells[o].push((i % w, i / w));
        }
    }
    nuclei
        .into_iter()
        .zip(cells)
        .map(|(nucleus, cell_px)| {
            let inside = nucleus.to_mask();
            let cytoplasm = cell_px
                .iter()
                .copied()
                .filter(|&(x, y)| !inside.get(x, y))
                .collect();
            CellDetection {
                cell: Blob::new(cell_px, w, h),
                nucleus,
                cytoplasm,
            }
        })
        .collect()
}

/// Threshold, label, and keep blobs whose area and mean grayscale fall in
/// the closed bands of `params`.
pub fn detect_immune_cells(hema: &Grid<f64>, gray: &Grid<f64>, params: &ImmuneParams) -> Vec<Blob> {
    let mask = Mask::from_vec(
        hema.width(),
        hema.height(),
        hema.data().iter().map(|&v| v >= params.od_threshold).collect(),
    );
    connected_components(&mask)
        .into_iter()
        .filter(|b| {
            let area = b.area();
            let g = b.mean_of(gray);
            area >= params.area_band.0
                && area <= params.area_band.1
                && g >= params.intensity_band.0
                && g <= params.intensity_band.1
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_spot(grid: &mut Grid<f64>, cx: f64, cy: f64, peak: f64, sigma: f64) {
        let (w, h) = (grid.width(), grid.height());
        for y in 0..h {
            for x in 0..w {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                *grid.at_mut(x, y) += peak * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }

    #[test]
    fn zero_map_has_no_nuclei() {
        let g = Grid::new(32, 32, 0.0);
        assert!(detect_nuclei(&g, &NucleusParams::default()).is_empty());
    }

    #[test]
    fn two_separated_nuclei() {
        let mut g = Grid::new(64, 64, 0.0);
        gaussian_spot(&mut g, 16.0, 20.0, 1.0, 4.0);
        gaussian_spot(&mut g, 46.0, 40.0, 1.0, 4.0);
        let cells = detect_nuclei(&g, &NucleusParams::default());
        assert_eq!(cells.len(), 2);
        for c in &cells {
            let cell = c.cell.to_mask();
            assert!(c.nucleus.pixels.iter().all(|&(x, y)| cell.get(x, y)));
            assert_eq!(c.nucleus.area() + c.cytoplasm.len(), c.cell.area());
        }
    }

    #[test]
    fn touching_nuclei_split_by_watershed() {
        let mut g = Grid::new(64, 40, 0.0);
        gaussian_spot(&mut g, 24.0, 20.0, 1.0, 3.5);
        gaussian_spot(&mut g, 36.0, 20.0, 1.0, 3.5);
        let cells = detect_nuclei(&g, &NucleusParams::default());
        assert_eq!(cells.len(), 2);
        // Voronoi clipping keeps cells disjoint.
        let a = cells[0].cell.to_mask();
        assert!(cells[1].cell.pixels.iter().all(|&(x, y)| !a.get(x, y)));
    }

    #[test]
    fn small_blob_filtered() {
        let mut g = Grid::new(32, 32, 0.0);
        gaussian_spot(&mut g, 16.0, 16.0, 0.3, 1.0);
        assert!(detect_nuclei(&g, &NucleusParams::default()).is_empty());
    }

    #[test]
    fn immune_bands_are_closed() {
        // A 5x5 square: area 25.
        let hema = Grid::from_vec(
            10,
            10,
            (0..100).map(|i| if (i % 10) < 5 && i / 10 < 5 { 1.0 } else { 0.0 }).collect(),
        );
        let gray = Grid::new(10, 10, 50.0);
        let mut p = ImmuneParams {
            area_band: (25, 30),
            intensity_band: (50.0, 60.0),
            ..ImmuneParams::default()
        };
        assert_eq!(detect_immune_cells(&hema, &gray, &p).len(), 1);
        p.area_band = (26, 30);
        assert!(detect_immune_cells(&hema, &gray, &p).is_empty());
        assert!(detect_immune_cells(&Grid::new(10, 10, 0.0), &gray, &ImmuneParams::default()).is_empty());
    }
}
