//! Per-cell morphometric, optical-density and texture features, averaged
//! over the cells of a tile.

use super::color::Named;
use super::glcm::{compute_glcm, haralick, quantize, GlcmParams, DEFAULT_OFFSETS, HARALICK_NAMES};
use super::shape::{morphometry, Morphometry};
use crate::image::{Grid, Mask};
use crate::pretreat::StainMaps;
use crate::segment::{Blob, CellDetection};

/// Outcome of [`cell_features`].
#[derive(Debug, Clone)]
pub struct CellFeatures {
    pub values: Named,
    /// No cells were detected; every cell feature except `count` is 0.
    pub no_cells: bool,
    /// No cell had a co-occurring pixel pair; texture features are 0.
    pub no_texture: bool,
}

struct OdSummary {
    mean: f64,
    sum: f64,
    std_dev: f64,
    max: f64,
    min: f64,
}

fn od_summary(map: &Grid<f64>, pixels: &[(usize, usize)]) -> Option<OdSummary> {
    if pixels.is_empty() {
        return None;
    }
    let vals: Vec<f64> = pixels.iter().map(|&(x, y)| *map.at(x, y)).collect();
    let n = vals.len() as f64;
    let sum: f64 = vals.iter().sum();
    let mean = sum / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(OdSummary {
        mean,
        sum,
        std_dev: var.sqrt(),
        max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: vals.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

fn morph_values(prefix: &str, m: &Morphometry, out: &mut Vec<(String, f64)>) {
    out.push((format!("{prefix}_Area"), m.area));
    out.push((format!("{prefix}_Perimeter"), m.perimeter));
    out.push((format!("{prefix}_Circularity"), m.circularity));
    out.push((format!("{prefix}_Max_caliper"), m.max_caliper));
    out.push((format!("{prefix}_Min_caliper"), m.min_caliper));
    out.push((format!("{prefix}_Eccentricity"), m.eccentricity));
    out.push((format!("{prefix}_Solidity"), m.solidity));
}

fn od_values(region: &str, stain: &str, s: &OdSummary, with_sum: bool, out: &mut Vec<(String, f64)>) {
    let base = format!("{region}_{stain}_OD");
    out.push((format!("{base}_mean"), s.mean));
    if with_sum {
        out.push((format!("{base}_sum"), s.sum));
    }
    out.push((format!("{base}_std_dev"), s.std_dev));
    out.push((format!("{base}_max"), s.max));
    out.push((format!("{base}_min"), s.min));
    if with_sum {
        out.push((format!("{base}_range"), s.max - s.min));
    }
}

/// Haralick statistics of `map` over the blob, computed on the blob's
/// bounding box so the cost scales with cell size.
fn blob_haralick(map: &Grid<f64>, blob: &Blob, od_max: f64, levels: usize) -> Option<[f64; 13]> {
    let (x0, y0, x1, y1) = blob.bbox();
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut q = Grid::new(bw, bh, 0u8);
    let mut region = Mask::new(bw, bh);
    for &(x, y) in &blob.pixels {
        *q.at_mut(x - x0, y - y0) = quantize(*map.at(x, y), od_max, levels);
        region.set(x - x0, y - y0, true);
    }
    let glcm = compute_glcm(&q, &region, levels, &DEFAULT_OFFSETS).ok()?;
    Some(haralick(&glcm).0)
}

fn texture_name(channel: &str, k: usize) -> String {
    format!("ROI_1_00_px_per_pixel_{channel}_Haralick_{}_F{k}", HARALICK_NAMES[k])
}

/// Per-cell features followed by their mean over cells. Quantities that are
/// undefined for a particular cell (empty cytoplasm, no co-occurring pixel
/// pairs) leave that cell out of the corresponding mean; a mean over zero
/// cells is 0.
pub fn cell_features(cells: &[CellDetection], stains: &StainMaps, glcm: &GlcmParams) -> CellFeatures {
    let od_sum = Grid::from_vec(
        stains.hematoxylin.width(),
        stains.hematoxylin.height(),
        stains
            .hematoxylin
            .data()
            .iter()
            .zip(stains.eosin.data())
            .map(|(h, e)| h + e)
            .collect(),
    );
    let channels: [(&str, &Grid<f64>, f64); 3] = [
        ("Hematoxylin", &stains.hematoxylin, glcm.od_max),
        ("Eosin", &stains.eosin, glcm.od_max),
        ("OD_Sum", &od_sum, glcm.od_sum_max),
    ];

    // name -> (sum, n); insertion order is kept for determinism.
    let mut acc: Vec<(String, f64, usize)> = Vec::new();
    let mut add = |name: String, v: f64| {
        if let Some(slot) = acc.iter_mut().find(|(n, _, _)| *n == name) {
            slot.1 += v;
            slot.2 += 1;
        } else {
            acc.push((name, v, 1));
        }
    };
    let mut any_texture = false;
    for cell in cells {
        let mut vals = Vec::new();
        let nm = morphometry(&cell.nucleus);
        let cm = morphometry(&cell.cell);
        morph_values("Nucleus", &nm, &mut vals);
        morph_values("Cell", &cm, &mut vals);
        vals.push(("Nucleus_Cell_area_ratio".into(), nm.area / cm.area));
        let (cx, cy) = cell.nucleus.centroid();
        vals.push(("Centroid_X_px".into(), cx));
        vals.push(("Centroid_Y_px".into(), cy));
        for (stain, map) in [("Hematoxylin", &stains.hematoxylin), ("Eosin", &stains.eosin)] {
            if let Some(s) = od_summary(map, &cell.nucleus.pixels) {
                od_values("Nucleus", stain, &s, true, &mut vals);
            }
            if let Some(s) = od_summary(map, &cell.cell.pixels) {
                od_values("Cell", stain, &s, false, &mut vals);
            }
            if let Some(s) = od_summary(map, &cell.cytoplasm) {
                od_values("Cytoplasm", stain, &s, false, &mut vals);
            }
        }
        for (channel, map, od_max) in channels {
            if let Some(h) = blob_haralick(map, &cell.cell, od_max, glcm.levels) {
                any_texture = true;
                for (k, v) in h.iter().enumerate() {
                    vals.push((texture_name(channel, k), *v));
                }
            }
        }
        for (n, v) in vals {
            add(n, v);
        }
    }

    let mut values: Named = acc
        .into_iter()
        .map(|(n, s, c)| (n, s / c as f64))
        .collect();
    values.push(("count".into(), cells.len() as f64));
    CellFeatures {
        values,
        no_cells: cells.is_empty(),
        no_texture: !any_texture,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::cells::{detect_nuclei, NucleusParams};

    fn stains_with(h: Grid<f64>) -> StainMaps {
        let (w, hh) = (h.width(), h.height());
        StainMaps {
            eosin: Grid::new(w, hh, 0.2),
            residual: Grid::new(w, hh, 0.0),
            hematoxylin: h,
            reconstruction_error: 0.0,
        }
    }

    fn disc_map(w: usize, h: usize, centres: &[(f64, f64)], r: f64) -> Grid<f64> {
        let mut g = Grid::new(w, h, 0.0);
        for y in 0..h {
            for x in 0..w {
                for &(cx, cy) in centres {
                    if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                        *g.at_mut(x, y) = 0.8;
                    }
                }
            }
        }
        g
    }

    fn get(v: &Named, name: &str) -> f64 {
        v.iter().find(|(n, _)| n == name).unwrap_or_else(|| panic!("{name}")).1
    }

    #[test]
    fn zero_cells() {
        let f = cell_features(&[], &stains_with(Grid::new(8, 8, 0.0)), &GlcmParams::default());
        assert!(f.no_cells && f.no_texture);
        assert_eq!(f.values, vec![("count".to_string(), 0.0)]);
    }

    #[test]
    fn two_identical_cells_match_one() {
        let params = NucleusParams {
            smooth_sigma: 0.0,
            ..NucleusParams::default()
        };
        let one = disc_map(40, 40, &[(20.0, 20.0)], 6.0);
        let two = disc_map(80, 40, &[(20.0, 20.0), (60.0, 20.0)], 6.0);
        let c1 = detect_nuclei(&one, &params);
        let c2 = detect_nuclei(&two, &params);
        assert_eq!((c1.len(), c2.len()), (1, 2));
        let f1 = cell_features(&c1, &stains_with(one), &GlcmParams::default());
        let f2 = cell_features(&c2, &stains_with(two), &GlcmParams::default());
        for (name, v) in &f1.values {
            if name.starts_with("Centroid_X") || name == "count" {
                continue;
            }
            let w = get(&f2.values, name);
            assert!((v - w).abs() < 1e-9, "{name}: {v} vs {w}");
        }
        assert_eq!(get(&f2.values, "count"), 2.0);
        assert_eq!(get(&f2.values, "Centroid_X_px"), 40.0);
        let ratio = get(&f1.values, "Nucleus_Cell_area_ratio");
        assert!(ratio > 0.0 && ratio < 1.0);
        assert!((get(&f1.values, "Nucleus_Hematoxylin_OD_mean") - 0.8).abs() < 1e-12);
        assert_eq!(get(&f1.values, "Nucleus_Hematoxylin_OD_range"), 0.0);
    }
}
