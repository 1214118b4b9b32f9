mod common;

use common::*;
use histoforest_core::dataset::{qc_filter, QcParams, TileRecord};
use histoforest_core::features::channel::channel_stats;
use histoforest_core::features::extract::{TileFlags, TileQc};
use histoforest_core::features::glcm::{compute_glcm, haralick, DEFAULT_OFFSETS};
use histoforest_core::forest::{fit_forest, ForestParams, TrainingSet};
use histoforest_core::explain::minimal_depth;
use histoforest_core::pretreat::{deconvolve, OdImage, StainBasis};
use histoforest_core::segment::connected_components;
use histoforest_core::segment::gmm::{fit_gmm, GmmParams};
use histoforest_core::{FeatureCatalog, FeatureVector, Grid, Label, Mask};
use rand::Rng;

#[test]
fn haralick_matches_pairwise_oracle_on_random_regions() {
    let mut r = rng(11);
    for case in 0..100 {
        let levels = [2, 4, 8, 16, 32][case % 5];
        let img: Vec<Vec<u8>> = (0..16)
            .map(|_| (0..16).map(|_| r.gen_range(0..levels) as u8).collect())
            .collect();
        let density = if case % 3 == 0 { 1.0 } else { r.gen_range(0.4..0.95) };
        let region: Vec<Vec<bool>> = (0..16)
            .map(|_| (0..16).map(|_| r.gen_bool(density)).collect())
            .collect();
        let grid = Grid::from_vec(16, 16, img.iter().flatten().copied().collect());
        let mask = Mask::from_vec(16, 16, region.iter().flatten().copied().collect());
        let Some(expected) = glcm_by_pairs(&img, &region, levels, &DEFAULT_OFFSETS) else {
            assert!(compute_glcm(&grid, &mask, levels, &DEFAULT_OFFSETS).is_err());
            continue;
        };
        let g = compute_glcm(&grid, &mask, levels, &DEFAULT_OFFSETS).unwrap();
        for i in 0..levels {
            for j in 0..levels {
                assert!((g.get(i, j) - expected[i][j]).abs() < 1e-12, "case {case} p[{i}][{j}]");
            }
        }
        let got = haralick(&g).0;
        let want = haralick_by_formula(&expected);
        for k in 0..13 {
            assert!(
                (got[k] - want[k]).abs() <= 1e-9 * want[k].abs().max(1.0),
                "case {case} F{k}: {} vs {}",
                got[k],
                want[k]
            );
        }
    }
}

#[test]
fn components_match_flood_fill_on_random_masks() {
    let mut r = rng(12);
    for case in 0..100 {
        let density = r.gen_range(0.05..0.7);
        let bits: Vec<Vec<bool>> = (0..64)
            .map(|_| (0..64).map(|_| r.gen_bool(density)).collect())
            .collect();
        let mask = Mask::from_vec(64, 64, bits.iter().flatten().copied().collect());
        let mut got: Vec<Vec<(usize, usize)>> = connected_components(&mask)
            .into_iter()
            .map(|b| {
                let mut p = b.pixels;
                p.sort();
                p
            })
            .collect();
        got.sort();
        assert_eq!(got, flood_fill_regions(&bits), "case {case}");
    }
}

#[test]
fn best_split_matches_exhaustive_search() {
    let mut r = rng(13);
    for case in 0..50 {
        let (table, labels) = random_table(&mut r, 50, 10);
        let data = TrainingSet::new(&table, &labels).unwrap();
        // Alternate plain row sets and bootstrap samples with repeats.
        let rows: Vec<usize> = if case % 2 == 0 {
            (0..50).collect()
        } else {
            (0..50).map(|_| r.gen_range(0..50)).collect()
        };
        let k = r.gen_range(1..=10);
        let mut features: Vec<usize> = (0..10).collect();
        rand::seq::SliceRandom::shuffle(features.as_mut_slice(), &mut r);
        features.truncate(k);
        let want = best_decrease(&table, &labels, &rows, &features);
        match data.best_split(&rows, &features) {
            None => assert!(want <= 1e-12, "case {case}: oracle found {want}"),
            Some(s) => {
                assert!(features.contains(&s.feature));
                assert!((s.impurity_decrease - want).abs() < 1e-12, "case {case}");
                let check = split_decrease(&table, &labels, &rows, s.feature, s.threshold);
                assert!((check - want).abs() < 1e-12, "case {case}: chosen split scores {check}");
            }
        }
    }
}

#[test]
fn minimal_depth_matches_recursive_traversal() {
    let mut r = rng(14);
    let (table, labels) = random_table(&mut r, 120, 8);
    let params = ForestParams {
        n_trees: 10,
        ..ForestParams::default()
    };
    let forest = fit_forest(&table, &labels, &params, 5).unwrap();
    let fill = forest
        .trees
        .iter()
        .map(|t| {
            let d = all_node_depths(t);
            d.iter().sum::<usize>() as f64 / d.len() as f64
        })
        .sum::<f64>()
        / 10.0;
    let md = minimal_depth(&forest);
    assert_eq!(md.fill, fill);
    assert_eq!(md.mean, mean_minimal_depth(&forest.trees, 8, fill));
    for (j, used) in md.trees_using.iter().enumerate() {
        let want = forest
            .trees
            .iter()
            .filter(|t| minimal_depths_recursive(t, 8)[j].is_some())
            .count();
        assert_eq!(*used, want);
    }
}

#[test]
fn channel_stats_match_naive_recomputation() {
    let mut r = rng(15);
    for case in 0..100 {
        let n = r.gen_range(1..400);
        let scale = [1.0, 255.0, 1e-3][case % 3];
        let values: Vec<f64> = (0..n).map(|_| r.gen::<f64>().powi(2) * scale).collect();
        let got = channel_stats(&values).unwrap();
        let want = naive_stats(&values);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        assert!(close(got.mean, want.mean), "case {case} mean");
        assert!(close(got.variance, want.variance), "case {case} variance");
        assert!(close(got.skewness, want.skewness), "case {case} skewness");
        assert!(close(got.kurtosis, want.kurtosis), "case {case} kurtosis");
        assert!(close(got.q25, want.q25) && close(got.median, want.median) && close(got.q75, want.q75));
        assert!(close(got.range, want.range));
    }
}

#[test]
fn qc_band_matches_sorted_quantiles() {
    let catalog = FeatureCatalog::default_catalog();
    let immune = catalog.position("immune_num").unwrap();
    let mut r = rng(16);
    let n = 300;
    let mut records = Vec::new();
    let mut vectors = Vec::new();
    for i in 0..n {
        let id = format!("t{i:03}");
        records.push(TileRecord {
            tile_id: id.clone(),
            patient_id: format!("p{}", i % 10),
            label: if i % 10 < 5 { Label::Msi } else { Label::Mss },
            path: format!("{id}.png").into(),
        });
        let mut values = vec![0.0; catalog.len()];
        values[immune] = r.gen_range(0..40) as f64;
        // Every 25th tile is nearly empty and must drop as anomalous first.
        let roi_fraction = if i % 25 == 0 { 0.01 } else { 0.6 };
        vectors.push(FeatureVector {
            tile_id: id,
            values,
            flags: TileFlags::default(),
            qc: TileQc {
                roi_fraction,
                gray_variance: 400.0,
            },
        });
    }
    let params = QcParams {
        immune_tail: 0.1,
        ..QcParams::default()
    };
    let out = qc_filter(&records, &vectors, &catalog, &params).unwrap();
    let survivors: Vec<f64> = (0..n).filter(|i| i % 25 != 0).map(|i| vectors[i].values[immune]).collect();
    let lo = interpolated_quantile(&survivors, 0.05);
    let hi = interpolated_quantile(&survivors, 0.95);
    assert!((out.immune_band.0 - lo).abs() < 1e-12 && (out.immune_band.1 - hi).abs() < 1e-12);
    let expected_kept: Vec<usize> = (0..n)
        .filter(|i| i % 25 != 0)
        .filter(|&i| (lo..=hi).contains(&vectors[i].values[immune]))
        .collect();
    assert_eq!(out.kept, expected_kept);
    assert_eq!(out.kept.len() + out.dropped.len(), n);
}

#[test]
fn deconvolution_round_trip() {
    let basis = StainBasis::default_he();
    let mut r = rng(17);
    let (w, h) = (32, 32);
    let truth: Vec<[f64; 3]> = (0..w * h)
        .map(|_| [r.gen_range(0.0..2.5), r.gen_range(0.0..2.5), r.gen_range(-0.3..0.3)])
        .collect();
    let od = OdImage {
        od: Grid::from_vec(w, h, truth.iter().map(|&c| basis.compose(c)).collect()),
    };
    let maps = deconvolve(&od, &basis);
    for (i, c) in truth.iter().enumerate() {
        assert!((maps.hematoxylin.data()[i] - c[0]).abs() < 1e-9);
        assert!((maps.eosin.data()[i] - c[1]).abs() < 1e-9);
        assert!((maps.residual.data()[i] - c[2]).abs() < 1e-9);
    }
    assert!(maps.reconstruction_error < 1e-9);
}

#[test]
fn em_log_likelihood_never_decreases() {
    let mut r = rng(18);
    for case in 0..50 {
        let k = r.gen_range(2..=4);
        let centers: Vec<[f64; 3]> = (0..k)
            .map(|_| [r.gen_range(40.0..220.0), r.gen_range(40.0..220.0), r.gen_range(40.0..220.0)])
            .collect();
        let n = r.gen_range(200..1200);
        let pixels: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let c = centers[r.gen_range(0..k)];
                let s = r.gen_range(2.0..25.0);
                [c[0] + s * (r.gen::<f64>() - 0.5), c[1] + s * (r.gen::<f64>() - 0.5), c[2] + s * (r.gen::<f64>() - 0.5)]
            })
            .collect();
        let params = GmmParams {
            components: 3,
            tol: 1e-10,
            ..GmmParams::default()
        };
        let model = fit_gmm(&pixels, &params, case).unwrap();
        for w in model.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "case {case}: {} -> {}", w[0], w[1]);
        }
    }
}
