use criterion::{black_box, criterion_group, criterion_main, Criterion};
use histoforest_bench::*;
use histoforest_core::features::extract::{extract_tile, ExtractParams};
use histoforest_core::features::glcm::{compute_glcm, haralick, DEFAULT_OFFSETS};
use histoforest_core::forest::{fit_forest, ForestParams};
use histoforest_core::pretreat::StainBasis;
use histoforest_core::segment::{fit_gmm, hough_circles, GmmParams, HoughParams};
use histoforest_core::stats::ranksum;
use histoforest_core::FeatureCatalog;

fn texture(c: &mut Criterion) {
    let (img, mask) = level_image(64, 32, 1);
    c.bench_function("glcm_haralick_64x64_32_levels", |b| {
        b.iter(|| haralick(&compute_glcm(black_box(&img), &mask, 32, &DEFAULT_OFFSETS).unwrap()))
    });
}

fn segmentation(c: &mut Criterion) {
    let pixels = pixel_cloud(5000, 2);
    c.bench_function("fit_gmm_5000_pixels", |b| {
        b.iter(|| fit_gmm(black_box(&pixels), &GmmParams::default(), 7).unwrap())
    });
    let edges = ring_edges(96, 3, 3);
    c.bench_function("hough_96x96", |b| b.iter(|| hough_circles(black_box(&edges), &HoughParams::default())));
}

fn forest(c: &mut Criterion) {
    let (rows, labels) = training_table(500, 182, 4);
    let params = ForestParams {
        n_trees: 50,
        ..ForestParams::default()
    };
    let mut g = c.benchmark_group("forest");
    g.sample_size(10);
    g.bench_function("fit_50_trees_500x182", |b| b.iter(|| fit_forest(black_box(&rows), &labels, &params, 7).unwrap()));
    g.finish();
}

fn pipeline(c: &mut Criterion) {
    let tile = synthetic_tile(5);
    let catalog = FeatureCatalog::default_catalog();
    let params = ExtractParams::default();
    let basis = StainBasis::default_he();
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(20);
    g.bench_function("extract_tile_96", |b| {
        b.iter(|| extract_tile("t", black_box(&tile), &catalog, &params, &basis, 7).unwrap())
    });
    g.finish();
    let x: Vec<f64> = (0..500).map(|i| (i * 37 % 101) as f64).collect();
    let y: Vec<f64> = (0..500).map(|i| (i * 53 % 97) as f64 + 3.0).collect();
    c.bench_function("ranksum_500_500", |b| b.iter(|| ranksum(black_box(&x), &y).unwrap()));
}

criterion_group!(benches, texture, segmentation, forest, pipeline);
criterion_main!(benches);
