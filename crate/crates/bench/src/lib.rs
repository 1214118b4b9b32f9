//! Shared input generators for the benchmarks.

use histoforest_core::synthgen::{render_tile, Preset, SynthSpec};
use histoforest_core::{Grid, Label, Mask, TileImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random gray levels in `0..levels` with a full region mask.
pub fn level_image(side: usize, levels: usize, seed: u64) -> (Grid<u8>, Mask) {
    let mut r = rng(seed);
    let data = (0..side * side).map(|_| r.gen_range(0..levels) as u8).collect();
    (Grid::from_vec(side, side, data), Mask::from_fn(side, side, |_, _| true))
}

/// `n` RGB triples drawn around three well separated colors.
pub fn pixel_cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let centers = [[70.0, 40.0, 120.0], [200.0, 120.0, 180.0], [235.0, 200.0, 220.0]];
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let c = centers[r.gen_range(0..3)];
            c.map(|v| v + r.gen_range(-12.0..12.0))
        })
        .collect()
}

/// Edge mask with `count` one-pixel-wide rings of radius 10 to 15.
pub fn ring_edges(side: usize, count: usize, seed: u64) -> Mask {
    let mut r = rng(seed);
    let rings: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            let rad = r.gen_range(10.0..15.0);
            (r.gen_range(rad..side as f64 - rad), r.gen_range(rad..side as f64 - rad), rad)
        })
        .collect();
    Mask::from_fn(side, side, |x, y| {
        rings.iter().any(|&(cx, cy, rad)| {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            (d - rad).abs() < 1.0
        })
    })
}

/// Training table with one informative column and `p - 1` noise columns.
pub fn training_table(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
    let mut r = rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Msi } else { Label::Mss };
        let shift = if label == Label::Msi { 0.5 } else { 0.0 };
        let mut row: Vec<f64> = (0..p).map(|_| r.gen::<f64>()).collect();
        row[0] += shift;
        rows.push(row);
        labels.push(label);
    }
    (rows, labels)
}

/// One rendered planted-signal tile.
pub fn synthetic_tile(seed: u64) -> TileImage {
    render_tile(&SynthSpec::preset(Preset::Planted, seed), 0).0
}
