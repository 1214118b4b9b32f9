mod common;

use histoforest_core::dataset::{split_patients, DatasetManifest, TileRecord};
use histoforest_core::features::glcm::{compute_glcm, DEFAULT_OFFSETS};
use histoforest_core::stats::{auc, ranksum};
use histoforest_core::{Grid, Label, Mask};
use proptest::prelude::*;

fn manifest_strategy() -> impl Strategy<Value = DatasetManifest> {
    (2usize..12, 2usize..12, prop::collection::vec(1usize..6, 24)).prop_map(|(n_msi, n_mss, tiles)| {
        let mut records = Vec::new();
        for p in 0..n_msi + n_mss {
            let label = if p < n_msi { Label::Msi } else { Label::Mss };
            for t in 0..tiles[p % tiles.len()] {
                let id = format!("pt{p:02}_t{t}");
                records.push(TileRecord {
                    tile_id: id.clone(),
                    patient_id: format!("pt{p:02}"),
                    label,
                    path: format!("{id}.png").into(),
                });
            }
        }
        DatasetManifest::new(records, "prop").unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn split_never_leaks_patients(
        m in manifest_strategy(),
        fraction in 0.1f64..0.9,
        seed in any::<u64>(),
        stratified in any::<bool>(),
    ) {
        let s = split_patients(&m, fraction, seed, stratified).unwrap();
        prop_assert!(s.train_patients.is_disjoint(&s.test_patients));
        prop_assert_eq!(s.train_patients.len() + s.test_patients.len(), m.patients().len());
        let train = s.record_indices(&m.records, true);
        let test = s.record_indices(&m.records, false);
        prop_assert_eq!(train.len() + test.len(), m.records.len());
        for &i in &train {
            prop_assert!(!s.test_patients.contains(&m.records[i].patient_id));
        }
        for &i in &test {
            prop_assert!(!train.contains(&i));
        }
        if stratified {
            for class in Label::ALL {
                prop_assert!(s.train_patients.iter().any(|p| m.patients()[p] == class));
                prop_assert!(s.test_patients.iter().any(|p| m.patients()[p] == class));
            }
        }
    }
}

proptest! {
    #[test]
    fn glcm_is_symmetric_and_normalized(
        cells in prop::collection::vec(0u8..8, 100),
        region in prop::collection::vec(any::<bool>(), 100),
    ) {
        let img = Grid::from_vec(10, 10, cells);
        let mask = Mask::from_vec(10, 10, region);
        if let Ok(g) = compute_glcm(&img, &mask, 8, &DEFAULT_OFFSETS) {
            let total: f64 = g.probabilities().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for i in 0..8 {
                for j in 0..8 {
                    prop_assert_eq!(g.get(i, j), g.get(j, i));
                }
            }
        }
    }

    #[test]
    fn auc_invariants(
        raw in prop::collection::vec((0u8..30, any::<bool>()), 2..60),
    ) {
        let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64 / 29.0).collect();
        let pos: Vec<bool> = raw.iter().map(|r| r.1).collect();
        prop_assume!(pos.iter().any(|&p| p) && pos.iter().any(|&p| !p));
        let a = auc(&scores, &pos);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - common::pairwise_auc(&scores, &pos)).abs() < 1e-12);
        // Strictly increasing transforms leave it unchanged.
        let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
        prop_assert!((auc(&squashed, &pos) - a).abs() < 1e-12);
        // Swapping the classes mirrors it.
        let flipped: Vec<bool> = pos.iter().map(|p| !p).collect();
        prop_assert!((auc(&scores, &flipped) - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn ranksum_is_symmetric(
        x in prop::collection::vec(0u8..50, 1..15),
        y in prop::collection::vec(0u8..50, 1..15),
    ) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        let a = ranksum(&x, &y).unwrap();
        let b = ranksum(&y, &x).unwrap();
        prop_assert!((a.p_two_sided - b.p_two_sided).abs() < 1e-12);
        prop_assert!((a.statistic + b.statistic - (x.len() * y.len()) as f64).abs() < 1e-9);
        prop_assert!(a.p_two_sided > 0.0 && a.p_two_sided <= 1.0);
        prop_assert_eq!(a.method, b.method);
    }
}
