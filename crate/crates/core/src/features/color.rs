//! Global (whole-ROI) and local (per-GMM-cluster) color statistics.

use super::channel::{channel_stats, moments};
use crate::image::{Grid, RoiMask, TileImage};
use crate::segment::LabelMap;

pub type Named = Vec<(String, f64)>;

/// Standard hexcone HSV with every component in `[0, 1]` (hue in `[0, 1)`).
/// Achromatic pixels get hue 0.
pub fn rgb_to_hsv(p: [u8; 3]) -> [f64; 3] {
    let r = p[0] as f64 / 255.0;
    let g = p[1] as f64 / 255.0;
    let b = p[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max > 0.0 { d / max } else { 0.0 };
    [h.rem_euclid(1.0), s, max]
}

const CHANNELS: [&str; 6] = ["r", "g", "b", "h", "s", "v"];

/// 6 channels (R, G, B in intensity units; H, S, V in `[0, 1]`) x 8
/// statistics over the ROI, named `<channel>_<stat>`. `None` when the ROI is
/// empty.
pub fn global_color_features(tile: &TileImage, roi: &RoiMask) -> Option<Named> {
    let mut chans: [Vec<f64>; 6] = Default::default();
    for (p, &m) in tile.pixels().iter().zip(roi.bits()) {
        if !m {
            continue;
        }
        let hsv = rgb_to_hsv(*p);
        for c in 0..3 {
            chans[c].push(p[c] as f64);
            chans[3 + c].push(hsv[c]);
        }
    }
    if chans[0].is_empty() {
        return None;
    }
    let mut out = Vec::with_capacity(48);
    for (name, values) in CHANNELS.iter().zip(&chans) {
        let stats = channel_stats(values).expect("non-empty channel");
        for (stat, v) in stats.named() {
            out.push((format!("{name}_{stat}"), v));
        }
    }
    Some(out)
}

/// 8 statistics of a scalar map over the ROI, named `<prefix>_<stat>`.
pub fn map_features(prefix: &str, map: &Grid<f64>, roi: &RoiMask) -> Option<Named> {
    let values: Vec<f64> = map
        .data()
        .iter()
        .zip(roi.bits())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .collect();
    let stats = channel_stats(&values).ok()?;
    Some(
        stats
            .named()
            .iter()
            .map(|(s, v)| (format!("{prefix}_{s}"), *v))
            .collect(),
    )
}

/// Result of the per-cluster statistics.
#[derive(Debug, Clone)]
pub struct LocalColor {
    pub values: Named,
    /// True when at least one cluster had no pixels (its values are 0).
    pub empty_cluster: bool,
}

/// For each cluster `l0..l{k-1}` and channel R, G, B: mean, variance and
/// skewness (`<ch>_<stat>_l<k>`), plus the cluster's share of the ROI
/// (`prop_l<k>`).
pub fn local_color_features(tile: &TileImage, labels: &LabelMap, k: usize) -> LocalColor {
    let mut per: Vec<[Vec<f64>; 3]> = (0..k).map(|_| Default::default()).collect();
    for (p, l) in tile.pixels().iter().zip(labels.data()) {
        if let Some(l) = l {
            let l = *l as usize;
            if l < k {
                for c in 0..3 {
                    per[l][c].push(p[c] as f64);
                }
            }
        }
    }
    let total: usize = per.iter().map(|c| c[0].len()).sum();
    let mut values = Vec::with_capacity(k * 10);
    let mut empty_cluster = false;
    for (l, chans) in per.iter().enumerate() {
        for (ci, name) in ["r", "g", "b"].iter().enumerate() {
            let (mean, var, skew) = if chans[ci].is_empty() {
                empty_cluster = true;
                (0.0, 0.0, 0.0)
            } else {
                let (m, v, s, _) = moments(&chans[ci]);
                (m, v, s)
            };
            values.push((format!("{name}_mean_l{l}"), mean));
            values.push((format!("{name}_var_l{l}"), var));
            values.push((format!("{name}_skew_l{l}"), skew));
        }
        let prop = if total > 0 {
            chans[0].len() as f64 / total as f64
        } else {
            0.0
        };
        values.push((format!("prop_l{l}"), prop));
    }
    LocalColor {
        values,
        empty_cluster,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Mask;

    fn get(v: &Named, name: &str) -> f64 {
        v.iter().find(|(n, _)| n == name).unwrap().1
    }

    #[test]
    fn hsv_reference_points() {
        assert_eq!(rgb_to_hsv([255, 0, 0]), [0.0, 1.0, 1.0]);
        assert_eq!(rgb_to_hsv([128, 128, 128])[1], 0.0);
        let g = rgb_to_hsv([0, 255, 0]);
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-12);
        let m = rgb_to_hsv([255, 0, 255]);
        assert!((m[0] - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_gray_roi() {
        let t = TileImage::filled(4, 4, [120, 120, 120]);
        let v = global_color_features(&t, &Mask::from_fn(4, 4, |_, _| true)).unwrap();
        assert_eq!(v.len(), 48);
        for ch in CHANNELS {
            assert_eq!(get(&v, &format!("{ch}_var")), 0.0);
        }
        assert_eq!(get(&v, "s_mean"), 0.0);
        assert_eq!(get(&v, "s_75"), 0.0);
    }

    #[test]
    fn uniform_red_roi() {
        let t = TileImage::filled(4, 4, [255, 0, 0]);
        let v = global_color_features(&t, &Mask::from_fn(4, 4, |_, _| true)).unwrap();
        assert_eq!(get(&v, "h_mean"), 0.0);
        assert_eq!(get(&v, "s_mean"), 1.0);
        assert_eq!(get(&v, "v_mean"), 1.0);
    }

    #[test]
    fn empty_roi_gives_none() {
        let t = TileImage::filled(2, 2, [255; 3]);
        assert!(global_color_features(&t, &Mask::new(2, 2)).is_none());
    }

    #[test]
    fn single_cluster_imputes_the_rest() {
        let t = TileImage::filled(3, 3, [10, 20, 30]);
        let labels = Grid::from_vec(3, 3, vec![Some(1u8); 9]);
        let lc = local_color_features(&t, &labels, 3);
        assert!(lc.empty_cluster);
        assert_eq!(lc.values.len(), 30);
        assert_eq!(get(&lc.values, "g_mean_l1"), 20.0);
        assert_eq!(get(&lc.values, "g_var_l1"), 0.0);
        assert_eq!(get(&lc.values, "g_skew_l1"), 0.0);
        assert_eq!(get(&lc.values, "r_mean_l0"), 0.0);
        assert_eq!(get(&lc.values, "prop_l1"), 1.0);
    }
}
