//! Per-channel summary statistics with population moments.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats {
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub range: f64,
}

impl ChannelStats {
    /// Values keyed by the catalog statistic suffixes.
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("mean", self.mean),
            ("median", self.median),
            ("25", self.q25),
            ("75", self.q75),
            ("var", self.variance),
            ("skew", self.skewness),
            ("kur", self.kurtosis),
            ("range", self.range),
        ]
    }
}

/// Quantile of sorted data by linear interpolation between order
/// statistics at position `(n - 1) * p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Mean, variance (divide by n) and the standardized third/fourth moments.
/// A zero-variance sample has skewness and kurtosis 0.
pub fn moments(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    // Relative cutoff: constant samples leave rounding residue in m2.
    if m2 <= 1e-24 * mean.abs().max(1.0).powi(2) {
        return (mean, 0.0, 0.0, 0.0);
    }
    (mean, m2, m3 / m2.powf(1.5), m4 / (m2 * m2))
}

pub fn channel_stats(values: &[f64]) -> Result<ChannelStats> {
    if values.is_empty() {
        return Err(Error::InvalidInput("channel_stats of an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mean, variance, skewness, kurtosis) = moments(values);
    Ok(ChannelStats {
        mean,
        median: quantile_sorted(&sorted, 0.5),
        q25: quantile_sorted(&sorted, 0.25),
        q75: quantile_sorted(&sorted, 0.75),
        variance,
        skewness,
        kurtosis,
        range: sorted[sorted.len() - 1] - sorted[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_sample() {
        let s = channel_stats(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.variance, s.skewness, s.kurtosis, s.range), (5.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn one_to_four() {
        let s = channel_stats(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.range, 3.0);
        assert_eq!(s.variance, 1.25);
        assert_eq!(s.q25, 1.75);
        assert_eq!(s.q75, 3.25);
    }

    #[test]
    fn skew_of_single_outlier() {
        // m2 = 3/16, m3 = 3/32 -> skew = 2/sqrt(3).
        let s = channel_stats(&[0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((s.skewness - 2.0 / 3f64.sqrt()).abs() < 1e-12);
        // m4 = 21/256 -> kurtosis = 7/3.
        assert!((s.kurtosis - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(channel_stats(&[]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut v in proptest::collection::vec(-100.0f64..100.0, 1..40), seed in 0u64..1000) {
            let a = channel_stats(&v).unwrap();
            // Deterministic shuffle by rotation + reversal.
            let k = (seed as usize) % v.len();
            v.rotate_left(k);
            v.reverse();
            let b = channel_stats(&v).unwrap();
            prop_assert_eq!(a.median, b.median);
            prop_assert_eq!(a.q25, b.q25);
            prop_assert_eq!(a.range, b.range);
            prop_assert!((a.mean - b.mean).abs() < 1e-9);
            prop_assert!((a.variance - b.variance).abs() < 1e-9);
            prop_assert!((a.skewness - b.skewness).abs() < 1e-6);
            prop_assert!((a.kurtosis - b.kurtosis).abs() < 1e-6);
        }
    }
}
