//! Rank-sum tests, per-feature screening and ROC/AUC with bootstrap
//! intervals.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::features::channel::quantile_sorted;
use crate::features::FeatureMatrix;
use crate::forest::TileScore;
use crate::seed::{self, salt};

/// Largest combined sample size for the exact null distribution.
pub const EXACT_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSumMethod {
    Exact,
    NormalApprox,
}

impl RankSumMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            RankSumMethod::Exact => "exact",
            RankSumMethod::NormalApprox => "normal_approx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Mann-Whitney U of the first sample.
    pub statistic: f64,
    pub p_two_sided: f64,
    pub method: RankSumMethod,
    pub n_x: usize,
    pub n_y: usize,
}

/// Midranks (1-based) of `values`, plus the tie groups' sizes.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Number of arrangements giving each value of U for sample sizes (m, n):
/// `f(m, n, u) = f(m - 1, n, u - n) + f(m, n - 1, u)`.
fn u_distribution(m: usize, n: usize) -> Vec<f64> {
    // table[a][b] is the distribution for sizes (a, b), built over b for each a.
    let max_u = m * n;
    let mut prev: Vec<Vec<f64>> = (0..=n).map(|_| vec![1.0]).collect(); // a = 0
    for a in 1..=m {
        let mut cur: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        cur.push(vec![1.0]); // b = 0
        for b in 1..=n {
            let mut d = vec![0.0; a * b + 1];
            for (u, &c) in prev[b].iter().enumerate() {
                d[u + b] += c;
            }
            for (u, &c) in cur[b - 1].iter().enumerate() {
                d[u] += c;
            }
            cur.push(d);
        }
        prev = cur;
    }
    let d = prev.swap_remove(n);
    debug_assert_eq!(d.len(), max_u + 1);
    d
}

/// Two-sided Wilcoxon rank-sum (Mann-Whitney) test. Exact when the combined
/// size is at most [`EXACT_MAX_N`] and there are no ties; otherwise normal
/// approximation with tie-corrected variance and continuity correction.
pub fn ranksum(x: &[f64], y: &[f64]) -> Result<RankSumResult> {
    check_samples(x, y)?;
    let (_, ties) = midranks(&x.iter().chain(y).copied().collect::<Vec<_>>());
    if x.len() + y.len() <= EXACT_MAX_N && ties.is_empty() {
        ranksum_exact(x, y)
    } else {
        ranksum_normal(x, y)
    }
}

fn check_samples(x: &[f64], y: &[f64]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidInput("rank-sum test needs two non-empty samples".into()));
    }
    Ok(())
}

/// U of the first sample from midranks, plus the tie group sizes.
fn u_statistic(x: &[f64], y: &[f64]) -> (f64, Vec<usize>) {
    let m = x.len();
    let all: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&all);
    let rx: f64 = ranks[..m].iter().sum();
    (rx - (m * (m + 1)) as f64 / 2.0, ties)
}

/// Exact null distribution of U; ties are not allowed.
pub fn ranksum_exact(x: &[f64], y: &[f64]) -> Result<RankSumResult> {
    check_samples(x, y)?;
    let (m, n) = (x.len(), y.len());
    let (u, ties) = u_statistic(x, y);
    if !ties.is_empty() {
        return Err(Error::InvalidInput("exact rank-sum test needs tie-free samples".into()));
    }
    let dist = u_distribution(m, n);
    let total: f64 = dist.iter().sum();
    let k = u.round() as usize;
    let lower: f64 = dist[..=k].iter().sum::<f64>() / total;
    let upper: f64 = dist[k..].iter().sum::<f64>() / total;
    Ok(RankSumResult {
        statistic: u,
        p_two_sided: (2.0 * lower.min(upper)).min(1.0),
        method: RankSumMethod::Exact,
        n_x: m,
        n_y: n,
    })
}

/// Normal approximation with tie-corrected variance and continuity
/// correction.
pub fn ranksum_normal(x: &[f64], y: &[f64]) -> Result<RankSumResult> {
    check_samples(x, y)?;
    let (m, n) = (x.len(), y.len());
    let (u, ties) = u_statistic(x, y);
    let mean = (m * n) as f64 / 2.0;
    let big_n = (m + n) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (big_n * (big_n - 1.0));
    let var = (m * n) as f64 / 12.0 * ((big_n + 1.0) - tie_term);
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    };
    Ok(RankSumResult {
        statistic: u,
        p_two_sided: p,
        method: RankSumMethod::NormalApprox,
        n_x: m,
        n_y: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenRow {
    pub feature: String,
    pub result: RankSumResult,
}

/// One rank-sum test per feature, MSI tiles against MSS tiles, in column
/// order.
pub fn feature_screen(matrix: &FeatureMatrix) -> Result<Vec<ScreenRow>> {
    let labels = matrix.labels();
    for class in Label::ALL {
        if !labels.contains(&class) {
            return Err(Error::MissingClass(class.as_str()));
        }
    }
    (0..matrix.n_features())
        .into_par_iter()
        .map(|j| {
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for r in &matrix.rows {
                match r.label {
                    Label::Msi => x.push(r.values[j]),
                    Label::Mss => y.push(r.values[j]),
                }
            }
            Ok(ScreenRow {
                feature: matrix.names[j].clone(),
                result: ranksum(&x, &y)?,
            })
        })
        .collect()
}

/// Rank-sum test of MSS scores between true-MSI and true-MSS tiles.
pub fn score_separation(scores: &[TileScore], labels: &[Label]) -> Result<RankSumResult> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (s, l) in scores.iter().zip(labels) {
        match l {
            Label::Msi => x.push(s.mss_score),
            Label::Mss => y.push(s.mss_score),
        }
    }
    if x.is_empty() {
        return Err(Error::MissingClass("MSI"));
    }
    if y.is_empty() {
        return Err(Error::MissingClass("MSS"));
    }
    ranksum(&x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Decision thresholds, descending; point `k + 1` predicts MSI for
    /// scores `>= thresholds[k]`. Point 0 is `(0, 0)`.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
}

/// AUC with MSI as the positive class, by the rank formulation with
/// midranks.
pub fn auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (ranks, _) = midranks(scores);
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = positive.len() as f64 - n_pos;
    let r: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    (r - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// ROC curve of MSI scores with a class-stratified percentile bootstrap
/// interval over patients.
pub fn roc_auc(msi_scores: &[f64], labels: &[Label], n_boot: usize, seed: u64) -> Result<RocCurve> {
    if msi_scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: msi_scores.len(),
            got: labels.len(),
        });
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Msi).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Mss).collect();
    if pos.len() < 2 || neg.len() < 2 {
        return Err(Error::TooFewPatients(format!(
            "ROC needs at least 2 patients per class, got {} MSI and {} MSS",
            pos.len(),
            neg.len()
        )));
    }
    if msi_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite score".into()));
    }
    let positive: Vec<bool> = labels.iter().map(|&l| l == Label::Msi).collect();
    let point = auc(msi_scores, &positive);

    let mut order: Vec<usize> = (0..msi_scores.len()).collect();
    order.sort_by(|&a, &b| msi_scores[b].total_cmp(&msi_scores[a]));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut thresholds = Vec::new();
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let mut i = 0;
    while i < order.len() {
        let t = msi_scores[order[i]];
        while i < order.len() && msi_scores[order[i]] == t {
            if positive[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        thresholds.push(t);
        fpr.push(fp / nn);
        tpr.push(tp / np);
    }

    let boots: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(seed, &[salt::BOOTSTRAP, b as u64]);
            let mut s = Vec::with_capacity(msi_scores.len());
            let mut p = Vec::with_capacity(msi_scores.len());
            for (group, is_pos) in [(&pos, true), (&neg, false)] {
                for _ in 0..group.len() {
                    s.push(msi_scores[group[rng.gen_range(0..group.len())]]);
                    p.push(is_pos);
                }
            }
            auc(&s, &p)
        })
        .collect();
    let (ci_low, ci_high) = if boots.is_empty() {
        (point, point)
    } else {
        let mut sorted = boots;
        sorted.sort_by(f64::total_cmp);
        (quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975))
    };
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc: point,
        ci_low,
        ci_high,
        n_boot,
    })
}

/// Area under the ROC polyline by the trapezoid rule.
pub fn trapezoid(fpr: &[f64], tpr: &[f64]) -> f64 {
    fpr.windows(2)
        .zip(tpr.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_small_case() {
        let r = ranksum(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.method, RankSumMethod::Exact);
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_two_sided - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_samples() {
        let r = ranksum(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.method, RankSumMethod::NormalApprox);
        assert_eq!(r.p_two_sided, 1.0);
        assert!(ranksum(&[], &[1.0]).is_err());
    }

    #[test]
    fn u_distribution_sums_to_binomial() {
        let d = u_distribution(4, 6);
        assert_eq!(d.iter().sum::<f64>(), 210.0);
        assert_eq!(d.len(), 25);
        // Symmetric about mn/2.
        for u in 0..d.len() {
            assert_eq!(d[u], d[d.len() - 1 - u]);
        }
    }

    #[test]
    fn hand_counted_auc() {
        let s = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4];
        let l = [Label::Msi, Label::Msi, Label::Mss, Label::Msi, Label::Mss, Label::Mss];
        let roc = roc_auc(&s, &l, 200, 1).unwrap();
        assert!((roc.auc - 8.0 / 9.0).abs() < 1e-15);
        assert!((trapezoid(&roc.fpr, &roc.tpr) - roc.auc).abs() < 1e-12);
        assert!(roc.ci_low <= roc.ci_high);
        assert_eq!(*roc.fpr.last().unwrap(), 1.0);
    }
}
