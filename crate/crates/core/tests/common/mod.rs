//! Slow, obviously-correct reference implementations used as test oracles,
//! plus small random-input generators.

#![allow(dead_code)]

use histoforest_core::forest::{DecisionTree, Node};
use histoforest_core::Label;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Co-occurrence counts by comparing every pixel pair in the region:
/// `(a, b)` co-occur when `b - a` is one of the offsets. Each such pair adds
/// to both `(va, vb)` and `(vb, va)`. Returns the normalized matrix.
pub fn glcm_by_pairs(img: &[Vec<u8>], region: &[Vec<bool>], levels: usize, offsets: &[(isize, isize)]) -> Option<Vec<Vec<f64>>> {
    let mut pts = Vec::new();
    for (y, row) in region.iter().enumerate() {
        for (x, &inside) in row.iter().enumerate() {
            if inside {
                pts.push((x as isize, y as isize));
            }
        }
    }
    let mut m = vec![vec![0.0; levels]; levels];
    let mut total = 0.0;
    for &(ax, ay) in &pts {
        for &(bx, by) in &pts {
            if offsets.contains(&(bx - ax, by - ay)) {
                let va = img[ay as usize][ax as usize] as usize;
                let vb = img[by as usize][bx as usize] as usize;
                m[va][vb] += 1.0;
                m[vb][va] += 1.0;
                total += 2.0;
            }
        }
    }
    if total == 0.0 {
        return None;
    }
    for row in &mut m {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Some(m)
}

fn xlog2x(p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * p.log2()
    }
}

/// The thirteen Haralick statistics from their textbook definitions, gray
/// levels counted from 0, base-2 logarithms.
pub fn haralick_by_formula(p: &[Vec<f64>]) -> [f64; 13] {
    let n = p.len();
    let px: Vec<f64> = (0..n).map(|i| (0..n).map(|j| p[i][j]).sum()).collect();
    let py: Vec<f64> = (0..n).map(|j| (0..n).map(|i| p[i][j]).sum()).collect();
    let p_sum: Vec<f64> = (0..2 * n - 1)
        .map(|k| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i + j == k {
                        s += p[i][j];
                    }
                }
            }
            s
        })
        .collect();
    let p_diff: Vec<f64> = (0..n)
        .map(|k| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if (i as isize - j as isize).unsigned_abs() == k {
                        s += p[i][j];
                    }
                }
            }
            s
        })
        .collect();
    let mean = |d: &[f64]| d.iter().enumerate().map(|(k, v)| k as f64 * v).sum::<f64>();
    let var = |d: &[f64]| {
        let m = mean(d);
        d.iter().enumerate().map(|(k, v)| (k as f64 - m) * (k as f64 - m) * v).sum::<f64>()
    };
    let ent = |d: &[f64]| -d.iter().map(|&v| xlog2x(v)).sum::<f64>();

    let (mx, my) = (mean(&px), mean(&py));
    let (sx, sy) = (var(&px).sqrt(), var(&py).sqrt());
    let mut f = [0.0; 13];
    let mut hxy1 = 0.0;
    let mut hxy2 = 0.0;
    let mut cov = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = p[i][j];
            let (fi, fj) = (i as f64, j as f64);
            f[0] += v * v;
            f[1] += (fi - fj) * (fi - fj) * v;
            cov += (fi - mx) * (fj - my) * v;
            f[3] += (fi - mx) * (fi - mx) * v;
            f[4] += v / (1.0 + (fi - fj) * (fi - fj));
            f[8] -= xlog2x(v);
            let q = px[i] * py[j];
            if q > 0.0 {
                hxy1 -= v * q.log2();
                hxy2 -= q * q.log2();
            }
        }
    }
    f[2] = if sx > 0.0 && sy > 0.0 { cov / (sx * sy) } else { 0.0 };
    f[5] = mean(&p_sum);
    f[6] = var(&p_sum);
    f[7] = ent(&p_sum);
    f[9] = var(&p_diff);
    f[10] = ent(&p_diff);
    let hmax = ent(&px).max(ent(&py));
    f[11] = if hmax > 0.0 { (f[8] - hxy1) / hmax } else { 0.0 };
    f[12] = (1.0 - (-2.0 * (hxy2 - f[8])).exp()).max(0.0).sqrt();
    f
}

/// 8-connected regions by recursive-style flood fill with an explicit
/// stack. Each region is returned as a sorted pixel list; regions sorted.
pub fn flood_fill_regions(mask: &[Vec<bool>]) -> Vec<Vec<(usize, usize)>> {
    let h = mask.len();
    let w = if h == 0 { 0 } else { mask[0].len() };
    let mut label = vec![vec![0usize; w]; h];
    let mut next = 0;
    let mut regions = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask[y0][x0] || label[y0][x0] != 0 {
                continue;
            }
            next += 1;
            let mut region = Vec::new();
            let mut stack = vec![(x0, y0)];
            label[y0][x0] = next;
            while let Some((x, y)) = stack.pop() {
                region.push((x, y));
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if mask[ny][nx] && label[ny][nx] == 0 {
                            label[ny][nx] = next;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            region.sort();
            regions.push(region);
        }
    }
    regions.sort();
    regions
}

fn gini_of(msi: usize, mss: usize) -> f64 {
    let t = (msi + mss) as f64;
    if t == 0.0 {
        return 0.0;
    }
    let (a, b) = (msi as f64 / t, mss as f64 / t);
    1.0 - a * a - b * b
}

/// Gini decrease of splitting `rows` on `x[f] <= t`, counted directly.
pub fn split_decrease(table: &[Vec<f64>], labels: &[Label], rows: &[usize], f: usize, t: f64) -> f64 {
    let count = |keep: &dyn Fn(usize) -> bool| {
        let mut c = (0, 0);
        for &r in rows {
            if keep(r) {
                match labels[r] {
                    Label::Msi => c.0 += 1,
                    Label::Mss => c.1 += 1,
                }
            }
        }
        c
    };
    let all = count(&|_| true);
    let left = count(&|r| table[r][f] <= t);
    let right = count(&|r| table[r][f] > t);
    let n = rows.len() as f64;
    let nl = (left.0 + left.1) as f64;
    let nr = (right.0 + right.1) as f64;
    gini_of(all.0, all.1) - nl / n * gini_of(left.0, left.1) - nr / n * gini_of(right.0, right.1)
}

/// Best achievable Gini decrease over every feature and every midpoint
/// between distinct sorted values, by brute force.
pub fn best_decrease(table: &[Vec<f64>], labels: &[Label], rows: &[usize], features: &[usize]) -> f64 {
    let mut best = 0.0f64;
    for &f in features {
        let mut vals: Vec<f64> = rows.iter().map(|&r| table[r][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            best = best.max(split_decrease(table, labels, rows, f, t));
        }
    }
    best
}

/// Minimal depth of each feature in a tree by recursive descent.
pub fn minimal_depths_recursive(tree: &DecisionTree, p: usize) -> Vec<Option<usize>> {
    fn walk(nodes: &[Node], i: usize, d: usize, out: &mut [Option<usize>]) {
        if let Node::Split { feature, left, right, .. } = &nodes[i] {
            out[*feature] = Some(out[*feature].map_or(d, |c| c.min(d)));
            walk(nodes, *left, d + 1, out);
            walk(nodes, *right, d + 1, out);
        }
    }
    let mut out = vec![None; p];
    walk(&tree.nodes, 0, 0, &mut out);
    out
}

/// Depths of all nodes by recursive descent, in visiting order.
pub fn all_node_depths(tree: &DecisionTree) -> Vec<usize> {
    fn walk(nodes: &[Node], i: usize, d: usize, out: &mut Vec<usize>) {
        out.push(d);
        if let Node::Split { left, right, .. } = &nodes[i] {
            walk(nodes, *left, d + 1, out);
            walk(nodes, *right, d + 1, out);
        }
    }
    let mut out = Vec::new();
    walk(&tree.nodes, 0, 0, &mut out);
    out
}

/// Mean minimal depth per feature; absent features take `fill`.
pub fn mean_minimal_depth(trees: &[DecisionTree], p: usize, fill: f64) -> Vec<f64> {
    let mut sum = vec![0.0; p];
    for t in trees {
        for (j, d) in minimal_depths_recursive(t, p).into_iter().enumerate() {
            sum[j] += d.map_or(fill, |d| d as f64);
        }
    }
    sum.into_iter().map(|s| s / trees.len() as f64).collect()
}

/// Two-pass population moments and linearly interpolated quantiles.
pub struct NaiveStats {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub range: f64,
}

/// Quantile as the linear interpolation of the points `(k / (n - 1), x_k)`.
pub fn interpolated_quantile(values: &[f64], p: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 1 {
        return s[0];
    }
    for k in 0..n - 1 {
        let (a, b) = (k as f64 / (n - 1) as f64, (k + 1) as f64 / (n - 1) as f64);
        if p <= b {
            return s[k] + (s[k + 1] - s[k]) * (p - a) / (b - a);
        }
    }
    s[n - 1]
}

pub fn naive_stats(values: &[f64]) -> NaiveStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let central = |k: i32| values.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let variance = central(2);
    let (skewness, kurtosis) = if variance > 0.0 {
        (central(3) / variance.powf(1.5), central(4) / (variance * variance))
    } else {
        (0.0, 0.0)
    };
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    NaiveStats {
        mean,
        variance,
        skewness,
        kurtosis,
        q25: interpolated_quantile(values, 0.25),
        median: interpolated_quantile(values, 0.5),
        q75: interpolated_quantile(values, 0.75),
        range: max - min,
    }
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            den += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / den
}

/// A random table of `n` rows and `p` features with values on a coarse grid
/// (so ties occur) and labels that depend weakly on the first feature.
pub fn random_table(r: &mut impl Rng, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<Label>) {
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..p).map(|_| r.gen_range(0..20) as f64 / 4.0).collect();
        let msi = r.gen_bool(if row[0] > 2.5 { 0.75 } else { 0.3 });
        labels.push(if msi { Label::Msi } else { Label::Mss });
        rows.push(row);
    }
    (rows, labels)
}
