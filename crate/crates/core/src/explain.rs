//! Permutation importance, minimal depth, conditional-depth interactions and
//! two-feature prediction grids.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::features::channel::quantile_sorted;
use crate::forest::{DecisionTree, Forest, Node};
use crate::seed::{self, salt};

/// Depth buckets `0..=10`; deeper first occurrences fold into bucket 10.
pub const DEPTH_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: usize,
    pub name: String,
    /// Mean OOB accuracy decrease over trees and repeats.
    pub permutation_importance: f64,
    /// Standard error of the per-repeat means.
    pub importance_se: f64,
    pub mean_minimal_depth: f64,
    /// Buckets `0..=DEPTH_CAP`, then the "absent" bucket.
    pub depth_histogram: Vec<usize>,
    pub trees_using: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub features: Vec<FeatureImportance>,
    /// Depth assigned to a feature in trees that do not use it.
    pub fill_depth: f64,
    pub n_repeats: usize,
}

/// Per-feature minimal-depth summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimalDepth {
    pub mean: Vec<f64>,
    pub histogram: Vec<Vec<usize>>,
    pub trees_using: Vec<usize>,
    pub fill: f64,
}

/// Shallowest split depth of every feature in one tree.
pub fn tree_minimal_depths(tree: &DecisionTree, n_features: usize) -> Vec<Option<usize>> {
    let depths = tree.node_depths();
    let mut out = vec![None; n_features];
    for (i, n) in tree.nodes.iter().enumerate() {
        if let Node::Split { feature, .. } = n {
            let d = depths[i];
            if out[*feature].map_or(true, |cur| d < cur) {
                out[*feature] = Some(d);
            }
        }
    }
    out
}

/// Minimal depth per feature, averaged over trees. Trees that do not use a
/// feature contribute the fill value: the mean over trees of each tree's
/// mean node depth.
pub fn minimal_depth(forest: &Forest) -> MinimalDepth {
    let p = forest.n_features;
    let n_trees = forest.trees.len() as f64;
    let fill = forest
        .trees
        .iter()
        .map(|t| {
            let d = t.node_depths();
            d.iter().sum::<usize>() as f64 / d.len() as f64
        })
        .sum::<f64>()
        / n_trees;
    let mut sum = vec![0.0; p];
    let mut histogram = vec![vec![0usize; DEPTH_CAP + 2]; p];
    let mut trees_using = vec![0usize; p];
    for t in &forest.trees {
        for (j, d) in tree_minimal_depths(t, p).into_iter().enumerate() {
            match d {
                Some(d) => {
                    sum[j] += d as f64;
                    histogram[j][d.min(DEPTH_CAP)] += 1;
                    trees_using[j] += 1;
                }
                None => {
                    sum[j] += fill;
                    histogram[j][DEPTH_CAP + 1] += 1;
                }
            }
        }
    }
    MinimalDepth {
        mean: sum.into_iter().map(|s| s / n_trees).collect(),
        histogram,
        trees_using,
        fill,
    }
}

fn used_features(tree: &DecisionTree, p: usize) -> Vec<bool> {
    let mut used = vec![false; p];
    for n in &tree.nodes {
        if let Node::Split { feature, .. } = n {
            used[*feature] = true;
        }
    }
    used
}

/// OOB permutation importance. For every tree and feature it uses, the
/// feature's values are permuted among that tree's OOB rows and the drop in
/// OOB accuracy is recorded; drops are averaged over trees with OOB rows and
/// over `n_repeats`. Features a tree never splits on contribute exactly 0.
/// Returns `(mean, standard error over repeats)` per feature.
pub fn permutation_importance(
    forest: &Forest,
    rows: &[Vec<f64>],
    labels: &[Label],
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let p = forest.n_features;
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    if forest.trees.iter().any(|t| t.bootstrap.len() != rows.len()) {
        return Err(Error::InvalidInput(
            "rows do not match the forest's training table".into(),
        ));
    }
    if forest.trees.iter().all(|t| t.oob.is_empty()) {
        return Err(Error::InvalidInput("forest has no out-of-bag rows".into()));
    }
    let n_repeats = n_repeats.max(1);
    // per tree: drop[repeat][feature]
    let per_tree: Vec<Option<Vec<Vec<f64>>>> = forest
        .trees
        .par_iter()
        .enumerate()
        .map(|(t, tree)| {
            if tree.oob.is_empty() {
                return None;
            }
            let n_oob = tree.oob.len() as f64;
            let correct = |x: &[f64], i: usize| tree.predict(x) == labels[i];
            let base = tree.oob.iter().filter(|&&i| correct(&rows[i], i)).count() as f64 / n_oob;
            let used = used_features(tree, p);
            let mut drops = vec![vec![0.0; p]; n_repeats];
            let mut x = vec![0.0; p];
            for (j, &u) in used.iter().enumerate() {
                if !u {
                    continue;
                }
                for (r, drop_r) in drops.iter_mut().enumerate() {
                    let mut rng = seed::rng(seed, &[salt::PERMUTATION, t as u64, j as u64, r as u64]);
                    let mut perm: Vec<f64> = tree.oob.iter().map(|&i| rows[i][j]).collect();
                    perm.shuffle(&mut rng);
                    let mut hits = 0usize;
                    for (k, &i) in tree.oob.iter().enumerate() {
                        x.copy_from_slice(&rows[i]);
                        x[j] = perm[k];
                        if correct(&x, i) {
                            hits += 1;
                        }
                    }
                    drop_r[j] = base - hits as f64 / n_oob;
                }
            }
            Some(drops)
        })
        .collect();
    let with_oob = per_tree.iter().flatten().count() as f64;
    let mut per_repeat = vec![vec![0.0; p]; n_repeats];
    for drops in per_tree.iter().flatten() {
        for r in 0..n_repeats {
            for j in 0..p {
                per_repeat[r][j] += drops[r][j];
            }
        }
    }
    Ok((0..p)
        .map(|j| {
            let means: Vec<f64> = per_repeat.iter().map(|r| r[j] / with_oob).collect();
            let m = means.iter().sum::<f64>() / n_repeats as f64;
            let se = if n_repeats > 1 {
                let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n_repeats - 1) as f64;
                (var / n_repeats as f64).sqrt()
            } else {
                0.0
            };
            (m, se)
        })
        .collect())
}

/// Combines permutation importance and minimal depth into one report, in
/// feature order.
pub fn importance_report(
    forest: &Forest,
    names: &[String],
    rows: &[Vec<f64>],
    labels: &[Label],
    n_repeats: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    if names.len() != forest.n_features {
        return Err(Error::LengthMismatch {
            expected: forest.n_features,
            got: names.len(),
        });
    }
    let perm = permutation_importance(forest, rows, labels, n_repeats, seed)?;
    let md = minimal_depth(forest);
    let features = (0..forest.n_features)
        .map(|j| FeatureImportance {
            feature: j,
            name: names[j].clone(),
            permutation_importance: perm[j].0,
            importance_se: perm[j].1,
            mean_minimal_depth: md.mean[j],
            depth_histogram: md.histogram[j].clone(),
            trees_using: md.trees_using[j],
        })
        .collect();
    Ok(ImportanceReport {
        features,
        fill_depth: md.fill,
        n_repeats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub parent: usize,
    pub child: usize,
    /// Maximal parent-rooted subtrees that contain a child split.
    pub occurrences: usize,
    pub mean_conditional_depth: f64,
    pub unconditional_mean_depth: f64,
}

impl InteractionRecord {
    pub fn depth_decrease(&self) -> f64 {
        self.unconditional_mean_depth - self.mean_conditional_depth
    }
}

/// Conditional minimal depth for every ordered feature pair. A maximal
/// subtree for `parent` is rooted at a `parent` split with no `parent` split
/// among its ancestors; the child's depth is measured from that root and
/// only descendants are searched, so `(A, A)` counts nested splits. Returns
/// the `top_k` records ranked by occurrences, then depth decrease, then
/// `(parent, child)`.
pub fn conditional_depth(forest: &Forest, top_k: usize) -> Vec<InteractionRecord> {
    let p = forest.n_features;
    let md = minimal_depth(forest);
    let mut sum = vec![0.0; p * p];
    let mut occ = vec![0usize; p * p];
    for tree in &forest.trees {
        // Walk from the root, tracking which features have split above.
        let mut stack: Vec<(usize, Vec<bool>)> = vec![(0, vec![false; p])];
        while let Some((i, seen)) = stack.pop() {
            if let Node::Split {
                feature, left, right, ..
            } = &tree.nodes[i]
            {
                if !seen[*feature] {
                    for (c, d) in subtree_minimal_depths(tree, i, p).into_iter().enumerate() {
                        if let Some(d) = d {
                            sum[feature * p + c] += d as f64;
                            occ[feature * p + c] += 1;
                        }
                    }
                }
                let mut next = seen;
                next[*feature] = true;
                stack.push((*right, next.clone()));
                stack.push((*left, next));
            }
        }
    }
    let mut records: Vec<InteractionRecord> = (0..p * p)
        .filter(|&k| occ[k] > 0)
        .map(|k| InteractionRecord {
            parent: k / p,
            child: k % p,
            occurrences: occ[k],
            mean_conditional_depth: sum[k] / occ[k] as f64,
            unconditional_mean_depth: md.mean[k % p],
        })
        .collect();
    records.sort_by(|a, b| {
        b.occurrences
            .cmp(&a.occurrences)
            .then(b.depth_decrease().total_cmp(&a.depth_decrease()))
            .then((a.parent, a.child).cmp(&(b.parent, b.child)))
    });
    records.truncate(top_k);
    records
}

/// Minimal depth of each feature among the strict descendants of `root`,
/// measured from `root`.
fn subtree_minimal_depths(tree: &DecisionTree, root: usize, p: usize) -> Vec<Option<usize>> {
    let mut out: Vec<Option<usize>> = vec![None; p];
    let mut stack = Vec::new();
    if let Node::Split { left, right, .. } = &tree.nodes[root] {
        stack.push((*left, 1usize));
        stack.push((*right, 1usize));
    }
    while let Some((i, d)) = stack.pop() {
        if let Node::Split {
            feature, left, right, ..
        } = &tree.nodes[i]
        {
            if out[*feature].map_or(true, |cur| d < cur) {
                out[*feature] = Some(d);
            }
            stack.push((*left, d + 1));
            stack.push((*right, d + 1));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub feature_x: usize,
    pub feature_y: usize,
    pub x_axis: Vec<f64>,
    pub y_axis: Vec<f64>,
    /// `msi[iy][ix]`: forest MSI probability (`1 - mss_score`).
    pub msi: Vec<Vec<f64>>,
    /// Values used for every other feature (training medians).
    pub profile: Vec<f64>,
}

fn axis(values: &[f64], n: usize) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || n < 2 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Forest MSI probability over a `grid_size x grid_size` grid spanning the
/// observed range of the two features, all other features at their
/// training medians. A constant feature yields a single-value axis.
pub fn prediction_grid(
    forest: &Forest,
    rows: &[Vec<f64>],
    feature_x: usize,
    feature_y: usize,
    grid_size: usize,
) -> Result<PredictionGrid> {
    let p = forest.n_features;
    if feature_x >= p || feature_y >= p {
        return Err(Error::InvalidInput(format!(
            "grid features ({feature_x}, {feature_y}) out of range for {p} features"
        )));
    }
    if rows.is_empty() {
        return Err(Error::NoRecords);
    }
    let profile: Vec<f64> = (0..p)
        .map(|j| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            quantile_sorted(&col, 0.5)
        })
        .collect();
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
    let x_axis = axis(&col(feature_x), grid_size);
    let y_axis = axis(&col(feature_y), grid_size);
    let mut msi = Vec::with_capacity(y_axis.len());
    let mut x = profile.clone();
    for &yv in &y_axis {
        let mut row = Vec::with_capacity(x_axis.len());
        for &xv in &x_axis {
            x[feature_x] = xv;
            x[feature_y] = yv;
            row.push(1.0 - forest.mss_score(&x)?);
        }
        msi.push(row);
    }
    Ok(PredictionGrid {
        feature_x,
        feature_y,
        x_axis,
        y_axis,
        msi,
        profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{ForestParams, FORMAT_VERSION};

    fn leaf(mss: bool) -> Node {
        Node::Leaf {
            counts: if mss { [0, 1] } else { [1, 0] },
        }
    }

    fn forest_of(trees: Vec<Vec<Node>>, p: usize) -> Forest {
        Forest {
            format_version: FORMAT_VERSION,
            params: ForestParams::default(),
            n_features: p,
            catalog_digest: String::new(),
            provenance: String::new(),
            master_seed: 0,
            training_ids: vec![],
            trees: trees
                .into_iter()
                .map(|nodes| DecisionTree {
                    nodes,
                    bootstrap: vec![],
                    oob: vec![],
                    depth: 0,
                    seed: 0,
                })
                .collect(),
        }
    }

    fn split(feature: usize, threshold: f64, left: usize, right: usize) -> Node {
        Node::Split {
            feature,
            threshold,
            left,
            right,
        }
    }

    #[test]
    fn root_a_then_b() {
        // 0: A; 1: B (left of A); 2: leaf; 3,4: leaves under B.
        let tree = vec![split(0, 0.5, 1, 2), split(1, 0.5, 3, 4), leaf(true), leaf(false), leaf(true)];
        let f = forest_of(vec![tree], 3);
        let recs = conditional_depth(&f, 30);
        assert_eq!(recs.len(), 1);
        assert_eq!((recs[0].parent, recs[0].child, recs[0].occurrences), (0, 1, 1));
        assert_eq!(recs[0].mean_conditional_depth, 1.0);
        let md = minimal_depth(&f);
        assert_eq!(md.mean[0], 0.0);
        assert_eq!(md.mean[1], 1.0);
        // Node depths 0,1,1,2,2.
        assert!((md.fill - 6.0 / 5.0).abs() < 1e-15);
        assert_eq!(md.mean[2], md.fill);
        assert_eq!(md.histogram[2][DEPTH_CAP + 1], 1);
    }

    #[test]
    fn nested_self_interaction() {
        let tree = vec![split(0, 0.5, 1, 2), split(0, 0.2, 3, 4), leaf(true), leaf(false), leaf(true)];
        let recs = conditional_depth(&forest_of(vec![tree], 1), 30);
        assert_eq!(recs.len(), 1);
        assert_eq!((recs[0].parent, recs[0].child), (0, 0));
        assert_eq!(recs[0].occurrences, 1);
        assert_eq!(recs[0].mean_conditional_depth, 1.0);
    }

    #[test]
    fn step_grid() {
        let f = forest_of(vec![vec![split(0, 0.5, 1, 2), leaf(false), leaf(true)]], 2);
        let rows = vec![vec![0.0, 0.0], vec![1.0, 3.0]];
        let g = prediction_grid(&f, &rows, 0, 1, 5).unwrap();
        for row in &g.msi {
            assert_eq!(row, &vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        }
        let flat = vec![vec![2.0, 0.0], vec![2.0, 3.0]];
        let g = prediction_grid(&f, &flat, 0, 1, 5).unwrap();
        assert_eq!(g.x_axis, vec![2.0]);
        assert_eq!(g.msi.len(), 5);
    }
}
