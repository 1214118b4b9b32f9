//! Random forest of CART trees (Gini) with bootstrap/OOB bookkeeping.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, TileRecord};
use crate::error::{Error, Result};
use crate::features::{FeatureCatalog, FeatureVector};
use crate::seed::{self, salt};

pub const FORMAT_VERSION: u32 = 1;

/// Minimum impurity decrease for a split to count.
const MIN_DECREASE: f64 = 1e-12;

/// `1 - sum p_i^2`.
pub fn gini(counts: &[f64]) -> Result<f64> {
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("gini of an empty node".into()));
    }
    Ok(1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>())
}

fn gini2(c: [f64; 2]) -> f64 {
    let t = c[0] + c[1];
    if t <= 0.0 {
        return 0.0;
    }
    let p = c[0] / t;
    2.0 * p * (1.0 - p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_samples_split: usize,
    /// Candidate features per node; `None` means `ceil(sqrt(p))`.
    pub max_features: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            min_samples_split: 2,
            max_features: None,
        }
    }
}

impl ForestParams {
    pub fn mtry(&self, n_features: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Bootstrap sample counts `[MSI, MSS]`.
    Leaf { counts: [u32; 2] },
}

impl Node {
    /// Majority class; ties vote MSS.
    pub fn vote(&self) -> Option<Label> {
        match self {
            Node::Leaf { counts } => Some(if counts[1] >= counts[0] { Label::Mss } else { Label::Msi }),
            Node::Split { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
    /// Training-row indices drawn with replacement, in draw order.
    pub bootstrap: Vec<usize>,
    /// Training rows never drawn, ascending.
    pub oob: Vec<usize>,
    pub depth: usize,
    pub seed: u64,
}

impl DecisionTree {
    pub fn leaf_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        self.nodes[self.leaf_of(x)].vote().expect("leaf")
    }

    /// Depth of every node (root 0), by node index.
    pub fn node_depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = n {
                depth[*left] = depth[i] + 1;
                depth[*right] = depth[i] + 1;
            }
        }
        depth
    }
}

/// Best split found by [`best_split`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub impurity_decrease: f64,
}

/// Column-major view of the training table.
pub struct TrainingSet {
    columns: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl TrainingSet {
    pub fn new(rows: &[Vec<f64>], labels: &[Label]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::NoRecords);
        }
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: rows.len(),
                got: labels.len(),
            });
        }
        let p = rows[0].len();
        if p == 0 {
            return Err(Error::InvalidInput("training table has no features".into()));
        }
        let mut columns = vec![Vec::with_capacity(rows.len()); p];
        for r in rows {
            if r.len() != p {
                return Err(Error::LengthMismatch { expected: p, got: r.len() });
            }
            for (j, &v) in r.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!("non-finite value in feature {j}")));
                }
                columns[j].push(v);
            }
        }
        Ok(Self {
            columns,
            labels: labels.iter().map(|l| l.index()).collect(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    fn counts(&self, rows: &[usize]) -> [f64; 2] {
        let mut c = [0.0; 2];
        for &r in rows {
            c[self.labels[r]] += 1.0;
        }
        c
    }

    /// Exhaustive scan of `features` (any order) over midpoints between
    /// consecutive distinct values. Ties go to the lower feature index, then
    /// the lower threshold. `None` when nothing decreases impurity.
    pub fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<Split> {
        let parent = self.counts(rows);
        let n = rows.len() as f64;
        let parent_gini = gini2(parent);
        let mut feats = features.to_vec();
        feats.sort_unstable();
        let mut best: Option<Split> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for f in feats {
            let col = &self.columns[f];
            pairs.clear();
            pairs.extend(rows.iter().map(|&r| (col[r], self.labels[r])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0.0; 2];
            for i in 0..pairs.len() - 1 {
                left[pairs[i].1] += 1.0;
                let (a, b) = (pairs[i].0, pairs[i + 1].0);
                if a == b {
                    continue;
                }
                let right = [parent[0] - left[0], parent[1] - left[1]];
                let nl = (i + 1) as f64;
                let dec = parent_gini - (nl / n) * gini2(left) - ((n - nl) / n) * gini2(right);
                let better = match best {
                    None => dec > MIN_DECREASE,
                    Some(s) => dec > s.impurity_decrease + MIN_DECREASE,
                };
                if better {
                    let mid = a + (b - a) / 2.0;
                    best = Some(Split {
                        feature: f,
                        threshold: if mid < b { mid } else { a },
                        impurity_decrease: dec,
                    });
                }
            }
        }
        best
    }
}

/// Grows one tree on `bootstrap`. At each node `mtry` features are drawn
/// without replacement; if none of them decreases impurity, further features
/// are drawn in batches until a split is found or all are exhausted.
fn grow_tree(data: &TrainingSet, bootstrap: &[usize], params: &ForestParams, rng: &mut impl Rng) -> (Vec<Node>, usize) {
    let p = data.n_features();
    let mtry = params.mtry(p);
    let mut nodes = vec![Node::Leaf { counts: [0, 0] }];
    let mut stack = vec![(0usize, bootstrap.to_vec(), 0usize)];
    let mut max_depth = 0;
    let mut order: Vec<usize> = (0..p).collect();
    while let Some((id, rows, depth)) = stack.pop() {
        max_depth = max_depth.max(depth);
        let c = data.counts(&rows);
        let leaf = Node::Leaf {
            counts: [c[0] as u32, c[1] as u32],
        };
        if rows.len() < params.min_samples_split || c[0] == 0.0 || c[1] == 0.0 {
            nodes[id] = leaf;
            continue;
        }
        let mut split = None;
        let mut drawn = 0;
        while drawn < p && split.is_none() {
            let take = mtry.min(p - drawn);
            // Partial Fisher-Yates: order[drawn..drawn + take] become the batch.
            for k in drawn..drawn + take {
                let j = rng.gen_range(k..p);
                order.swap(k, j);
            }
            split = data.best_split(&rows, &order[drawn..drawn + take]);
            drawn += take;
        }
        let Some(s) = split else {
            nodes[id] = leaf;
            continue;
        };
        let col = &data.columns[s.feature];
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= s.threshold);
        let left = nodes.len();
        nodes.push(Node::Leaf { counts: [0, 0] });
        nodes.push(Node::Leaf { counts: [0, 0] });
        nodes[id] = Node::Split {
            feature: s.feature,
            threshold: s.threshold,
            left,
            right: left + 1,
        };
        stack.push((left + 1, r, depth + 1));
        stack.push((left, l, depth + 1));
    }
    (nodes, max_depth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format_version: u32,
    pub params: ForestParams,
    pub n_features: usize,
    pub catalog_digest: String,
    /// Free-form tag set by the producer, e.g. a configuration digest.
    #[serde(default)]
    pub provenance: String,
    pub master_seed: u64,
    /// Ids of the training rows, in training order; empty when unknown.
    pub training_ids: Vec<String>,
    pub trees: Vec<DecisionTree>,
}

/// Fits `params.n_trees` trees in parallel. Tree `t` uses the seed
/// `derive(master_seed, [FOREST, t])`, so the result does not depend on the
/// thread count.
pub fn fit_forest(rows: &[Vec<f64>], labels: &[Label], params: &ForestParams, master_seed: u64) -> Result<Forest> {
    let data = TrainingSet::new(rows, labels)?;
    for class in Label::ALL {
        if !labels.contains(&class) {
            return Err(Error::MissingClass(class.as_str()));
        }
    }
    if params.n_trees == 0 {
        return Err(Error::InvalidInput("n_trees must be positive".into()));
    }
    let n = data.n_rows();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let tree_seed = seed::derive(master_seed, &[salt::FOREST, t as u64]);
            let mut rng = seed::rng(tree_seed, &[]);
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut seen = vec![false; n];
            for &b in &bootstrap {
                seen[b] = true;
            }
            let oob = (0..n).filter(|&i| !seen[i]).collect();
            let (nodes, depth) = grow_tree(&data, &bootstrap, params, &mut rng);
            DecisionTree {
                nodes,
                bootstrap,
                oob,
                depth,
                seed: tree_seed,
            }
        })
        .collect();
    Ok(Forest {
        format_version: FORMAT_VERSION,
        params: params.clone(),
        n_features: data.n_features(),
        catalog_digest: String::new(),
        provenance: String::new(),
        master_seed,
        training_ids: Vec::new(),
        trees,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileScore {
    pub tile_id: String,
    /// Fraction of trees voting MSS.
    pub mss_score: f64,
    /// MSS iff `mss_score >= 0.5`.
    pub predicted: Label,
}

impl TileScore {
    pub fn msi_score(&self) -> f64 {
        1.0 - self.mss_score
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientScore {
    pub patient_id: String,
    pub msi_score: f64,
    pub n_tiles: usize,
}

impl Forest {
    pub fn with_catalog(mut self, catalog: &FeatureCatalog) -> Self {
        self.catalog_digest = catalog.digest();
        self
    }

    pub fn check_catalog(&self, catalog: &FeatureCatalog) -> Result<()> {
        let d = catalog.digest();
        if self.catalog_digest != d {
            return Err(Error::CatalogMismatch {
                model: self.catalog_digest.clone(),
                catalog: d,
            });
        }
        Ok(())
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Fraction of trees voting MSS.
    pub fn mss_score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::LengthMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let votes = self.trees.iter().filter(|t| t.predict(x) == Label::Mss).count();
        Ok(votes as f64 / self.trees.len() as f64)
    }

    pub fn predict_row(&self, tile_id: &str, x: &[f64]) -> Result<TileScore> {
        let mss_score = self.mss_score(x)?;
        Ok(TileScore {
            tile_id: tile_id.to_string(),
            mss_score,
            predicted: if mss_score >= 0.5 { Label::Mss } else { Label::Msi },
        })
    }

    pub fn predict_tile(&self, v: &FeatureVector) -> Result<TileScore> {
        self.predict_row(&v.tile_id, &v.values)
    }

    /// Out-of-bag MSS score per training row (`None` for rows that are in
    /// every bootstrap).
    pub fn oob_scores(&self, rows: &[Vec<f64>]) -> Vec<Option<f64>> {
        let mut votes = vec![(0usize, 0usize); rows.len()];
        for t in &self.trees {
            for &i in &t.oob {
                if i < rows.len() {
                    votes[i].1 += 1;
                    if t.predict(&rows[i]) == Label::Mss {
                        votes[i].0 += 1;
                    }
                }
            }
        }
        votes
            .into_iter()
            .map(|(m, n)| (n > 0).then(|| m as f64 / n as f64))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::CorruptModel(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::CorruptModel(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CorruptModel("missing format_version".into()))?;
        if found != FORMAT_VERSION as u64 {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: found as u32,
            });
        }
        let f: Forest = serde_json::from_value(value).map_err(|e| Error::CorruptModel(e.to_string()))?;
        f.validate()?;
        Ok(f)
    }

    fn validate(&self) -> Result<()> {
        if self.trees.is_empty() {
            return Err(Error::CorruptModel("forest has no trees".into()));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            let n = tree.nodes.len();
            if n == 0 {
                return Err(Error::CorruptModel(format!("tree {t} is empty")));
            }
            for node in &tree.nodes {
                if let Node::Split {
                    feature, left, right, ..
                } = node
                {
                    if *feature >= self.n_features || *left >= n || *right >= n || *left == 0 || *right == 0 {
                        return Err(Error::CorruptModel(format!("tree {t} has an invalid split node")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Mean tile MSI score per patient, sorted by patient id. Every record must
/// have a score and every score must belong to a record.
pub fn patient_scores(tile_scores: &[TileScore], records: &[TileRecord]) -> Result<Vec<PatientScore>> {
    let by_tile: HashMap<&str, &TileRecord> = records.iter().map(|r| (r.tile_id.as_str(), r)).collect();
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in records {
        acc.entry(r.patient_id.as_str()).or_insert((0.0, 0));
    }
    for s in tile_scores {
        let r = by_tile
            .get(s.tile_id.as_str())
            .ok_or_else(|| Error::UnknownTile(s.tile_id.clone()))?;
        let e = acc.get_mut(r.patient_id.as_str()).expect("patient registered");
        e.0 += s.msi_score();
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(p, (sum, n))| {
            if n == 0 {
                Err(Error::InvalidInput(format!("patient {p} has no scored tiles")))
            } else {
                Ok(PatientScore {
                    patient_id: p.to_string(),
                    msi_score: sum / n as f64,
                    n_tiles: n,
                })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[10.0, 0.0]).unwrap(), 0.0);
        assert_eq!(gini(&[5.0, 5.0]).unwrap(), 0.5);
        assert_eq!(gini(&[3.0, 1.0]).unwrap(), 0.375);
        assert!(gini(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn four_row_split() {
        let rows = vec![vec![1.0], vec![2.0], vec![8.0], vec![9.0]];
        let labels = [Label::Msi, Label::Msi, Label::Mss, Label::Mss];
        let d = TrainingSet::new(&rows, &labels).unwrap();
        let s = d.best_split(&[0, 1, 2, 3], &[0]).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 5.0);
        assert_eq!(s.impurity_decrease, 0.5);
    }

    #[test]
    fn identical_rows_do_not_split() {
        let rows = vec![vec![1.0, 2.0]; 4];
        let labels = [Label::Msi, Label::Mss, Label::Msi, Label::Mss];
        let d = TrainingSet::new(&rows, &labels).unwrap();
        assert!(d.best_split(&[0, 1, 2, 3], &[0, 1]).is_none());
    }

    #[test]
    fn single_class_tree_is_a_pure_leaf() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let labels = [Label::Mss; 6];
        let d = TrainingSet::new(&rows, &labels).unwrap();
        let mut rng = seed::rng(1, &[]);
        let (nodes, depth) = grow_tree(&d, &[0, 1, 2, 3, 4, 5], &ForestParams::default(), &mut rng);
        assert_eq!(nodes, vec![Node::Leaf { counts: [0, 6] }]);
        assert_eq!(depth, 0);
        assert!(matches!(fit_forest(&rows, &labels, &ForestParams::default(), 1), Err(Error::MissingClass("MSI"))));
    }

    fn hand_tree(vote_mss: bool) -> DecisionTree {
        DecisionTree {
            nodes: vec![Node::Leaf {
                counts: if vote_mss { [1, 2] } else { [2, 1] },
            }],
            bootstrap: vec![],
            oob: vec![],
            depth: 0,
            seed: 0,
        }
    }

    #[test]
    fn hand_built_votes() {
        let f = Forest {
            format_version: FORMAT_VERSION,
            params: ForestParams::default(),
            n_features: 1,
            catalog_digest: String::new(),
            provenance: String::new(),
            master_seed: 0,
            training_ids: vec![],
            trees: vec![hand_tree(true), hand_tree(false), hand_tree(true)],
        };
        let s = f.predict_row("t", &[0.0]).unwrap();
        assert!((s.mss_score - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.predicted, Label::Mss);
        assert!(f.predict_row("t", &[0.0, 1.0]).is_err());
        // Leaf ties vote MSS.
        assert_eq!(Node::Leaf { counts: [2, 2] }.vote(), Some(Label::Mss));
    }

    #[test]
    fn patient_means() {
        let rec = |t: &str, p: &str| TileRecord {
            tile_id: t.into(),
            patient_id: p.into(),
            label: Label::Msi,
            path: Default::default(),
        };
        let records = vec![rec("a", "P"), rec("b", "P"), rec("c", "Q")];
        let score = |t: &str, msi: f64| TileScore {
            tile_id: t.into(),
            mss_score: 1.0 - msi,
            predicted: Label::Msi,
        };
        let ps = patient_scores(&[score("a", 0.2), score("b", 0.4), score("c", 0.9)], &records).unwrap();
        assert!((ps[0].msi_score - 0.3).abs() < 1e-12);
        assert_eq!(ps[0].n_tiles, 2);
        assert!((ps[1].msi_score - 0.9).abs() < 1e-12);
        assert!(patient_scores(&[score("a", 0.2)], &records).is_err());
        assert!(patient_scores(&[score("zz", 0.2)], &records[..1]).is_err());
    }
}
