//! Random forest over mutant feature vectors: CART trees with Gini splits,
//! bootstrap sampling and per-node feature subsampling, plus repeated
//! k-fold cross-validation and impurity-based feature importance.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::histfeat::Label;

const N_CLASSES: usize = 3;

/// Per-class probabilities in [`Label::ALL`] order.
pub type Proba = [f64; N_CLASSES];

/// SplitMix64 finalizer applied to `seed` and `stream`; independent
/// generators per tree or fold are seeded from it.
pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub id: String,
    /// Grouping key (the injection revision the mutant belongs to).
    pub group: String,
    pub x: Vec<f64>,
    pub label: Label,
}

/// Training rows in canonical order (by id, then group), so the input
/// order never influences a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Row>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, mut rows: Vec<Row>) -> Self {
        rows.sort_by(|a, b| a.id.cmp(&b.id).then_with(|| a.group.cmp(&b.group)));
        Dataset { feature_names, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> BTreeSet<Label> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// The same rows without the named feature column.
    pub fn without(&self, feature: &str) -> Dataset {
        let Some(k) = self.feature_names.iter().position(|f| f == feature) else {
            return self.clone();
        };
        let mut names = self.feature_names.clone();
        names.remove(k);
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.x.remove(k);
                r
            })
            .collect();
        Dataset {
            feature_names: names,
            rows,
        }
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ForestError {
    #[error("training data holds a single class")]
    DegenerateData,
    #[error("{rows} rows cannot be split into {k} folds")]
    TooFewRows { rows: usize, k: usize },
    #[error("row {id} has {got} features, expected {expected}")]
    FeatureMismatch { id: String, got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    All,
    Fixed(usize),
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
            MaxFeatures::All => n_features,
            MaxFeatures::Fixed(k) => k.clamp(1, n_features.max(1)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

/// A tree node; children are indices into [`Tree::nodes`]. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        n_samples: usize,
        impurity: f64,
    },
    Leaf {
        value: Proba,
        n_samples: usize,
        impurity: f64,
    },
}

impl TreeNode {
    fn stats(&self) -> (usize, f64) {
        match *self {
            TreeNode::Split { n_samples, impurity, .. } | TreeNode::Leaf { n_samples, impurity, .. } => (n_samples, impurity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> Proba {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { value, .. } => return *value,
            }
        }
    }

    /// Unnormalized impurity decrease per feature, weighted by node size.
    fn importance(&self, n_features: usize) -> Vec<f64> {
        let mut imp = vec![0.0; n_features];
        let total = self.nodes[0].stats().0 as f64;
        for n in &self.nodes {
            if let TreeNode::Split {
                feature,
                left,
                right,
                n_samples,
                impurity,
                ..
            } = n
            {
                let (nl, il) = self.nodes[*left].stats();
                let (nr, ir) = self.nodes[*right].stats();
                imp[*feature] += (*n_samples as f64 * impurity - nl as f64 * il - nr as f64 * ir) / total;
            }
        }
        imp
    }
}

fn gini(counts: &[usize; N_CLASSES], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    cfg: &'a ForestConfig,
    mtry: usize,
    rng: Xoshiro256PlusPlus,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn counts(&self, idx: &[usize]) -> [usize; N_CLASSES] {
        let mut c = [0; N_CLASSES];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best threshold on one feature: (weighted child impurity, threshold).
    fn best_on(&self, idx: &[usize], f: usize) -> Option<(f64, f64)> {
        let mut vals: Vec<(f64, usize)> = idx.iter().map(|&i| (self.x[i][f], self.y[i])).collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = vals.len();
        let mut total = [0; N_CLASSES];
        for v in &vals {
            total[v.1] += 1;
        }
        let mut left = [0; N_CLASSES];
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            left[vals[i].1] += 1;
            if vals[i].0 == vals[i + 1].0 {
                continue;
            }
            let right: [usize; N_CLASSES] = std::array::from_fn(|c| total[c] - left[c]);
            let (nl, nr) = (i + 1, n - i - 1);
            let score = nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr);
            if best.is_none_or(|(b, _)| score < b) {
                let mut t = vals[i].0 + (vals[i + 1].0 - vals[i].0) / 2.0;
                if t >= vals[i + 1].0 {
                    t = vals[i].0;
                }
                best = Some((score, t));
            }
        }
        best
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let n = idx.len();
        let impurity = gini(&counts, n);
        let id = self.nodes.len();
        let leaf = TreeNode::Leaf {
            value: std::array::from_fn(|c| counts[c] as f64 / n as f64),
            n_samples: n,
            impurity,
        };
        self.nodes.push(leaf.clone());
        if impurity <= 0.0 || n < self.cfg.min_samples_split || self.cfg.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        let n_features = self.x[idx[0]].len();
        let mut order: Vec<usize> = (0..n_features).collect();
        order.shuffle(&mut self.rng);
        let mut best: Option<(f64, usize, f64)> = None;
        for (k, &f) in order.iter().enumerate() {
            if k >= self.mtry && best.is_some() {
                break;
            }
            if let Some((score, t)) = self.best_on(&idx, f) {
                if best.is_none_or(|(b, _, _)| score < b) {
                    best = Some((score, f, t));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
            n_samples: n,
            impurity,
        };
        id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub feature_names: Vec<String>,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

/// Train a forest on `data`.
pub fn train(data: &Dataset, config: &ForestConfig) -> Result<ForestModel, ForestError> {
    if data.labels().len() < 2 {
        return Err(ForestError::DegenerateData);
    }
    let nf = data.feature_names.len();
    if let Some(r) = data.rows.iter().find(|r| r.x.len() != nf) {
        return Err(ForestError::FeatureMismatch {
            id: r.id.clone(),
            got: r.x.len(),
            expected: nf,
        });
    }
    let x: Vec<Vec<f64>> = data.rows.iter().map(|r| r.x.clone()).collect();
    let y: Vec<usize> = data.rows.iter().map(|r| r.label.index()).collect();
    let mtry = config.max_features.resolve(nf);
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng(mix(config.seed, t as u64));
            let n = x.len();
            let idx: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                x: &x,
                y: &y,
                cfg: config,
                mtry,
                rng,
                nodes: Vec::new(),
            };
            b.build(idx, 0);
            Tree { nodes: b.nodes }
        })
        .collect();
    Ok(ForestModel {
        feature_names: data.feature_names.clone(),
        config: *config,
        trees,
    })
}

impl ForestModel {
    /// Mean of the per-tree leaf distributions.
    pub fn predict_proba(&self, x: &[f64]) -> Proba {
        let mut p = [0.0; N_CLASSES];
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.predict(x)) {
                *acc += v;
            }
        }
        p.map(|v| v / self.trees.len() as f64)
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        argmax(&self.predict_proba(x))
    }

    /// Mean decrease in impurity per feature, normalized to sum to 1.
    pub fn feature_importance(&self) -> Vec<(String, f64)> {
        let nf = self.feature_names.len();
        let mut acc = vec![0.0; nf];
        for t in &self.trees {
            let imp = t.importance(nf);
            let s: f64 = imp.iter().sum();
            if s > 0.0 {
                acc.iter_mut().zip(&imp).for_each(|(a, v)| *a += v / s);
            }
        }
        let s: f64 = acc.iter().sum();
        if s > 0.0 {
            acc.iter_mut().for_each(|a| *a /= s);
        }
        self.feature_names.iter().cloned().zip(acc).collect()
    }
}

/// Most probable label; ties go to the earlier label in `L, NL, D` order.
pub fn argmax(p: &Proba) -> Label {
    let mut best = 0;
    for c in 1..N_CLASSES {
        if p[c] > p[best] {
            best = c;
        }
    }
    Label::ALL[best]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldStrategy {
    /// Stratified by label.
    Stratified,
    /// Whole groups (revisions) per fold.
    GroupedByRevision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    pub strategy: FoldStrategy,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 5,
            repeats: 10,
            seed: 0,
            strategy: FoldStrategy::Stratified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPrediction {
    pub repeat: usize,
    pub fold: usize,
    pub id: String,
    pub group: String,
    pub label: Label,
    pub proba: Proba,
}

impl CvPrediction {
    pub fn predicted(&self) -> Label {
        argmax(&self.proba)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub config: CvConfig,
    pub forest: ForestConfig,
    pub predictions: Vec<CvPrediction>,
}

impl CvResult {
    pub fn repeat(&self, r: usize) -> impl Iterator<Item = &CvPrediction> {
        self.predictions.iter().filter(move |p| p.repeat == r)
    }
}

/// Fold index of every row for one repeat.
pub fn assign_folds(data: &Dataset, k: usize, strategy: FoldStrategy, seed: u64) -> Vec<usize> {
    let mut rng = rng(seed);
    let mut fold = vec![0; data.len()];
    match strategy {
        FoldStrategy::Stratified => {
            let mut offset = 0;
            for label in Label::ALL {
                let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.rows[i].label == label).collect();
                idx.shuffle(&mut rng);
                for (j, &i) in idx.iter().enumerate() {
                    fold[i] = (offset + j) % k;
                }
                offset = (offset + idx.len()) % k;
            }
        }
        FoldStrategy::GroupedByRevision => {
            let groups: BTreeSet<&str> = data.rows.iter().map(|r| r.group.as_str()).collect();
            let mut groups: Vec<&str> = groups.into_iter().collect();
            groups.shuffle(&mut rng);
            let of: BTreeMap<&str, usize> = groups.iter().enumerate().map(|(j, g)| (*g, j % k)).collect();
            for (i, r) in data.rows.iter().enumerate() {
                fold[i] = of[r.group.as_str()];
            }
        }
    }
    fold
}

/// Repeated k-fold cross-validation. A training split holding a single
/// class predicts that class with certainty.
pub fn cross_validate(data: &Dataset, cv: &CvConfig, forest: &ForestConfig) -> Result<CvResult, ForestError> {
    if data.len() < cv.k || cv.k < 2 {
        return Err(ForestError::TooFewRows { rows: data.len(), k: cv.k });
    }
    if data.labels().len() < 2 {
        return Err(ForestError::DegenerateData);
    }
    let mut predictions = Vec::with_capacity(data.len() * cv.repeats);
    for r in 0..cv.repeats {
        let folds = assign_folds(data, cv.k, cv.strategy, mix(cv.seed, (1 << 32) + r as u64));
        for f in 0..cv.k {
            let test: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
            if test.is_empty() {
                continue;
            }
            let train_idx: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
            let train_set = data.subset(&train_idx);
            let cfg = ForestConfig {
                seed: mix(forest.seed, (r * cv.k + f) as u64),
                ..*forest
            };
            let model = match train(&train_set, &cfg) {
                Ok(m) => Some(m),
                Err(ForestError::DegenerateData) => None,
                Err(e) => return Err(e),
            };
            let constant = train_set.rows.first().map(|row| {
                let mut p = [0.0; N_CLASSES];
                p[row.label.index()] = 1.0;
                p
            });
            for i in test {
                let row = &data.rows[i];
                let proba = match &model {
                    Some(m) => m.predict_proba(&row.x),
                    None => constant.unwrap_or([1.0 / N_CLASSES as f64; N_CLASSES]),
                };
                predictions.push(CvPrediction {
                    repeat: r,
                    fold: f,
                    id: row.id.clone(),
                    group: row.group.clone(),
                    label: row.label,
                    proba,
                });
            }
        }
    }
    Ok(CvResult {
        config: *cv,
        forest: *forest,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn row(id: usize, x: Vec<f64>, label: Label) -> Row {
        Row {
            id: format!("r{id:04}"),
            group: format!("g{}", id % 7),
            x,
            label,
        }
    }

    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut g = rng(seed);
        let rows = (0..n)
            .map(|i| {
                let label = Label::ALL[i % 3];
                let c = label.index() as f64 * 10.0;
                let x = (0..9).map(|_| c + g.gen_range(-1.0..1.0)).collect();
                row(i, x, label)
            })
            .collect();
        Dataset::new(names(9), rows)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let d = blobs(300, 1);
        let m = train(&d, &ForestConfig::default()).unwrap();
        let acc = d.rows.iter().filter(|r| m.predict(&r.x) == r.label).count() as f64 / d.len() as f64;
        assert!(acc >= 0.99, "{acc}");
        let held = blobs(90, 2);
        let acc = held.rows.iter().filter(|r| m.predict(&r.x) == r.label).count() as f64 / held.len() as f64;
        assert!(acc >= 0.99, "{acc}");
    }

    #[test]
    fn one_row_per_class() {
        let d = Dataset::new(
            names(2),
            vec![
                row(0, vec![0.0, 0.0], Label::L),
                row(1, vec![5.0, 1.0], Label::NL),
                row(2, vec![9.0, 2.0], Label::D),
            ],
        );
        let m = train(
            &d,
            &ForestConfig {
                bootstrap: false,
                ..Default::default()
            },
        )
        .unwrap();
        for r in &d.rows {
            assert_eq!(m.predict(&r.x), r.label);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let d = Dataset::new(names(1), vec![row(0, vec![0.0], Label::L), row(1, vec![1.0], Label::L)]);
        assert_eq!(train(&d, &ForestConfig::default()), Err(ForestError::DegenerateData));
    }

    #[test]
    fn deterministic_and_order_independent() {
        let d = blobs(60, 3);
        let cfg = ForestConfig {
            seed: 42,
            n_trees: 20,
            ..Default::default()
        };
        let a = train(&d, &cfg).unwrap();
        let mut rows = d.rows.clone();
        rows.reverse();
        let b = train(&Dataset::new(d.feature_names.clone(), rows), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fully_grown_single_tree_reproduces_pure_leaf() {
        let d = blobs(30, 4);
        let m = train(
            &d,
            &ForestConfig {
                n_trees: 1,
                bootstrap: false,
                ..Default::default()
            },
        )
        .unwrap();
        for r in &d.rows {
            let p = m.predict_proba(&r.x);
            assert_eq!(p[r.label.index()], 1.0);
        }
    }

    #[test]
    fn importance_is_normalized_and_tracks_signal() {
        let mut g = rng(9);
        let rows = (0..200)
            .map(|i| {
                let label = Label::ALL[i % 3];
                let mut x: Vec<f64> = (0..9).map(|_| g.gen_range(0.0..1.0)).collect();
                x[3] = label.index() as f64 + g.gen_range(0.0..0.5);
                row(i, x, label)
            })
            .collect();
        let d = Dataset::new(names(9), rows);
        let m = train(
            &d,
            &ForestConfig {
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let imp = m.feature_importance();
        let sum: f64 = imp.iter().map(|x| x.1).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let top = imp.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(top.0, "f3");
    }

    #[test]
    fn unused_feature_has_zero_importance() {
        let rows = (0..20)
            .map(|i| row(i, vec![(i % 2) as f64, 7.0], if i % 2 == 0 { Label::L } else { Label::D }))
            .collect();
        let m = train(&Dataset::new(names(2), rows), &ForestConfig::default()).unwrap();
        assert_eq!(m.feature_importance()[1].1, 0.0);
    }

    #[test]
    fn stratified_folds_partition_rows() {
        let d = blobs(100, 6);
        let cv = cross_validate(
            &d,
            &CvConfig {
                repeats: 2,
                ..Default::default()
            },
            &ForestConfig {
                n_trees: 5,
                ..Default::default()
            },
        )
        .unwrap();
        for r in 0..2 {
            let ids: Vec<&str> = cv.repeat(r).map(|p| p.id.as_str()).collect();
            let set: BTreeSet<&str> = ids.iter().copied().collect();
            assert_eq!((ids.len(), set.len()), (100, 100));
        }
        let folds = assign_folds(&d, 5, FoldStrategy::Stratified, 11);
        for f in 0..5 {
            for label in Label::ALL {
                let total = d.rows.iter().filter(|r| r.label == label).count() as f64;
                let here = (0..d.len()).filter(|&i| folds[i] == f && d.rows[i].label == label).count() as f64;
                assert!((here - total / 5.0).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn grouped_folds_keep_groups_together() {
        let d = blobs(70, 7);
        let folds = assign_folds(&d, 5, FoldStrategy::GroupedByRevision, 1);
        for g in 0..7 {
            let fs: BTreeSet<usize> = (0..d.len())
                .filter(|&i| d.rows[i].group == format!("g{g}"))
                .map(|i| folds[i])
                .collect();
            assert_eq!(fs.len(), 1);
        }
    }

    #[test]
    fn too_few_rows() {
        let d = blobs(3, 1);
        assert_eq!(
            cross_validate(&d, &CvConfig::default(), &ForestConfig::default()).unwrap_err(),
            ForestError::TooFewRows { rows: 3, k: 5 }
        );
    }

    #[test]
    fn max_features() {
        assert_eq!(MaxFeatures::Sqrt.resolve(9), 3);
        assert_eq!(MaxFeatures::Sqrt.resolve(8), 2);
    }
}
