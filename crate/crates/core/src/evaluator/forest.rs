//! Bagged CART classifier with Gini splits and impurity-decrease
//! importances.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("training labels hold a single class")]
    SingleClass,
    #[error("no training rows")]
    Empty,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("expected {expected} columns, got {found}")]
    ColumnMismatch { expected: usize, found: usize },
    #[error("label {0} outside the class range")]
    LabelRange(usize),
    #[error("model used before fit")]
    NotFitted,
    #[error("corrupt model blob: {0}")]
    Blob(String),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n_rows * n_cols);
        Self { n_rows, n_cols, data }
    }

    /// Gathers `rows` of column-major `columns`.
    pub fn from_columns(columns: &[&[f64]], rows: &[usize]) -> Self {
        let n_cols = columns.len();
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for &r in rows {
            data.extend(columns.iter().map(|c| c[r]));
        }
        Self {
            n_rows: rows.len(),
            n_cols,
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(rows.len(), n_cols, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n_cols + c]
    }
}

pub trait DownstreamModel {
    fn fit(&mut self, x: &Matrix, y: &[usize], n_classes: usize, seed: u64) -> Result<(), ModelError>;
    /// One probability row per input row, classes in index order.
    fn predict_proba(&self, x: &Matrix) -> Result<Vec<Vec<f64>>, ModelError>;
    fn feature_importances(&self) -> Result<Vec<f64>, ModelError>;
}

fn validate(x: &Matrix, y: &[usize], n_classes: usize) -> Result<(), ModelError> {
    if x.n_rows() == 0 {
        return Err(ModelError::Empty);
    }
    assert_eq!(x.n_rows(), y.len(), "one label per row");
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(ModelError::LabelRange(bad));
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(ModelError::SingleClass);
    }
    for r in 0..x.n_rows() {
        if let Some(c) = x.row(r).iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { row: r, col: c });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per split; `None` means ⌈√d⌉.
    pub mtry: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 2,
            mtry: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        proba: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_proba(&self, row: &[f64]) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { proba } => return proba,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
}

struct Grower<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    n_classes: usize,
    params: ForestParams,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    importances: Vec<f64>,
    n_root: f64,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// n·gini without the division, for the sweep.
fn weighted_gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let sq: usize = counts.iter().map(|c| c * c).sum();
    n as f64 - sq as f64 / n as f64
}

impl Grower<'_> {
    fn leaf(&mut self, counts: &[usize], n: usize) -> usize {
        let proba = counts.iter().map(|&c| c as f64 / n as f64).collect();
        self.nodes.push(Node::Leaf { proba });
        self.nodes.len() - 1
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len();
        let mut counts = vec![0usize; self.n_classes];
        for &i in idx.iter() {
            counts[self.y[i]] += 1;
        }
        let impurity = gini(&counts, n);
        if depth >= self.params.max_depth || n < 2 * self.params.min_leaf || impurity == 0.0 {
            return self.leaf(&counts, n);
        }

        let d = self.x.n_cols();
        let features = sample(&mut self.rng, d, self.mtry.min(d)).into_vec();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
        let mut left = vec![0usize; self.n_classes];
        let mut right = vec![0usize; self.n_classes];
        for f in features {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.x.get(i, f), self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            left.iter_mut().for_each(|c| *c = 0);
            right.copy_from_slice(&counts);
            for pos in 1..n {
                let (_, c) = pairs[pos - 1];
                left[c] += 1;
                right[c] -= 1;
                if pos < self.params.min_leaf || n - pos < self.params.min_leaf {
                    continue;
                }
                let (lo, hi) = (pairs[pos - 1].0, pairs[pos].0);
                if lo >= hi {
                    continue;
                }
                let child = (weighted_gini(&left, pos) + weighted_gini(&right, n - pos)) / n as f64;
                if best.is_none_or(|(b, _, _)| child < b) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some((child, f, threshold));
                }
            }
        }
        let Some((child, feature, threshold)) = best else {
            return self.leaf(&counts, n);
        };
        self.importances[feature] += n as f64 / self.n_root * (impurity - child).max(0.0);

        let mut split = 0;
        for k in 0..n {
            if self.x.get(idx[k], feature) <= threshold {
                idx.swap(k, split);
                split += 1;
            }
        }
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { proba: Vec::new() });
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub params: ForestParams,
    n_classes: usize,
    n_features: usize,
    trees: Vec<Tree>,
    importances: Vec<f64>,
}

const BLOB_MAGIC: &[u8; 4] = b"FLRF";
const BLOB_VERSION: u32 = 1;

impl RandomForest {
    pub fn new(params: ForestParams) -> Self {
        Self {
            params,
            n_classes: 0,
            n_features: 0,
            trees: Vec::new(),
            importances: Vec::new(),
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Versioned binary serialization: magic, little-endian version, JSON body.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = BLOB_MAGIC.to_vec();
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.extend(serde_json::to_vec(self).expect("forest serializes"));
        out
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 8 || &bytes[..4] != BLOB_MAGIC {
            return Err(ModelError::Blob("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != BLOB_VERSION {
            return Err(ModelError::Blob(format!("unsupported version {version}")));
        }
        serde_json::from_slice(&bytes[8..]).map_err(|e| ModelError::Blob(e.to_string()))
    }
}

impl Default for RandomForest {
    fn default() -> Self {
        Self::new(ForestParams::default())
    }
}

impl DownstreamModel for RandomForest {
    fn fit(&mut self, x: &Matrix, y: &[usize], n_classes: usize, seed: u64) -> Result<(), ModelError> {
        validate(x, y, n_classes)?;
        let d = x.n_cols();
        let n = x.n_rows();
        let mtry = self.params.mtry.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize).max(1);
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let tree_seeds: Vec<u64> = (0..self.params.n_trees).map(|_| seeder.random()).collect();
        let params = self.params;

        let grown: Vec<(Tree, Vec<f64>)> = tree_seeds
            .par_iter()
            .map(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let mut g = Grower {
                    x,
                    y,
                    n_classes,
                    params,
                    mtry,
                    rng,
                    nodes: Vec::new(),
                    importances: vec![0.0; d],
                    n_root: n as f64,
                };
                g.grow(&mut idx, 0);
                let total: f64 = g.importances.iter().sum();
                if total > 0.0 {
                    g.importances.iter_mut().for_each(|v| *v /= total);
                }
                (Tree { nodes: g.nodes }, g.importances)
            })
            .collect();

        let mut importances = vec![0.0; d];
        let mut trees = Vec::with_capacity(grown.len());
        for (tree, imp) in grown {
            importances.iter_mut().zip(&imp).for_each(|(a, b)| *a += b);
            trees.push(tree);
        }
        let total: f64 = importances.iter().sum();
        if total > 0.0 {
            importances.iter_mut().for_each(|v| *v /= total);
        } else {
            importances.iter_mut().for_each(|v| *v = 1.0 / d as f64);
        }
        self.n_classes = n_classes;
        self.n_features = d;
        self.trees = trees;
        self.importances = importances;
        Ok(())
    }

    fn predict_proba(&self, x: &Matrix) -> Result<Vec<Vec<f64>>, ModelError> {
        if self.trees.is_empty() {
            return Err(ModelError::NotFitted);
        }
        if x.n_rows() > 0 && x.n_cols() != self.n_features {
            return Err(ModelError::ColumnMismatch {
                expected: self.n_features,
                found: x.n_cols(),
            });
        }
        let k = self.trees.len() as f64;
        Ok((0..x.n_rows())
            .map(|r| {
                let row = x.row(r);
                let mut acc = vec![0.0; self.n_classes];
                for t in &self.trees {
                    acc.iter_mut().zip(t.leaf_proba(row)).for_each(|(a, p)| *a += p);
                }
                acc.iter_mut().for_each(|a| *a /= k);
                acc
            })
            .collect())
    }

    fn feature_importances(&self) -> Result<Vec<f64>, ModelError> {
        if self.trees.is_empty() {
            return Err(ModelError::NotFitted);
        }
        Ok(self.importances.clone())
    }
}

/// Predicts the training class frequencies for every row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MajorityClass {
    prior: Vec<f64>,
    n_features: usize,
}

impl DownstreamModel for MajorityClass {
    fn fit(&mut self, x: &Matrix, y: &[usize], n_classes: usize, _seed: u64) -> Result<(), ModelError> {
        validate(x, y, n_classes)?;
        let mut counts = vec![0.0; n_classes];
        for &c in y {
            counts[c] += 1.0;
        }
        self.prior = counts.iter().map(|c| c / y.len() as f64).collect();
        self.n_features = x.n_cols();
        Ok(())
    }

    fn predict_proba(&self, x: &Matrix) -> Result<Vec<Vec<f64>>, ModelError> {
        if self.prior.is_empty() {
            return Err(ModelError::NotFitted);
        }
        Ok(vec![self.prior.clone(); x.n_rows()])
    }

    fn feature_importances(&self) -> Result<Vec<f64>, ModelError> {
        if self.prior.is_empty() {
            return Err(ModelError::NotFitted);
        }
        Ok(vec![1.0 / self.n_features.max(1) as f64; self.n_features])
    }
}

/// Index of the largest probability, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
