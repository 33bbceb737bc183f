//! CART regression trees and the three tree ensembles: bagging, random
//! forest and gradient boosting.
//!
//! Rows route left when `x[feature] <= threshold`. Candidate thresholds are
//! midpoints between consecutive distinct sorted values, and the split
//! search is exact. Equal gains keep the first candidate found, which is
//! the lowest feature index and then the lowest threshold.

use std::fmt::Write as _;
use std::ops::Range;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::timeseries::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<T> {
    Split { feature: usize, threshold: T, left: usize, right: usize, count: usize },
    Leaf { value: T, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree<T> {
    nodes: Vec<Node<T>>,
    pub n_features: usize,
    pub min_node_size: usize,
}

impl<T: Scalar> RegressionTree<T> {
    /// Builds a tree from explicit nodes; node 0 is the root.
    pub fn from_nodes(nodes: Vec<Node<T>>, n_features: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("tree without nodes".into()));
        }
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split { feature, left, right, .. } = n {
                if *feature >= n_features || *left <= i || *right <= i || *left >= nodes.len() || *right >= nodes.len() {
                    return Err(Error::InvalidInput(format!("malformed split at node {i}")));
                }
            }
        }
        Ok(Self { nodes, n_features, min_node_size: 1 })
    }

    /// A single-leaf tree.
    pub fn constant(value: T, n_features: usize) -> Self {
        Self { nodes: vec![Node::Leaf { value, count: 0 }], n_features, min_node_size: 1 }
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[T]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split { feature, threshold, left, right, .. } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, row: &[T]) -> Result<T> {
        if row.len() != self.n_features {
            return Err(Error::Dimension { expected: self.n_features, got: row.len() });
        }
        Ok(self.predict_unchecked(row))
    }

    pub(crate) fn predict_unchecked(&self, row: &[T]) -> T {
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Indented text dump: one line per node.
    pub fn dump(&self, names: &[String]) -> String {
        fn go<T: Scalar>(t: &RegressionTree<T>, names: &[String], i: usize, depth: usize, out: &mut String) {
            let pad = "  ".repeat(depth);
            match &t.nodes[i] {
                Node::Leaf { value, count } => {
                    let _ = writeln!(out, "{pad}leaf value={value:.6} n={count}");
                }
                Node::Split { feature, threshold, left, right, count } => {
                    let name = names.get(*feature).cloned().unwrap_or_else(|| format!("x{feature}"));
                    let _ = writeln!(out, "{pad}{name} <= {threshold:.6} n={count}");
                    go(t, names, *left, depth + 1, out);
                    go(t, names, *right, depth + 1, out);
                }
            }
        }
        let mut out = String::new();
        go(self, names, 0, 0, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeOptions {
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    /// Features drawn (without replacement) at each split; `None` uses all.
    pub feature_subset: Option<usize>,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self { min_node_size: 5, max_depth: None, feature_subset: None }
    }
}

/// Column-major training data shared by every tree of an ensemble.
#[derive(Debug, Clone)]
pub struct TreeData<T> {
    cols: Vec<Vec<T>>,
    pub y: Vec<T>,
}

impl<T: Scalar> TreeData<T> {
    pub fn from_matrix(fm: &FeatureMatrix<T>, rows: Range<usize>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("no training rows".into()));
        }
        let cols = (0..fm.n_cols()).map(|j| rows.clone().map(|i| fm.row(i)[j]).collect()).collect();
        Ok(Self { cols, y: fm.target[rows].to_vec() })
    }

    pub fn from_rows(rows: &[Vec<T>], y: &[T]) -> Result<Self> {
        if rows.is_empty() || rows.len() != y.len() {
            return Err(Error::Empty("no training rows".into()));
        }
        let p = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::Dimension { expected: p, got: r.len() });
        }
        let cols = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Ok(Self { cols, y: y.to_vec() })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        self.cols.iter().map(|c| c[i]).collect()
    }

    pub fn value(&self, row: usize, feature: usize) -> T {
        self.cols[feature][row]
    }
}

struct Grower<'a, T, R> {
    data: &'a TreeData<T>,
    y: &'a [T],
    opts: TreeOptions,
    rng: Option<&'a mut R>,
    nodes: Vec<Node<T>>,
}

struct BestSplit<T> {
    feature: usize,
    threshold: T,
    gain: T,
}

impl<T: Scalar, R: Rng> Grower<'_, T, R> {
    /// `order` lists sample rows in their original order; `sorted[f]` the
    /// same rows sorted by feature `f`.
    fn grow(&mut self, order: Vec<usize>, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let id = self.nodes.len();
        let count = order.len();
        let mut sum = T::zero();
        for &r in &order {
            sum += self.y[r];
        }
        let value = sum / T::from_usize_lossy(count);
        self.nodes.push(Node::Leaf { value, count });

        let depth_ok = self.opts.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || count < 2 * self.opts.min_node_size.max(1) {
            return id;
        }
        let first = self.y[order[0]];
        if order.iter().all(|&r| self.y[r] == first) {
            return id;
        }
        let Some(best) = self.best_split(&sorted, sum) else { return id };

        let goes_left = |r: usize| self.data.value(r, best.feature) <= best.threshold;
        let (lo, ro): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&r| goes_left(r));
        let mut ls = Vec::with_capacity(sorted.len());
        let mut rs = Vec::with_capacity(sorted.len());
        for list in sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = list.into_iter().partition(|&r| goes_left(r));
            ls.push(l);
            rs.push(r);
        }
        let left = self.grow(lo, ls, depth + 1);
        let right = self.grow(ro, rs, depth + 1);
        self.nodes[id] = Node::Split { feature: best.feature, threshold: best.threshold, left, right, count };
        id
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.data.n_features();
        match (self.opts.feature_subset, self.rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < p => {
                let mut f = sample_indices(rng, p, k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        }
    }

    fn best_split(&mut self, sorted: &[Vec<usize>], total: T) -> Option<BestSplit<T>> {
        let min = self.opts.min_node_size.max(1);
        let m = sorted[0].len();
        let mf = T::from_usize_lossy(m);
        let base = total * total / mf;
        let mut ss = T::zero();
        let mean = total / mf;
        for &r in &sorted[0] {
            let d = self.y[r] - mean;
            ss += d * d;
        }
        let floor = ss * T::lit(1e-12);
        let mut best: Option<BestSplit<T>> = None;
        for f in self.candidate_features() {
            let list = &sorted[f];
            let col = &self.data.cols[f];
            let mut left = T::zero();
            for k in 0..m - 1 {
                left += self.y[list[k]];
                let nl = k + 1;
                let nr = m - nl;
                if nl < min {
                    continue;
                }
                if nr < min {
                    break;
                }
                let (a, b) = (col[list[k]], col[list[k + 1]]);
                if !(a < b) {
                    continue;
                }
                let right = total - left;
                let gain = left * left / T::from_usize_lossy(nl) + right * right / T::from_usize_lossy(nr) - base;
                if gain > floor && best.as_ref().is_none_or(|bs| gain > bs.gain) {
                    let mut threshold = (a + b) * T::lit(0.5);
                    if !(threshold < b) {
                        threshold = a;
                    }
                    best = Some(BestSplit { feature: f, threshold, gain });
                }
            }
        }
        best
    }
}

/// Grows one tree over `sample` (row indices into `data`, repeats allowed),
/// fitting `y` (indexed by row).
pub fn grow_tree<T: Scalar, R: Rng>(
    data: &TreeData<T>,
    y: &[T],
    sample: &[usize],
    opts: TreeOptions,
    rng: Option<&mut R>,
) -> Result<RegressionTree<T>> {
    if sample.is_empty() {
        return Err(Error::Empty("no rows to grow a tree".into()));
    }
    let sorted = presort(data, sample);
    Ok(grow_presorted(data, y, sample, sorted, opts, rng))
}

fn presort<T: Scalar>(data: &TreeData<T>, sample: &[usize]) -> Vec<Vec<usize>> {
    if data.n_features() == 0 {
        return vec![sample.to_vec()];
    }
    data.cols
        .iter()
        .map(|col| {
            let mut s = sample.to_vec();
            s.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
            s
        })
        .collect()
}

fn grow_presorted<T: Scalar, R: Rng>(
    data: &TreeData<T>,
    y: &[T],
    sample: &[usize],
    sorted: Vec<Vec<usize>>,
    opts: TreeOptions,
    rng: Option<&mut R>,
) -> RegressionTree<T> {
    let mut g = Grower { data, y, opts, rng, nodes: Vec::new() };
    g.grow(sample.to_vec(), sorted, 0);
    RegressionTree { nodes: g.nodes, n_features: data.n_features(), min_node_size: opts.min_node_size }
}

/// CART on the given training data, all features considered at each split.
pub fn fit_cart<T: Scalar>(data: &TreeData<T>, opts: TreeOptions) -> Result<RegressionTree<T>> {
    check_sizes(data, opts)?;
    let sample: Vec<usize> = (0..data.n_rows()).collect();
    grow_tree::<T, crate::rng::StreamRng>(data, &data.y, &sample, TreeOptions { feature_subset: None, ..opts }, None)
}

fn check_sizes<T: Scalar>(data: &TreeData<T>, opts: TreeOptions) -> Result<()> {
    if data.n_rows() == 0 {
        return Err(Error::Empty("no training rows".into()));
    }
    if opts.min_node_size == 0 {
        return Err(Error::InvalidInput("min_node_size must be >= 1".into()));
    }
    if data.n_rows() < 2 * opts.min_node_size {
        return Err(Error::InvalidInput(format!(
            "{} rows cannot be split with min_node_size {}",
            data.n_rows(),
            opts.min_node_size
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnsembleKind<T> {
    Bagging,
    RandomForest { feature_split: usize },
    GradientBoosting { learning_rate: T, init: T },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble<T> {
    pub trees: Vec<RegressionTree<T>>,
    pub kind: EnsembleKind<T>,
    pub bootstrap_seeds: Vec<u64>,
    pub n_features: usize,
}

impl<T: Scalar> TreeEnsemble<T> {
    pub fn predict(&self, row: &[T]) -> Result<T> {
        if row.len() != self.n_features {
            return Err(Error::Dimension { expected: self.n_features, got: row.len() });
        }
        let sum: T = self.trees.iter().map(|t| t.predict_unchecked(row)).sum();
        Ok(match self.kind {
            EnsembleKind::GradientBoosting { learning_rate, init } => init + learning_rate * sum,
            _ if self.trees.is_empty() => T::nan(),
            _ => sum / T::from_usize_lossy(self.trees.len()),
        })
    }

    /// Boosting predictions after `0, 1, ..., B` stages.
    pub fn staged_predict(&self, row: &[T]) -> Result<Vec<T>> {
        let EnsembleKind::GradientBoosting { learning_rate, init } = self.kind else {
            return Err(Error::InvalidInput("staged prediction needs a boosted ensemble".into()));
        };
        if row.len() != self.n_features {
            return Err(Error::Dimension { expected: self.n_features, got: row.len() });
        }
        let mut out = Vec::with_capacity(self.trees.len() + 1);
        let mut sum = T::zero();
        out.push(init);
        for t in &self.trees {
            sum += t.predict_unchecked(row);
            out.push(init + learning_rate * sum);
        }
        Ok(out)
    }

    /// The first `b` members (boosting) or a sub-ensemble (averaging).
    pub fn truncated(&self, b: usize) -> Self {
        let mut e = self.clone();
        e.trees.truncate(b);
        e.bootstrap_seeds.truncate(b);
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestOptions {
    pub trees: usize,
    pub min_node_size: usize,
    /// `None` is bagging (all features); `Some(k)` a random forest.
    pub feature_split: Option<usize>,
    /// Disable resampling (for testing the nesting with a single tree).
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestOptions {
    pub fn bagging(seed: u64) -> Self {
        Self { trees: 500, min_node_size: 5, feature_split: None, bootstrap: true, seed }
    }

    /// Random forest with the default `floor(J / 3)` (at least 1) features per split.
    pub fn random_forest(n_features: usize, seed: u64) -> Self {
        Self { feature_split: Some(default_feature_split(n_features)), ..Self::bagging(seed) }
    }
}

pub fn default_feature_split(n_features: usize) -> usize {
    (n_features / 3).max(1)
}

/// Bagging or random forest, trees grown in parallel on independent streams.
pub fn fit_forest<T: Scalar>(data: &TreeData<T>, opts: ForestOptions) -> Result<TreeEnsemble<T>> {
    let tree_opts = TreeOptions { min_node_size: opts.min_node_size, max_depth: None, feature_subset: opts.feature_split };
    check_sizes(data, tree_opts)?;
    let p = data.n_features();
    if let Some(k) = opts.feature_split {
        if k == 0 || k > p {
            return Err(Error::InvalidInput(format!("feature_split must lie in 1..={p}, got {k}")));
        }
    }
    if opts.trees == 0 {
        return Err(Error::InvalidInput("an averaging ensemble needs at least one tree".into()));
    }
    let n = data.n_rows();
    let root = SeedStream::new(opts.seed).child("forest");
    let members: Vec<(RegressionTree<T>, u64)> = (0..opts.trees)
        .into_par_iter()
        .map(|b| {
            let stream = root.child(b);
            let seed = stream.derive_seed();
            let mut rng = stream.rng();
            let sample: Vec<usize> =
                if opts.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
            grow_tree(data, &data.y, &sample, tree_opts, Some(&mut rng)).map(|t| (t, seed))
        })
        .collect::<Result<_>>()?;
    let (trees, bootstrap_seeds) = members.into_iter().unzip();
    let kind = match opts.feature_split {
        Some(k) => EnsembleKind::RandomForest { feature_split: k },
        None => EnsembleKind::Bagging,
    };
    Ok(TreeEnsemble { trees, kind, bootstrap_seeds, n_features: p })
}

pub fn fit_bagging<T: Scalar>(data: &TreeData<T>, trees: usize, min_node_size: usize, seed: u64) -> Result<TreeEnsemble<T>> {
    fit_forest(data, ForestOptions { trees, min_node_size, ..ForestOptions::bagging(seed) })
}

pub fn fit_random_forest<T: Scalar>(
    data: &TreeData<T>,
    trees: usize,
    min_node_size: usize,
    feature_split: usize,
    seed: u64,
) -> Result<TreeEnsemble<T>> {
    fit_forest(data, ForestOptions { trees, min_node_size, feature_split: Some(feature_split), bootstrap: true, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostingOptions {
    pub trees: usize,
    /// Split levels per tree; 1 is a stump.
    pub depth: Option<usize>,
    pub learning_rate: f64,
    pub min_node_size: usize,
}

impl Default for BoostingOptions {
    fn default() -> Self {
        Self { trees: 100, depth: Some(1), learning_rate: 0.1, min_node_size: 5 }
    }
}

/// A boosted ensemble together with the training MSE after each stage
/// (`train_mse[0]` is the constant initial fit).
#[derive(Debug, Clone, PartialEq)]
pub struct BoostingFit<T> {
    pub ensemble: TreeEnsemble<T>,
    pub train_mse: Vec<T>,
}

pub fn fit_gradient_boosting<T: Scalar>(data: &TreeData<T>, opts: BoostingOptions) -> Result<BoostingFit<T>> {
    let n = data.n_rows();
    if n == 0 {
        return Err(Error::Empty("no training rows".into()));
    }
    if !(opts.learning_rate > 0.0) || opts.min_node_size == 0 || opts.depth == Some(0) {
        return Err(Error::InvalidInput("boosting needs learning_rate > 0, depth >= 1 and min_node_size >= 1".into()));
    }
    let nu = T::lit(opts.learning_rate);
    let nf = T::from_usize_lossy(n);
    let init = data.y.iter().copied().sum::<T>() / nf;
    let mut fitted = vec![init; n];
    let mut resid: Vec<T> = data.y.iter().map(|&y| y - init).collect();
    let mse = |r: &[T]| r.iter().map(|&e| e * e).sum::<T>() / nf;
    let mut train_mse = vec![mse(&resid)];
    let sample: Vec<usize> = (0..n).collect();
    let tree_opts = TreeOptions { min_node_size: opts.min_node_size, max_depth: opts.depth, feature_subset: None };
    let sorted = presort(data, &sample);
    let rows: Vec<Vec<T>> = (0..n).map(|i| data.row(i)).collect();
    let mut trees = Vec::with_capacity(opts.trees);
    for _ in 0..opts.trees {
        let tree = grow_presorted::<T, crate::rng::StreamRng>(data, &resid, &sample, sorted.clone(), tree_opts, None);
        for i in 0..n {
            let step = tree.predict_unchecked(&rows[i]);
            fitted[i] += nu * step;
            resid[i] = data.y[i] - fitted[i];
        }
        train_mse.push(mse(&resid));
        trees.push(tree);
    }
    Ok(BoostingFit {
        ensemble: TreeEnsemble {
            trees,
            kind: EnsembleKind::GradientBoosting { learning_rate: nu, init },
            bootstrap_seeds: Vec::new(),
            n_features: data.n_features(),
        },
        train_mse,
    })
}
