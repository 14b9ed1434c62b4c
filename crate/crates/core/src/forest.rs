//! Isolation trees and forests.
//!
//! Trees are stored as flat node arrays rooted at index 0. A forest keeps its
//! trees in growth order and can score with any leading prefix of them, which
//! is what the tree-selection step relies on.

use ndarray::{ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::FormatError;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful BST search over `n` points.
///
/// Zero for `n <= 1`.
pub fn c_factor(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let n = n as f64;
    2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxDepth {
    /// `ceil(log2(psi))` for the effective subsample size.
    Auto,
    Limit(usize),
}

impl MaxDepth {
    pub fn resolve(self, subsample_size: usize) -> usize {
        match self {
            MaxDepth::Auto => ceil_log2(subsample_size),
            MaxDepth::Limit(d) => d,
        }
    }
}

fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub subsample_size: usize,
    pub max_depth: MaxDepth,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample_size: 256,
            max_depth: MaxDepth::Auto,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_trees(mut self, n: usize) -> Self {
        self.n_trees = n;
        self
    }

    pub fn with_subsample_size(mut self, psi: usize) -> Self {
        self.subsample_size = psi;
        self
    }

    pub fn with_max_depth(mut self, depth: MaxDepth) -> Self {
        self.max_depth = depth;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParams("n_trees must be at least 1".into()));
        }
        if self.subsample_size < 2 {
            return Err(Error::InvalidParams(
                "subsample_size must be at least 2".into(),
            ));
        }
        if self.max_depth == MaxDepth::Limit(0) {
            return Err(Error::InvalidParams("max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        size: u32,
    },
}

/// One isolation tree. Points with `x[feature] < threshold` go left.
#[derive(Clone, Debug, PartialEq)]
pub struct ITree {
    nodes: Vec<Node>,
    subsample_size: usize,
    required_features: usize,
}

impl ITree {
    /// Builds a tree from raw nodes, checking that they form a single binary
    /// tree rooted at index 0.
    pub fn from_nodes(nodes: Vec<Node>) -> std::result::Result<Self, FormatError> {
        if nodes.is_empty() {
            return Err(FormatError::EmptyTree);
        }
        let n = nodes.len();
        let mut referenced = vec![false; n];
        let mut leaf_total: u64 = 0;
        let mut required_features = 0;
        for (i, node) in nodes.iter().enumerate() {
            match *node {
                Node::Leaf { size } => leaf_total += u64::from(size),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if !threshold.is_finite() {
                        return Err(FormatError::NonFiniteThreshold { node: i });
                    }
                    required_features = required_features.max(feature + 1);
                    for child in [left, right] {
                        let c = child as usize;
                        if c >= n {
                            return Err(FormatError::ChildOutOfRange {
                                node: i,
                                child,
                                len: n,
                            });
                        }
                        if c == 0 || referenced[c] {
                            return Err(FormatError::MalformedTree(format!(
                                "node {c} referenced more than once"
                            )));
                        }
                        referenced[c] = true;
                    }
                }
            }
        }
        // Every non-root node has exactly one parent; reachability from the
        // root rules out detached cycles.
        let mut seen = 0usize;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            seen += 1;
            if let Node::Split { left, right, .. } = nodes[i] {
                stack.push(left as usize);
                stack.push(right as usize);
            }
        }
        if seen != n {
            return Err(FormatError::MalformedTree(format!(
                "{} of {n} nodes unreachable from the root",
                n - seen
            )));
        }
        Ok(Self {
            nodes,
            subsample_size: leaf_total as usize,
            required_features,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of training points, i.e. the sum of leaf sizes.
    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    /// Smallest input dimensionality the tree can route.
    pub fn required_features(&self) -> usize {
        self.required_features
    }

    /// Edges from the root to the leaf reached by `x`, plus `c(m)` for a leaf
    /// holding `m` training points.
    pub fn path_length(&self, x: &[f64]) -> Result<f64> {
        if x.len() < self.required_features {
            return Err(Error::DimensionMismatch {
                expected: self.required_features,
                got: x.len(),
            });
        }
        Ok(self.walk(x))
    }

    fn walk(&self, x: &[f64]) -> f64 {
        let mut idx = 0usize;
        let mut edges = 0usize;
        loop {
            match self.nodes[idx] {
                Node::Leaf { size } => return edges as f64 + c_factor(size as usize),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[feature] < threshold { left } else { right } as usize;
                    edges += 1;
                }
            }
        }
    }
}

/// Grows one isolation tree over every row of `subsample`.
pub fn build_tree<R: Rng + ?Sized>(
    subsample: ArrayView2<'_, f64>,
    max_depth: MaxDepth,
    rng: &mut R,
) -> Result<ITree> {
    let (n, d) = subsample.dim();
    if n == 0 || d == 0 {
        return Err(Error::EmptyInput);
    }
    let mut builder = TreeBuilder {
        data: subsample,
        limit: max_depth.resolve(n),
        nodes: Vec::with_capacity(2 * n - 1),
        rng,
    };
    let mut rows: Vec<usize> = (0..n).collect();
    builder.grow(&mut rows, 0);
    let nodes = builder.nodes;
    Ok(ITree::from_nodes(nodes).expect("grown trees are well formed"))
}

struct TreeBuilder<'a, 'r, R: Rng + ?Sized> {
    data: ArrayView2<'a, f64>,
    limit: usize,
    nodes: Vec<Node>,
    rng: &'r mut R,
}

impl<R: Rng + ?Sized> TreeBuilder<'_, '_, R> {
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> u32 {
        let idx = self.nodes.len() as u32;
        let leaf = Node::Leaf {
            size: rows.len() as u32,
        };
        if rows.len() <= 1 || depth >= self.limit {
            self.nodes.push(leaf);
            return idx;
        }

        let candidates: Vec<(usize, f64, f64)> = (0..self.data.ncols())
            .filter_map(|f| {
                let (lo, hi) =
                    rows.iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                            let v = self.data[[r, f]];
                            (lo.min(v), hi.max(v))
                        });
                splittable(lo, hi).then_some((f, lo, hi))
            })
            .collect();
        if candidates.is_empty() {
            self.nodes.push(leaf);
            return idx;
        }

        let (feature, lo, hi) = candidates[self.rng.random_range(0..candidates.len())];
        let threshold = draw_threshold(self.rng, lo, hi);

        let mut split = 0;
        for i in 0..rows.len() {
            if self.data[[rows[i], feature]] < threshold {
                rows.swap(i, split);
                split += 1;
            }
        }
        debug_assert!(split > 0 && split < rows.len());

        self.nodes.push(leaf);
        let (left_rows, right_rows) = rows.split_at_mut(split);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[idx as usize] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        idx
    }
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    lo / 2.0 + hi / 2.0
}

/// A feature can be split only if some float lies strictly inside (lo, hi).
fn splittable(lo: f64, hi: f64) -> bool {
    let mid = midpoint(lo, hi);
    lo < mid && mid < hi
}

fn draw_threshold<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let t = rng.random_range(lo..hi);
    if lo < t && t < hi {
        t
    } else {
        midpoint(lo, hi)
    }
}

/// Which trees of a forest take part in scoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prefix {
    All,
    First(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct AnomalyScore(f64);

impl AnomalyScore {
    /// `2^(-mean_path / c(psi))`.
    pub fn from_mean_path(mean_path: f64, subsample_size: usize) -> Self {
        AnomalyScore((-mean_path / c_factor(subsample_size)).exp2())
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Flags `score` as anomalous when strictly above `tau` (usually 0.5).
pub fn predict_label(score: AnomalyScore, tau: f64) -> bool {
    score.0 > tau
}

/// Exact fixed-point sum of path lengths.
///
/// Every path length is either 0 or at least `c(2)`, so it is an integer
/// multiple of 2^-60 and the sum is exact. The ensemble mean therefore does
/// not depend on the order in which trees are visited.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PathSum(i128);

const PATH_SCALE: f64 = (1u128 << 60) as f64;

impl PathSum {
    pub fn add(&mut self, path_length: f64) {
        let scaled = path_length * PATH_SCALE;
        debug_assert_eq!(scaled.fract(), 0.0);
        self.0 += scaled as i128;
    }

    pub fn mean(self, count: usize) -> f64 {
        self.0 as f64 / PATH_SCALE / count as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IForest {
    trees: Vec<ITree>,
    subsample_size: usize,
    n_features: Option<usize>,
}

impl IForest {
    /// Assembles a forest from existing trees. `n_features` is `None` when
    /// the training dimensionality is unknown (e.g. a deserialized model).
    pub fn from_trees(
        trees: Vec<ITree>,
        subsample_size: usize,
        n_features: Option<usize>,
    ) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidParams(
                "forest needs at least one tree".into(),
            ));
        }
        if subsample_size < 2 {
            return Err(Error::InvalidParams(
                "subsample_size must be at least 2".into(),
            ));
        }
        if let Some(d) = n_features {
            if let Some(t) = trees.iter().find(|t| t.required_features() > d) {
                return Err(Error::DimensionMismatch {
                    expected: t.required_features(),
                    got: d,
                });
            }
        }
        Ok(Self {
            trees,
            subsample_size,
            n_features,
        })
    }

    pub fn trees(&self) -> &[ITree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Effective subsample size, `min(psi, n_rows)` at training time.
    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    pub fn n_features(&self) -> Option<usize> {
        self.n_features
    }

    /// New forest made of the trees at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<IForest> {
        let trees = indices
            .iter()
            .map(|&i| {
                self.trees.get(i).cloned().ok_or(Error::PrefixOutOfRange {
                    prefix: i,
                    trees: self.n_trees(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        IForest::from_trees(trees, self.subsample_size, self.n_features)
    }

    pub(crate) fn resolve(&self, prefix: Prefix) -> Result<usize> {
        match prefix {
            Prefix::All => Ok(self.trees.len()),
            Prefix::First(k) if (1..=self.trees.len()).contains(&k) => Ok(k),
            Prefix::First(k) => Err(Error::PrefixOutOfRange {
                prefix: k,
                trees: self.trees.len(),
            }),
        }
    }

    pub(crate) fn check_dims(&self, got: usize) -> Result<()> {
        match self.n_features {
            Some(d) if d != got => Err(Error::DimensionMismatch { expected: d, got }),
            _ => {
                let required = self
                    .trees
                    .iter()
                    .map(ITree::required_features)
                    .max()
                    .unwrap_or(0);
                if got < required {
                    Err(Error::DimensionMismatch {
                        expected: required,
                        got,
                    })
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn mean_path_length(&self, x: &[f64], prefix: Prefix) -> Result<f64> {
        let k = self.resolve(prefix)?;
        self.check_dims(x.len())?;
        let mut sum = PathSum::default();
        for tree in &self.trees[..k] {
            sum.add(tree.walk(x));
        }
        Ok(sum.mean(k))
    }

    pub fn score(&self, x: &[f64], prefix: Prefix) -> Result<AnomalyScore> {
        let h = self.mean_path_length(x, prefix)?;
        Ok(AnomalyScore::from_mean_path(h, self.subsample_size))
    }

    /// Anomaly score of every row of `data`.
    pub fn score_rows(&self, data: ArrayView2<'_, f64>, prefix: Prefix) -> Result<Vec<f64>> {
        let k = self.resolve(prefix)?;
        self.check_dims(data.ncols())?;
        let data = data.as_standard_layout();
        Ok((0..data.nrows())
            .into_par_iter()
            .map(|i| {
                let row = data.row(i);
                let x = row.to_slice().expect("standard layout");
                let mut sum = PathSum::default();
                for tree in &self.trees[..k] {
                    sum.add(tree.walk(x));
                }
                AnomalyScore::from_mean_path(sum.mean(k), self.subsample_size).value()
            })
            .collect())
    }

    /// Path lengths indexed `[tree][row]`.
    pub fn path_length_matrix(&self, data: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>> {
        self.check_dims(data.ncols())?;
        let data = data.as_standard_layout();
        Ok(self
            .trees
            .par_iter()
            .map(|tree| {
                data.rows()
                    .into_iter()
                    .map(|row| tree.walk(row.to_slice().expect("standard layout")))
                    .collect()
            })
            .collect())
    }
}

/// Random stream for tree `index`, independent of how trees are scheduled.
pub(crate) fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub(crate) fn check_finite(data: ArrayView2<'_, f64>) -> Result<()> {
    for ((row, col), v) in data.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
    }
    Ok(())
}

/// Grows `params.n_trees` trees, each on its own subsample drawn without
/// replacement. Trees are kept in growth order.
pub fn fit_forest(data: ArrayView2<'_, f64>, params: &ForestParams) -> Result<IForest> {
    params.validate()?;
    let (n, d) = data.dim();
    if n < 2 {
        return Err(Error::TooFewRows {
            required: 2,
            got: n,
        });
    }
    if d == 0 {
        return Err(Error::EmptyInput);
    }
    check_finite(data)?;

    let psi = params.subsample_size.min(n);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = tree_rng(params.seed, i);
            let rows = rand::seq::index::sample(&mut rng, n, psi).into_vec();
            let sub = data.select(Axis(0), &rows);
            build_tree(sub.view(), params.max_depth, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    IForest::from_trees(trees, psi, Some(d))
}
