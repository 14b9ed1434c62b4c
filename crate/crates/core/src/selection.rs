//! Weakly supervised tree selection.
//!
//! Each tree of an unsupervised forest is scored on a small labeled subset,
//! trees are ordered by their individual average precision, and the prefix
//! of that ordering with the highest ensemble AP is kept. No tree is ever
//! regrown; the reduced forest reuses the original trees verbatim.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::forest::{fit_forest, AnomalyScore, ForestParams, IForest, PathSum};
use crate::metrics::{average_precision, ApScore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OrderingStrategy {
    /// Descending per-tree AP.
    Best,
    /// Ascending per-tree AP.
    Worst,
    /// Uniform random permutation.
    Random { seed: u64 },
}

impl OrderingStrategy {
    pub fn name(self) -> &'static str {
        match self {
            OrderingStrategy::Best => "best",
            OrderingStrategy::Worst => "worst",
            OrderingStrategy::Random { .. } => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TreeRanking {
    /// AP of each tree, indexed by the tree's position in the forest.
    pub per_tree_ap: Vec<ApScore>,
    /// Permutation of tree indices.
    pub order: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionResult {
    #[serde(flatten)]
    pub ranking: TreeRanking,
    /// Entry `i` is the AP of the first `i + 1` ranked trees.
    pub prefix_ap: Vec<ApScore>,
    pub selected_size: usize,
    pub selected_tree_indices: Vec<usize>,
}

impl SelectionResult {
    pub fn selected_ap(&self) -> ApScore {
        self.prefix_ap[self.selected_size - 1]
    }

    pub fn full_forest_ap(&self) -> ApScore {
        *self.prefix_ap.last().expect("non-empty curve")
    }
}

/// Labels of a subset usable for ranking: at least one of each class.
fn ranking_labels(labeled: &LabeledDataset) -> Result<&[bool]> {
    let labels = labeled.require_labels()?;
    if !labels.iter().any(|&l| l) {
        return Err(Error::NoPositives);
    }
    if labels.iter().all(|&l| l) {
        return Err(Error::NoNegatives);
    }
    Ok(labels)
}

/// Path lengths of every labeled row under every tree, computed once.
struct PathMatrix<'a> {
    paths: Vec<Vec<f64>>,
    labels: &'a [bool],
    subsample_size: usize,
}

impl<'a> PathMatrix<'a> {
    fn new(forest: &IForest, labeled: &'a LabeledDataset) -> Result<Self> {
        let labels = ranking_labels(labeled)?;
        Ok(Self {
            paths: forest.path_length_matrix(labeled.features())?,
            labels,
            subsample_size: forest.subsample_size(),
        })
    }

    fn per_tree_ap(&self) -> Result<Vec<ApScore>> {
        self.paths
            .iter()
            .map(|paths| {
                let scores: Vec<f64> = paths.iter().map(|h| -h).collect();
                average_precision(&scores, self.labels)
            })
            .collect()
    }

    /// Running exact sums make the sweep over all prefix sizes O(n * t).
    fn prefix_curve(&self, order: &[usize]) -> Result<Vec<ApScore>> {
        if order.len() != self.paths.len() {
            return Err(Error::InvalidParams(format!(
                "ranking covers {} of {} trees",
                order.len(),
                self.paths.len()
            )));
        }
        let n = self.labels.len();
        let mut sums = vec![PathSum::default(); n];
        let mut scores = vec![0.0; n];
        let mut curve = Vec::with_capacity(order.len());
        for (k, &tree) in order.iter().enumerate() {
            let paths = self.paths.get(tree).ok_or(Error::PrefixOutOfRange {
                prefix: tree,
                trees: self.paths.len(),
            })?;
            for ((sum, score), &h) in sums.iter_mut().zip(scores.iter_mut()).zip(paths) {
                sum.add(h);
                *score = AnomalyScore::from_mean_path(sum.mean(k + 1), self.subsample_size).value();
            }
            curve.push(average_precision(&scores, self.labels)?);
        }
        Ok(curve)
    }
}

/// AP of each tree on the labeled subset, using negative path length as the
/// single-tree anomaly score.
pub fn rank_trees(forest: &IForest, labeled: &LabeledDataset) -> Result<Vec<ApScore>> {
    PathMatrix::new(forest, labeled)?.per_tree_ap()
}

/// Orders trees by strategy. AP ties keep ascending tree index.
pub fn order_trees(strategy: OrderingStrategy, per_tree_ap: &[ApScore]) -> TreeRanking {
    let mut order: Vec<usize> = (0..per_tree_ap.len()).collect();
    match strategy {
        OrderingStrategy::Best => {
            order.sort_by(|&a, &b| per_tree_ap[b].0.total_cmp(&per_tree_ap[a].0))
        }
        OrderingStrategy::Worst => {
            order.sort_by(|&a, &b| per_tree_ap[a].0.total_cmp(&per_tree_ap[b].0))
        }
        OrderingStrategy::Random { seed } => {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
    }
    TreeRanking {
        per_tree_ap: per_tree_ap.to_vec(),
        order,
    }
}

/// AP of every prefix forest under `ranking`, for prefix sizes 1..=t.
pub fn prefix_ap_curve(
    forest: &IForest,
    ranking: &TreeRanking,
    labeled: &LabeledDataset,
) -> Result<Vec<ApScore>> {
    PathMatrix::new(forest, labeled)?.prefix_curve(&ranking.order)
}

/// Largest prefix size reaching the maximum AP.
pub fn select_forest(prefix_ap: &[ApScore]) -> Result<usize> {
    let best = prefix_ap
        .iter()
        .map(|a| a.0)
        .fold(f64::NEG_INFINITY, f64::max);
    prefix_ap
        .iter()
        .rposition(|a| a.0 == best)
        .map(|i| i + 1)
        .ok_or(Error::EmptyInput)
}

/// Per-strategy prefix curves sharing one path-length computation.
pub fn strategy_curves(
    forest: &IForest,
    labeled: &LabeledDataset,
    strategies: &[OrderingStrategy],
) -> Result<(Vec<ApScore>, Vec<Vec<ApScore>>)> {
    let matrix = PathMatrix::new(forest, labeled)?;
    let per_tree = matrix.per_tree_ap()?;
    let curves = strategies
        .iter()
        .map(|&s| matrix.prefix_curve(&order_trees(s, &per_tree).order))
        .collect::<Result<Vec<_>>>()?;
    Ok((per_tree, curves))
}

/// Ranks, orders (best first), evaluates prefixes and keeps the selected
/// trees of an already grown forest.
pub fn select_trees(
    forest: &IForest,
    labeled: &LabeledDataset,
) -> Result<(IForest, SelectionResult)> {
    let matrix = PathMatrix::new(forest, labeled)?;
    let ranking = order_trees(OrderingStrategy::Best, &matrix.per_tree_ap()?);
    let prefix_ap = matrix.prefix_curve(&ranking.order)?;
    let selected_size = select_forest(&prefix_ap)?;
    let selected_tree_indices = ranking.order[..selected_size].to_vec();
    let reduced = forest.subset(&selected_tree_indices)?;
    Ok((
        reduced,
        SelectionResult {
            ranking,
            prefix_ap,
            selected_size,
            selected_tree_indices,
        },
    ))
}

/// Grows a forest on `train` without labels, then selects its trees using
/// `labeled`.
pub fn tiws_fit(
    train: ArrayView2<'_, f64>,
    labeled: &LabeledDataset,
    params: &ForestParams,
) -> Result<(IForest, SelectionResult)> {
    ranking_labels(labeled)?;
    let forest = fit_forest(train, params)?;
    select_trees(&forest, labeled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_toy, ToyKind};
    use crate::forest::Prefix;
    use ndarray::Array2;

    fn aps(v: &[f64]) -> Vec<ApScore> {
        v.iter().map(|&x| ApScore(x)).collect()
    }

    #[test]
    fn ordering_examples() {
        let ap = aps(&[0.2, 0.9, 0.5]);
        assert_eq!(
            order_trees(OrderingStrategy::Best, &ap).order,
            vec![1, 2, 0]
        );
        assert_eq!(
            order_trees(OrderingStrategy::Worst, &ap).order,
            vec![0, 2, 1]
        );
    }

    #[test]
    fn ordering_ties_keep_index_order() {
        let ap = aps(&[0.5, 0.7, 0.5, 0.7]);
        assert_eq!(
            order_trees(OrderingStrategy::Best, &ap).order,
            vec![1, 3, 0, 2]
        );
        assert_eq!(
            order_trees(OrderingStrategy::Worst, &ap).order,
            vec![0, 2, 1, 3]
        );
    }

    #[test]
    fn random_ordering_is_seeded() {
        let ap = aps(&[0.1; 30]);
        let a = order_trees(OrderingStrategy::Random { seed: 4 }, &ap);
        let b = order_trees(OrderingStrategy::Random { seed: 4 }, &ap);
        let c = order_trees(OrderingStrategy::Random { seed: 5 }, &ap);
        assert_eq!(a, b);
        assert_ne!(a.order, c.order);
        let mut sorted = a.order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn select_examples() {
        assert_eq!(select_forest(&aps(&[0.9, 0.9, 0.5])).unwrap(), 2);
        assert_eq!(select_forest(&aps(&[0.1, 0.2, 0.3])).unwrap(), 3);
        assert_eq!(select_forest(&aps(&[0.7])).unwrap(), 1);
        assert_eq!(select_forest(&aps(&[0.8, 0.3, 0.8, 0.8, 0.1])).unwrap(), 4);
        assert!(select_forest(&[]).is_err());
    }

    #[test]
    fn single_tree_pipeline() {
        let ds = make_toy(ToyKind::DoubleCluster, 100, 8, 1).unwrap();
        let params = ForestParams::default().with_trees(1).with_seed(2);
        let (reduced, sel) = tiws_fit(ds.features(), &ds, &params).unwrap();
        assert_eq!(reduced.n_trees(), 1);
        assert_eq!(sel.selected_size, 1);
        assert_eq!(sel.prefix_ap.len(), 1);
        let full = fit_forest(ds.features(), &params).unwrap();
        assert_eq!(reduced.trees(), full.trees());
        let scores = full.score_rows(ds.features(), Prefix::All).unwrap();
        let ap = average_precision(&scores, ds.labels().unwrap()).unwrap();
        assert_eq!(sel.ranking.per_tree_ap[0], ap);
        assert_eq!(sel.prefix_ap[0], ap);
    }

    #[test]
    fn label_contract() {
        let ds = make_toy(ToyKind::CentralCluster, 50, 5, 0).unwrap();
        let forest = fit_forest(ds.features(), &ForestParams::default().with_trees(3)).unwrap();
        let no_pos = ds.select(&(0..50).collect::<Vec<_>>());
        assert!(matches!(
            rank_trees(&forest, &no_pos),
            Err(Error::NoPositives)
        ));
        let no_neg = ds.select(&(50..55).collect::<Vec<_>>());
        assert!(matches!(
            rank_trees(&forest, &no_neg),
            Err(Error::NoNegatives)
        ));
        let unlabeled = LabeledDataset::new("u", ds.features().to_owned(), None).unwrap();
        assert!(matches!(
            rank_trees(&forest, &unlabeled),
            Err(Error::Unlabeled(_))
        ));
        assert!(matches!(
            tiws_fit(ds.features(), &no_pos, &ForestParams::default()),
            Err(Error::NoPositives)
        ));
    }

    #[test]
    fn constant_tree_has_tied_ap() {
        // A forest whose only tree is a single leaf gives every point the
        // same score, so AP is the positive fraction.
        let features = Array2::from_elem((10, 1), 1.0);
        let labels: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let ds = LabeledDataset::new("c", features, Some(labels)).unwrap();
        let forest = fit_forest(ds.features(), &ForestParams::default().with_trees(2)).unwrap();
        let ap = rank_trees(&forest, &ds).unwrap();
        assert_eq!(ap, aps(&[0.3, 0.3]));
    }

    #[test]
    fn partial_ranking_rejected() {
        let ds = make_toy(ToyKind::CentralCluster, 30, 3, 0).unwrap();
        let forest = fit_forest(ds.features(), &ForestParams::default().with_trees(3)).unwrap();
        let ranking = TreeRanking {
            per_tree_ap: aps(&[0.0; 3]),
            order: vec![0, 1],
        };
        assert!(prefix_ap_curve(&forest, &ranking, &ds).is_err());
    }
}
