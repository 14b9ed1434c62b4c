//! Experiment harness: evaluation, ordering-strategy curves and the
//! repeated train/test sweep.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{
    load_csv, make_toy, sample_labeled_fraction, stratified_split, LabeledDataset, SplitSpec,
    ToyKind,
};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestParams, IForest, Prefix};
use crate::metrics::{pr_curve, ApScore, PrCurve};
use crate::selection::{select_trees, strategy_curves, OrderingStrategy};
use crate::store::serialized_size;

pub const DEFAULT_FRACTIONS: [f64; 4] = [0.05, 0.10, 0.20, 0.40];
pub const DEFAULT_REPETITIONS: usize = 10;
pub const DEFAULT_PERMUTATIONS: usize = 100;
pub const TOY_INLIERS: usize = 970;
pub const TOY_ANOMALIES: usize = 30;

/// A dataset given either as a CSV path or as `toy:<kind>[:inliers:anomalies[:seed]]`.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Toy {
        kind: ToyKind,
        n_inliers: usize,
        n_anomalies: usize,
        seed: u64,
    },
}

impl DataSource {
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let Some(rest) = s.strip_prefix("toy:") else {
            return Ok(DataSource::Csv(PathBuf::from(s)));
        };
        let parts: Vec<&str> = rest.split(':').collect();
        let kind = ToyKind::parse(parts[0]).ok_or_else(|| {
            format!(
                "unknown toy `{}` (central-cluster, double-cluster, square-toroid)",
                parts[0]
            )
        })?;
        let num = |i: usize, default: u64| -> std::result::Result<u64, String> {
            parts
                .get(i)
                .map(|p| p.parse().map_err(|_| format!("bad number `{p}` in `{s}`")))
                .unwrap_or(Ok(default))
        };
        if parts.len() > 4 {
            return Err(format!("too many fields in `{s}`"));
        }
        Ok(DataSource::Toy {
            kind,
            n_inliers: num(1, TOY_INLIERS as u64)? as usize,
            n_anomalies: num(2, TOY_ANOMALIES as u64)? as usize,
            seed: num(3, 0)?,
        })
    }

    pub fn name(&self) -> String {
        match self {
            DataSource::Csv(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string()),
            DataSource::Toy { kind, .. } => kind.name().to_string(),
        }
    }

    pub fn load(&self) -> Result<LabeledDataset> {
        match self {
            DataSource::Csv(p) => load_csv(p),
            DataSource::Toy {
                kind,
                n_inliers,
                n_anomalies,
                seed,
            } => make_toy(*kind, *n_inliers, *n_anomalies, *seed),
        }
    }
}

/// Stable 64-bit seed from a master seed and a sequence of tags.
pub fn derive_seed(master: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}

pub fn cell_seed(master: u64, dataset: &str, fraction: f64, repetition: usize) -> u64 {
    derive_seed(
        master,
        &[
            dataset.as_bytes(),
            &fraction.to_bits().to_le_bytes(),
            &(repetition as u64).to_le_bytes(),
        ],
    )
}

/// AP and PR curve of `forest` on a labeled test set.
pub fn evaluate(forest: &IForest, test: &LabeledDataset) -> Result<(ApScore, PrCurve)> {
    let labels = test.require_labels()?;
    let scores = forest.score_rows(test.features(), Prefix::All)?;
    let curve = pr_curve(&scores, labels)?;
    Ok((curve.average_precision(), curve))
}

pub fn write_pr_csv(curve: &PrCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in &curve.points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    Best,
    Worst,
    Random,
}

impl StrategyKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "best" => Some(StrategyKind::Best),
            "worst" => Some(StrategyKind::Worst),
            "random" => Some(StrategyKind::Random),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Best => "best",
            StrategyKind::Worst => "worst",
            StrategyKind::Random => "random",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub prefix_size: usize,
    pub ap_mean: f64,
    pub ap_min: f64,
    pub ap_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvesOutput {
    pub per_tree_ap: Vec<ApScore>,
    pub curves: Vec<(StrategyKind, Vec<CurveRow>)>,
    /// AP of the full forest on the labeled rows.
    pub full_forest_ap: ApScore,
}

fn aggregate(curves: &[Vec<ApScore>]) -> Vec<CurveRow> {
    let t = curves[0].len();
    (0..t)
        .map(|i| {
            let vals = curves.iter().map(|c| c[i].0);
            let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
            for v in vals {
                lo = lo.min(v);
                hi = hi.max(v);
                sum += v;
            }
            CurveRow {
                prefix_size: i + 1,
                ap_mean: sum / curves.len() as f64,
                ap_min: lo,
                ap_max: hi,
            }
        })
        .collect()
}

/// Grows a forest on all of `ds`, then measures prefix curves on a labeled
/// fraction for each strategy. Random curves aggregate `permutations` shuffles.
pub fn run_curves(
    ds: &LabeledDataset,
    params: &ForestParams,
    labeled_fraction: f64,
    strategies: &[StrategyKind],
    permutations: usize,
) -> Result<CurvesOutput> {
    if permutations == 0 && strategies.contains(&StrategyKind::Random) {
        return Err(Error::InvalidParams(
            "permutations must be at least 1".into(),
        ));
    }
    let labeled =
        sample_labeled_fraction(ds, labeled_fraction, derive_seed(params.seed, &[b"label"]))?;
    let forest = fit_forest(ds.features(), params)?;

    let mut plan = Vec::new();
    for &kind in strategies {
        match kind {
            StrategyKind::Best => plan.push(OrderingStrategy::Best),
            StrategyKind::Worst => plan.push(OrderingStrategy::Worst),
            StrategyKind::Random => {
                plan.extend((0..permutations).map(|i| OrderingStrategy::Random {
                    seed: derive_seed(params.seed, &[b"permutation", &(i as u64).to_le_bytes()]),
                }))
            }
        }
    }
    let (per_tree_ap, raw) = strategy_curves(&forest, &labeled, &plan)?;

    let mut curves = Vec::new();
    let mut at = 0;
    for &kind in strategies {
        let n = if kind == StrategyKind::Random {
            permutations
        } else {
            1
        };
        curves.push((kind, aggregate(&raw[at..at + n])));
        at += n;
    }
    let scores = forest.score_rows(labeled.features(), Prefix::All)?;
    let full_forest_ap = crate::metrics::average_precision(&scores, labeled.require_labels()?)?;
    Ok(CurvesOutput {
        per_tree_ap,
        curves,
        full_forest_ap,
    })
}

pub fn write_curve_csv(rows: &[CurveRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub sources: Vec<DataSource>,
    pub fractions: Vec<f64>,
    pub repetitions: usize,
    /// Forest parameters; `seed` is the master seed of the sweep.
    pub params: ForestParams,
    pub test_fraction: f64,
}

impl SweepConfig {
    pub fn new(sources: Vec<DataSource>) -> Self {
        Self {
            sources,
            fractions: DEFAULT_FRACTIONS.to_vec(),
            repetitions: DEFAULT_REPETITIONS,
            params: ForestParams::default(),
            test_fraction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.repetitions == 0 {
            return Err(Error::InvalidParams(
                "repetitions must be at least 1".into(),
            ));
        }
        if self.fractions.is_empty() {
            return Err(Error::InvalidParams(
                "need at least one labeled fraction".into(),
            ));
        }
        for &f in self.fractions.iter().chain([&self.test_fraction]) {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidParams(format!("fraction {f} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub dataset: String,
    pub repetition: usize,
    pub seed: u64,
    pub labeled_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_labeled: usize,
    pub baseline_test_ap: f64,
    pub tiws_test_ap: f64,
    pub selected_trees: usize,
    pub parent_bytes: usize,
    pub reduced_bytes: usize,
    /// Excluded from the deterministic table; see [`write_timings_csv`].
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepFailure {
    pub dataset: String,
    pub cell: Option<(f64, usize)>,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub failures: Vec<SweepFailure>,
}

/// One repetition of the protocol: contamination-preserving 50/50 split,
/// stratified labeled fraction of the training half, unsupervised forest on
/// the whole training half, selection on the labeled rows, evaluation of
/// both forests on the test half.
pub fn run_cell(
    ds: &LabeledDataset,
    params: &ForestParams,
    test_fraction: f64,
    fraction: f64,
    repetition: usize,
) -> Result<SweepRecord> {
    let start = Instant::now();
    let seed = cell_seed(params.seed, &ds.name, fraction, repetition);
    let split = SplitSpec {
        test_fraction,
        labeled_fraction: fraction,
        seed: derive_seed(seed, &[b"split"]),
    };
    let (train, test) = stratified_split(ds, &split)?;
    let labeled = sample_labeled_fraction(&train, fraction, derive_seed(seed, &[b"label"]))?;
    let forest_params = params.clone().with_seed(derive_seed(seed, &[b"forest"]));
    let forest = fit_forest(train.features(), &forest_params)?;
    let (reduced, selection) = select_trees(&forest, &labeled)?;
    let (baseline, _) = evaluate(&forest, &test)?;
    let (tiws, _) = evaluate(&reduced, &test)?;
    Ok(SweepRecord {
        dataset: ds.name.clone(),
        repetition,
        seed,
        labeled_fraction: fraction,
        n_train: train.n_rows(),
        n_test: test.n_rows(),
        n_labeled: labeled.n_rows(),
        baseline_test_ap: baseline.0,
        tiws_test_ap: tiws.0,
        selected_trees: selection.selected_size,
        parent_bytes: serialized_size(&forest),
        reduced_bytes: serialized_size(&reduced),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs every (dataset, fraction, repetition) cell. Records come back in
/// that nested order whatever the thread count; failed cells are collected
/// instead of aborting the sweep.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let mut outcome = SweepOutcome::default();
    let mut datasets = Vec::new();
    for source in &config.sources {
        match source.load() {
            Ok(mut ds) => {
                ds.name = source.name();
                datasets.push(ds);
            }
            Err(e) => outcome.failures.push(SweepFailure {
                dataset: source.name(),
                cell: None,
                message: e.to_string(),
            }),
        }
    }

    let cells: Vec<(usize, f64, usize)> = datasets
        .iter()
        .enumerate()
        .flat_map(|(d, _)| {
            config
                .fractions
                .iter()
                .flat_map(move |&f| (0..config.repetitions).map(move |r| (d, f, r)))
        })
        .collect();

    let results: Vec<Result<SweepRecord>> = cells
        .par_iter()
        .map(|&(d, f, r)| run_cell(&datasets[d], &config.params, config.test_fraction, f, r))
        .collect();

    for (&(d, f, r), res) in cells.iter().zip(results) {
        match res {
            Ok(rec) => outcome.records.push(rec),
            Err(e) => outcome.failures.push(SweepFailure {
                dataset: datasets[d].name.clone(),
                cell: Some((f, r)),
                message: e.to_string(),
            }),
        }
    }
    Ok(outcome)
}

pub fn write_sweep_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Wall-clock time per cell; kept apart from the sweep table so the latter
/// stays byte-reproducible.
pub fn write_timings_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "repetition", "labeled_fraction", "wall_ms"])?;
    for r in records {
        w.write_record([
            r.dataset.clone(),
            r.repetition.to_string(),
            r.labeled_fraction.to_string(),
            format!("{:.3}", r.wall_ms),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}
