//! Labeled datasets: CSV loading, toy generators and stratified sampling.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::check_finite;

pub const LABEL_COLUMN: &str = "label";

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    features: Array2<f64>,
    labels: Option<Vec<bool>>,
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Option<Vec<bool>>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 || d == 0 {
            return Err(Error::EmptyInput);
        }
        check_finite(features.view())?;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::LengthMismatch {
                    scores: n,
                    labels: l.len(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            features: features.as_standard_layout().into_owned(),
            labels,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn require_labels(&self) -> Result<&[bool]> {
        self.labels()
            .ok_or_else(|| Error::Unlabeled(self.name.clone()))
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_anomalies(&self) -> Option<usize> {
        self.labels().map(|l| l.iter().filter(|&&a| a).count())
    }

    /// Fraction of rows labeled anomalous.
    pub fn contamination(&self) -> Option<f64> {
        self.n_anomalies().map(|a| a as f64 / self.n_rows() as f64)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            name: self.name.clone(),
            features: self.features.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Reads a CSV whose final column is `label` (0/1).
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    read_csv(path.as_ref(), true)
}

/// Like [`load_csv`] but also accepts files without a `label` column.
pub fn load_csv_unlabeled(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    read_csv(path.as_ref(), false)
}

fn read_csv(path: &Path, require_label: bool) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile { path: path.into() });
    }
    let has_label = headers.iter().next_back().map(str::trim) == Some(LABEL_COLUMN);
    if require_label && !has_label {
        return Err(Error::MissingLabelColumn { path: path.into() });
    }
    let width = headers.len();
    let d = if has_label { width - 1 } else { width };
    if d == 0 {
        return Err(Error::EmptyFile { path: path.into() });
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // 1-based data rows, header excluded
        let row = i + 1;
        if record.len() != width {
            return Err(Error::RaggedRow {
                path: path.into(),
                row,
                expected: width,
                got: record.len(),
            });
        }
        for (col, cell) in record.iter().take(d).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::ParseCell {
                path: path.into(),
                row,
                col: col + 1,
                column: headers[col].to_string(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col: col + 1 });
            }
            values.push(v);
        }
        if has_label {
            let cell = record[d].trim();
            labels.push(match cell {
                "1" => true,
                "0" => false,
                _ => {
                    return Err(Error::InvalidLabel {
                        path: path.into(),
                        row,
                        value: cell.to_string(),
                    })
                }
            });
        }
    }
    if labels.is_empty() && values.is_empty() {
        return Err(Error::EmptyFile { path: path.into() });
    }
    let n = values.len() / d;
    let features = Array2::from_shape_vec((n, d), values).expect("row-major buffer");
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(name, features, has_label.then_some(labels))
}

/// Writes `f0..f{d-1}[,label]` with shortest round-trip float formatting.
pub fn write_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        let mut header: Vec<String> = (0..ds.n_features()).map(|j| format!("f{j}")).collect();
        if ds.labels.is_some() {
            header.push(LABEL_COLUMN.to_string());
        }
        writeln!(out, "{}", header.join(","))?;
        for (i, row) in ds.features.rows().into_iter().enumerate() {
            let mut line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            if let Some(l) = &ds.labels {
                line.push(if l[i] { "1" } else { "0" }.to_string());
            }
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyKind {
    CentralCluster,
    DoubleCluster,
    SquareToroid,
}

impl ToyKind {
    pub fn name(self) -> &'static str {
        match self {
            ToyKind::CentralCluster => "central-cluster",
            ToyKind::DoubleCluster => "double-cluster",
            ToyKind::SquareToroid => "square-toroid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ToyKind::CentralCluster,
            ToyKind::DoubleCluster,
            ToyKind::SquareToroid,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

// Cluster geometry.
const BLOB_STD: f64 = 1.0;
const CENTRAL_SCATTER_MIN_RADIUS: f64 = 4.0;
const CENTRAL_SCATTER_HALF_WIDTH: f64 = 7.0;
const DOUBLE_CENTERS: [[f64; 2]; 2] = [[-3.0, -3.0], [3.0, 3.0]];
const DOUBLE_SCATTER_HALF_WIDTH: f64 = 8.0;
const DOUBLE_SCATTER_MIN_DIST: f64 = 3.5;

/// Square frame geometry. Inliers fill `inner <= max(|x|, |y|) <= outer`,
/// anomalies are uniform in `max(|x|, |y|) < hole`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToroidGeometry {
    pub outer: f64,
    pub inner: f64,
    pub hole: f64,
}

impl Default for ToroidGeometry {
    fn default() -> Self {
        Self {
            outer: 1.0,
            inner: 0.75,
            hole: 0.2,
        }
    }
}

/// 2-D toy dataset with `n_inliers` normal points followed by `n_anomalies`
/// anomalies.
pub fn make_toy(
    kind: ToyKind,
    n_inliers: usize,
    n_anomalies: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_inliers < 10 {
        return Err(Error::InvalidParams(
            "toy data needs at least 10 inliers".into(),
        ));
    }
    if n_anomalies < 1 {
        return Err(Error::InvalidParams(
            "toy data needs at least 1 anomaly".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, BLOB_STD).expect("positive std");
    let mut points: Vec<[f64; 2]> = Vec::with_capacity(n_inliers + n_anomalies);

    match kind {
        ToyKind::CentralCluster => {
            for _ in 0..n_inliers {
                points.push([normal.sample(&mut rng), normal.sample(&mut rng)]);
            }
            let w = CENTRAL_SCATTER_HALF_WIDTH;
            while points.len() < n_inliers + n_anomalies {
                let p = [rng.random_range(-w..w), rng.random_range(-w..w)];
                if p[0].hypot(p[1]) > CENTRAL_SCATTER_MIN_RADIUS {
                    points.push(p);
                }
            }
        }
        ToyKind::DoubleCluster => {
            for i in 0..n_inliers {
                let c = DOUBLE_CENTERS[i % 2];
                points.push([
                    c[0] + normal.sample(&mut rng),
                    c[1] + normal.sample(&mut rng),
                ]);
            }
            let w = DOUBLE_SCATTER_HALF_WIDTH;
            while points.len() < n_inliers + n_anomalies {
                let p = [rng.random_range(-w..w), rng.random_range(-w..w)];
                let far = DOUBLE_CENTERS
                    .iter()
                    .all(|c| (p[0] - c[0]).hypot(p[1] - c[1]) > DOUBLE_SCATTER_MIN_DIST);
                if far {
                    points.push(p);
                }
            }
        }
        ToyKind::SquareToroid => square_toroid(
            &mut points,
            &mut rng,
            ToroidGeometry::default(),
            n_inliers,
            n_anomalies,
        ),
    }

    finish(kind.name(), points, n_inliers)
}

/// Square toroid with explicit geometry.
pub fn make_square_toroid(
    geometry: ToroidGeometry,
    n_inliers: usize,
    n_anomalies: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(0.0 < geometry.hole && geometry.hole <= geometry.inner && geometry.inner < geometry.outer)
    {
        return Err(Error::InvalidParams(format!(
            "bad toroid geometry {geometry:?}"
        )));
    }
    if n_inliers < 10 || n_anomalies < 1 {
        return Err(Error::InvalidParams(
            "toy data needs 10 inliers and 1 anomaly".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n_inliers + n_anomalies);
    square_toroid(&mut points, &mut rng, geometry, n_inliers, n_anomalies);
    finish(ToyKind::SquareToroid.name(), points, n_inliers)
}

fn square_toroid(
    points: &mut Vec<[f64; 2]>,
    rng: &mut ChaCha8Rng,
    g: ToroidGeometry,
    n_inliers: usize,
    n_anomalies: usize,
) {
    while points.len() < n_inliers {
        let p = [
            rng.random_range(-g.outer..=g.outer),
            rng.random_range(-g.outer..=g.outer),
        ];
        if p[0].abs().max(p[1].abs()) >= g.inner {
            points.push(p);
        }
    }
    for _ in 0..n_anomalies {
        points.push([
            rng.random_range(-g.hole..g.hole),
            rng.random_range(-g.hole..g.hole),
        ]);
    }
}

fn finish(name: &str, points: Vec<[f64; 2]>, n_inliers: usize) -> Result<LabeledDataset> {
    let n = points.len();
    let features =
        Array2::from_shape_vec((n, 2), points.into_iter().flatten().collect()).expect("n x 2");
    let labels = (0..n).map(|i| i >= n_inliers).collect();
    LabeledDataset::new(name, features, Some(labels))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.5,
            labeled_fraction: 0.2,
            seed: 0,
        }
    }
}

fn check_fraction(name: &str, f: f64) -> Result<()> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!(
            "{name} must lie in (0, 1], got {f}"
        )))
    }
}

/// Row indices of each class, anomalies first.
fn class_indices(labels: &[bool]) -> [Vec<usize>; 2] {
    let mut anomalies = Vec::new();
    let mut inliers = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l {
            anomalies.push(i);
        } else {
            inliers.push(i);
        }
    }
    [anomalies, inliers]
}

/// Splits each class independently; returns sorted `(train, test)` indices.
pub fn stratified_split_indices(
    ds: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    check_fraction("test_fraction", test_fraction)?;
    let labels = ds.require_labels()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (mut members, label) in class_indices(labels).into_iter().zip([1u8, 0]) {
        if members.len() < 2 {
            return Err(Error::ClassTooSmall {
                label,
                count: members.len(),
                required: 2,
            });
        }
        members.shuffle(&mut rng);
        let n_test =
            ((test_fraction * members.len() as f64).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Contamination-preserving train/test split.
pub fn stratified_split(
    ds: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, test) = stratified_split_indices(ds, spec.test_fraction, spec.seed)?;
    Ok((ds.select(&train), ds.select(&test)))
}

/// Stratified subsample of `fraction` of the rows. The result must keep at
/// least one anomaly and one inlier.
pub fn sample_labeled_fraction(
    train: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    check_fraction("labeled fraction", fraction)?;
    let labels = train.require_labels()?;
    let [anomalies, inliers] = class_indices(labels);
    if anomalies.is_empty() {
        return Err(Error::NoPositives);
    }
    if inliers.is_empty() {
        return Err(Error::NoNegatives);
    }
    if fraction == 1.0 {
        return Ok(train.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for (mut members, missing) in [(anomalies, "anomaly"), (inliers, "inlier")] {
        let k = (fraction * members.len() as f64).round() as usize;
        if k == 0 {
            return Err(Error::FractionTooSmall {
                fraction,
                rows: train.n_rows(),
                missing,
            });
        }
        members.shuffle(&mut rng);
        picked.extend_from_slice(&members[..k]);
    }
    picked.sort_unstable();
    Ok(train.select(&picked))
}
