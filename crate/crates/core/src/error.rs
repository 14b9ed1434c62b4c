use std::path::PathBuf;

use thiserror::Error;

use crate::store::FormatError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("input is empty")]
    EmptyInput,

    #[error("need at least {required} rows, got {got}")]
    TooFewRows { required: usize, got: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("prefix length {prefix} out of range 1..={trees}")]
    PrefixOutOfRange { prefix: usize, trees: usize },

    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },

    #[error("non-finite score at position {0}")]
    NonFiniteScore(usize),

    #[error("labeled data contains no anomalies")]
    NoPositives,

    #[error("labeled data contains no inliers")]
    NoNegatives,

    #[error("dataset `{0}` has no labels")]
    Unlabeled(String),

    #[error("class {label} has {count} members, need at least {required}")]
    ClassTooSmall {
        label: u8,
        count: usize,
        required: usize,
    },

    #[error("labeled fraction {fraction} of {rows} rows leaves no {missing}")]
    FractionTooSmall {
        fraction: f64,
        rows: usize,
        missing: &'static str,
    },

    #[error("{path}: expected final column named `label`")]
    MissingLabelColumn { path: PathBuf },

    #[error("{path}: row {row}, column {col} (`{column}`): cannot parse `{value}` as a number")]
    ParseCell {
        path: PathBuf,
        row: usize,
        col: usize,
        column: String,
        value: String,
    },

    #[error("{path}: row {row}: label must be 0 or 1, got `{value}`")]
    InvalidLabel {
        path: PathBuf,
        row: usize,
        value: String,
    },

    #[error("{path}: row {row} has {got} fields, header has {expected}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("{path}: file has no data rows")]
    EmptyFile { path: PathBuf },

    #[error("feature index {0} does not fit the 16-bit model format")]
    FeatureIndexOverflow(usize),

    #[error("malformed model: {0}")]
    Format(#[from] FormatError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by missing or unusable anomaly labels.
    pub fn is_label_contract(&self) -> bool {
        matches!(
            self,
            Error::NoPositives
                | Error::NoNegatives
                | Error::Unlabeled(_)
                | Error::ClassTooSmall { .. }
                | Error::FractionTooSmall { .. }
        )
    }
}
