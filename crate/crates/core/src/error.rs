use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across ingestion, pairing, metrics and modeling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),

    #[error("header mismatch: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },

    #[error("duplicate image_id `{0}`")]
    DuplicateImage(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("score {score} for matcher `{matcher}` outside [{min}, {max}] (gallery `{gallery}`, probe `{probe}`)")]
    ScoreOutOfRange {
        matcher: String,
        score: f64,
        min: f64,
        max: f64,
        gallery: String,
        probe: String,
    },

    #[error("unknown matcher `{0}`")]
    UnknownMatcher(String),

    #[error("{count} pair(s) lack a score for matcher `{matcher}`")]
    IncompleteScores { matcher: String, count: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("target FMR {target} unattainable: FMR at strictest observed threshold is {strictest_fmr}")]
    CalibrationInfeasible { target: f64, strictest_fmr: f64 },

    #[error("design matrix is rank deficient; collinear column(s): {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("factor `{factor}` has no rows at level `{level}`")]
    FactorLevelAbsent { factor: String, level: String },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("outcome has zero variance")]
    ConstantOutcome,

    #[error("models are not comparable: {0}")]
    NotNested(String),

    #[error("infeasible synthetic configuration: {0}")]
    InfeasibleConfig(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
