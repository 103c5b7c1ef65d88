//! Crate-wide error type.

use thiserror::Error;

use crate::fairer::am::HStepSolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: matrix is empty")]
    EmptyMatrix { context: &'static str },

    #[error("{context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("entry {value} at row {row}, column {col} must be finite and non-negative")]
    InvalidEntry { row: usize, col: usize, value: f64 },

    #[error("{context}: value {value} at index {index} is not usable here")]
    InvalidValue {
        context: &'static str,
        index: usize,
        value: f64,
    },

    #[error("group '{label}' is all zeros; every group block needs a positive norm")]
    DegenerateGroup { label: String },

    #[error("group label '{label}' appears more than once")]
    DuplicateLabel { label: String },

    #[error("feature column {index} is all zeros and cannot be normalized")]
    DegenerateFeature { index: usize },

    #[error("design matrix column {col} is all zeros; the least-squares problem is ill posed")]
    ZeroDesignColumn { col: usize },

    #[error("{context}: input is empty")]
    EmptyInput { context: &'static str },

    #[error("index {index} is out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("baselines were computed at rank {baseline}, the fit requested rank {requested}")]
    BaselineRankMismatch { baseline: usize, requested: usize },

    #[error("baselines cover {baseline} groups, the data has {data}")]
    BaselineGroupMismatch { baseline: usize, data: usize },

    #[error(
        "min-max step did not reach tolerance within {iterations} iterations \
         (best objective {best_objective:.6e})"
    )]
    MinMaxStalled {
        iterations: usize,
        best_objective: f64,
        best: Box<HStepSolution>,
    },

    #[error("numerical breakdown in {context}")]
    Numerical { context: &'static str },

    #[error("{path} line {line}, column '{column}': {problem}")]
    CsvCell {
        path: String,
        line: u64,
        column: String,
        problem: String,
    },

    #[error("{path}: column '{column}' not found")]
    CsvColumn { path: String, column: String },

    #[error("{path}: {problem}")]
    CsvFile { path: String, problem: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
