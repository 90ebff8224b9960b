use thiserror::Error;

use crate::pipeline::PipelineReport;

pub type Result<T, E = SapError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SapError {
    #[error("entry ({row}, {col}) lies outside the band of half-bandwidth {k}")]
    OutOfBand { row: usize, col: usize, k: usize },

    #[error("duplicate entry ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },

    #[error("index ({row}, {col}) out of range for a {n}x{n} matrix")]
    IndexOutOfRange { row: usize, col: usize, n: usize },

    #[error(
        "{requested} partitions violate N_i >= 2K for N = {n}, K = {k}; largest feasible count is {max_feasible}"
    )]
    PartitionTooLarge {
        requested: usize,
        max_feasible: usize,
        n: usize,
        k: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{variant} factors were not computed for partition {partition}")]
    VariantNotFactored {
        partition: usize,
        variant: &'static str,
    },

    #[error("matrix is structurally singular (deficient rows: {rows:?})")]
    StructurallySingular { rows: Vec<usize> },

    #[error("preconditioner construction failed at interface {interface}: {reason}")]
    PrecondConstruction { interface: usize, reason: String },

    #[error("Krylov iteration did not converge ({reason}); relative residual {residual:e}")]
    NotConverged {
        reason: String,
        residual: f64,
        report: Box<PipelineReport>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SapError {
    /// Name of the pipeline stage that raised the error, used for failure
    /// taxonomies in benchmark summaries.
    pub fn stage(&self) -> &'static str {
        match self {
            SapError::StructurallySingular { .. } => "DB",
            SapError::PrecondConstruction { .. } => "precond",
            SapError::NotConverged { .. } => "Krylov",
            SapError::Parse { .. } | SapError::Io(_) | SapError::Json(_) => "io",
            SapError::PartitionTooLarge { .. } => "layout",
            SapError::OutOfBand { .. } => "assembly",
            _ => "input",
        }
    }
}
