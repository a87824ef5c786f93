//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error classes, used by front ends to map failures to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Invalid configuration (bit widths, condition numbers, thresholds).
    Config,
    /// Invalid input data (datasets, labels, degenerate geometry).
    Data,
    /// Numerical failure in the linear-algebra layer.
    Numerical,
    /// Failure while simulating the quantum pipeline.
    Pipeline,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix not symmetric: entries ({row},{col}) and ({col},{row}) differ by {delta:.3e}")]
    NotSymmetric { row: usize, col: usize, delta: f64 },

    #[error("matrix not positive semidefinite: smallest eigenvalue {min_eigenvalue:.3e}")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("matrix entirely below condition floor")]
    BelowConditionFloor,

    #[error("degenerate within-class scatter: all deviations vanish and alpha = 0")]
    DegenerateWithinScatter,

    #[error("no between-class variance: all class centroids equal the global mean")]
    NoBetweenClassVariance,

    #[error("zero Frobenius norm: dataset carries no amplitude to encode")]
    ZeroFrobeniusNorm,

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("matrix not unitary: residual {residual:.3e}")]
    NotUnitary { residual: f64 },

    #[error("unknown register {name:?}")]
    UnknownRegister { name: String },

    #[error("register layout invalid: {reason}")]
    InvalidLayout { reason: String },

    #[error("post-selection on null branch: outcome probability {probability:.3e}")]
    NullPostSelection { probability: f64 },

    #[error("register {name:?} not separable; discard would decohere (residual {residual:.3e})")]
    EntangledDiscard { name: String, residual: f64 },

    #[error(
        "branch ambiguity: indistinguishable eigenvalues at {bits} bits \
         (patterns of eigenvalues {first} and {second} coincide); increase the eigenvalue register width"
    )]
    BranchAmbiguity { bits: usize, first: usize, second: usize },

    #[error(
        "index register too narrow: Q = {q} index qubits exceed the L = {l} qubit \
         eigenvalue register; Q <= L is required"
    )]
    IndexWidthExceeded { q: usize, l: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("circuit invalid: {0}")]
    InvalidCircuit(String),

    #[error("qubit budget exceeded: {requested} qubits requested, cap is {cap}")]
    QubitCapExceeded { requested: usize, cap: usize },

    #[error("pipeline stage {stage:?} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach a pipeline stage label, preserving the underlying category.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NotSymmetric { .. }
            | Error::NotPositiveSemidefinite { .. }
            | Error::BelowConditionFloor
            | Error::DimensionMismatch { .. }
            | Error::NotUnitary { .. } => ErrorCategory::Numerical,

            Error::DegenerateWithinScatter
            | Error::NoBetweenClassVariance
            | Error::ZeroFrobeniusNorm
            | Error::InvalidDataset(_) => ErrorCategory::Data,

            Error::IndexWidthExceeded { .. }
            | Error::InvalidConfig(_)
            | Error::QubitCapExceeded { .. } => ErrorCategory::Config,

            Error::UnknownRegister { .. }
            | Error::InvalidLayout { .. }
            | Error::NullPostSelection { .. }
            | Error::EntangledDiscard { .. }
            | Error::BranchAmbiguity { .. }
            | Error::InvalidCircuit(_) => ErrorCategory::Pipeline,

            Error::Stage { source, .. } => source.category(),
        }
    }
}
