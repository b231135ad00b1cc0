use thiserror::Error;

/// Errors raised by the simulation, tomography and testing routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid system size: {0}")]
    InvalidSystemSize(String),
    #[error("invalid operator: {0}")]
    InvalidOperator(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("observable is not Hermitian (imaginary part {0:e})")]
    NonHermitianObservable(f64),
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("matrix is not unitary (deviation {0:e})")]
    InvalidUnitary(f64),
    #[error("term spans {0} sites, more than the supported MPO range")]
    UnsupportedRange(usize),
    #[error("unsupported group: {0}")]
    UnsupportedGroup(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("unsupported group size {0}")]
    UnsupportedGroupSize(usize),
    #[error("cannot build an estimate from zero snapshots")]
    EmptyEstimate,
    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(String),
    #[error("unsupported copy count: {0}")]
    UnsupportedCopyCount(String),
    #[error("unsupported size: {0}")]
    UnsupportedSize(String),
    #[error("invalid copy count: {0}")]
    InvalidCopyCount(String),
    #[error("invalid probability {0}")]
    InvalidProbability(f64),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
