use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("shift operator is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is identically zero: {0}")]
    ZeroMatrix(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("Hermite degree {0} exceeds the supported maximum {1}")]
    DegreeOverflow(usize, usize),
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("non-finite integrand value at node {0}")]
    NonFinite(f64),
    #[error("series truncation residual {residual:e} above tolerance {tol:e} at L = {l}")]
    Truncation { residual: f64, tol: f64, l: usize },
    #[error("no real root of sum_k s^k = {gamma} for K = {k}")]
    NoRealRoot { gamma: f64, k: usize },
    #[error("negative target eigenvalue {0} has no real square root")]
    NegativeEigenvalue(f64),
    #[error("spectral radius {0} of the transition matrix is not below 1")]
    NonStationary(f64),
    #[error("series of length {have} too short: need {need}")]
    InsufficientLength { have: usize, need: usize },
    #[error("training diverged at epoch {0}")]
    Divergence(usize),
    #[error("learning rate regime violated: eta * lambda_max = {0}")]
    Regime(f64),
    #[error("operator norm {norm} exceeds the bound nu = {nu}")]
    Precondition { norm: f64, nu: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("csv row {row}, column {col}: {msg}")]
    Csv { row: usize, col: usize, msg: String },
    #[error("alignment is zero")]
    ZeroAlignment,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
