//! Neural tangent kernels, alignment functionals and alignment-optimal graph
//! shift operators for graph filters and two-layer graph neural networks.
//!
//! Samples are stacked column-major: sample index outer, node index inner, so
//! a stacked vector of length `n*M` is the column-major storage of an `n x M`
//! matrix.

pub mod alignment;
pub mod data;
pub mod dataio;
pub mod error;
pub mod hermite;
pub mod linalg;
pub mod models;
pub mod ntk;
pub mod quadrature;
pub mod shiftops;
pub mod training;

pub use data::{BlockDiagShift, Dataset, NormMode, NtkMatrix, NtkProvenance, ShiftOperator, StackedData};
pub use error::{Error, Result};

/// Schema version stamped into every JSON report.
pub const SCHEMA_VERSION: u32 = 1;
