//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised by the numerical core and IO layers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix is not symmetric: max asymmetry {0:e}")]
    NotSymmetric(f64),
    #[error("Jacobi eigensolver did not converge within {sweeps} sweeps (off-diagonal norm {offdiag:e})")]
    NoConvergence { sweeps: usize, offdiag: f64 },
    #[error("Möbius pole at eigenvalue index {index}: |c λ + d| = {magnitude:e}")]
    Pole { index: usize, magnitude: f64 },
    #[error("degenerate Möbius filter at index {index}: |ad - bc| = {det_magnitude:e}")]
    DegenerateFilter { index: usize, det_magnitude: f64 },
    #[error("Möbius map at index {index} is affine (|c| = {c_magnitude:e}); fixed-point formula requires c != 0")]
    AffineMap { index: usize, c_magnitude: f64 },
    #[error("invalid topology: {0}")]
    Topology(String),
    #[error("isolated vertex {0} has degree 0")]
    IsolatedVertex(usize),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation error at line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("degenerate pose: total bone length {0:e} mm")]
    DegeneratePose(f64),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("topology hash mismatch: checkpoint {checkpoint:016x}, active {active:016x}")]
    TopologyMismatch { checkpoint: u64, active: u64 },
    #[error("numerical error in batch {batch}: {message}")]
    Numerical { batch: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
