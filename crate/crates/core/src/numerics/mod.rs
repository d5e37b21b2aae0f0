//! Dense linear algebra used by the DMD fit.
//!
//! Everything here is deterministic and operates on small dense matrices
//! (at most a few hundred rows). Inputs are validated for finiteness up front
//! so that failures name the offending operation and matrix size instead of
//! surfacing as NaNs further down the pipeline.

mod eigen;
mod lstsq;
mod svd;

pub use eigen::{eig_nonsymmetric, ComplexEigenSystem};
pub use lstsq::{least_squares_solve, least_squares_solve_real, LeastSquares};
pub use svd::{pinv_rank, thin_svd, ThinSvd};

use nalgebra::{Complex, DMatrix, DVector};

/// Real dense matrix. Row/column semantics follow nalgebra (indexing is `(row, col)`).
pub type RealMatrix = DMatrix<f64>;
pub type ComplexMatrix = DMatrix<Complex<f64>>;
pub type ComplexVector = DVector<Complex<f64>>;

/// Default relative cutoff for singular values in rank decisions.
pub const DEFAULT_RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("{op}: matrix must have at least one row and one column (got {rows}x{cols})")]
    Empty {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{op}: non-finite entry in {rows}x{cols} input")]
    NonFinite {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{op}: expected a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{op}: iteration did not converge for {rows}x{cols} matrix")]
    NoConvergence {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{op}: dimension mismatch ({detail})")]
    DimensionMismatch { op: &'static str, detail: String },
}

pub(crate) fn check_real(op: &'static str, m: &RealMatrix) -> Result<(), LinalgError> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(LinalgError::Empty { op, rows, cols });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite { op, rows, cols });
    }
    Ok(())
}

pub(crate) fn check_complex(op: &'static str, m: &ComplexMatrix) -> Result<(), LinalgError> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(LinalgError::Empty { op, rows, cols });
    }
    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(LinalgError::NonFinite { op, rows, cols });
    }
    Ok(())
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &RealMatrix) -> Result<f64, LinalgError> {
    Ok(thin_svd(m)?.singular_values.iter().copied().next().unwrap_or(0.0))
}

pub fn to_complex(m: &RealMatrix) -> ComplexMatrix {
    m.map(|v| Complex::new(v, 0.0))
}
