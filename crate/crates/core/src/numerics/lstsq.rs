use nalgebra::{ComplexField, DMatrix, DVector};

use super::svd::{pinv_rank, sorted_svd};
use super::{
    check_complex, check_real, ComplexMatrix, ComplexVector, LinalgError, RealMatrix,
    DEFAULT_RANK_RTOL,
};

/// Options for SVD-based least squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeastSquares {
    /// Singular values at or below `rtol * s_max` are treated as zero.
    pub rtol: f64,
    /// Permit wide systems (fewer rows than columns); the minimum-norm solution is returned.
    pub allow_underdetermined: bool,
}

impl Default for LeastSquares {
    fn default() -> Self {
        Self {
            rtol: DEFAULT_RANK_RTOL,
            allow_underdetermined: false,
        }
    }
}

impl LeastSquares {
    pub fn min_norm() -> Self {
        Self {
            allow_underdetermined: true,
            ..Self::default()
        }
    }
}

/// `argmin ‖A x − b‖₂` over complex vectors, minimum-norm on rank deficiency.
pub fn least_squares_solve(
    a: &ComplexMatrix,
    b: &ComplexVector,
    opts: LeastSquares,
) -> Result<ComplexVector, LinalgError> {
    check_complex("least_squares_solve", a)?;
    solve(a, b, opts)
}

/// Real counterpart of [`least_squares_solve`].
pub fn least_squares_solve_real(
    a: &RealMatrix,
    b: &DVector<f64>,
    opts: LeastSquares,
) -> Result<DVector<f64>, LinalgError> {
    check_real("least_squares_solve", a)?;
    solve(a, b, opts)
}

fn solve<T: ComplexField<RealField = f64>>(
    a: &DMatrix<T>,
    b: &DVector<T>,
    opts: LeastSquares,
) -> Result<DVector<T>, LinalgError> {
    let (rows, cols) = a.shape();
    if b.len() != rows {
        return Err(LinalgError::DimensionMismatch {
            op: "least_squares_solve",
            detail: format!("A is {rows}x{cols} but b has length {}", b.len()),
        });
    }
    if rows < cols && !opts.allow_underdetermined {
        return Err(LinalgError::DimensionMismatch {
            op: "least_squares_solve",
            detail: format!(
                "A is {rows}x{cols} (underdetermined); request a minimum-norm solution explicitly"
            ),
        });
    }
    let (u, s, v) = sorted_svd(a.clone()).ok_or(LinalgError::NoConvergence {
        op: "least_squares_solve",
        rows,
        cols,
    })?;
    let rank = pinv_rank(s.as_slice(), opts.rtol);
    let mut x = DVector::<T>::zeros(cols);
    for k in 0..rank {
        let coeff = u.column(k).dotc(b).unscale(s[k]);
        x.axpy(coeff, &v.column(k), T::one());
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Complex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_returns_rhs() {
        let b = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let x = least_squares_solve_real(&RealMatrix::identity(3, 3), &b, LeastSquares::default())
            .unwrap();
        assert!((x - b).amax() < 1e-15);
    }

    #[test]
    fn overdetermined_mean() {
        let a = RealMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 3.0]);
        let x = least_squares_solve_real(&a, &b, LeastSquares::default()).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn residual_is_orthogonal_to_column_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = RealMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let x = least_squares_solve_real(&a, &b, LeastSquares::default()).unwrap();
        let normal = a.transpose() * (&a * &x - &b);
        assert!(normal.amax() < 1e-10, "{normal}");
    }

    #[test]
    fn complex_system_recovers_exact_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = ComplexMatrix::from_fn(7, 4, |_, _| {
            Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let x_true = ComplexVector::from_fn(4, |i, _| Complex::new(i as f64, 1.0 - i as f64));
        let b = &a * &x_true;
        let x = least_squares_solve(&a, &b, LeastSquares::default()).unwrap();
        assert!((x - x_true).norm() < 1e-12);
    }

    #[test]
    fn rank_deficient_gives_minimum_norm() {
        // Two identical columns: minimum-norm solution splits the weight evenly.
        let a = RealMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![2.0, 4.0, 0.0]);
        let x = least_squares_solve_real(&a, &b, LeastSquares::default()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn underdetermined_requires_opt_in() {
        let a = RealMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0]);
        assert!(least_squares_solve_real(&a, &b, LeastSquares::default()).is_err());
        let x = least_squares_solve_real(&a, &b, LeastSquares::min_norm()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = least_squares_solve_real(
            &RealMatrix::identity(3, 3),
            &DVector::zeros(2),
            LeastSquares::default(),
        )
        .unwrap_err();
        assert!(matches!(err, LinalgError::DimensionMismatch { .. }));
    }
}
