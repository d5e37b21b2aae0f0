use nalgebra::{ComplexField, DMatrix, DVector};

use super::{check_real, LinalgError, RealMatrix};

const SVD_MAX_ITER: usize = 10_000;

/// Thin SVD `M = U diag(s) Vᵀ` with singular values sorted in nonincreasing order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: RealMatrix,
    pub singular_values: DVector<f64>,
    pub v: RealMatrix,
}

impl ThinSvd {
    /// Number of singular values above `rtol * s_max`.
    pub fn rank(&self, rtol: f64) -> usize {
        pinv_rank(self.singular_values.as_slice(), rtol)
    }

    /// Keep only the leading `rank` triplets.
    pub fn truncate(&self, rank: usize) -> ThinSvd {
        ThinSvd {
            u: self.u.columns(0, rank).into_owned(),
            singular_values: self.singular_values.rows(0, rank).into_owned(),
            v: self.v.columns(0, rank).into_owned(),
        }
    }

    pub fn reconstruct(&self) -> RealMatrix {
        let mut us = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

/// Count of singular values (sorted nonincreasing) strictly above `rtol * s_max`.
pub fn pinv_rank(singular_values: &[f64], rtol: f64) -> usize {
    let Some(&s_max) = singular_values.first() else {
        return 0;
    };
    if s_max <= 0.0 {
        return 0;
    }
    singular_values.iter().take_while(|&&s| s > rtol * s_max).count()
}

pub fn thin_svd(m: &RealMatrix) -> Result<ThinSvd, LinalgError> {
    check_real("thin_svd", m)?;
    let (u, s, v) = sorted_svd(m.clone()).ok_or(LinalgError::NoConvergence {
        op: "thin_svd",
        rows: m.nrows(),
        cols: m.ncols(),
    })?;
    Ok(ThinSvd {
        u,
        singular_values: s,
        v,
    })
}

/// SVD of a real or complex matrix with singular values sorted nonincreasing.
/// Returns `(U, s, V)` where `V` (not `Vᴴ`) holds the right singular vectors.
pub(crate) fn sorted_svd<T: ComplexField<RealField = f64>>(
    m: DMatrix<T>,
) -> Option<(DMatrix<T>, DVector<f64>, DMatrix<T>)> {
    let svd = m.try_svd(true, true, f64::EPSILON, SVD_MAX_ITER)?;
    let u = svd.u?;
    let v = svd.v_t?.adjoint();
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    // Stable sort keeps the backend's order among ties, so results stay reproducible.
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));

    let k = order.len();
    let mut u_sorted = DMatrix::<T>::zeros(u.nrows(), k);
    let mut v_sorted = DMatrix::<T>::zeros(v.nrows(), k);
    let mut s_sorted = DVector::<f64>::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_column(dst, &v.column(src));
        s_sorted[dst] = s[src];
    }
    Some((u_sorted, s_sorted, v_sorted))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn orthonormality_error(q: &RealMatrix) -> f64 {
        let g = q.transpose() * q;
        let eye = RealMatrix::identity(g.nrows(), g.ncols());
        (g - eye).amax()
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let svd = thin_svd(&RealMatrix::identity(3, 3)).unwrap();
        assert_eq!(svd.singular_values.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_singular_values_are_sorted() {
        let m = RealMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 0.0]));
        let svd = thin_svd(&m).unwrap();
        let s = svd.singular_values.as_slice();
        assert!((s[0] - 3.0).abs() < 1e-14);
        assert!((s[1] - 2.0).abs() < 1e-14);
        assert!(s[2].abs() < 1e-14);
        assert_eq!(svd.rank(1e-10), 2);
    }

    #[test]
    fn random_reconstruction_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (rows, cols) in [(8, 5), (5, 8), (12, 12), (1, 4)] {
            let m = RealMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
            let svd = thin_svd(&m).unwrap();
            let norm = svd.singular_values[0];
            let residual = spectral_norm_dense(&(&m - svd.reconstruct()));
            assert!(residual <= 1e-10 * norm, "{rows}x{cols}: {residual}");
            assert!(orthonormality_error(&svd.u) < 1e-10);
            assert!(orthonormality_error(&svd.v) < 1e-10);
            let s = svd.singular_values.as_slice();
            assert!(s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    fn spectral_norm_dense(m: &RealMatrix) -> f64 {
        m.clone().singular_values().max()
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = RealMatrix::identity(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(
            thin_svd(&m),
            Err(LinalgError::NonFinite { rows: 2, cols: 2, .. })
        ));
    }

    #[test]
    fn rank_cutoff_is_relative() {
        assert_eq!(pinv_rank(&[10.0, 1e-5, 1e-12], 1e-10), 2);
        assert_eq!(pinv_rank(&[0.0, 0.0], 1e-10), 0);
        assert_eq!(pinv_rank(&[], 1e-10), 0);
    }
}
