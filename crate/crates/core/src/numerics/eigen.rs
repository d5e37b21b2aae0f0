//! Eigendecomposition of small nonsymmetric real matrices.
//!
//! The matrix is reduced to upper Hessenberg form with Householder
//! reflections, driven to real Schur form by the Francis double-shift QR
//! iteration, and eigenvectors are recovered by back-substitution on the
//! quasi-triangular factor. The structure follows the EISPACK `orthes`/`hqr2`
//! pair (via the public-domain JAMA translation).

use nalgebra::Complex;

use super::svd::sorted_svd;
use super::{check_real, ComplexMatrix, LinalgError, RealMatrix};

/// Per-eigenvalue QR sweep budget before giving up.
const MAX_SWEEPS_PER_EIGENVALUE: usize = 60;

#[derive(Debug, Clone)]
pub struct ComplexEigenSystem {
    pub eigenvalues: Vec<Complex<f64>>,
    /// Unit 2-norm eigenvectors; column `j` pairs with `eigenvalues[j]`.
    pub eigenvectors: ComplexMatrix,
    /// 2-norm condition number of the eigenvector matrix (`inf` if singular).
    pub condition_estimate: f64,
}

impl ComplexEigenSystem {
    /// `max_j ‖A v_j − λ_j v_j‖₂`.
    pub fn max_residual(&self, a: &RealMatrix) -> f64 {
        let ac = super::to_complex(a);
        (0..self.eigenvalues.len())
            .map(|j| {
                let v = self.eigenvectors.column(j);
                (&ac * v - v * self.eigenvalues[j]).norm()
            })
            .fold(0.0, f64::max)
    }
}

pub fn eig_nonsymmetric(a: &RealMatrix) -> Result<ComplexEigenSystem, LinalgError> {
    check_real("eig_nonsymmetric", a)?;
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare {
            op: "eig_nonsymmetric",
            rows: n,
            cols: a.ncols(),
        });
    }

    let mut h = a.clone();
    let mut v = RealMatrix::identity(n, n);
    reduce_to_hessenberg(&mut h, &mut v);
    let (re, im) = schur_and_vectors(&mut h, &mut v).ok_or(LinalgError::NoConvergence {
        op: "eig_nonsymmetric",
        rows: n,
        cols: n,
    })?;

    let mut eigenvalues = Vec::with_capacity(n);
    let mut vectors = ComplexMatrix::zeros(n, n);
    let mut j = 0;
    while j < n {
        if im[j] == 0.0 {
            eigenvalues.push(Complex::new(re[j], 0.0));
            for i in 0..n {
                vectors[(i, j)] = Complex::new(v[(i, j)], 0.0);
            }
            j += 1;
        } else {
            // Columns j, j+1 hold the real and imaginary parts for re + i·im[j].
            eigenvalues.push(Complex::new(re[j], im[j]));
            eigenvalues.push(Complex::new(re[j + 1], im[j + 1]));
            for i in 0..n {
                let (x, y) = (v[(i, j)], v[(i, j + 1)]);
                vectors[(i, j)] = Complex::new(x, y);
                vectors[(i, j + 1)] = Complex::new(x, -y);
            }
            j += 2;
        }
    }
    for mut col in vectors.column_iter_mut() {
        normalize_phase(col.as_mut_slice());
    }

    let condition_estimate = match sorted_svd(vectors.clone()) {
        Some((_, s, _)) => {
            let s_min = s[s.len() - 1];
            if s_min > 0.0 {
                (s[0] / s_min).max(1.0)
            } else {
                f64::INFINITY
            }
        }
        None => f64::INFINITY,
    };

    Ok(ComplexEigenSystem {
        eigenvalues,
        eigenvectors: vectors,
        condition_estimate,
    })
}

/// Scale to unit 2-norm and rotate so the largest-modulus entry is real positive.
fn normalize_phase(col: &mut [Complex<f64>]) {
    let norm = col.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    let pivot = col
        .iter()
        .copied()
        .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
        .unwrap_or(Complex::new(1.0, 0.0));
    let phase = pivot.conj() / pivot.norm();
    for c in col.iter_mut() {
        *c = *c * phase / norm;
    }
}

/// Householder similarity reduction `A = V H Vᵀ` with `H` upper Hessenberg.
fn reduce_to_hessenberg(h: &mut RealMatrix, v: &mut RealMatrix) {
    let n = h.nrows();
    if n < 3 {
        return;
    }
    let high = n - 1;
    let mut ort = vec![0.0; n];

    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[(i, m - 1)].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[(i, m - 1)] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        for j in m..n {
            let f: f64 = (m..=high).rev().map(|i| ort[i] * h[(i, j)]).sum::<f64>() / hh;
            for i in m..=high {
                h[(i, j)] -= f * ort[i];
            }
        }
        for i in 0..=high {
            let f: f64 = (m..=high).rev().map(|j| ort[j] * h[(i, j)]).sum::<f64>() / hh;
            for j in m..=high {
                h[(i, j)] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[(m, m - 1)] = scale * g;
    }

    for m in (1..high).rev() {
        if h[(m, m - 1)] == 0.0 {
            continue;
        }
        for i in m + 1..=high {
            ort[i] = h[(i, m - 1)];
        }
        for j in m..=high {
            let mut g: f64 = (m..=high).map(|i| ort[i] * v[(i, j)]).sum();
            // Two divisions avoid underflow in the product.
            g = (g / ort[m]) / h[(m, m - 1)];
            for i in m..=high {
                v[(i, j)] += g * ort[i];
            }
        }
    }
}

fn cdiv(xr: f64, xi: f64, yr: f64, yi: f64) -> (f64, f64) {
    if yr.abs() > yi.abs() {
        let r = yi / yr;
        let d = yr + r * yi;
        ((xr + r * xi) / d, (xi - r * xr) / d)
    } else {
        let r = yr / yi;
        let d = yi + r * yr;
        ((r * xr + xi) / d, (r * xi - xr) / d)
    }
}

/// Francis QR on Hessenberg `h`, accumulating into `v`, followed by
/// back-substitution. On return `v` holds the (real-packed) eigenvectors.
/// Returns `(re, im)` eigenvalue parts, or `None` if the sweep budget ran out.
#[allow(clippy::many_single_char_names, unused_assignments)]
fn schur_and_vectors(h: &mut RealMatrix, v: &mut RealMatrix) -> Option<(Vec<f64>, Vec<f64>)> {
    let nn = h.nrows();
    let mut d = vec![0.0; nn];
    let mut e = vec![0.0; nn];
    let eps = f64::EPSILON;
    let low = 0usize;
    let high = nn - 1;
    let mut exshift = 0.0;
    let (mut p, mut q, mut r, mut s, mut z) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut t, mut w, mut x, mut y);

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[(i, j)].abs();
        }
    }

    if norm == 0.0 {
        // Zero matrix: all eigenvalues vanish and V = I already spans the eigenvectors.
        return Some((d, e));
    }

    let mut n = nn as isize - 1;
    let mut iter = 0usize;
    while n >= low as isize {
        let nu = n as usize;
        let mut l = nu;
        while l > low {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            h[(nu, nu)] += exshift;
            d[nu] = h[(nu, nu)];
            e[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(nu - 1, nu - 1)] += exshift;
            x = h[(nu, nu)];

            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                d[nu - 1] = x + z;
                d[nu] = d[nu - 1];
                if z != 0.0 {
                    d[nu] = x - w / z;
                }
                e[nu - 1] = 0.0;
                e[nu] = 0.0;
                x = h[(nu, nu - 1)];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;

                for j in nu - 1..nn {
                    z = h[(nu - 1, j)];
                    h[(nu - 1, j)] = q * z + p * h[(nu, j)];
                    h[(nu, j)] = q * h[(nu, j)] - p * z;
                }
                for i in 0..=nu {
                    z = h[(i, nu - 1)];
                    h[(i, nu - 1)] = q * z + p * h[(i, nu)];
                    h[(i, nu)] = q * h[(i, nu)] - p * z;
                }
                for i in low..=high {
                    z = v[(i, nu - 1)];
                    v[(i, nu - 1)] = q * z + p * v[(i, nu)];
                    v[(i, nu)] = q * v[(i, nu)] - p * z;
                }
            } else {
                d[nu - 1] = x + p;
                d[nu] = x + p;
                e[nu - 1] = z;
                e[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            x = h[(nu, nu)];
            y = 0.0;
            w = 0.0;
            if l < nu {
                y = h[(nu - 1, nu - 1)];
                w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            }

            // Exceptional shifts break rare stagnation cycles.
            if iter == 10 {
                exshift += x;
                for i in low..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in low..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }

            iter += 1;
            if iter > MAX_SWEEPS_PER_EIGENVALUE {
                return None;
            }

            let mut m = nu - 2;
            loop {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[(m, m - 1)].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in m + 2..=nu {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            for k in m..nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s == 0.0 {
                    continue;
                }
                if k != m {
                    h[(k, k - 1)] = -s * x;
                } else if l != m {
                    h[(k, k - 1)] = -h[(k, k - 1)];
                }
                p += s;
                x = p / s;
                y = q / s;
                z = r / s;
                q /= p;
                r /= p;

                for j in k..nn {
                    p = h[(k, j)] + q * h[(k + 1, j)];
                    if notlast {
                        p += r * h[(k + 2, j)];
                        h[(k + 2, j)] -= p * z;
                    }
                    h[(k, j)] -= p * x;
                    h[(k + 1, j)] -= p * y;
                }
                for i in 0..=nu.min(k + 3) {
                    p = x * h[(i, k)] + y * h[(i, k + 1)];
                    if notlast {
                        p += z * h[(i, k + 2)];
                        h[(i, k + 2)] -= p * r;
                    }
                    h[(i, k)] -= p;
                    h[(i, k + 1)] -= p * q;
                }
                for i in low..=high {
                    p = x * v[(i, k)] + y * v[(i, k + 1)];
                    if notlast {
                        p += z * v[(i, k + 2)];
                        v[(i, k + 2)] -= p * r;
                    }
                    v[(i, k)] -= p;
                    v[(i, k + 1)] -= p * q;
                }
            }
        }
    }

    // Back-substitution on the quasi-triangular Schur factor.
    for n in (0..nn).rev() {
        p = d[n];
        q = e[n];
        if q == 0.0 {
            let mut l = n;
            h[(n, n)] = 1.0;
            for i in (0..n).rev() {
                w = h[(i, i)] - p;
                r = (l..=n).map(|j| h[(i, j)] * h[(j, n)]).sum();
                if e[i] < 0.0 {
                    z = w;
                    s = r;
                } else {
                    l = i;
                    if e[i] == 0.0 {
                        h[(i, n)] = if w != 0.0 { -r / w } else { -r / (eps * norm) };
                    } else {
                        x = h[(i, i + 1)];
                        y = h[(i + 1, i)];
                        q = (d[i] - p) * (d[i] - p) + e[i] * e[i];
                        t = (x * s - z * r) / q;
                        h[(i, n)] = t;
                        h[(i + 1, n)] = if x.abs() > z.abs() {
                            (-r - w * t) / x
                        } else {
                            (-s - y * t) / z
                        };
                    }
                    t = h[(i, n)].abs();
                    if (eps * t) * t > 1.0 {
                        for j in i..=n {
                            h[(j, n)] /= t;
                        }
                    }
                }
            }
        } else if q < 0.0 {
            let mut l = n - 1;
            if h[(n, n - 1)].abs() > h[(n - 1, n)].abs() {
                h[(n - 1, n - 1)] = q / h[(n, n - 1)];
                h[(n - 1, n)] = -(h[(n, n)] - p) / h[(n, n - 1)];
            } else {
                let (cr, ci) = cdiv(0.0, -h[(n - 1, n)], h[(n - 1, n - 1)] - p, q);
                h[(n - 1, n - 1)] = cr;
                h[(n - 1, n)] = ci;
            }
            h[(n, n - 1)] = 0.0;
            h[(n, n)] = 1.0;
            for i in (0..n.saturating_sub(1)).rev() {
                let mut ra = 0.0;
                let mut sa = 0.0;
                for j in l..=n {
                    ra += h[(i, j)] * h[(j, n - 1)];
                    sa += h[(i, j)] * h[(j, n)];
                }
                w = h[(i, i)] - p;
                if e[i] < 0.0 {
                    z = w;
                    r = ra;
                    s = sa;
                } else {
                    l = i;
                    if e[i] == 0.0 {
                        let (cr, ci) = cdiv(-ra, -sa, w, q);
                        h[(i, n - 1)] = cr;
                        h[(i, n)] = ci;
                    } else {
                        x = h[(i, i + 1)];
                        y = h[(i + 1, i)];
                        let mut vr = (d[i] - p) * (d[i] - p) + e[i] * e[i] - q * q;
                        let vi = (d[i] - p) * 2.0 * q;
                        if vr == 0.0 && vi == 0.0 {
                            vr = eps * norm * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                        }
                        let (cr, ci) =
                            cdiv(x * r - z * ra + q * sa, x * s - z * sa - q * ra, vr, vi);
                        h[(i, n - 1)] = cr;
                        h[(i, n)] = ci;
                        if x.abs() > z.abs() + q.abs() {
                            h[(i + 1, n - 1)] = (-ra - w * h[(i, n - 1)] + q * h[(i, n)]) / x;
                            h[(i + 1, n)] = (-sa - w * h[(i, n)] - q * h[(i, n - 1)]) / x;
                        } else {
                            let (cr, ci) =
                                cdiv(-r - y * h[(i, n - 1)], -s - y * h[(i, n)], z, q);
                            h[(i + 1, n - 1)] = cr;
                            h[(i + 1, n)] = ci;
                        }
                    }
                    t = h[(i, n - 1)].abs().max(h[(i, n)].abs());
                    if (eps * t) * t > 1.0 {
                        for j in i..=n {
                            h[(j, n - 1)] /= t;
                            h[(j, n)] /= t;
                        }
                    }
                }
            }
        }
    }

    // Back-transform to eigenvectors of the original matrix.
    for j in (low..nn).rev() {
        for i in low..=high {
            z = (low..=j.min(high)).map(|k| v[(i, k)] * h[(k, j)]).sum();
            v[(i, j)] = z;
        }
    }
    Some((d, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sorted(mut v: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn rotation_has_imaginary_pair() {
        let a = RealMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let sys = eig_nonsymmetric(&a).unwrap();
        let ev = sorted(sys.eigenvalues.clone());
        assert!((ev[0] - Complex::new(0.0, -1.0)).norm() < 1e-14);
        assert!((ev[1] - Complex::new(0.0, 1.0)).norm() < 1e-14);
        assert!(sys.max_residual(&a) < 1e-12);
    }

    #[test]
    fn diagonal_eigenvalues() {
        let a = RealMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        let sys = eig_nonsymmetric(&a).unwrap();
        let ev = sorted(sys.eigenvalues.clone());
        assert!((ev[0].re - 0.5).abs() < 1e-15 && ev[0].im == 0.0);
        assert!((ev[1].re - 1.0).abs() < 1e-15 && ev[1].im == 0.0);
        assert!((sys.condition_estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn companion_double_root() {
        // z² − z + 0.25 = (z − 0.5)²; companion matrix [[1, −0.25], [1, 0]].
        let a = RealMatrix::from_row_slice(2, 2, &[1.0, -0.25, 1.0, 0.0]);
        let sys = eig_nonsymmetric(&a).unwrap();
        for ev in &sys.eigenvalues {
            assert!((ev - Complex::new(0.5, 0.0)).norm() < 1e-6, "{ev}");
        }
    }

    #[test]
    fn one_by_one_and_zero_matrices() {
        let sys = eig_nonsymmetric(&RealMatrix::from_element(1, 1, -3.0)).unwrap();
        assert_eq!(sys.eigenvalues, vec![Complex::new(-3.0, 0.0)]);
        let sys = eig_nonsymmetric(&RealMatrix::zeros(3, 3)).unwrap();
        assert!(sys.eigenvalues.iter().all(|l| l.norm() == 0.0));
        assert!(sys.condition_estimate.is_finite());
    }

    #[test]
    fn rejects_rectangular() {
        assert!(matches!(
            eig_nonsymmetric(&RealMatrix::zeros(2, 3)),
            Err(LinalgError::NotSquare { .. })
        ));
    }

    #[test]
    fn random_matrices_residuals_and_conjugate_closure() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [3, 4, 7, 12, 30, 80] {
            let a = RealMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let sys = eig_nonsymmetric(&a).unwrap();
            assert_eq!(sys.eigenvalues.len(), n);
            assert!(sys.condition_estimate >= 1.0);
            if sys.condition_estimate < 1e6 {
                let norm_a = a.clone().singular_values().max();
                let res = sys.max_residual(&a);
                assert!(res < 1e-8 * norm_a.max(1.0), "n={n} residual {res}");
            }
            for col in sys.eigenvectors.column_iter() {
                assert!((col.norm() - 1.0).abs() < 1e-12);
            }
            for ev in &sys.eigenvalues {
                if ev.im != 0.0 {
                    assert!(sys.eigenvalues.iter().any(|o| (o - ev.conj()).norm() < 1e-12));
                }
            }
        }
    }

    #[test]
    fn eigenvalues_match_trace_and_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = RealMatrix::from_fn(6, 6, |_, _| rng.random_range(-2.0..2.0));
        let sys = eig_nonsymmetric(&a).unwrap();
        let sum: Complex<f64> = sys.eigenvalues.iter().sum();
        let prod: Complex<f64> = sys.eigenvalues.iter().product();
        assert!((sum.re - a.trace()).abs() < 1e-10 && sum.im.abs() < 1e-10);
        assert!((prod.re - a.determinant()).abs() < 1e-9 && prod.im.abs() < 1e-9);
    }
}
