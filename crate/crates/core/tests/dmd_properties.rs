use glocal_core::dmd::{
    fit_dmd, glocal_estimate, hankel_embed, GlocalSettings, HypergradTrajectory,
};
use glocal_core::numerics::{eig_nonsymmetric, thin_svd, RealMatrix, DEFAULT_RANK_RTOL};
use nalgebra::DVector;
use proptest::prelude::*;

/// `x_{t+1} = V diag(λ) V⁻¹ x_t` with a fixed point carried by `λ_0 = 1`.
#[derive(Debug)]
struct LinearSystem {
    a: RealMatrix,
    v: RealMatrix,
    eigs: Vec<f64>,
    x0: DVector<f64>,
}

impl LinearSystem {
    fn new(decaying: &[f64], basis: &[f64], x0: &[f64]) -> Option<Self> {
        let n = decaying.len() + 1;
        let mut eigs = vec![1.0];
        eigs.extend_from_slice(decaying);
        let v = RealMatrix::from_row_slice(n, n, basis) + RealMatrix::identity(n, n) * 2.0;
        let v_inv = v.clone().try_inverse()?;
        if v.norm() * v_inv.norm() > 1e3 {
            return None;
        }
        let a = &v * RealMatrix::from_diagonal(&DVector::from_vec(eigs.clone())) * &v_inv;
        Some(Self {
            a,
            v,
            eigs,
            x0: DVector::from_column_slice(x0),
        })
    }

    fn trajectory(&self, len: usize) -> HypergradTrajectory {
        let mut steps = vec![self.x0.clone()];
        for _ in 1..len {
            let next = &self.a * steps.last().unwrap();
            steps.push(next);
        }
        HypergradTrajectory::from_steps(self.x0.len(), steps).unwrap()
    }

    /// Projection of `x0` onto the `λ = 1` eigenvector.
    fn limit(&self) -> DVector<f64> {
        let coeffs = self.v.clone().try_inverse().unwrap() * &self.x0;
        self.v.column(0) * coeffs[0]
    }
}

fn separated(mut v: Vec<f64>) -> bool {
    v.push(1.0);
    v.sort_by(f64::total_cmp);
    v.windows(2).all(|w| w[1] - w[0] > 0.05)
}

fn system() -> impl Strategy<Value = LinearSystem> {
    (
        prop::collection::vec(0.6f64..0.93, 3),
        prop::collection::vec(-0.5f64..0.5, 16),
        prop::collection::vec(0.5f64..2.0, 4),
    )
        .prop_filter("eigenvalues too close", |(d, _, _)| separated(d.clone()))
        .prop_filter_map("ill-conditioned basis", |(d, b, x)| LinearSystem::new(&d, &b, &x))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn recovers_spectrum_and_fixed_point(sys in system()) {
        let traj = sys.trajectory(40);
        let settings = GlocalSettings { delay_m: 1, ..GlocalSettings::default() };
        let fit = glocal_estimate(&traj, &settings).unwrap();
        prop_assert_eq!(fit.model.rank(), 4);
        for &lambda in &sys.eigs {
            let nearest = fit
                .model
                .eigenvalues
                .iter()
                .map(|l| (l - lambda).norm())
                .fold(f64::INFINITY, f64::min);
            prop_assert!(nearest < 1e-8, "λ = {lambda}: nearest fitted at distance {nearest}");
        }
        let err = (&fit.estimate.value - sys.limit()).amax();
        prop_assert!(err < 1e-6 * sys.limit().amax().max(1.0), "steady state error {err}");
        prop_assert_eq!(fit.estimate.kept_mode_count, 1);
    }

    #[test]
    fn delay_embedding_recovers_scalar_exponentials(
        rates in prop::collection::vec(0.5f64..0.95, 2),
        weights in prop::collection::vec(0.5f64..2.0, 3),
    ) {
        prop_assume!(separated(rates.clone()));
        let series: Vec<f64> = (0..60)
            .map(|t| weights[0] + weights[1] * rates[0].powi(t) + weights[2] * rates[1].powi(t))
            .collect();
        let traj = HypergradTrajectory::from_scalars(&series).unwrap();
        let settings = GlocalSettings { delay_m: 5, ..GlocalSettings::default() };
        let fit = glocal_estimate(&traj, &settings).unwrap();
        prop_assert_eq!(fit.model.rank(), 3);
        prop_assert!((fit.estimate.value[0] - weights[0]).abs() < 1e-6);
    }

    #[test]
    fn hankel_columns_are_shifted_windows(
        q in 1usize..4,
        m in 1usize..6,
        extra in 1usize..10,
        seed in any::<u64>(),
    ) {
        let len = m + extra;
        let steps: Vec<DVector<f64>> = (0..len)
            .map(|t| DVector::from_fn(q, |i, _| ((seed ^ (t * 31 + i) as u64) % 997) as f64))
            .collect();
        let traj = HypergradTrajectory::from_steps(q, steps.clone()).unwrap();
        let s = hankel_embed(&traj, m).unwrap();
        prop_assert_eq!(s.x.shape(), (m * q, len - m));
        s.verify_shift_structure().unwrap();
        for t in 0..len - m {
            for r in 0..m {
                prop_assert_eq!(s.x.column(t).rows(r * q, q).into_owned(), steps[t + r].clone());
                prop_assert_eq!(s.xp.column(t).rows(r * q, q).into_owned(), steps[t + r + 1].clone());
            }
        }
    }

    #[test]
    fn thin_svd_reconstructs(rows in 1usize..8, cols in 1usize..8, data in prop::collection::vec(-3.0f64..3.0, 64)) {
        let m = RealMatrix::from_fn(rows, cols, |i, j| data[i * 8 + j]);
        let svd = thin_svd(&m).unwrap();
        prop_assert!((svd.reconstruct() - &m).norm() <= 1e-10 * m.norm().max(1.0));
        prop_assert!(svd.singular_values.iter().zip(svd.singular_values.iter().skip(1)).all(|(a, b)| a >= b));
    }

    #[test]
    fn eigenpairs_satisfy_definition(n in 1usize..7, data in prop::collection::vec(-2.0f64..2.0, 36)) {
        let a = RealMatrix::from_fn(n, n, |i, j| data[i * 6 + j]);
        let sys = eig_nonsymmetric(&a).unwrap();
        prop_assert_eq!(sys.eigenvalues.len(), n);
        prop_assert!(sys.max_residual(&a) < 1e-8 * a.norm().max(1.0));
        let trace: f64 = sys.eigenvalues.iter().map(|l| l.re).sum();
        prop_assert!((trace - a.trace()).abs() < 1e-8 * a.norm().max(1.0));
    }
}

#[test]
fn rank_truncation_ignores_noise_floor() {
    let series: Vec<f64> = (0..30).map(|t| 2.0 + 0.5f64.powi(t)).collect();
    let traj = HypergradTrajectory::from_scalars(&series).unwrap();
    let model = fit_dmd(&hankel_embed(&traj, 6).unwrap(), DEFAULT_RANK_RTOL).unwrap();
    assert_eq!(model.rank(), 2);
}
