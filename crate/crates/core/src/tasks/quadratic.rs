use nalgebra::{DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numerics::RealMatrix;
use crate::tangent::{HpSource, HyperParams, InnerModel, SgdConfig};

use super::{Task, TaskError};

/// `ℓ(θ) = ½θᵀAθ − bᵀθ` trained by (S)GD, validated by `ℓ̃(θ) = ½‖θ − θ̃‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    pub a: RealMatrix,
    pub b: DVector<f64>,
    pub target: DVector<f64>,
    pub theta0: DVector<f64>,
}

impl QuadraticTask {
    pub fn new(
        a: RealMatrix,
        b: DVector<f64>,
        target: DVector<f64>,
        theta0: DVector<f64>,
    ) -> Result<Self, TaskError> {
        let p = a.nrows();
        if a.ncols() != p || b.len() != p || target.len() != p || theta0.len() != p {
            return Err(TaskError::Config(format!(
                "quadratic task shapes disagree: A {}x{}, b {}, target {}, theta0 {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                target.len(),
                theta0.len()
            )));
        }
        if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
            return Err(TaskError::Config("A must be symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(a.clone()).eigenvalues.min();
        if !(min_eig > 0.0) {
            return Err(TaskError::Config(format!(
                "A must be positive definite (smallest eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self {
            a,
            b,
            target,
            theta0,
        })
    }

    /// Random rotation of evenly spaced eigenvalues in `[eig_min, eig_max]`, with
    /// standard-normal `b`, `θ̃`, and `θ₀`.
    pub fn random(p: usize, eig_min: f64, eig_max: f64, seed: u64) -> Result<Self, TaskError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |_: usize, _: usize| -> f64 { rng.sample(StandardNormal) };
        let g = RealMatrix::from_fn(p, p, &mut normal);
        let q = g.qr().q();
        let eigs = DVector::from_fn(p, |i, _| {
            if p == 1 {
                eig_min
            } else {
                eig_min + (eig_max - eig_min) * i as f64 / (p - 1) as f64
            }
        });
        let a = &q * RealMatrix::from_diagonal(&eigs) * q.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let b = DVector::from_fn(p, &mut normal);
        let target = DVector::from_fn(p, &mut normal);
        let theta0 = DVector::from_fn(p, &mut normal);
        Self::new(a, b, target, theta0)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

impl InnerModel for QuadraticTask {
    fn param_count(&self) -> usize {
        self.dim()
    }

    fn train_loss(&self, theta: &DVector<f64>, _phi: &[f64], _batch: &[usize]) -> f64 {
        0.5 * theta.dot(&(&self.a * theta)) - self.b.dot(theta)
    }

    fn train_grad(&self, theta: &DVector<f64>, _phi: &[f64], _batch: &[usize]) -> DVector<f64> {
        &self.a * theta - &self.b
    }

    fn train_grad_jvp(
        &self,
        _theta: &DVector<f64>,
        _phi: &[f64],
        _batch: &[usize],
        dtheta: &DVector<f64>,
        _dphi: &[f64],
    ) -> DVector<f64> {
        &self.a * dtheta
    }

    fn train_grad_with_jvps(
        &self,
        theta: &DVector<f64>,
        phi: &[f64],
        batch: &[usize],
        dtheta: &RealMatrix,
        _dphi: &RealMatrix,
    ) -> (DVector<f64>, RealMatrix) {
        (self.train_grad(theta, phi, batch), &self.a * dtheta)
    }

    fn val_loss(&self, theta: &DVector<f64>) -> f64 {
        0.5 * (theta - &self.target).norm_squared()
    }

    fn val_grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta - &self.target
    }
}

impl Task for QuadraticTask {
    fn initial_params(&self) -> DVector<f64> {
        self.theta0.clone()
    }

    fn batch(&self, _step: u64) -> Vec<usize> {
        Vec::new()
    }

    fn evaluate(&self, theta: &DVector<f64>, _phi: &[f64]) -> Vec<(String, f64)> {
        vec![
            ("train_loss".into(), self.train_loss(theta, &[], &[])),
            ("val_loss".into(), self.val_loss(theta)),
        ]
    }
}

/// Exact `∇_φ ℓ̃(θ_T)` (raw coordinates) for full-batch gradient descent on a
/// quadratic task, from the closed-form solution in the eigenbasis of `A`.
///
/// Supports a learned or fixed learning rate and weight decay; momentum must be fixed at 0.
pub fn quadratic_oracle_hypergradient(
    task: &QuadraticTask,
    hp: &HyperParams,
    cfg: &SgdConfig,
    steps: u64,
) -> Result<DVector<f64>, TaskError> {
    if cfg.momentum != HpSource::Fixed(0.0) {
        return Err(TaskError::Config(
            "quadratic oracle supports plain gradient descent only (momentum fixed at 0)".into(),
        ));
    }
    let eval = hp.transform();
    let eta = cfg.lr.value(&eval);
    let wd = cfg.weight_decay.value(&eval);
    let eig = SymmetricEigen::new(task.a.clone());
    let basis = &eig.eigenvectors;
    let x0 = basis.tr_mul(&task.theta0);
    let beta = basis.tr_mul(&task.b);
    let x_target = basis.tr_mul(&task.target);

    let p = task.dim();
    let t = steps as i32;
    let mut x_t = DVector::zeros(p);
    let mut dx_deta = DVector::zeros(p);
    let mut dx_dwd = DVector::zeros(p);
    for i in 0..p {
        let a = eig.eigenvalues[i] + wd;
        let r = 1.0 - eta * a;
        if r.abs() > 1.0 || a <= 0.0 {
            return Err(TaskError::Diverged(format!(
                "learning rate {eta} diverges on curvature {a} (|1 − ηa| = {})",
                r.abs()
            )));
        }
        let c = beta[i] / a;
        let offset = x0[i] - c;
        x_t[i] = c + r.powi(t) * offset;
        if steps > 0 {
            let slope = steps as f64 * r.powi(t - 1);
            dx_deta[i] = slope * (-a) * offset;
            dx_dwd[i] = -beta[i] / (a * a) * (1.0 - r.powi(t)) + slope * (-eta) * offset;
        }
    }
    let residual = x_t - x_target;
    let h_eta = residual.dot(&dx_deta);
    let h_wd = residual.dot(&dx_dwd);

    let mut h = DVector::zeros(hp.len());
    for i in 0..hp.len() {
        h[i] = cfg.lr.partial(&eval, i) * h_eta + cfg.weight_decay.partial(&eval, i) * h_wd;
    }
    Ok(h)
}
