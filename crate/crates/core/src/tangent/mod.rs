//! Differentiable inner optimizers.
//!
//! Each step advances the parameters `θ` together with the tangent
//! `Z = dθ/dφ` (one column per raw hyperparameter) and the tangents of the
//! optimizer's own state buffers, so that `∇_θ ℓ̃(θ)ᵀ Z` is the exact
//! hypergradient of the unrolled run.

mod adam;
mod hyper;
mod sgd;

pub use adam::{adam_step_with_tangent, AdamConfig, ADAM_EPS};
pub use hyper::{sigmoid, HpEval, HpSource, HyperParams, Transform};
pub use sgd::{sgd_step_with_tangent, SgdConfig};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::numerics::RealMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TangentError {
    #[error("training diverged at step {step}")]
    Diverged { step: u64 },
    #[error("hyperparameter vectors disagree in length: {raw} raw, {transforms} transforms, {names} names")]
    HyperParamShape {
        raw: usize,
        transforms: usize,
        names: usize,
    },
    #[error("initial value {value} for hyperparameter `{name}` is outside the range of its transform")]
    ValueOutOfRange { name: String, value: f64 },
    #[error("hyperparameter index {index} out of range for q = {q}")]
    BadIndex { index: usize, q: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Inner problem seen by the optimizers.
///
/// `phi` is always the full vector of transformed hyperparameter values; a
/// model reads the entries it owns and ignores the rest. Directions `dphi`
/// live in the same transformed coordinates.
pub trait InnerModel: Send + Sync {
    fn param_count(&self) -> usize;

    fn train_loss(&self, theta: &DVector<f64>, phi: &[f64], batch: &[usize]) -> f64;

    fn train_grad(&self, theta: &DVector<f64>, phi: &[f64], batch: &[usize]) -> DVector<f64>;

    /// Directional derivative of `train_grad` along `(dtheta, dphi)`.
    fn train_grad_jvp(
        &self,
        theta: &DVector<f64>,
        phi: &[f64],
        batch: &[usize],
        dtheta: &DVector<f64>,
        dphi: &[f64],
    ) -> DVector<f64>;

    /// Gradient plus one JVP per column of `dtheta` (`p × k`) paired with the
    /// same column of `dphi` (`q × k`).
    fn train_grad_with_jvps(
        &self,
        theta: &DVector<f64>,
        phi: &[f64],
        batch: &[usize],
        dtheta: &RealMatrix,
        dphi: &RealMatrix,
    ) -> (DVector<f64>, RealMatrix) {
        let g = self.train_grad(theta, phi, batch);
        let mut out = RealMatrix::zeros(theta.len(), dtheta.ncols());
        for j in 0..dtheta.ncols() {
            let col = self.train_grad_jvp(
                theta,
                phi,
                batch,
                &dtheta.column(j).into_owned(),
                dphi.column(j).clone_owned().as_slice(),
            );
            out.set_column(j, &col);
        }
        (g, out)
    }

    fn val_loss(&self, theta: &DVector<f64>) -> f64;

    fn val_grad(&self, theta: &DVector<f64>) -> DVector<f64>;

    fn val_loss_and_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.val_loss(theta), self.val_grad(theta))
    }
}

/// `Z = dθ/dφ` and the matching tangents of each optimizer buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentState {
    pub z_theta: RealMatrix,
    pub z_buffers: Vec<RealMatrix>,
}

impl TangentState {
    pub fn zeros(p: usize, q: usize, buffers: usize) -> Self {
        Self {
            z_theta: RealMatrix::zeros(p, q),
            z_buffers: vec![RealMatrix::zeros(p, q); buffers],
        }
    }

    pub fn reset(&mut self) {
        self.z_theta.fill(0.0);
        for z in &mut self.z_buffers {
            z.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.z_theta.iter().all(|v| v.is_finite())
            && self.z_buffers.iter().all(|z| z.iter().all(|v| v.is_finite()))
    }
}

/// Optimizer buffers (momentum, or Adam moments) and the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub buffers: Vec<DVector<f64>>,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InnerOptimizer {
    Sgd(SgdConfig),
    Adam(AdamConfig),
}

impl InnerOptimizer {
    pub fn buffer_count(&self) -> usize {
        match self {
            InnerOptimizer::Sgd(_) => 1,
            InnerOptimizer::Adam(_) => 2,
        }
    }

    pub fn init_state(&self, p: usize) -> OptimizerState {
        OptimizerState {
            buffers: vec![DVector::zeros(p); self.buffer_count()],
            step: 0,
        }
    }

    pub fn init_tangent(&self, p: usize, q: usize) -> TangentState {
        TangentState::zeros(p, q, self.buffer_count())
    }

    /// Every learned index must address an entry of `hp`.
    pub fn validate(&self, q: usize) -> Result<(), TangentError> {
        let sources = match self {
            InnerOptimizer::Sgd(c) => vec![c.lr, c.momentum, c.weight_decay],
            InnerOptimizer::Adam(c) => vec![c.lr, c.beta1, c.beta2],
        };
        for s in sources {
            if let Some(index) = s.index() {
                if index >= q {
                    return Err(TangentError::BadIndex { index, q });
                }
            }
        }
        Ok(())
    }

    /// One inner step; the tangent is advanced when supplied.
    pub fn step(
        &self,
        theta: &mut DVector<f64>,
        state: &mut OptimizerState,
        tangent: Option<&mut TangentState>,
        hp: &HpEval,
        batch: &[usize],
        model: &dyn InnerModel,
    ) -> Result<(), TangentError> {
        match self {
            InnerOptimizer::Sgd(c) => sgd_step_with_tangent(theta, state, tangent, hp, c, batch, model),
            InnerOptimizer::Adam(c) => {
                adam_step_with_tangent(theta, state, tangent, hp, c, batch, model)
            }
        }
    }
}

/// Directions in transformed hyperparameter space for every raw coordinate: `diag(jacobian)`.
pub(crate) fn phi_directions(hp: &HpEval) -> RealMatrix {
    RealMatrix::from_diagonal(&DVector::from_column_slice(&hp.jacobian_diag))
}

pub(crate) fn check_finite(
    step: u64,
    theta: &DVector<f64>,
    tangent: Option<&TangentState>,
) -> Result<(), TangentError> {
    let ok = theta.iter().all(|v| v.is_finite()) && tangent.is_none_or(|t| t.is_finite());
    if ok {
        Ok(())
    } else {
        Err(TangentError::Diverged { step })
    }
}

/// `h = ∇_θ ℓ̃(θ)ᵀ Z`.
pub fn local_hypergradient(
    theta: &DVector<f64>,
    tangent: &TangentState,
    model: &dyn InnerModel,
) -> DVector<f64> {
    tangent.z_theta.tr_mul(&model.val_grad(theta))
}

/// Validation loss together with the local hypergradient, sharing one backward pass.
pub fn local_hypergradient_with_loss(
    theta: &DVector<f64>,
    tangent: &TangentState,
    model: &dyn InnerModel,
) -> (f64, DVector<f64>) {
    let (loss, grad) = model.val_loss_and_grad(theta);
    (loss, tangent.z_theta.tr_mul(&grad))
}
