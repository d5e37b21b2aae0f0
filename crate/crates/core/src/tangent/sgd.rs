use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{check_finite, phi_directions, HpEval, HpSource, InnerModel, OptimizerState, TangentError, TangentState};

/// Heavy-ball SGD with coupled weight decay: `v' = μv + ∇ℓ + λθ`, `θ' = θ − ηv'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: HpSource,
    pub momentum: HpSource,
    pub weight_decay: HpSource,
}

impl SgdConfig {
    /// Plain gradient descent with a learned learning rate.
    pub fn gd(lr: HpSource) -> Self {
        Self {
            lr,
            momentum: HpSource::Fixed(0.0),
            weight_decay: HpSource::Fixed(0.0),
        }
    }
}

pub fn sgd_step_with_tangent(
    theta: &mut DVector<f64>,
    state: &mut OptimizerState,
    tangent: Option<&mut TangentState>,
    hp: &HpEval,
    cfg: &SgdConfig,
    batch: &[usize],
    model: &dyn InnerModel,
) -> Result<(), TangentError> {
    let eta = cfg.lr.value(hp);
    let mu = cfg.momentum.value(hp);
    let wd = cfg.weight_decay.value(hp);
    let step = state.step + 1;

    match tangent {
        None => {
            let g = model.train_grad(theta, &hp.values, batch);
            let v = &mut state.buffers[0];
            *v *= mu;
            *v += &g;
            v.axpy(wd, theta, 1.0);
            theta.axpy(-eta, v, 1.0);
            state.step = step;
            check_finite(step, theta, None)
        }
        Some(t) => {
            let (g, jvps) = model.train_grad_with_jvps(
                theta,
                &hp.values,
                batch,
                &t.z_theta,
                &phi_directions(hp),
            );
            let v_old = &state.buffers[0];
            let dv = &mut t.z_buffers[0];
            // dv' = μ dv + J + λ Z + (∂μ) v + (∂λ) θ, using pre-step v and θ.
            *dv *= mu;
            *dv += &jvps;
            *dv += &t.z_theta * wd;
            for i in 0..hp.q() {
                let dmu = cfg.momentum.partial(hp, i);
                if dmu != 0.0 {
                    dv.column_mut(i).axpy(dmu, v_old, 1.0);
                }
                let dwd = cfg.weight_decay.partial(hp, i);
                if dwd != 0.0 {
                    dv.column_mut(i).axpy(dwd, theta, 1.0);
                }
            }

            let v = &mut state.buffers[0];
            *v *= mu;
            *v += &g;
            v.axpy(wd, theta, 1.0);

            t.z_theta -= &*dv * eta;
            for i in 0..hp.q() {
                let deta = cfg.lr.partial(hp, i);
                if deta != 0.0 {
                    t.z_theta.column_mut(i).axpy(-deta, v, 1.0);
                }
            }
            theta.axpy(-eta, v, 1.0);
            state.step = step;
            check_finite(step, theta, Some(t))
        }
    }
}
