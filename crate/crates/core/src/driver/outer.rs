use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::tangent::HyperParams;

/// Optimizer applied to raw hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OuterOptimizer {
    Gd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OuterOptimizer {
    fn default() -> Self {
        OuterOptimizer::Adam {
            lr: 0.1,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Persistent outer-optimizer state (Adam moments; unused by GD).
#[derive(Debug, Clone, PartialEq)]
pub struct OuterState {
    pub m: DVector<f64>,
    pub v: DVector<f64>,
    pub step: u64,
}

impl OuterState {
    pub fn new(q: usize) -> Self {
        Self {
            m: DVector::zeros(q),
            v: DVector::zeros(q),
            step: 0,
        }
    }
}

/// Apply one update in raw space. Returns `false` (and leaves everything
/// untouched) when `h` has a non-finite entry.
pub fn outer_update(
    opt: &OuterOptimizer,
    hp: &mut HyperParams,
    h: &DVector<f64>,
    state: &mut OuterState,
) -> bool {
    if h.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let mut raw = hp.raw().to_vec();
    match *opt {
        OuterOptimizer::Gd { lr } => {
            for (r, g) in raw.iter_mut().zip(h.iter()) {
                *r -= lr * g;
            }
        }
        OuterOptimizer::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            state.step += 1;
            let k = state.step as i32;
            let c1 = 1.0 - beta1.powi(k);
            let c2 = 1.0 - beta2.powi(k);
            for i in 0..raw.len() {
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * h[i];
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * h[i] * h[i];
                let m_hat = state.m[i] / c1;
                let v_hat = state.v[i] / c2;
                raw[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    hp.set_raw(&raw);
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tangent::Transform;

    fn hp2() -> HyperParams {
        HyperParams::new(vec![0.0, 0.0], vec![Transform::Identity; 2], vec!["a".into(), "b".into()])
            .unwrap()
    }

    #[test]
    fn gd_step() {
        let mut hp = hp2();
        let mut st = OuterState::new(2);
        assert!(outer_update(
            &OuterOptimizer::Gd { lr: 0.1 },
            &mut hp,
            &DVector::from_vec(vec![1.0, -1.0]),
            &mut st
        ));
        assert_eq!(hp.raw(), &[-0.1, 0.1]);
    }

    #[test]
    fn zero_gradient_under_gd_is_identity() {
        let mut hp = hp2();
        let mut st = OuterState::new(2);
        outer_update(&OuterOptimizer::Gd { lr: 0.1 }, &mut hp, &DVector::zeros(2), &mut st);
        assert_eq!(hp.raw(), &[0.0, 0.0]);
    }

    #[test]
    fn adam_steps_have_lr_magnitude() {
        let mut hp = hp2();
        let mut st = OuterState::new(2);
        let opt = OuterOptimizer::default();
        let h = DVector::from_vec(vec![0.3, -2.0]);
        outer_update(&opt, &mut hp, &h, &mut st);
        let first = hp.raw().to_vec();
        outer_update(&opt, &mut hp, &h, &mut st);
        for i in 0..2 {
            let step = (hp.raw()[i] - first[i]).abs();
            assert!((step - 0.1).abs() < 1e-6, "{step}");
        }
        assert_eq!(st.step, 2);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut hp = hp2();
        let mut st = OuterState::new(2);
        let applied = outer_update(
            &OuterOptimizer::default(),
            &mut hp,
            &DVector::from_vec(vec![f64::NAN, 1.0]),
            &mut st,
        );
        assert!(!applied);
        assert_eq!(hp.raw(), &[0.0, 0.0]);
        assert_eq!(st, OuterState::new(2));
    }
}
