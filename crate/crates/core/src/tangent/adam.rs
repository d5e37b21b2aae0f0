use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{check_finite, phi_directions, HpEval, HpSource, InnerModel, OptimizerState, TangentError, TangentState};

pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam; `ε` is fixed at [`ADAM_EPS`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: HpSource,
    pub beta1: HpSource,
    pub beta2: HpSource,
}

pub fn adam_step_with_tangent(
    theta: &mut DVector<f64>,
    state: &mut OptimizerState,
    tangent: Option<&mut TangentState>,
    hp: &HpEval,
    cfg: &AdamConfig,
    batch: &[usize],
    model: &dyn InnerModel,
) -> Result<(), TangentError> {
    let eta = cfg.lr.value(hp);
    let b1 = cfg.beta1.value(hp);
    let b2 = cfg.beta2.value(hp);
    let step = state.step + 1;
    let k = step as i32;
    let c1 = 1.0 - b1.powi(k);
    let c2 = 1.0 - b2.powi(k);
    let p = theta.len();

    let Some(t) = tangent else {
        let g = model.train_grad(theta, &hp.values, batch);
        let (m_buf, rest) = state.buffers.split_at_mut(1);
        let (m, v) = (&mut m_buf[0], &mut rest[0]);
        for r in 0..p {
            m[r] = b1 * m[r] + (1.0 - b1) * g[r];
            v[r] = b2 * v[r] + (1.0 - b2) * g[r] * g[r];
            let m_hat = m[r] / c1;
            let s = (v[r] / c2).sqrt();
            theta[r] -= eta * (m_hat / (s + ADAM_EPS));
        }
        state.step = step;
        return check_finite(step, theta, None);
    };

    let (g, dg) = model.train_grad_with_jvps(theta, &hp.values, batch, &t.z_theta, &phi_directions(hp));
    let q = hp.q();
    let db1: Vec<f64> = (0..q).map(|i| cfg.beta1.partial(hp, i)).collect();
    let db2: Vec<f64> = (0..q).map(|i| cfg.beta2.partial(hp, i)).collect();
    let deta: Vec<f64> = (0..q).map(|i| cfg.lr.partial(hp, i)).collect();
    // d(1 − β^k) = −k β^{k−1} dβ
    let dc1_per = -(k as f64) * b1.powi(k - 1);
    let dc2_per = -(k as f64) * b2.powi(k - 1);

    let (m_buf, rest) = state.buffers.split_at_mut(1);
    let (m, v) = (&mut m_buf[0], &mut rest[0]);
    let (dm_buf, drest) = t.z_buffers.split_at_mut(1);
    let (dm, dv) = (&mut dm_buf[0], &mut drest[0]);

    for r in 0..p {
        let gr = g[r];
        let m_new = b1 * m[r] + (1.0 - b1) * gr;
        let v_new = b2 * v[r] + (1.0 - b2) * gr * gr;
        let m_hat = m_new / c1;
        let v_hat = v_new / c2;
        let s = v_hat.sqrt();
        let denom = s + ADAM_EPS;
        let u = m_hat / denom;
        for i in 0..q {
            let dgi = dg[(r, i)];
            let dm_new = b1 * dm[(r, i)] + (1.0 - b1) * dgi + db1[i] * (m[r] - gr);
            let dv_new = b2 * dv[(r, i)] + 2.0 * (1.0 - b2) * gr * dgi + db2[i] * (v[r] - gr * gr);
            let dc1 = dc1_per * db1[i];
            let dc2 = dc2_per * db2[i];
            let dm_hat = dm_new / c1 - m_new * dc1 / (c1 * c1);
            let dv_hat = dv_new / c2 - v_new * dc2 / (c2 * c2);
            let ds = if s > 0.0 { dv_hat / (2.0 * s) } else { 0.0 };
            let du = dm_hat / denom - m_hat * ds / (denom * denom);
            t.z_theta[(r, i)] -= eta * du + deta[i] * u;
            dm[(r, i)] = dm_new;
            dv[(r, i)] = dv_new;
        }
        m[r] = m_new;
        v[r] = v_new;
        theta[r] -= eta * u;
    }
    state.step = step;
    check_finite(step, theta, Some(t))
}

#[cfg(test)]
mod tests {
    use super::super::test_models::Quartic;
    use super::super::{HyperParams, InnerOptimizer, Transform};
    use super::*;
    use crate::numerics::RealMatrix;

    fn unroll(
        opt: &InnerOptimizer,
        model: &dyn InnerModel,
        hp: &HyperParams,
        theta0: &DVector<f64>,
        steps: usize,
    ) -> (DVector<f64>, OptimizerState, TangentState) {
        let p = theta0.len();
        let mut theta = theta0.clone();
        let mut state = opt.init_state(p);
        let mut tangent = opt.init_tangent(p, hp.len());
        let eval = hp.transform();
        for _ in 0..steps {
            opt.step(&mut theta, &mut state, Some(&mut tangent), &eval, &[], model)
                .unwrap();
        }
        (theta, state, tangent)
    }

    fn fd_z(
        opt: &InnerOptimizer,
        model: &dyn InnerModel,
        hp: &HyperParams,
        theta0: &DVector<f64>,
        steps: usize,
        h: f64,
    ) -> RealMatrix {
        let mut z = RealMatrix::zeros(theta0.len(), hp.len());
        for i in 0..hp.len() {
            let mut raw = hp.raw().to_vec();
            raw[i] += h;
            let mut plus = hp.clone();
            plus.set_raw(&raw);
            raw[i] -= 2.0 * h;
            let mut minus = hp.clone();
            minus.set_raw(&raw);
            let tp = unroll(opt, model, &plus, theta0, steps).0;
            let tm = unroll(opt, model, &minus, theta0, steps).0;
            z.set_column(i, &((tp - tm) / (2.0 * h)));
        }
        z
    }

    fn learned_adam() -> InnerOptimizer {
        InnerOptimizer::Adam(AdamConfig {
            lr: HpSource::Learned(0),
            beta1: HpSource::Learned(1),
            beta2: HpSource::Learned(2),
        })
    }

    #[test]
    fn tangent_matches_finite_differences() {
        let model = Quartic {
            a: vec![1.0, 0.3, 2.0],
            c: 0.5,
            phi_index: Some(3),
        };
        let hp = HyperParams::from_values([
            ("lr", Transform::Sigmoid, 0.05),
            ("beta1", Transform::Sigmoid, 0.8),
            ("beta2", Transform::Sigmoid, 0.95),
            ("shift", Transform::Identity, 0.1),
        ])
        .unwrap();
        let theta0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let opt = learned_adam();
        let (_, _, t) = unroll(&opt, &model, &hp, &theta0, 25);
        let fd = fd_z(&opt, &model, &hp, &theta0, 25, 1e-5);
        let err = (&t.z_theta - &fd).amax() / fd.amax();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn zero_betas_normalize_gradient() {
        let model = Quartic {
            a: vec![1.0, 4.0],
            c: 0.0,
            phi_index: None,
        };
        let hp = HyperParams::new(
            vec![0.01, 0.0, 0.0],
            vec![Transform::Identity; 3],
            vec!["lr".into(), "beta1".into(), "beta2".into()],
        )
        .unwrap();
        let opt = learned_adam();
        let theta0 = DVector::from_vec(vec![0.5, -0.25]);
        let (theta, _, _) = unroll(&opt, &model, &hp, &theta0, 1);
        let g = DVector::from_vec(vec![0.5, -1.0]);
        let expected = &theta0 - g.map(|x: f64| 0.01 * x / (x.abs() + ADAM_EPS));
        assert!((theta - expected).amax() < 1e-15);

        let steps = 4;
        let (_, _, t) = unroll(&opt, &model, &hp, &theta0, steps);
        let fd = fd_z(&opt, &model, &hp, &theta0, steps, 1e-6);
        let err = (&t.z_theta - &fd).amax() / fd.amax();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn constant_gradient_first_moment_derivative() {
        // Constant gradient g: m_k = g(1 − β₁^k), so dm_k/dβ₁ = −k β₁^{k−1} g.
        let model = Quartic {
            a: vec![0.0],
            c: 0.0,
            phi_index: Some(3),
        };
        let hp = HyperParams::new(
            vec![0.01, 0.9, 0.99, 0.7],
            vec![Transform::Identity; 4],
            vec!["lr".into(), "beta1".into(), "beta2".into(), "shift".into()],
        )
        .unwrap();
        let opt = learned_adam();
        let k = 40;
        let (_, state, t) = unroll(&opt, &model, &hp, &DVector::zeros(1), k);
        let g = 0.7;
        let b1: f64 = 0.9;
        let m_hat = state.buffers[0][0] / (1.0 - b1.powi(k as i32));
        assert!((m_hat - g).abs() < 1e-12);
        let dm_db1 = -(k as f64) * b1.powi(k as i32 - 1) * g;
        assert!((t.z_buffers[0][(0, 1)] - dm_db1).abs() < 1e-6);
    }

    #[test]
    fn lr_tangent_is_minus_update_on_first_step() {
        let model = Quartic {
            a: vec![1.0, 2.0, 3.0],
            c: 0.1,
            phi_index: None,
        };
        let hp = HyperParams::new(
            vec![0.02, 0.9, 0.999],
            vec![Transform::Identity; 3],
            vec!["lr".into(), "beta1".into(), "beta2".into()],
        )
        .unwrap();
        let opt = learned_adam();
        let theta0 = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let (_, _, t) = unroll(&opt, &model, &hp, &theta0, 1);
        let g = model.train_grad(&theta0, &hp.values(), &[]);
        let direction = g.map(|x| x / (x.abs() + ADAM_EPS));
        assert!((t.z_theta.column(0) + direction).amax() < 1e-15);
    }

    #[test]
    fn plain_step_matches_tangent_step() {
        let model = Quartic {
            a: vec![1.0, 0.5],
            c: 0.3,
            phi_index: None,
        };
        let hp = HyperParams::from_values([
            ("lr", Transform::Sigmoid, 0.05),
            ("beta1", Transform::Sigmoid, 0.9),
            ("beta2", Transform::Sigmoid, 0.999),
        ])
        .unwrap();
        let opt = learned_adam();
        let theta0 = DVector::from_vec(vec![0.4, -1.2]);
        let (with_tangent, _, _) = unroll(&opt, &model, &hp, &theta0, 10);
        let mut theta = theta0.clone();
        let mut state = opt.init_state(2);
        for _ in 0..10 {
            opt.step(&mut theta, &mut state, None, &hp.transform(), &[], &model)
                .unwrap();
        }
        assert_eq!(theta, with_tangent);
    }
}
