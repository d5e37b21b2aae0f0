use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dual::{Dual, Scalar};
use super::mlp::LEAKY_SLOPE;
use crate::tangent::{HyperParams, Transform};

/// Per-example loss weight `μ_φ: R → (0, 1)`, a one-hidden-layer leaky-ReLU
/// network with a logistic output. Its parameters are hyperparameters.
///
/// Layout inside `φ` starting at `offset`: `w1[H]`, `b1[H]`, `w2[H]`, `b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReweightModule {
    pub hidden: usize,
    pub offset: usize,
}

impl ReweightModule {
    pub fn param_count(hidden: usize) -> usize {
        3 * hidden + 1
    }

    pub fn q(&self) -> usize {
        Self::param_count(self.hidden)
    }

    /// Append this module's parameters to `hp` (identity transforms) and
    /// return the module addressing them. Output starts near 0.5.
    pub fn register(hp: &mut HyperParams, hidden: usize, seed: u64) -> ReweightModule {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offset = hp.len();
        let mut normal = |scale: f64| -> f64 { scale * rng.sample::<f64, _>(StandardNormal) };
        let w1: Vec<f64> = (0..hidden).map(|_| normal(1.0)).collect();
        let b1: Vec<f64> = (0..hidden).map(|_| normal(1.0)).collect();
        let w2: Vec<f64> = (0..hidden).map(|_| normal(0.1)).collect();
        for (k, v) in w1.into_iter().enumerate() {
            hp.push(format!("mu.w1.{k}"), Transform::Identity, v);
        }
        for (k, v) in b1.into_iter().enumerate() {
            hp.push(format!("mu.b1.{k}"), Transform::Identity, v);
        }
        for (k, v) in w2.into_iter().enumerate() {
            hp.push(format!("mu.w2.{k}"), Transform::Identity, v);
        }
        hp.push("mu.b2", Transform::Identity, 0.0);
        ReweightModule { hidden, offset }
    }

    /// `(μ(L), μ'(L))` for any scalar type.
    pub fn eval<S: Scalar>(&self, phi: &[S], loss: S) -> (S, S) {
        let h = self.hidden;
        let p = &phi[self.offset..self.offset + self.q()];
        let mut out = p[3 * h];
        let mut slope = S::from_f64(0.0);
        for k in 0..h {
            let pre = p[k] * loss + p[h + k];
            out += p[2 * h + k] * pre.leaky_relu(LEAKY_SLOPE);
            slope += p[2 * h + k] * p[k] * S::from_f64(pre.leaky_relu_slope(LEAKY_SLOPE));
        }
        let mu = out.sigmoid();
        let dmu = mu * (S::from_f64(1.0) - mu) * slope;
        (mu, dmu)
    }

    pub fn weight(&self, phi: &[f64], loss: f64) -> f64 {
        self.eval(phi, loss).0
    }
}

/// How per-example losses combine into the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossWeighting {
    /// `ℓ = mean_i L_i`.
    Mean,
    /// `ℓ = mean_i L_i · μ_φ(L_i)`.
    Reweight(ReweightModule),
}

impl LossWeighting {
    pub fn loss(&self, losses: &[f64], phi: &[f64]) -> f64 {
        let n = losses.len() as f64;
        match self {
            LossWeighting::Mean => losses.iter().sum::<f64>() / n,
            LossWeighting::Reweight(m) => {
                losses.iter().map(|&l| l * m.weight(phi, l)).sum::<f64>() / n
            }
        }
    }

    /// `c_i = ∂ℓ/∂L_i`, so that `∇_θ ℓ = Σ_i c_i ∇_θ L_i`.
    pub fn coeffs(&self, losses: &[f64], phi: &[f64]) -> Vec<f64> {
        let n = losses.len() as f64;
        match self {
            LossWeighting::Mean => vec![1.0 / n; losses.len()],
            LossWeighting::Reweight(m) => losses
                .iter()
                .map(|&l| {
                    let (mu, dmu) = m.eval(phi, l);
                    (mu + l * dmu) / n
                })
                .collect(),
        }
    }

    /// Directional derivative of [`LossWeighting::coeffs`] when the losses move
    /// along `dlosses` and `φ` along `dphi`.
    pub fn coeff_tangents(
        &self,
        losses: &[f64],
        dlosses: &[f64],
        phi: &[f64],
        dphi: &[f64],
    ) -> Vec<f64> {
        let n = losses.len() as f64;
        match self {
            LossWeighting::Mean => vec![0.0; losses.len()],
            LossWeighting::Reweight(m) => {
                let phi_dual: Vec<Dual> = phi
                    .iter()
                    .zip(dphi)
                    .map(|(&v, &d)| Dual::new(v, d))
                    .collect();
                losses
                    .iter()
                    .zip(dlosses)
                    .map(|(&l, &dl)| {
                        let l = Dual::new(l, dl);
                        let (mu, dmu) = m.eval(&phi_dual, l);
                        (mu + l * dmu).eps / n
                    })
                    .collect()
            }
        }
    }

    pub fn module(&self) -> Option<&ReweightModule> {
        match self {
            LossWeighting::Mean => None,
            LossWeighting::Reweight(m) => Some(m),
        }
    }
}
