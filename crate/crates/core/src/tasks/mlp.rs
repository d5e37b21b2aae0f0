use nalgebra::{DMatrixView, DMatrixViewMut, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::numerics::RealMatrix;

pub const LEAKY_SLOPE: f64 = 0.01;

/// Fully connected leaky-ReLU network with a softmax cross-entropy head.
///
/// Parameters are one flat vector; layer `l` stores its `in × out` weight
/// matrix column-major, followed by its `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    slope: f64,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `acts[0]` is the input batch; `acts[l]` feeds layer `l`.
    pub acts: Vec<RealMatrix>,
    /// Pre-activations per layer; the last one holds the logits.
    pub pre: Vec<RealMatrix>,
    pub probs: RealMatrix,
    pub losses: Vec<f64>,
}

/// Directional derivatives of a forward pass.
#[derive(Debug, Clone)]
pub struct TangentForward {
    pub dacts: Vec<Option<RealMatrix>>,
    pub dpre: Vec<RealMatrix>,
    pub dprobs: RealMatrix,
    pub dlosses: Vec<f64>,
}

impl Mlp {
    pub fn new(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "invalid layer sizes {sizes:?}");
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut off = 0;
        for w in sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        offsets.push(off);
        Self {
            sizes: sizes.to_vec(),
            offsets,
            slope: LEAKY_SLOPE,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// He-normal weights, zero biases.
    pub fn init(&self, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = DVector::zeros(self.param_count());
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let off = self.offsets[l];
            for k in 0..fan_in * fan_out {
                let z: f64 = rng.sample(StandardNormal);
                theta[off + k] = std * z;
            }
        }
        theta
    }

    fn weight_range(&self, l: usize) -> std::ops::Range<usize> {
        let off = self.offsets[l];
        off..off + self.sizes[l] * self.sizes[l + 1]
    }

    fn bias_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        start..start + self.sizes[l + 1]
    }

    fn w<'a>(&self, theta: &'a [f64], l: usize) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(&theta[self.weight_range(l)], self.sizes[l], self.sizes[l + 1])
    }

    fn add_bias(z: &mut RealMatrix, bias: &[f64]) {
        for (mut col, &b) in z.column_iter_mut().zip(bias) {
            col.add_scalar_mut(b);
        }
    }

    fn mask(&self, m: &mut RealMatrix, pre: &RealMatrix) {
        for (v, &z) in m.iter_mut().zip(pre.iter()) {
            if z <= 0.0 {
                *v *= self.slope;
            }
        }
    }

    pub fn forward(&self, theta: &[f64], x: RealMatrix, labels: &[usize]) -> Forward {
        assert_eq!(x.ncols(), self.input_dim(), "input dimension");
        assert_eq!(x.nrows(), labels.len(), "one label per row");
        let layers = self.layers();
        let mut acts = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        acts.push(x);
        for l in 0..layers {
            let mut z = &acts[l] * self.w(theta, l);
            Self::add_bias(&mut z, &theta[self.bias_range(l)]);
            if l + 1 < layers {
                let slope = self.slope;
                acts.push(z.map(|v| if v > 0.0 { v } else { slope * v }));
            }
            pre.push(z);
        }
        let logits = pre.last().unwrap();
        let mut probs = logits.clone();
        let mut losses = Vec::with_capacity(labels.len());
        for (i, &y) in labels.iter().enumerate() {
            let mut row = probs.row_mut(i);
            let max = row.max();
            row.add_scalar_mut(-max);
            row.apply(|v| *v = v.exp());
            let sum = row.sum();
            row.unscale_mut(sum);
            losses.push(max + sum.ln() - logits[(i, y)]);
        }
        Forward {
            acts,
            pre,
            probs,
            losses,
        }
    }

    /// `∂(Σ_i c_i L_i)/∂z` at the logits: `diag(c)(P − Y)`.
    fn output_grad(fwd: &Forward, labels: &[usize], coeffs: &[f64]) -> RealMatrix {
        let mut g = fwd.probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            g[(i, y)] -= 1.0;
        }
        for (i, &c) in coeffs.iter().enumerate() {
            g.row_mut(i).scale_mut(c);
        }
        g
    }

    /// Gradient of `Σ_i coeffs[i] · L_i`.
    pub fn backward(&self, theta: &[f64], fwd: &Forward, labels: &[usize], coeffs: &[f64]) -> DVector<f64> {
        let mut grad = DVector::zeros(self.param_count());
        let mut g = Self::output_grad(fwd, labels, coeffs);
        for l in (0..self.layers()).rev() {
            self.write_layer_grad(&mut grad, l, &fwd.acts[l], &g, None);
            if l > 0 {
                let mut ga = &g * self.w(theta, l).transpose();
                self.mask(&mut ga, &fwd.pre[l - 1]);
                g = ga;
            }
        }
        grad
    }

    fn write_layer_grad(
        &self,
        grad: &mut DVector<f64>,
        l: usize,
        a: &RealMatrix,
        g: &RealMatrix,
        extra: Option<(&RealMatrix, &RealMatrix)>,
    ) {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        {
            let slice = &mut grad.as_mut_slice()[self.weight_range(l)];
            let mut gw = DMatrixViewMut::from_slice(slice, fan_in, fan_out);
            gw.gemm_tr(1.0, a, g, 0.0);
            if let Some((a2, g2)) = extra {
                gw.gemm_tr(1.0, a2, g2, 1.0);
            }
        }
        let bias = self.bias_range(l);
        for (k, idx) in bias.enumerate() {
            grad[idx] = g.column(k).sum();
        }
    }

    /// Push the direction `dtheta` through a cached forward pass.
    pub fn tangent_forward(
        &self,
        theta: &[f64],
        dtheta: &[f64],
        fwd: &Forward,
        labels: &[usize],
    ) -> TangentForward {
        let layers = self.layers();
        let mut dacts: Vec<Option<RealMatrix>> = vec![None];
        let mut dpre = Vec::with_capacity(layers);
        for l in 0..layers {
            let mut dz = &fwd.acts[l] * self.w(dtheta, l);
            Self::add_bias(&mut dz, &dtheta[self.bias_range(l)]);
            if let Some(da) = &dacts[l] {
                dz.gemm(1.0, da, &self.w(theta, l), 1.0);
            }
            if l + 1 < layers {
                let mut da = dz.clone();
                self.mask(&mut da, &fwd.pre[l]);
                dacts.push(Some(da));
            }
            dpre.push(dz);
        }
        let dlogits = dpre.last().unwrap();
        let p = &fwd.probs;
        let mut dprobs = RealMatrix::zeros(p.nrows(), p.ncols());
        let mut dlosses = Vec::with_capacity(labels.len());
        for (i, &y) in labels.iter().enumerate() {
            let pd: f64 = p.row(i).dot(&dlogits.row(i));
            dlosses.push(pd - dlogits[(i, y)]);
            for k in 0..p.ncols() {
                dprobs[(i, k)] = p[(i, k)] * (dlogits[(i, k)] - pd);
            }
        }
        TangentForward {
            dacts,
            dpre,
            dprobs,
            dlosses,
        }
    }

    /// Directional derivative of [`Mlp::backward`] when both the parameters move
    /// along `dtheta` and the coefficients move along `dcoeffs`.
    #[allow(clippy::too_many_arguments)]
    pub fn tangent_backward(
        &self,
        theta: &[f64],
        dtheta: &[f64],
        fwd: &Forward,
        tf: &TangentForward,
        labels: &[usize],
        coeffs: &[f64],
        dcoeffs: &[f64],
    ) -> DVector<f64> {
        let mut out = DVector::zeros(self.param_count());
        let mut g = Self::output_grad(fwd, labels, coeffs);
        let mut dg = Self::output_grad(fwd, labels, dcoeffs);
        for k in 0..dg.ncols() {
            for (i, &c) in coeffs.iter().enumerate() {
                dg[(i, k)] += c * tf.dprobs[(i, k)];
            }
        }
        for l in (0..self.layers()).rev() {
            let extra = tf.dacts[l].as_ref().map(|da| (da, &g));
            self.write_layer_grad(&mut out, l, &fwd.acts[l], &dg, extra);
            if l > 0 {
                let w = self.w(theta, l);
                let mut dga = &dg * w.transpose();
                dga.gemm(1.0, &g, &self.w(dtheta, l).transpose(), 1.0);
                let mut ga = &g * w.transpose();
                self.mask(&mut ga, &fwd.pre[l - 1]);
                self.mask(&mut dga, &fwd.pre[l - 1]);
                g = ga;
                dg = dga;
            }
        }
        out
    }
}

pub fn argmax_rows(m: &RealMatrix) -> Vec<usize> {
    m.row_iter().map(|r| r.iamax_full().1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Mlp, DVector<f64>, RealMatrix, Vec<usize>) {
        let net = Mlp::new(&[5, 4, 3, 3]);
        let mut theta = net.init(3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for v in theta.iter_mut() {
            *v += 0.1 * rng.random_range(-1.0..1.0);
        }
        let x = RealMatrix::from_fn(7, 5, |_, _| rng.random_range(-1.0..1.0));
        let labels = vec![0, 1, 2, 1, 0, 2, 2];
        (net, theta, x, labels)
    }

    fn weighted_loss(net: &Mlp, theta: &DVector<f64>, x: &RealMatrix, y: &[usize], c: &[f64]) -> f64 {
        let f = net.forward(theta.as_slice(), x.clone(), y);
        f.losses.iter().zip(c).map(|(l, c)| l * c).sum()
    }

    #[test]
    fn parameter_count_of_mnist_sized_net() {
        assert_eq!(Mlp::new(&[784, 18, 10]).param_count(), 784 * 18 + 18 + 18 * 10 + 10);
        assert_eq!(Mlp::new(&[784, 18, 10]).param_count(), 14_320);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (net, theta, x, y) = setup();
        let c = vec![0.3, 0.1, 0.2, 0.05, 0.15, 0.1, 0.1];
        let fwd = net.forward(theta.as_slice(), x.clone(), &y);
        let grad = net.backward(theta.as_slice(), &fwd, &y, &c);
        let h = 1e-6;
        for k in 0..net.param_count() {
            let mut tp = theta.clone();
            tp[k] += h;
            let mut tm = theta.clone();
            tm[k] -= h;
            let fd = (weighted_loss(&net, &tp, &x, &y, &c) - weighted_loss(&net, &tm, &x, &y, &c)) / (2.0 * h);
            let err = (fd - grad[k]).abs() / grad.amax();
            assert!(err < 1e-5, "param {k}: fd {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn jvp_matches_central_differences_of_gradient() {
        let (net, theta, x, y) = setup();
        let c = vec![1.0 / 7.0; 7];
        let dc = vec![0.01, -0.02, 0.0, 0.03, 0.0, 0.01, -0.01];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let dtheta = DVector::from_fn(net.param_count(), |_, _| rng.random_range(-1.0..1.0));

        let fwd = net.forward(theta.as_slice(), x.clone(), &y);
        let tf = net.tangent_forward(theta.as_slice(), dtheta.as_slice(), &fwd, &y);
        let jvp = net.tangent_backward(theta.as_slice(), dtheta.as_slice(), &fwd, &tf, &y, &c, &dc);

        let h = 1e-6;
        let grad_at = |s: f64| {
            let t = &theta + &dtheta * s;
            let cs: Vec<f64> = c.iter().zip(&dc).map(|(c, d)| c + s * d).collect();
            let f = net.forward(t.as_slice(), x.clone(), &y);
            (net.backward(t.as_slice(), &f, &y, &cs), f.losses)
        };
        let (gp, lp) = grad_at(h);
        let (gm, lm) = grad_at(-h);
        let fd = (gp - gm) / (2.0 * h);
        let err = (&jvp - &fd).amax() / fd.amax();
        assert!(err < 1e-6, "jvp relative error {err}");
        for i in 0..y.len() {
            let fd_l = (lp[i] - lm[i]) / (2.0 * h);
            assert!((fd_l - tf.dlosses[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn leaky_slope_on_negative_preactivation() {
        // One hidden unit forced negative: gradient through it is scaled by the slope.
        let net = Mlp::new(&[1, 1, 2]);
        // w1 = 1, b1 = −5, w2 = (1, −1), b2 = (0, 0)
        let theta = DVector::from_vec(vec![1.0, -5.0, 1.0, -1.0, 0.0, 0.0]);
        let x = RealMatrix::from_element(1, 1, 1.0);
        let fwd = net.forward(theta.as_slice(), x, &[0]);
        assert!((fwd.acts[1][(0, 0)] + 0.04).abs() < 1e-15);
        let g = net.backward(theta.as_slice(), &fwd, &[0], &[1.0]);
        // dL/db1 = slope · Σ_k (p_k − y_k) w2_k
        let p = &fwd.probs;
        let expected = LEAKY_SLOPE * ((p[(0, 0)] - 1.0) * 1.0 + p[(0, 1)] * -1.0);
        assert!((g[1] - expected).abs() < 1e-15);
    }

    #[test]
    fn losses_are_cross_entropy() {
        let (net, theta, x, y) = setup();
        let fwd = net.forward(theta.as_slice(), x, &y);
        for (i, &label) in y.iter().enumerate() {
            assert!((fwd.losses[i] + fwd.probs[(i, label)].ln()).abs() < 1e-12);
            assert!((fwd.probs.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }
}
