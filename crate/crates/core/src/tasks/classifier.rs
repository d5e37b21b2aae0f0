use std::sync::Arc;

use nalgebra::DVector;

use super::batches::BatchSchedule;
use super::dataset::Dataset;
use super::mlp::{argmax_rows, Mlp};
use super::reweight::LossWeighting;
use super::{Task, TaskError};
use crate::numerics::RealMatrix;
use crate::tangent::InnerModel;

const EVAL_CHUNK: usize = 2000;

/// MLP classifier trained on minibatches, validated full-batch on a hold-out set.
#[derive(Debug, Clone)]
pub struct ClassifierTask {
    net: Mlp,
    train: Arc<Dataset>,
    val: Arc<Dataset>,
    test: Option<Arc<Dataset>>,
    weighting: LossWeighting,
    batches: BatchSchedule,
    init_seed: u64,
    val_x: RealMatrix,
}

impl ClassifierTask {
    pub fn new(
        hidden: &[usize],
        train: Arc<Dataset>,
        val: Arc<Dataset>,
        test: Option<Arc<Dataset>>,
        weighting: LossWeighting,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self, TaskError> {
        let classes = train.class_count().max(val.class_count());
        for ds in std::iter::once(&val).chain(test.iter()) {
            if ds.dim() != train.dim() {
                return Err(TaskError::Config(format!(
                    "input dimension {} differs from training dimension {}",
                    ds.dim(),
                    train.dim()
                )));
            }
        }
        let mut sizes = vec![train.dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        let val_x = rows_matrix(&val, &(0..val.len()).collect::<Vec<_>>());
        Ok(Self {
            net: Mlp::new(&sizes),
            batches: BatchSchedule::new(train.len(), batch_size, seed ^ 0x5eed_ba7c),
            train,
            val,
            test,
            weighting,
            init_seed: seed,
            val_x,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn weighting(&self) -> &LossWeighting {
        &self.weighting
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    fn gather(&self, batch: &[usize]) -> (RealMatrix, Vec<usize>) {
        let labels = batch.iter().map(|&i| self.train.labels()[i]).collect();
        (rows_matrix(&self.train, batch), labels)
    }

    /// Mean cross-entropy and accuracy over a whole dataset.
    pub fn loss_and_accuracy(&self, theta: &DVector<f64>, ds: &Dataset) -> (f64, f64) {
        let mut loss = 0.0;
        let mut correct = 0usize;
        let all: Vec<usize> = (0..ds.len()).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let labels: Vec<usize> = chunk.iter().map(|&i| ds.labels()[i]).collect();
            let fwd = self.net.forward(theta.as_slice(), rows_matrix(ds, chunk), &labels);
            loss += fwd.losses.iter().sum::<f64>();
            correct += argmax_rows(&fwd.probs)
                .iter()
                .zip(&labels)
                .filter(|(p, y)| p == y)
                .count();
        }
        (loss / ds.len() as f64, correct as f64 / ds.len() as f64)
    }

    /// Median `μ_φ(L_i)` over the training examples of each class.
    pub fn median_weights_by_class(&self, theta: &DVector<f64>, phi: &[f64]) -> Option<Vec<f64>> {
        let module = self.weighting.module()?;
        let all: Vec<usize> = (0..self.train.len()).collect();
        let mut per_class = vec![Vec::new(); self.train.class_count()];
        for chunk in all.chunks(EVAL_CHUNK) {
            let (x, labels) = self.gather(chunk);
            let fwd = self.net.forward(theta.as_slice(), x, &labels);
            for (l, &y) in fwd.losses.iter().zip(&labels) {
                per_class[y].push(module.weight(phi, *l));
            }
        }
        Some(per_class.into_iter().map(median).collect())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn rows_matrix(ds: &Dataset, rows: &[usize]) -> RealMatrix {
    let mut buf = Vec::with_capacity(rows.len() * ds.dim());
    for &i in rows {
        buf.extend_from_slice(ds.row(i));
    }
    RealMatrix::from_row_slice(rows.len(), ds.dim(), &buf)
}

impl InnerModel for ClassifierTask {
    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    fn train_loss(&self, theta: &DVector<f64>, phi: &[f64], batch: &[usize]) -> f64 {
        let (x, labels) = self.gather(batch);
        let fwd = self.net.forward(theta.as_slice(), x, &labels);
        self.weighting.loss(&fwd.losses, phi)
    }

    fn train_grad(&self, theta: &DVector<f64>, phi: &[f64], batch: &[usize]) -> DVector<f64> {
        let (x, labels) = self.gather(batch);
        let fwd = self.net.forward(theta.as_slice(), x, &labels);
        let coeffs = self.weighting.coeffs(&fwd.losses, phi);
        self.net.backward(theta.as_slice(), &fwd, &labels, &coeffs)
    }

    fn train_grad_jvp(
        &self,
        theta: &DVector<f64>,
        phi: &[f64],
        batch: &[usize],
        dtheta: &DVector<f64>,
        dphi: &[f64],
    ) -> DVector<f64> {
        let dt = RealMatrix::from_column_slice(dtheta.len(), 1, dtheta.as_slice());
        let dp = RealMatrix::from_column_slice(dphi.len(), 1, dphi);
        self.train_grad_with_jvps(theta, phi, batch, &dt, &dp)
            .1
            .column(0)
            .into_owned()
    }

    fn train_grad_with_jvps(
        &self,
        theta: &DVector<f64>,
        phi: &[f64],
        batch: &[usize],
        dtheta: &RealMatrix,
        dphi: &RealMatrix,
    ) -> (DVector<f64>, RealMatrix) {
        let (x, labels) = self.gather(batch);
        let th = theta.as_slice();
        let fwd = self.net.forward(th, x, &labels);
        let coeffs = self.weighting.coeffs(&fwd.losses, phi);
        let grad = self.net.backward(th, &fwd, &labels, &coeffs);
        let mut jvps = RealMatrix::zeros(theta.len(), dtheta.ncols());
        let q = dphi.nrows();
        for j in 0..dtheta.ncols() {
            let dphi_j = &dphi.as_slice()[j * q..(j + 1) * q];
            let dth = &dtheta.as_slice()[j * theta.len()..(j + 1) * theta.len()];
            let zero_direction = dth.iter().all(|&v| v == 0.0);
            let tf = self.net.tangent_forward(th, dth, &fwd, &labels);
            let dcoeffs = self
                .weighting
                .coeff_tangents(&fwd.losses, &tf.dlosses, phi, dphi_j);
            if zero_direction && dcoeffs.iter().all(|&v| v == 0.0) {
                continue;
            }
            let col = self
                .net
                .tangent_backward(th, dth, &fwd, &tf, &labels, &coeffs, &dcoeffs);
            jvps.set_column(j, &col);
        }
        (grad, jvps)
    }

    fn val_loss(&self, theta: &DVector<f64>) -> f64 {
        self.val_loss_and_grad(theta).0
    }

    fn val_grad(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.val_loss_and_grad(theta).1
    }

    fn val_loss_and_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let labels = self.val.labels();
        let fwd = self.net.forward(theta.as_slice(), self.val_x.clone(), labels);
        let n = labels.len() as f64;
        let loss = fwd.losses.iter().sum::<f64>() / n;
        let grad = self
            .net
            .backward(theta.as_slice(), &fwd, labels, &vec![1.0 / n; labels.len()]);
        (loss, grad)
    }
}

impl Task for ClassifierTask {
    fn initial_params(&self) -> DVector<f64> {
        self.net.init(self.init_seed)
    }

    fn batch(&self, step: u64) -> Vec<usize> {
        self.batches.batch(step)
    }

    fn evaluate(&self, theta: &DVector<f64>, phi: &[f64]) -> Vec<(String, f64)> {
        let (val_loss, val_acc) = self.loss_and_accuracy(theta, &self.val);
        let mut out = vec![
            ("val_loss".to_string(), val_loss),
            ("val_accuracy".to_string(), val_acc),
        ];
        if let Some(test) = &self.test {
            let (test_loss, test_acc) = self.loss_and_accuracy(theta, test);
            out.push(("test_loss".into(), test_loss));
            out.push(("test_accuracy".into(), test_acc));
        }
        if let Some(medians) = self.median_weights_by_class(theta, phi) {
            for (c, m) in medians.into_iter().enumerate() {
                out.push((format!("median_weight_class_{c}"), m));
            }
        }
        out
    }
}
