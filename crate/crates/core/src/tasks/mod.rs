//! Inner problems and their data.

mod batches;
mod classifier;
mod dataset;
pub mod dual;
mod mlp;
mod quadratic;
mod reweight;

pub use batches::BatchSchedule;
pub use classifier::ClassifierTask;
pub use dataset::{
    gaussian_classes, holdout_split, imbalance_counts, imbalance_subsample, load_idx, DataError,
    Dataset,
};
pub use mlp::{argmax_rows, Forward, Mlp, TangentForward, LEAKY_SLOPE};
pub use quadratic::{quadratic_oracle_hypergradient, QuadraticTask};
pub use reweight::{LossWeighting, ReweightModule};

use nalgebra::DVector;

use crate::tangent::InnerModel;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("invalid task: {0}")]
    Config(String),
    #[error("divergent dynamics: {0}")]
    Diverged(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// An inner problem together with its initialization, data order, and final metrics.
pub trait Task: InnerModel {
    fn initial_params(&self) -> DVector<f64>;

    /// Minibatch for 0-based inner step `step`; a pure function of the step.
    fn batch(&self, step: u64) -> Vec<usize>;

    /// Named end-of-run metrics.
    fn evaluate(&self, theta: &DVector<f64>, phi: &[f64]) -> Vec<(String, f64)>;
}
