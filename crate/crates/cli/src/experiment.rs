use std::path::{Path, PathBuf};
use std::sync::Arc;

use glocal_core::driver::{run, DriverError, RunLog, RunSpec, Strategy};
use glocal_core::tangent::{
    AdamConfig, HpSource, HyperParams, InnerOptimizer, SgdConfig, TangentError,
};
use glocal_core::tasks::{
    gaussian_classes, holdout_split, imbalance_subsample, load_idx, ClassifierTask, DataError,
    Dataset, LossWeighting, QuadraticTask, ReweightModule, Task, TaskError,
};

use crate::config::{DataSpec, ImbalanceSpec, InnerSpec, RunConfig, TaskSpec};

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "GLOCAL_DATA_DIR";
const DEFAULT_DATA_DIR: &str = "data";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Tangent(#[from] TangentError),
    #[error(transparent)]
    Driver(#[from] DriverError),
}

pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

/// Train/validation/test splits shared by every cell of an experiment.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Arc<Dataset>,
    pub val: Arc<Dataset>,
    pub test: Option<Arc<Dataset>>,
}

/// Load or generate the datasets named by the config. Quadratic tasks need none.
pub fn prepare_data(cfg: &RunConfig, root: &Path) -> Result<Option<Splits>, ExperimentError> {
    let data = match &cfg.task {
        TaskSpec::Quadratic { .. } => return Ok(None),
        TaskSpec::MlpClassify { data, .. } | TaskSpec::Reweight { data, .. } => data,
    };
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    };
    let (train, val, test, imbalance, data_seed) = match data {
        DataSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
            val_count,
            val_fraction,
            imbalance,
            data_seed,
        } => {
            let full = load_idx(&resolve(train_images), &resolve(train_labels), *train_limit)?;
            let fraction = match (val_count, val_fraction) {
                (Some(n), _) => *n as f64 / full.len() as f64,
                (None, Some(f)) => *f,
                (None, None) => 0.1,
            };
            let (train, val) = holdout_split(&full, fraction, *data_seed)?;
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => Some(load_idx(&resolve(i), &resolve(l), *test_limit)?),
                _ => None,
            };
            (train, val, test, *imbalance, *data_seed)
        }
        DataSpec::Gaussian {
            classes,
            dim,
            train_per_class,
            val_per_class,
            test_per_class,
            separation,
            noise,
            imbalance,
            data_seed,
        } => {
            let per = val_per_class + test_per_class + train_per_class;
            let all = gaussian_classes(&vec![per; *classes], *dim, *separation, *noise, *data_seed)?;
            let val = all.per_class_range(0, *val_per_class)?;
            let test = all.per_class_range(*val_per_class, *test_per_class)?;
            let train = all.per_class_range(val_per_class + test_per_class, *train_per_class)?;
            (train, val, Some(test), *imbalance, *data_seed)
        }
    };
    let train = match imbalance {
        Some(ImbalanceSpec {
            factor,
            denominator,
        }) => imbalance_subsample(&train, factor, denominator, data_seed)?,
        None => train,
    };
    Ok(Some(Splits {
        train: Arc::new(train),
        val: Arc::new(val),
        test: test.map(Arc::new),
    }))
}

/// Everything needed to run one (strategy, seed) cell.
pub struct Cell {
    pub task: Box<dyn Task>,
    pub hp: HyperParams,
    pub inner: InnerOptimizer,
}

/// Optimizer hyperparameters in `inner` order; learned ones are pushed onto `hp`.
pub fn build_optimizer(inner: &InnerSpec, hp: &mut HyperParams) -> InnerOptimizer {
    let sources: Vec<HpSource> = inner
        .entries()
        .iter()
        .map(|(name, spec)| match (spec.init, spec.fixed) {
            (Some(init), _) => {
                let transform = spec.transform_or_default();
                let raw = transform
                    .inverse(init)
                    .expect("config validation guarantees an invertible init");
                HpSource::Learned(hp.push(*name, transform, raw))
            }
            (None, fixed) => HpSource::Fixed(fixed.unwrap_or(0.0)),
        })
        .collect();
    match inner {
        InnerSpec::Sgd { .. } => InnerOptimizer::Sgd(SgdConfig {
            lr: sources[0],
            momentum: sources[1],
            weight_decay: sources[2],
        }),
        InnerSpec::Adam { .. } => InnerOptimizer::Adam(AdamConfig {
            lr: sources[0],
            beta1: sources[1],
            beta2: sources[2],
        }),
    }
}

pub fn build_cell(
    cfg: &RunConfig,
    splits: Option<&Splits>,
    seed: u64,
) -> Result<Cell, ExperimentError> {
    let mut hp = HyperParams::new(Vec::new(), Vec::new(), Vec::new())?;
    let inner = build_optimizer(&cfg.inner, &mut hp);
    let task: Box<dyn Task> = match &cfg.task {
        TaskSpec::Quadratic {
            dim,
            eig_min,
            eig_max,
        } => Box::new(QuadraticTask::random(*dim, *eig_min, *eig_max, seed)?),
        TaskSpec::MlpClassify {
            hidden, batch_size, ..
        } => {
            let s = splits.expect("classification tasks have data");
            Box::new(ClassifierTask::new(
                hidden,
                s.train.clone(),
                s.val.clone(),
                s.test.clone(),
                LossWeighting::Mean,
                *batch_size,
                seed,
            )?)
        }
        TaskSpec::Reweight {
            hidden,
            batch_size,
            mu_hidden,
            ..
        } => {
            let s = splits.expect("classification tasks have data");
            let module = ReweightModule::register(&mut hp, *mu_hidden, seed);
            Box::new(ClassifierTask::new(
                hidden,
                s.train.clone(),
                s.val.clone(),
                s.test.clone(),
                LossWeighting::Reweight(module),
                *batch_size,
                seed,
            )?)
        }
    };
    Ok(Cell { task, hp, inner })
}

pub fn run_cell(
    cfg: &RunConfig,
    splits: Option<&Splits>,
    strategy: Strategy,
    seed: u64,
) -> Result<RunLog, ExperimentError> {
    let cell = build_cell(cfg, splits, seed)?;
    let spec = RunSpec {
        strategy,
        schedule: cfg.schedule,
        inner: cell.inner,
        outer: cfg.outer,
    };
    Ok(run(cell.task.as_ref(), &cell.hp, &spec)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HpSpec;
    use glocal_core::tangent::Transform;

    #[test]
    fn optimizer_indices_follow_learned_order() {
        let mut hp = HyperParams::new(Vec::new(), Vec::new(), Vec::new()).unwrap();
        let inner = InnerSpec::Sgd {
            lr: HpSpec::learned(0.1),
            momentum: HpSpec::fixed(0.5),
            weight_decay: HpSpec {
                init: Some(0.2),
                fixed: None,
                transform: Some(Transform::Identity),
            },
        };
        let opt = build_optimizer(&inner, &mut hp);
        let InnerOptimizer::Sgd(c) = opt else {
            panic!("sgd expected")
        };
        assert_eq!(c.lr, HpSource::Learned(0));
        assert_eq!(c.momentum, HpSource::Fixed(0.5));
        assert_eq!(c.weight_decay, HpSource::Learned(1));
        assert_eq!(hp.names(), &["lr".to_string(), "wd".to_string()]);
        let values = hp.values();
        assert!((values[0] - 0.1).abs() < 1e-12);
        assert_eq!(values[1], 0.2);
    }
}
