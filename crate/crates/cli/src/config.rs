use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};

use glocal_core::driver::{OuterOptimizer, Schedule, Strategy};
use glocal_core::tangent::Transform;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

/// Config validation failure, pointing at a line of the source file when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.path.display())?;
        if let Some(line) = self.line {
            write!(f, ":{line}")?;
            if let Some(col) = self.column {
                write!(f, ":{col}")?;
            }
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskSpec {
    Quadratic {
        dim: usize,
        #[serde(default = "default_eig_min")]
        eig_min: f64,
        #[serde(default = "default_eig_max")]
        eig_max: f64,
    },
    MlpClassify {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
        data: DataSpec,
    },
    Reweight {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
        /// Hidden width of the loss-weighting module.
        #[serde(default = "default_mu_hidden")]
        mu_hidden: usize,
        data: DataSpec,
    },
}

fn default_eig_min() -> f64 {
    0.1
}
fn default_eig_max() -> f64 {
    1.0
}
fn default_hidden() -> Vec<usize> {
    vec![18]
}
fn default_batch_size() -> usize {
    128
}
fn default_mu_hidden() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    /// IDX image/label files. Relative paths resolve against the data root.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        /// Load only the first N training-file items (before the validation split).
        train_limit: Option<usize>,
        test_limit: Option<usize>,
        val_count: Option<usize>,
        val_fraction: Option<f64>,
        imbalance: Option<ImbalanceSpec>,
        #[serde(default)]
        data_seed: u64,
    },
    /// Isotropic Gaussian classes; train, validation and test share class centres.
    Gaussian {
        #[serde(default = "default_classes")]
        classes: usize,
        dim: usize,
        train_per_class: usize,
        val_per_class: usize,
        test_per_class: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_noise")]
        noise: f64,
        imbalance: Option<ImbalanceSpec>,
        #[serde(default)]
        data_seed: u64,
    },
}

fn default_classes() -> usize {
    2
}
fn default_separation() -> f64 {
    2.0
}
fn default_noise() -> f64 {
    1.0
}

/// Per-class training subsampling `n_c = floor(N_c · factor^(−c/denominator))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImbalanceSpec {
    pub factor: f64,
    /// Defaults to the class count.
    pub denominator: Option<usize>,
}

/// One optimizer hyperparameter: either learned from `init` or held `fixed`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpSpec {
    pub init: Option<f64>,
    pub fixed: Option<f64>,
    pub transform: Option<Transform>,
}

impl HpSpec {
    pub fn fixed(value: f64) -> Self {
        Self {
            fixed: Some(value),
            ..Self::default()
        }
    }

    pub fn learned(init: f64) -> Self {
        Self {
            init: Some(init),
            ..Self::default()
        }
    }

    pub fn transform_or_default(&self) -> Transform {
        self.transform.unwrap_or(Transform::Sigmoid)
    }

    fn check(&self, name: &str) -> Result<(), String> {
        match (self.init, self.fixed) {
            (Some(_), Some(_)) => Err(format!("{name}: set either `init` or `fixed`, not both")),
            (None, None) => Err(format!("{name}: one of `init` or `fixed` is required")),
            (None, Some(v)) => {
                if self.transform.is_some() {
                    Err(format!("{name}: `transform` only applies to learned hyperparameters"))
                } else if !v.is_finite() {
                    Err(format!("{name}: fixed value must be finite"))
                } else {
                    Ok(())
                }
            }
            (Some(v), None) => match self.transform_or_default() {
                Transform::Sigmoid if !(v > 0.0 && v < 1.0) => Err(format!(
                    "{name}: sigmoid-transformed init must lie in (0, 1), got {v}"
                )),
                Transform::Identity if !v.is_finite() => {
                    Err(format!("{name}: init must be finite"))
                }
                _ => Ok(()),
            },
        }
    }
}

fn sgd_momentum_default() -> HpSpec {
    HpSpec::fixed(0.0)
}
fn beta1_default() -> HpSpec {
    HpSpec::fixed(0.9)
}
fn beta2_default() -> HpSpec {
    HpSpec::fixed(0.999)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InnerSpec {
    Sgd {
        lr: HpSpec,
        #[serde(default = "sgd_momentum_default")]
        momentum: HpSpec,
        #[serde(default = "sgd_momentum_default")]
        weight_decay: HpSpec,
    },
    Adam {
        lr: HpSpec,
        #[serde(default = "beta1_default")]
        beta1: HpSpec,
        #[serde(default = "beta2_default")]
        beta2: HpSpec,
    },
}

impl InnerSpec {
    /// `(name, spec)` in hyperparameter-vector order.
    pub fn entries(&self) -> [(&'static str, HpSpec); 3] {
        match *self {
            InnerSpec::Sgd {
                lr,
                momentum,
                weight_decay,
            } => [("lr", lr), ("momentum", momentum), ("wd", weight_decay)],
            InnerSpec::Adam { lr, beta1, beta2 } => {
                [("lr", lr), ("beta1", beta1), ("beta2", beta2)]
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    task: Spanned<TaskSpec>,
    schedule: Option<Spanned<Schedule>>,
    inner: Spanned<InnerSpec>,
    outer: Option<OuterOptimizer>,
    strategies: Spanned<Vec<Strategy>>,
    seeds: Option<Spanned<Vec<u64>>>,
    output_dir: Option<PathBuf>,
}

/// Validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub task: TaskSpec,
    pub schedule: Schedule,
    pub inner: InnerSpec,
    pub outer: OuterOptimizer,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub source_path: PathBuf,
    pub source_text: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_path_buf(),
            line: None,
            column: None,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<RunConfig, ConfigError> {
        let err_at = |span: Option<Range<usize>>, message: String| {
            let (line, column) = match span {
                Some(s) => {
                    let (l, c) = line_col(text, s.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            ConfigError {
                path: path.to_path_buf(),
                line,
                column,
                message,
            }
        };
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| err_at(e.span(), e.message().to_string()))?;

        let task_span = raw.task.span();
        let task = raw.task.into_inner();
        check_task(&task).map_err(|m| err_at(Some(task_span.clone()), format!("task: {m}")))?;

        let schedule = match raw.schedule {
            Some(s) => {
                let span = s.span();
                let schedule = s.into_inner();
                schedule
                    .validate()
                    .map_err(|e| err_at(Some(span), format!("schedule: {e}")))?;
                schedule
            }
            None => Schedule::default(),
        };

        let inner_span = raw.inner.span();
        let inner = raw.inner.into_inner();
        for (name, spec) in inner.entries() {
            spec.check(name)
                .map_err(|m| err_at(Some(inner_span.clone()), format!("inner: {m}")))?;
        }

        let outer = raw.outer.unwrap_or_default();
        check_outer(&outer).map_err(|m| err_at(None, format!("outer: {m}")))?;

        let strategies_span = raw.strategies.span();
        let strategies = raw.strategies.into_inner();
        if strategies.is_empty() {
            return Err(err_at(Some(strategies_span), "strategies: list is empty".into()));
        }
        let learned = inner.entries().iter().filter(|(_, s)| s.init.is_some()).count()
            + matches!(task, TaskSpec::Reweight { .. }) as usize;
        if learned == 0 && strategies.iter().any(|s| *s != Strategy::NoHpo) {
            return Err(err_at(
                Some(strategies_span),
                "strategies: nothing to optimize (no learned hyperparameters)".into(),
            ));
        }

        let seeds = match raw.seeds {
            Some(s) => {
                let span = s.span();
                let seeds = s.into_inner();
                if seeds.is_empty() {
                    return Err(err_at(Some(span), "seeds: list is empty".into()));
                }
                seeds
            }
            None => vec![0],
        };

        Ok(RunConfig {
            name: raw.name.unwrap_or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "run".into())
            }),
            task,
            schedule,
            inner,
            outer,
            strategies,
            seeds,
            output_dir: raw.output_dir,
            source_path: path.to_path_buf(),
            source_text: text.to_string(),
        })
    }

    /// Hex SHA-256 of the config file contents.
    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.source_text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn check_task(task: &TaskSpec) -> Result<(), String> {
    match task {
        TaskSpec::Quadratic {
            dim,
            eig_min,
            eig_max,
        } => {
            if *dim == 0 {
                return Err("dim must be positive".into());
            }
            if !(*eig_min > 0.0 && eig_min <= eig_max && eig_max.is_finite()) {
                return Err(format!(
                    "need 0 < eig_min <= eig_max, got {eig_min} and {eig_max}"
                ));
            }
            Ok(())
        }
        TaskSpec::MlpClassify {
            hidden,
            batch_size,
            data,
        } => check_net(hidden, *batch_size).and_then(|_| check_data(data)),
        TaskSpec::Reweight {
            hidden,
            batch_size,
            mu_hidden,
            data,
        } => {
            if *mu_hidden == 0 {
                return Err("mu_hidden must be positive".into());
            }
            check_net(hidden, *batch_size).and_then(|_| check_data(data))
        }
    }
}

fn check_net(hidden: &[usize], batch_size: usize) -> Result<(), String> {
    if hidden.contains(&0) {
        return Err("hidden layer widths must be positive".into());
    }
    if batch_size == 0 {
        return Err("batch_size must be positive".into());
    }
    Ok(())
}

fn check_data(data: &DataSpec) -> Result<(), String> {
    let imbalance = match data {
        DataSpec::Idx {
            test_images,
            test_labels,
            val_count,
            val_fraction,
            imbalance,
            ..
        } => {
            if test_images.is_some() != test_labels.is_some() {
                return Err("data: test_images and test_labels go together".into());
            }
            match (val_count, val_fraction) {
                (Some(_), Some(_)) => {
                    return Err("data: set either val_count or val_fraction, not both".into())
                }
                (Some(0), None) => return Err("data: val_count must be positive".into()),
                (None, Some(f)) if !(*f > 0.0 && *f < 1.0) => {
                    return Err(format!("data: val_fraction must lie in (0, 1), got {f}"))
                }
                _ => {}
            }
            imbalance
        }
        DataSpec::Gaussian {
            classes,
            dim,
            train_per_class,
            val_per_class,
            test_per_class,
            noise,
            separation,
            imbalance,
            ..
        } => {
            if *classes < 2 || *dim == 0 {
                return Err("data: need at least 2 classes and a positive dim".into());
            }
            if *train_per_class == 0 || *val_per_class == 0 || *test_per_class == 0 {
                return Err("data: per-class sizes must be positive".into());
            }
            if !(noise.is_finite() && *noise >= 0.0 && separation.is_finite()) {
                return Err("data: noise and separation must be finite, noise >= 0".into());
            }
            imbalance
        }
    };
    if let Some(im) = imbalance {
        if !(im.factor >= 1.0 && im.factor.is_finite()) {
            return Err(format!("data: imbalance factor must be >= 1, got {}", im.factor));
        }
        if im.denominator == Some(0) {
            return Err("data: imbalance denominator must be positive".into());
        }
    }
    Ok(())
}

fn check_outer(outer: &OuterOptimizer) -> Result<(), String> {
    let ok = match *outer {
        OuterOptimizer::Gd { lr } => lr.is_finite() && lr >= 0.0,
        OuterOptimizer::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            lr.is_finite()
                && lr >= 0.0
                && (0.0..1.0).contains(&beta1)
                && (0.0..1.0).contains(&beta2)
                && eps > 0.0
        }
    };
    if ok {
        Ok(())
    } else {
        Err("learning rate must be >= 0, betas in [0, 1), eps > 0".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
strategies = ["local", "glocal"]
seeds = [0, 1]

[task]
kind = "quadratic"
dim = 4

[schedule]
total_steps = 200
tau = 50
sigma = 40
delay_m = 5

[inner]
kind = "sgd"
lr = { init = 0.5 }
weight_decay = { init = 0.01 }
"#;

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(text, Path::new("exp.toml"))
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.name, "exp");
        assert_eq!(cfg.schedule.tau, 50);
        assert_eq!(cfg.schedule.log_stride, 10);
        assert_eq!(cfg.outer, OuterOptimizer::default());
        assert_eq!(cfg.strategies, vec![Strategy::Local, Strategy::Glocal]);
        let InnerSpec::Sgd { momentum, .. } = cfg.inner else {
            panic!("expected sgd")
        };
        assert_eq!(momentum, HpSpec::fixed(0.0));
        assert_eq!(cfg.sha256().len(), 64);
    }

    #[test]
    fn unknown_key_reports_its_line() {
        let text = MINIMAL.replace("delay_m = 5", "delay_m = 5\nwarmup = 3");
        let err = parse(&text).unwrap_err();
        assert_eq!(err.line, Some(14), "{err}");
        assert!(err.to_string().contains("warmup"), "{err}");
        assert!(err.to_string().starts_with("exp.toml:14:"), "{err}");
    }

    #[test]
    fn schedule_violation_points_at_schedule_table() {
        let text = MINIMAL.replace("tau = 50", "tau = 30");
        let err = parse(&text).unwrap_err();
        assert!(err.message.starts_with("schedule:"), "{err}");
        assert_eq!(err.line, Some(9));
    }

    #[test]
    fn sigmoid_init_out_of_range() {
        let text = MINIMAL.replace("init = 0.5", "init = 1.5");
        let err = parse(&text).unwrap_err();
        assert!(err.message.contains("(0, 1)"), "{err}");
    }

    #[test]
    fn init_and_fixed_conflict() {
        let text = MINIMAL.replace("{ init = 0.5 }", "{ init = 0.5, fixed = 0.1 }");
        assert!(parse(&text).unwrap_err().message.contains("not both"));
    }

    #[test]
    fn unknown_strategy_is_rejected() {
        let text = MINIMAL.replace("\"glocal\"", "\"glowcal\"");
        let err = parse(&text).unwrap_err();
        assert_eq!(err.line, Some(2), "{err}");
    }

    #[test]
    fn identical_text_has_identical_hash() {
        let a = parse(MINIMAL).unwrap();
        let b = parse(MINIMAL).unwrap();
        assert_eq!(a.sha256(), b.sha256());
        let c = parse(&MINIMAL.replace("dim = 4", "dim = 5")).unwrap();
        assert_ne!(a.sha256(), c.sha256());
    }

    #[test]
    fn gaussian_data_validation() {
        let text = r#"
strategies = ["local"]
[task]
kind = "reweight"
[task.data]
kind = "gaussian"
dim = 2
train_per_class = 100
val_per_class = 10
test_per_class = 10
imbalance = { factor = 0.5 }
[inner]
kind = "sgd"
lr = { fixed = 0.1 }
"#;
        let err = parse(text).unwrap_err();
        assert!(err.message.contains("imbalance factor"), "{err}");
        assert_eq!(err.line, Some(3));
    }

    #[test]
    fn nothing_to_learn_needs_no_hpo() {
        let text = MINIMAL
            .replace("{ init = 0.5 }", "{ fixed = 0.5 }")
            .replace("{ init = 0.01 }", "{ fixed = 0.01 }");
        assert!(parse(&text).is_err());
        let text = text.replace("[\"local\", \"glocal\"]", "[\"no-hpo\"]");
        assert!(parse(&text).is_ok());
    }
}
