use std::fs;
use std::path::{Path, PathBuf};

use glocal_core::driver::{RunStatus, Strategy};
use rayon::prelude::*;

use crate::config::{ConfigError, RunConfig};
use crate::experiment::{build_cell, data_root, prepare_data, run_cell, ExperimentError};
use crate::output::{
    cell_dir_name, io_err, write_cell, write_json, CellEntry, IoError, Manifest, CONFIG_COPY,
    MANIFEST_FILE, SCHEMA_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Logs(String),
}

impl CliError {
    /// Process exit code: 2 for invalid configs or arguments, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Command-line overrides shared by `run` and `bench`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub strategies: Option<Vec<Strategy>>,
    pub data_root: Option<PathBuf>,
}

impl RunOptions {
    /// Load the config and apply seed/strategy overrides.
    pub fn load_config(&self, path: &Path) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(path)?;
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(CliError::Usage("--seed-override needs at least one seed".into()));
            }
            cfg.seeds = seeds.clone();
        }
        if let Some(strategies) = &self.strategies {
            if strategies.is_empty() {
                return Err(CliError::Usage("--strategy-override needs at least one strategy".into()));
            }
            cfg.strategies = strategies.clone();
        }
        Ok(cfg)
    }

    pub fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| Path::new("runs").join(&cfg.name))
    }

    pub fn data_root(&self) -> PathBuf {
        self.data_root.clone().unwrap_or_else(data_root)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

impl RunReport {
    pub fn all_completed(&self) -> bool {
        self.manifest.cells.iter().all(|c| c.status == "completed")
    }
}

/// Run every (strategy, seed) cell of the config, writing logs under the output directory.
pub fn cmd_run(config_path: &Path, opts: &RunOptions) -> Result<RunReport, CliError> {
    let cfg = opts.load_config(config_path)?;
    let splits = prepare_data(&cfg, &opts.data_root())?;
    let out_dir = opts.out_dir(&cfg);
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;

    // Fail fast on task construction problems before any cell trains.
    let hp_names = build_cell(&cfg, splits.as_ref(), cfg.seeds[0])?
        .hp
        .names()
        .to_vec();

    let cells: Vec<(Strategy, u64)> = cfg
        .strategies
        .iter()
        .flat_map(|&st| cfg.seeds.iter().map(move |&s| (st, s)))
        .collect();
    let workers = opts.workers.unwrap_or_else(num_cpus::get_physical).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;

    let entries: Vec<CellEntry> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(strategy, seed)| {
                let dir_name = cell_dir_name(strategy, seed);
                let outcome = run_cell(&cfg, splits.as_ref(), strategy, seed)
                    .map_err(|e| e.to_string())
                    .and_then(|log| {
                        write_cell(&out_dir.join(&dir_name), &log, seed)
                            .map(|_| log.status)
                            .map_err(|e| e.to_string())
                    });
                let (status, error) = match outcome {
                    Ok(RunStatus::Completed) => ("completed", None),
                    Ok(RunStatus::Diverged { message, .. }) => ("diverged", Some(message)),
                    Err(e) => ("failed", Some(e)),
                };
                CellEntry {
                    strategy,
                    seed,
                    dir: dir_name,
                    status: status.into(),
                    error,
                }
            })
            .collect()
    });

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_file: CONFIG_COPY.to_string(),
        config_sha256: cfg.sha256(),
        strategies: cfg.strategies.clone(),
        seeds: cfg.seeds.clone(),
        hp_names,
        unit_circle_tol: cfg.schedule.unit_circle_tol,
        mode_horizon: cfg.schedule.mode_horizon,
        cells: entries,
    };
    let copy = out_dir.join(CONFIG_COPY);
    fs::write(&copy, &cfg.source_text).map_err(io_err(&copy))?;
    write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(RunReport { out_dir, manifest })
}
