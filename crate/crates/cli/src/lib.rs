//! Experiment harness for glocal hypergradient estimation: TOML configs,
//! parallel (strategy × seed) cells, CSV/JSONL logs, SVG figures and
//! runtime benchmarks.

pub mod bench;
pub mod config;
pub mod experiment;
pub mod output;
pub mod plot;
pub mod run;
pub mod svg;

pub use config::{ConfigError, RunConfig};
pub use run::{cmd_run, CliError, RunOptions, RunReport};
