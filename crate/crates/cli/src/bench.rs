use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use glocal_core::driver::Strategy;
use serde::{Deserialize, Serialize};

use crate::experiment::{prepare_data, run_cell};
use crate::output::{io_err, write_json, CellValue, Table};
use crate::run::{CliError, RunOptions};

pub const DEFAULT_REPEATS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub times_s: Vec<f64>,
    pub median_s: f64,
    /// `median / median(local)`, when local was benchmarked.
    pub ratio_to_local: Option<f64>,
    pub inner_steps_executed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub repeats: usize,
    pub rows: Vec<BenchRow>,
    pub glocal_over_local: Option<f64>,
    pub global_over_local: Option<f64>,
    pub no_hpo_fastest: bool,
}

impl BenchReport {
    pub fn row(&self, strategy: Strategy) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "{:<12} {:>10} {:>10} {:>12}\n",
            "strategy", "median_s", "vs_local", "inner_steps"
        );
        for r in &self.rows {
            let ratio = r.ratio_to_local.map_or("-".to_string(), |v| format!("{v:.2}"));
            s += &format!(
                "{:<12} {:>10.3} {:>10} {:>12}\n",
                r.strategy.as_str(),
                r.median_s,
                ratio,
                r.inner_steps_executed
            );
        }
        if let Some(v) = self.glocal_over_local {
            s += &format!("glocal/local = {v:.3}\n");
        }
        if let Some(v) = self.global_over_local {
            s += &format!("global/local = {v:.3}\n");
        }
        s += &format!("no-hpo fastest: {}\n", self.no_hpo_fastest);
        s
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Time every configured strategy plus the no-HPO baseline on the first seed,
/// `repeats` times each, sequentially so runs do not compete for cores.
pub fn cmd_bench(
    config_path: &Path,
    opts: &RunOptions,
    repeats: usize,
) -> Result<(BenchReport, PathBuf), CliError> {
    if repeats == 0 {
        return Err(CliError::Usage("--repeats must be positive".into()));
    }
    let cfg = opts.load_config(config_path)?;
    let splits = prepare_data(&cfg, &opts.data_root())?;
    let mut strategies = cfg.strategies.clone();
    if !strategies.contains(&Strategy::NoHpo) {
        strategies.push(Strategy::NoHpo);
    }
    let seed = cfg.seeds[0];
    let mut rows = Vec::new();
    for &strategy in &strategies {
        let mut times = Vec::with_capacity(repeats);
        let mut steps = 0;
        for _ in 0..repeats {
            let start = Instant::now();
            let log = run_cell(&cfg, splits.as_ref(), strategy, seed)?;
            times.push(start.elapsed().as_secs_f64());
            steps = log.inner_steps_executed;
        }
        rows.push(BenchRow {
            strategy,
            median_s: median(&times),
            times_s: times,
            ratio_to_local: None,
            inner_steps_executed: steps,
        });
    }
    let local = rows
        .iter()
        .find(|r| r.strategy == Strategy::Local)
        .map(|r| r.median_s);
    for r in &mut rows {
        r.ratio_to_local = local.map(|l| r.median_s / l);
    }
    let ratio = |st: Strategy| rows.iter().find(|r| r.strategy == st).and_then(|r| r.ratio_to_local);
    let no_hpo = rows.iter().find(|r| r.strategy == Strategy::NoHpo).map(|r| r.median_s);
    let report = BenchReport {
        seed,
        repeats,
        glocal_over_local: ratio(Strategy::Glocal),
        global_over_local: ratio(Strategy::Global),
        no_hpo_fastest: no_hpo.is_some_and(|t| rows.iter().all(|r| r.median_s >= t)),
        rows,
    };

    let out_dir = opts.out_dir(&cfg);
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let mut columns = vec!["strategy".to_string()];
    columns.extend((1..=repeats).map(|k| format!("run{k}_s")));
    columns.extend(["median_s", "ratio_to_local", "inner_steps_executed"].map(String::from));
    let mut table = Table::new(columns);
    for r in &report.rows {
        let mut row = vec![CellValue::from(r.strategy.as_str())];
        row.extend(r.times_s.iter().map(|&t| CellValue::from(t)));
        row.push(r.median_s.into());
        row.push(r.ratio_to_local.map_or(CellValue::Empty, CellValue::from));
        row.push(r.inner_steps_executed.into());
        table.push(row);
    }
    table.write(&out_dir, "bench")?;
    write_json(&out_dir.join("bench.json"), &report)?;
    Ok((report, out_dir))
}
