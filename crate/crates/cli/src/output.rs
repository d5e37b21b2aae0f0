//! On-disk log layout. Every cell directory holds:
//!
//! | file | columns |
//! |------|---------|
//! | `inner.csv` | `step,train_loss,val_loss` (every `log_stride` inner steps) |
//! | `outer.csv` | `s,step,source,applied,val_loss,phi_raw.<name>…,phi.<name>…,h.<name>…,rank,spectral_radius,kept_modes,nearest_unit_distance,e_tau_norm,tail_bound,diverging,theta_hash,checkpoint_hash,restored_hash,note,wall_time_s` |
//! | `hypergrads.csv` | `step,h.<name>…` (every inner step) |
//! | `spectrum.csv` | `s,mode_index,re_lambda,im_lambda,modulus,amplitude_modulus,kept_flag` |
//! | `modes.csv` | `s,mode_index,t,magnitude` |
//!
//! Each CSV has a `.jsonl` twin with one object per row. `summary.json` holds
//! final metrics; `wall_time_s` is the only non-deterministic field anywhere.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use glocal_core::dmd::SPECTRUM_CSV_HEADER;
use glocal_core::driver::{RunLog, RunStatus, Strategy};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";
pub const WALL_TIME_COLUMN: &str = "wall_time_s";

#[derive(Debug, thiserror::Error)]
#[error("{}: {source}", path.display())]
pub struct IoError {
    pub path: PathBuf,
    #[source]
    pub source: io::Error,
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Int(u64),
    Float(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl CellValue {
    fn csv(&self) -> String {
        match self {
            CellValue::Int(v) => v.to_string(),
            CellValue::Float(v) => v.to_string(),
            CellValue::Text(s) => s.clone(),
            CellValue::Bool(b) => u8::from(*b).to_string(),
            CellValue::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            CellValue::Int(v) => json!(v),
            CellValue::Float(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            CellValue::Text(s) => json!(s),
            CellValue::Bool(b) => json!(b),
            CellValue::Empty => Value::Null,
        }
    }
}

impl From<f64> for CellValue {
    fn from(v: f64) -> Self {
        CellValue::Float(v)
    }
}

impl From<u64> for CellValue {
    fn from(v: u64) -> Self {
        CellValue::Int(v)
    }
}

impl From<usize> for CellValue {
    fn from(v: usize) -> Self {
        CellValue::Int(v as u64)
    }
}

impl From<bool> for CellValue {
    fn from(v: bool) -> Self {
        CellValue::Bool(v)
    }
}

impl From<&str> for CellValue {
    fn from(v: &str) -> Self {
        CellValue::Text(v.to_string())
    }
}

fn hash_cell(h: Option<u64>) -> CellValue {
    h.map_or(CellValue::Empty, |h| CellValue::Text(format!("{h:016x}")))
}

/// Column-major description of one CSV/JSONL file.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<CellValue>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<CellValue>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Writes `<stem>.csv` and `<stem>.jsonl` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), IoError> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| IoError {
            path: csv_path.clone(),
            source: e.into(),
        })?;
        let csv_err = |e: csv::Error| IoError {
            path: csv_path.clone(),
            source: e.into(),
        };
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(CellValue::csv)).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(&csv_path))?;

        let jsonl_path = dir.join(format!("{stem}.jsonl"));
        let file = fs::File::create(&jsonl_path).map_err(io_err(&jsonl_path))?;
        let mut out = BufWriter::new(file);
        for row in &self.rows {
            let obj: Map<String, Value> = self
                .columns
                .iter()
                .cloned()
                .zip(row.iter().map(CellValue::json))
                .collect();
            serde_json::to_writer(&mut out, &obj).map_err(|e| IoError {
                path: jsonl_path.clone(),
                source: e.into(),
            })?;
            out.write_all(b"\n").map_err(io_err(&jsonl_path))?;
        }
        out.flush().map_err(io_err(&jsonl_path))
    }
}

pub fn inner_table(log: &RunLog) -> Table {
    let mut t = Table::new(vec!["step".into(), "train_loss".into(), "val_loss".into()]);
    for r in &log.inner {
        t.push(vec![r.step.into(), r.train_loss.into(), r.val_loss.into()]);
    }
    t
}

pub fn outer_table(log: &RunLog) -> Table {
    let names = &log.hp_names;
    let mut columns: Vec<String> = ["s", "step", "source", "applied", "val_loss"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for prefix in ["phi_raw", "phi", "h"] {
        columns.extend(names.iter().map(|n| format!("{prefix}.{n}")));
    }
    columns.extend(
        [
            "rank",
            "spectral_radius",
            "kept_modes",
            "nearest_unit_distance",
            "e_tau_norm",
            "tail_bound",
            "diverging",
            "theta_hash",
            "checkpoint_hash",
            "restored_hash",
            "note",
            WALL_TIME_COLUMN,
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let mut t = Table::new(columns);
    for r in &log.outer {
        let mut row: Vec<CellValue> = vec![
            r.s.into(),
            r.step.into(),
            r.source.as_str().into(),
            r.applied.into(),
            r.val_loss.into(),
        ];
        for v in r.phi_raw_after.iter().chain(&r.phi_after).chain(&r.hypergrad) {
            row.push((*v).into());
        }
        match &r.dmd {
            Some(d) => row.extend([
                d.rank.into(),
                d.spectral_radius.into(),
                d.kept_mode_count.into(),
                d.nearest_unit_distance.into(),
                d.e_tau_norm.into(),
                d.tail_bound.into(),
                d.diverging.into(),
            ]),
            None => row.extend(std::iter::repeat_n(CellValue::Empty, 7)),
        }
        row.push(hash_cell(Some(r.theta_hash)));
        row.push(hash_cell(r.checkpoint_hash));
        row.push(hash_cell(r.restored_hash));
        row.push(r.note.as_deref().map_or(CellValue::Empty, CellValue::from));
        row.push(r.wall_time_s.into());
        t.push(row);
    }
    t
}

pub fn hypergrad_table(log: &RunLog) -> Table {
    let mut columns = vec!["step".to_string()];
    columns.extend(log.hp_names.iter().map(|n| format!("h.{n}")));
    let mut t = Table::new(columns);
    for r in &log.hypergrads {
        let mut row = vec![CellValue::from(r.step)];
        row.extend(r.h.iter().map(|&v| CellValue::from(v)));
        t.push(row);
    }
    t
}

pub fn spectrum_table(log: &RunLog) -> Table {
    let mut columns = vec!["s".to_string()];
    columns.extend(SPECTRUM_CSV_HEADER.split(',').map(String::from));
    let mut t = Table::new(columns);
    for r in &log.outer {
        let Some(d) = &r.dmd else { continue };
        for e in &d.spectrum {
            t.push(vec![
                r.s.into(),
                e.mode_index.into(),
                e.re_lambda.into(),
                e.im_lambda.into(),
                e.modulus.into(),
                e.amplitude_modulus.into(),
                e.kept.into(),
            ]);
        }
    }
    t
}

pub fn modes_table(log: &RunLog) -> Table {
    let mut t = Table::new(vec![
        "s".into(),
        "mode_index".into(),
        "t".into(),
        "magnitude".into(),
    ]);
    for r in &log.outer {
        let Some(d) = &r.dmd else { continue };
        for (j, series) in d.mode_magnitudes.iter().enumerate() {
            for (step, &m) in series.iter().enumerate() {
                t.push(vec![r.s.into(), j.into(), step.into(), m.into()]);
            }
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub seed: u64,
    pub status: RunStatus,
    pub hp_names: Vec<String>,
    pub final_metrics: Map<String, Value>,
    pub final_phi_raw: Vec<f64>,
    pub final_phi: Vec<f64>,
    pub final_theta_hash: String,
    pub inner_steps_executed: u64,
    pub wall_time_s: f64,
}

pub fn cell_summary(log: &RunLog, seed: u64) -> CellSummary {
    CellSummary {
        schema_version: SCHEMA_VERSION,
        strategy: log.strategy,
        seed,
        status: log.status.clone(),
        hp_names: log.hp_names.clone(),
        final_metrics: log
            .final_metrics
            .iter()
            .map(|(k, v)| (k.clone(), CellValue::Float(*v).json()))
            .collect(),
        final_phi_raw: log.final_phi_raw.clone(),
        final_phi: log.final_phi.clone(),
        final_theta_hash: format!("{:016x}", log.final_theta_hash),
        inner_steps_executed: log.inner_steps_executed,
        wall_time_s: log.wall_time_s,
    }
}

pub fn cell_dir_name(strategy: Strategy, seed: u64) -> String {
    format!("{}-seed{seed}", strategy.as_str())
}

/// Write every log file of one cell into `dir` (created if missing).
pub fn write_cell(dir: &Path, log: &RunLog, seed: u64) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    inner_table(log).write(dir, "inner")?;
    outer_table(log).write(dir, "outer")?;
    hypergrad_table(log).write(dir, "hypergrads")?;
    spectrum_table(log).write(dir, "spectrum")?;
    modes_table(log).write(dir, "modes")?;
    write_json(&dir.join("summary.json"), &cell_summary(log, seed))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IoError {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub strategy: Strategy,
    pub seed: u64,
    pub dir: String,
    /// `completed`, `diverged` or `failed`.
    pub status: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub name: String,
    pub code_version: String,
    pub config_file: String,
    pub config_sha256: String,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub hp_names: Vec<String>,
    pub unit_circle_tol: f64,
    pub mode_horizon: usize,
    pub cells: Vec<CellEntry>,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, String> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(format!(
            "{}: schema version {} is not supported (expected {SCHEMA_VERSION})",
            path.display(),
            manifest.schema_version
        ));
    }
    Ok(manifest)
}

fn strip_wall_time(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove(WALL_TIME_COLUMN);
            map.values_mut().for_each(strip_wall_time);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_wall_time),
        _ => {}
    }
}

fn normalize_file(path: &Path, text: &str) -> String {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => {
            let mut lines = text.lines();
            let Some(header) = lines.next() else {
                return String::new();
            };
            // Wall time is always the last column and never quoted.
            let drop = header.rsplit(',').next() == Some(WALL_TIME_COLUMN);
            let keep = |line: &str| -> String {
                match line.rsplit_once(',') {
                    Some((rest, _)) if drop => rest.to_string(),
                    _ => line.to_string(),
                }
            };
            std::iter::once(header)
                .chain(lines)
                .map(keep)
                .collect::<Vec<_>>()
                .join("\n")
        }
        Some("json") | Some("jsonl") => text
            .lines()
            .map(|line| match serde_json::from_str::<Value>(line) {
                Ok(mut v) => {
                    strip_wall_time(&mut v);
                    v.to_string()
                }
                Err(_) => line.to_string(),
            })
            .collect::<Vec<_>>()
            .join("\n"),
        _ => text.to_string(),
    }
}

/// Every log file under `dir` (relative path → contents), with wall-time
/// columns and fields removed. Two runs of one config compare equal.
pub fn normalized_contents(dir: &Path) -> Result<BTreeMap<String, String>, IoError> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(io_err(&d))? {
            let path = entry.map_err(io_err(&d))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().into_owned();
            let normalized = if path.file_name().is_some_and(|n| n == "summary.json" || n == MANIFEST_FILE) {
                // Pretty-printed JSON: normalize as one document.
                match serde_json::from_str::<Value>(&text) {
                    Ok(mut v) => {
                        strip_wall_time(&mut v);
                        v.to_string()
                    }
                    Err(_) => text,
                }
            } else {
                normalize_file(&path, &text)
            };
            out.insert(rel, normalized);
        }
    }
    Ok(out)
}
