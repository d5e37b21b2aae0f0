use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use glocal_core::driver::Strategy;

use crate::output::{io_err, read_manifest, Manifest};
use crate::run::CliError;
use crate::svg::{render_line_chart, render_spectrum, Eigenvalue, LineChart, Series};

/// A parsed CSV file: header plus string rows.
#[derive(Debug, Clone)]
pub struct CsvData {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvData {
    pub fn read(path: &Path) -> Result<CsvData, CliError> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| CliError::Logs(format!("{}: {e}", path.display())))?;
        let columns = reader
            .headers()
            .map_err(|e| CliError::Logs(format!("{}: {e}", path.display())))?
            .iter()
            .map(String::from)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| CliError::Logs(format!("{}: {e}", path.display())))?;
            rows.push(rec.iter().map(String::from).collect());
        }
        Ok(CsvData { columns, rows })
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric column; unparsable or empty cells become NaN.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.index(name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r[i].parse().unwrap_or(f64::NAN))
                .collect(),
        )
    }
}

fn mean_by_step(runs: &[(Vec<f64>, Vec<f64>)]) -> Vec<(f64, f64)> {
    let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for (steps, values) in runs {
        for (&s, &v) in steps.iter().zip(values) {
            let e = acc.entry(s.to_bits()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    let mut pts: Vec<(f64, f64)> = acc
        .into_iter()
        .map(|(bits, (sum, n))| (f64::from_bits(bits), sum / n as f64))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

fn strategy_series(
    dir: &Path,
    manifest: &Manifest,
    file: &str,
    column: &str,
) -> Result<Vec<Series>, CliError> {
    let mut by_strategy: Vec<(Strategy, Vec<(Vec<f64>, Vec<f64>)>)> = Vec::new();
    for cell in &manifest.cells {
        let path = dir.join(&cell.dir).join(file);
        if !path.exists() {
            continue;
        }
        let data = CsvData::read(&path)?;
        let (Some(steps), Some(values)) = (data.column("step"), data.column(column)) else {
            continue;
        };
        match by_strategy.iter_mut().find(|(s, _)| *s == cell.strategy) {
            Some((_, runs)) => runs.push((steps, values)),
            None => by_strategy.push((cell.strategy, vec![(steps, values)])),
        }
    }
    Ok(by_strategy
        .into_iter()
        .map(|(strategy, runs)| Series {
            label: strategy.as_str().to_string(),
            points: mean_by_step(&runs),
        })
        .filter(|s| !s.points.is_empty())
        .collect())
}

/// Spectrum rows of one outer step: `(mode, λ)` plus the step itself.
fn last_spectrum(path: &Path, step: Option<u64>) -> Result<Option<(u64, Vec<Eigenvalue>)>, CliError> {
    if !path.exists() {
        return Ok(None);
    }
    let data = CsvData::read(path)?;
    let (Some(s), Some(re), Some(im)) = (data.column("s"), data.column("re_lambda"), data.column("im_lambda")) else {
        return Err(CliError::Logs(format!("{}: not a spectrum log", path.display())));
    };
    let target = match step {
        Some(t) => t as f64,
        None => match s.iter().copied().fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))) {
            Some(v) => v,
            None => return Ok(None),
        },
    };
    let eig: Vec<Eigenvalue> = (0..s.len())
        .filter(|&i| s[i] == target)
        .map(|i| Eigenvalue { re: re[i], im: im[i] })
        .collect();
    Ok((!eig.is_empty()).then_some((target as u64, eig)))
}

fn write_svg(path: &Path, svg: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::write(path, svg).map_err(io_err(path))?;
    written.push(path.to_path_buf());
    Ok(())
}

/// Render figures for a run directory into `<dir>/figures` (or `out`).
pub fn cmd_plot(dir: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let manifest = read_manifest(dir).map_err(CliError::Logs)?;
    let fig_dir = out.map_or_else(|| dir.join("figures"), Path::to_path_buf);
    let mut written = Vec::new();

    let loss = strategy_series(dir, &manifest, "inner.csv", "val_loss")?;
    if loss.is_empty() {
        return Err(CliError::Logs(format!("{}: no inner-step log rows to plot", dir.display())));
    }
    fs::create_dir_all(&fig_dir).map_err(io_err(&fig_dir))?;
    write_svg(
        &fig_dir.join("val_loss.svg"),
        &render_line_chart(&LineChart {
            title: format!("{}: validation loss", manifest.name),
            x_label: "inner step".into(),
            y_label: "validation loss".into(),
            series: loss,
            x_range: None,
            log_y: false,
        }),
        &mut written,
    )?;

    for name in manifest.hp_names.iter().filter(|n| !n.starts_with("mu.")) {
        let series = strategy_series(dir, &manifest, "outer.csv", &format!("phi.{name}"))?;
        if series.is_empty() {
            continue;
        }
        write_svg(
            &fig_dir.join(format!("hp_{name}.svg")),
            &render_line_chart(&LineChart {
                title: format!("{}: {name}", manifest.name),
                x_label: "inner step".into(),
                y_label: name.clone(),
                series,
                x_range: None,
                log_y: false,
            }),
            &mut written,
        )?;
    }

    // Spectrum figures come from the first cell that fitted DMD.
    for cell in &manifest.cells {
        let cell_dir = dir.join(&cell.dir);
        let Some((s, eig)) = last_spectrum(&cell_dir.join("spectrum.csv"), None)? else {
            continue;
        };
        let label = format!("{} seed {}", cell.strategy.as_str(), cell.seed);
        write_svg(
            &fig_dir.join("spectrum.svg"),
            &render_spectrum(
                &format!("DMD eigenvalues, {label}, outer step {s}"),
                &eig,
                manifest.unit_circle_tol,
            ),
            &mut written,
        )?;
        let modes = CsvData::read(&cell_dir.join("modes.csv"))?;
        let (Some(ms), Some(mj), Some(mt), Some(mm)) = (
            modes.column("s"),
            modes.column("mode_index"),
            modes.column("t"),
            modes.column("magnitude"),
        ) else {
            break;
        };
        let mut by_mode: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
        for i in 0..ms.len() {
            if ms[i] == s as f64 {
                by_mode.entry(mj[i] as u64).or_default().push((mt[i], mm[i]));
            }
        }
        let series = by_mode
            .into_iter()
            .map(|(j, points)| {
                let e = eig.get(j as usize).copied();
                let modulus = e.map_or(f64::NAN, |e| (e.re * e.re + e.im * e.im).sqrt());
                Series {
                    label: format!("mode {j} |λ|={modulus:.3}"),
                    points,
                }
            })
            .collect();
        write_svg(
            &fig_dir.join("mode_magnitudes.svg"),
            &render_line_chart(&LineChart {
                title: format!("Mode magnitudes, {label}, outer step {s}"),
                x_label: "t".into(),
                y_label: "|b λ^t| ‖u‖".into(),
                series,
                x_range: Some((0.0, manifest.mode_horizon as f64)),
                log_y: true,
            }),
            &mut written,
        )?;
        break;
    }
    Ok(written)
}

/// Human-readable spectrum table for a cell directory or a `spectrum.csv` path.
pub fn inspect_spectrum(path: &Path, step: Option<u64>, tol: f64) -> Result<String, CliError> {
    let file = if path.is_dir() {
        path.join("spectrum.csv")
    } else {
        path.to_path_buf()
    };
    if !file.exists() {
        return Err(CliError::Logs(format!("{}: no spectrum log", file.display())));
    }
    let data = CsvData::read(&file)?;
    let col = |n: &str| {
        data.column(n)
            .ok_or_else(|| CliError::Logs(format!("{}: missing column {n}", file.display())))
    };
    let (s, j, re, im, modulus, amp, kept) = (
        col("s")?,
        col("mode_index")?,
        col("re_lambda")?,
        col("im_lambda")?,
        col("modulus")?,
        col("amplitude_modulus")?,
        col("kept_flag")?,
    );
    let mut out = format!(
        "{:>4} {:>4} {:>12} {:>12} {:>10} {:>10} {:>12} {:>5}\n",
        "s", "mode", "re", "im", "|λ|", "|λ-1|", "|b|", "kept"
    );
    let mut rows = 0;
    let mut near = 0;
    for i in 0..s.len() {
        if step.is_some_and(|t| s[i] != t as f64) {
            continue;
        }
        let dist = ((re[i] - 1.0).powi(2) + im[i].powi(2)).sqrt();
        near += usize::from(dist < tol);
        rows += 1;
        out += &format!(
            "{:>4} {:>4} {:>12.6} {:>12.6} {:>10.6} {:>10.6} {:>12.4e} {:>5}\n",
            s[i] as u64,
            j[i] as u64,
            re[i],
            im[i],
            modulus[i],
            dist,
            amp[i],
            if kept[i] == 1.0 { "yes" } else { "no" }
        );
    }
    if rows == 0 {
        return Err(CliError::Logs(format!("{}: no spectrum rows selected", file.display())));
    }
    out += &format!("{near} of {rows} eigenvalues satisfy |λ-1| < {tol}\n");
    Ok(out)
}
