use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use glocal_cli::bench::{cmd_bench, DEFAULT_REPEATS};
use glocal_cli::plot::{cmd_plot, inspect_spectrum};
use glocal_cli::{cmd_run, CliError, RunOptions};
use glocal_core::dmd::DEFAULT_UNIT_CIRCLE_TOL;
use glocal_core::driver::Strategy;

#[derive(Parser)]
#[command(name = "glocal", version, about = "Glocal hypergradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (strategy, seed) cell of a config and write logs.
    Run(RunArgs),
    /// Median-of-N wall times per strategy, plus the no-HPO baseline.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = DEFAULT_REPEATS)]
        repeats: usize,
    },
    /// Render SVG figures from a run directory.
    Plot {
        log_dir: PathBuf,
        /// Figure directory (default: <log_dir>/figures).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the fitted DMD spectra of a cell directory or spectrum.csv.
    InspectSpectrum {
        path: PathBuf,
        /// Only this outer step.
        #[arg(long)]
        step: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_UNIT_CIRCLE_TOL)]
        tol: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: config `output_dir`, else runs/<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: physical cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Replace the config's seeds, e.g. `--seed-override 3,4`.
    #[arg(long, value_delimiter = ',')]
    seed_override: Option<Vec<u64>>,
    /// Replace the config's strategies, e.g. `--strategy-override local,glocal`.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    strategy_override: Option<Vec<Strategy>>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::parse(s).ok_or_else(|| {
        format!("unknown strategy `{s}` (expected local, global, glocal, global-full or no-hpo)")
    })
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            out: self.out.clone(),
            workers: self.workers,
            seeds: self.seed_override.clone(),
            strategies: self.strategy_override.clone(),
            data_root: None,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Run(args) => {
            let report = cmd_run(&args.config, &args.options())?;
            for cell in &report.manifest.cells {
                match &cell.error {
                    Some(e) => eprintln!("{}: {} ({e})", cell.dir, cell.status),
                    None => println!("{}: {}", cell.dir, cell.status),
                }
            }
            println!("logs written to {}", report.out_dir.display());
            Ok(if report.all_completed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
        Command::Bench { run, repeats } => {
            let (report, out) = cmd_bench(&run.config, &run.options(), repeats)?;
            print!("{}", report.render());
            println!("bench written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { log_dir, out } => {
            for path in cmd_plot(&log_dir, out.as_deref())? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::InspectSpectrum { path, step, tol } => {
            print!("{}", inspect_spectrum(&path, step, tol)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
