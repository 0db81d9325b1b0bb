use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dagrpo::config::load_run_config;
use dagrpo::harness::{execute_run, OUTPUT_ROOT_ENV};
use dagrpo::plot::{plot, PlotSpec};
use dagrpo::sweep::{run_sweep, SweepConfig};

#[derive(Parser)]
#[command(name = "dagrpo", version, about = "Budgeted local/cloud policy optimization simulator")]
struct Cli {
    /// Directory under which run and sweep directories are created.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its run directory.
    Run {
        config: PathBuf,
        /// Replace an existing run directory.
        #[arg(long)]
        force: bool,
    },
    /// Run every cell of a parameter grid.
    Sweep {
        sweep_config: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Render metrics CSVs to an SVG chart.
    Plot { plot_spec: PathBuf },
    /// Check the estimator and dual update against exact oracles.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<dagrpo::Error>())
                .map_or(2, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Run { config, force } => run(&config, &cli.out, force),
        Command::Sweep { sweep_config, force } => sweep(&sweep_config, &cli.out, force),
        Command::Plot { plot_spec } => {
            let spec = PlotSpec::load(&plot_spec)?;
            let path = plot(&spec)?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Verify { seed } => {
            let checks = dagrpo::verify::run_all(seed)?;
            let mut ok = true;
            for c in &checks {
                println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            Ok(if ok { 0 } else { 2 })
        }
    }
}

fn run(config: &Path, out: &Path, force: bool) -> anyhow::Result<u8> {
    let config = load_run_config(config)?;
    let (dir, summary) = execute_run(&config, out, force)?;
    println!("{}", dir.display());
    println!(
        "strategy {} iterations {} final lambda {:.4} trailing ratio {:.4}",
        summary.strategy, summary.iterations, summary.final_lambda, summary.final_trailing_ratio
    );
    Ok(0)
}

fn sweep(path: &Path, out: &Path, force: bool) -> anyhow::Result<u8> {
    let (sweep, base) = SweepConfig::load(path)?;
    let (dir, entries) = run_sweep(&sweep, &base, out, force)?;
    let failed = entries.iter().filter(|e| !e.ok).count();
    println!("{}", dir.display());
    println!("{} cells, {} failed", entries.len(), failed);
    Ok(0)
}
