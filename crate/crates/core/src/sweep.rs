//! Grid sweeps over run configurations.
//!
//! ```toml
//! name = "dual-step"
//! base_file = "two_phase.toml"   # or an inline [base] table
//!
//! [grid]
//! eta_lambda = [1e-4, 1e-2, 3e-1]
//! seeds = [0, 1, 2]
//! tau_schedules = [[0.1, 0.3, 0.5, 0.7], [0.7, 0.5, 0.3, 0.1]]
//! ```
//!
//! Every combination of the listed axes becomes one run under
//! `<root>/sweep-<name>/`, next to an `index.csv` and `index.json`
//! describing each cell. A cell that fails is recorded and the sweep moves on.
//!
//! A τ schedule either sets one τ per task (when its length equals the number
//! of tasks) or splits a single-task base into equally long phases.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::run_dir_name;
use crate::environment::TauPhase;
use crate::error::{Error, Result};
use crate::harness::{prepare_run_dir, write_run_artifacts};
use crate::trainer::{run_schedule, RunConfig, Strategy};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub eta_theta: Option<Vec<f64>>,
    pub eta_lambda: Option<Vec<f64>>,
    pub lambda_init: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub tau_schedules: Option<Vec<Vec<f64>>>,
    pub strategies: Option<Vec<Strategy>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub base: Option<RunConfig>,
    /// Base run file, relative to the sweep file.
    pub base_file: Option<PathBuf>,
    #[serde(default)]
    pub grid: Grid,
}

fn default_name() -> String {
    "sweep".into()
}

/// One point of the grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub eta_theta: Option<f64>,
    pub eta_lambda: Option<f64>,
    pub lambda_init: Option<f64>,
    pub seed: Option<u64>,
    pub tau_schedule: Option<Vec<f64>>,
    pub strategy: Option<Strategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub cell: usize,
    pub params: CellParams,
    pub run_dir: Option<String>,
    pub ok: bool,
    pub message: String,
    pub final_lambda: Option<f64>,
    pub final_trailing_ratio: Option<f64>,
    /// Standard deviation of λ over the last 500 iterations.
    pub lambda_std_tail: Option<f64>,
}

impl SweepConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<(Self, RunConfig)> {
        let sweep: SweepConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let base = match (&sweep.base, &sweep.base_file) {
            (Some(b), None) => b.clone(),
            (None, Some(f)) => crate::config::load_run_config(&base_dir.join(f))?,
            _ => return Err(Error::config("sweep: exactly one of `base` and `base_file` is required")),
        };
        base.validate()?;
        if sweep.name.is_empty() || sweep.name.contains(['/', '\\']) {
            return Err(Error::config("sweep.name must be a plain file name"));
        }
        Ok((sweep, base))
    }

    pub fn load(path: &Path) -> Result<(Self, RunConfig)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, dir).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn axis<T: Clone>(name: &str, values: &Option<Vec<T>>) -> Result<Vec<Option<T>>> {
    match values {
        None => Ok(vec![None]),
        Some(v) if v.is_empty() => Err(Error::config(format!("grid.{name} is empty"))),
        Some(v) => Ok(v.iter().cloned().map(Some).collect()),
    }
}

/// Cross product of the grid axes in a fixed order.
pub fn expand_grid(grid: &Grid) -> Result<Vec<CellParams>> {
    if grid == &Grid::default() {
        return Err(Error::config("empty grid: list at least one axis"));
    }
    let mut cells = Vec::new();
    for strategy in axis("strategies", &grid.strategies)? {
        for tau_schedule in axis("tau_schedules", &grid.tau_schedules)? {
            for eta_theta in axis("eta_theta", &grid.eta_theta)? {
                for eta_lambda in axis("eta_lambda", &grid.eta_lambda)? {
                    for lambda_init in axis("lambda_init", &grid.lambda_init)? {
                        for seed in axis("seeds", &grid.seeds)? {
                            cells.push(CellParams {
                                eta_theta,
                                eta_lambda,
                                lambda_init,
                                seed,
                                tau_schedule: tau_schedule.clone(),
                                strategy: strategy.clone(),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

/// The base config with one cell's overrides applied and validated.
pub fn apply_cell(base: &RunConfig, cell: &CellParams) -> Result<RunConfig> {
    let mut c = base.clone();
    if let Some(v) = cell.eta_theta {
        c.eta_theta = v;
    }
    if let Some(v) = cell.eta_lambda {
        c.eta_lambda = v;
    }
    if let Some(v) = cell.lambda_init {
        c.lambda_init = v;
    }
    if let Some(v) = cell.seed {
        c.seed = v;
    }
    if let Some(s) = &cell.strategy {
        c.strategy = s.clone();
    }
    if let Some(taus) = &cell.tau_schedule {
        apply_tau_schedule(&mut c, taus)?;
    }
    c.validate()?;
    Ok(c)
}

/// Sets one τ per task, or splits a single task into equal phases.
pub fn apply_tau_schedule(config: &mut RunConfig, taus: &[f64]) -> Result<()> {
    if taus.is_empty() {
        return Err(Error::config("empty tau schedule"));
    }
    let tasks = &mut config.schedule.tasks;
    if taus.len() == tasks.len() {
        for (t, &tau) in tasks.iter_mut().zip(taus) {
            t.tau = tau;
            t.tau_phases.clear();
        }
    } else if tasks.len() == 1 {
        let task = &mut tasks[0];
        let n = taus.len() as u64;
        if task.iterations < n {
            return Err(Error::config("tau schedule has more phases than iterations"));
        }
        task.tau = taus[0];
        task.tau_phases = taus
            .iter()
            .enumerate()
            .map(|(i, &tau)| TauPhase {
                start: i as u64 * task.iterations / n,
                tau,
            })
            .collect();
    } else {
        return Err(Error::config(format!(
            "tau schedule of length {} fits neither the {} tasks nor a single-task base",
            taus.len(),
            tasks.len()
        )));
    }
    Ok(())
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn run_cell(base: &RunConfig, cell: &CellParams, root: &Path, force: bool, entry: &mut IndexEntry) -> Result<()> {
    let config = apply_cell(base, cell)?;
    entry.run_dir = Some(run_dir_name(&config));
    let dir = prepare_run_dir(&config, root, force)?;
    std::fs::write(dir.join("config.toml"), crate::config::to_toml(&config)?)
        .map_err(|e| Error::io(dir.join("config.toml"), e))?;
    let art = run_schedule(&config)?;
    let summary = write_run_artifacts(&dir, &config, &art)?;
    let lambdas = art.lambda_history();
    let tail = &lambdas[lambdas.len().saturating_sub(500)..];
    entry.final_lambda = Some(summary.final_lambda);
    entry.final_trailing_ratio = Some(summary.final_trailing_ratio);
    entry.lambda_std_tail = Some(std_dev(tail));
    Ok(())
}

/// Runs every cell under `root/sweep-<name>` and writes the index files.
pub fn run_sweep(sweep: &SweepConfig, base: &RunConfig, root: &Path, force: bool) -> Result<(PathBuf, Vec<IndexEntry>)> {
    let cells = expand_grid(&sweep.grid)?;
    let dir = root.join(format!("sweep-{}", sweep.name));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut entries = Vec::with_capacity(cells.len());
    for (i, cell) in cells.into_iter().enumerate() {
        let mut entry = IndexEntry {
            cell: i,
            params: cell.clone(),
            run_dir: None,
            ok: true,
            message: String::new(),
            final_lambda: None,
            final_trailing_ratio: None,
            lambda_std_tail: None,
        };
        if let Err(e) = run_cell(base, &cell, &dir, force, &mut entry) {
            entry.ok = false;
            entry.message = e.to_string();
        }
        entries.push(entry);
    }
    let json = dir.join("index.json");
    std::fs::write(&json, serde_json::to_string_pretty(&entries)?).map_err(|e| Error::io(&json, e))?;
    let csv = dir.join("index.csv");
    std::fs::write(&csv, index_csv(&entries)).map_err(|e| Error::io(&csv, e))?;
    Ok((dir, entries))
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub fn index_csv(entries: &[IndexEntry]) -> String {
    let mut out = String::from(
        "cell,status,run_dir,seed,strategy,eta_theta,eta_lambda,lambda_init,tau_schedule,final_lambda,final_trailing_ratio,lambda_std_tail,message\n",
    );
    for e in entries {
        let p = &e.params;
        let taus = p
            .tau_schedule
            .as_ref()
            .map(|t| t.iter().map(ToString::to_string).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},\"{}\"",
            e.cell,
            if e.ok { "ok" } else { "failed" },
            opt(&e.run_dir),
            opt(&p.seed),
            p.strategy.as_ref().map(Strategy::name).unwrap_or(""),
            opt(&p.eta_theta),
            opt(&p.eta_lambda),
            opt(&p.lambda_init),
            taus,
            opt(&e.final_lambda),
            opt(&e.final_trailing_ratio),
            opt(&e.lambda_std_tail),
            e.message.replace('"', "'"),
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SWEEP: &str = r#"
name = "t"

[base]
seed = 0
batch_size = 4
group_size = 4
eval_every = 5

[base.schedule]
num_prompts = 8
num_answers = 3

[[base.schedule.tasks]]
iterations = 8
tau = 0.3

[grid]
seeds = [0, 1, 2]
"#;

    #[test]
    fn seeds_make_distinct_runs() {
        let root = tempfile::tempdir().unwrap();
        let (sweep, base) = SweepConfig::parse(SWEEP, Path::new(".")).unwrap();
        let (dir, entries) = run_sweep(&sweep, &base, root.path(), false).unwrap();
        assert_eq!(entries.len(), 3);
        assert!(entries.iter().all(|e| e.ok));
        let csvs: Vec<Vec<u8>> = entries
            .iter()
            .map(|e| std::fs::read(dir.join(e.run_dir.as_ref().unwrap()).join("metrics.csv")).unwrap())
            .collect();
        assert_ne!(csvs[0], csvs[1]);
        assert_ne!(csvs[1], csvs[2]);
        assert!(dir.join("index.csv").exists() && dir.join("index.json").exists());
    }

    #[test]
    fn failing_cell_is_recorded() {
        let root = tempfile::tempdir().unwrap();
        let text = SWEEP.replace("seeds = [0, 1, 2]", "eta_lambda = [0.01, -1.0, 0.02]");
        let (sweep, base) = SweepConfig::parse(&text, Path::new(".")).unwrap();
        let (_, entries) = run_sweep(&sweep, &base, root.path(), false).unwrap();
        assert!(entries[0].ok && !entries[1].ok && entries[2].ok);
        assert!(entries[1].message.contains("eta_lambda"));
    }

    #[test]
    fn empty_grids_are_errors() {
        assert!(expand_grid(&Grid::default()).is_err());
        let g = Grid { seeds: Some(vec![]), ..Grid::default() };
        assert!(expand_grid(&g).is_err());
        let text = SWEEP.replace("seeds = [0, 1, 2]", "");
        let (sweep, _) = SweepConfig::parse(&text, Path::new(".")).unwrap();
        assert!(expand_grid(&sweep.grid).is_err());
    }

    #[test]
    fn cross_product_order() {
        let g = Grid {
            eta_lambda: Some(vec![0.1, 0.2]),
            seeds: Some(vec![5, 6, 7]),
            ..Grid::default()
        };
        let cells = expand_grid(&g).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[1].seed, Some(6));
        assert_eq!(cells[3].eta_lambda, Some(0.2));
    }

    #[test]
    fn tau_schedules() {
        let (_, base) = SweepConfig::parse(SWEEP, Path::new(".")).unwrap();
        let mut c = base.clone();
        apply_tau_schedule(&mut c, &[0.1, 0.3, 0.5, 0.7]).unwrap();
        let starts: Vec<u64> = c.schedule.tasks[0].tau_phases.iter().map(|p| p.start).collect();
        assert_eq!(starts, vec![0, 2, 4, 6]);
        let mut c = base.clone();
        apply_tau_schedule(&mut c, &[0.4]).unwrap();
        assert_eq!(c.schedule.tasks[0].tau, 0.4);
    }
}
