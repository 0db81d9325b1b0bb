//! Run directories and their artifacts.
//!
//! A run directory holds `config.toml` (the config echo), `metrics.csv`,
//! `summary.json` and one checkpoint per task under `checkpoints/`. Its name
//! is derived from the config hash and the seed, so rerunning a config finds
//! the same directory; an existing directory is only replaced when `force`
//! is set.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{config_hash, run_dir_name, to_toml};
use crate::error::{Error, Result};
use crate::metrics::{write_metrics_csv, EvalRecord, ForgettingReport};
use crate::trainer::{run_schedule, RunArtifacts, RunConfig};

/// Environment variable naming the output root.
pub const OUTPUT_ROOT_ENV: &str = "DAGRPO_OUT";

/// `$DAGRPO_OUT`, or `runs` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_dir: String,
    pub config_hash: String,
    pub strategy: String,
    pub iterations: u64,
    pub final_lambda: f64,
    /// Mean cloud-usage ratio over the last 100 iterations (or all of them
    /// in shorter runs).
    pub final_trailing_ratio: f64,
    pub task_end_evals: Vec<Vec<EvalRecord>>,
    pub forgetting: Vec<ForgettingReport>,
    pub config: RunConfig,
}

impl RunSummary {
    pub fn from_artifacts(config: &RunConfig, art: &RunArtifacts) -> Self {
        let ratios = art.ratio_history();
        let window = ratios.len().min(100);
        let tail = &ratios[ratios.len() - window..];
        RunSummary {
            run_dir: run_dir_name(config),
            config_hash: config_hash(config),
            strategy: config.strategy.name().to_string(),
            iterations: art.records.len() as u64,
            final_lambda: art.final_state.dual.lambda,
            final_trailing_ratio: tail.iter().sum::<f64>() / window.max(1) as f64,
            task_end_evals: art.task_end_evals.clone(),
            forgetting: art.forgetting.clone(),
            config: config.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Prepares `root/<run dir>`, refusing to reuse it unless `force`.
pub fn prepare_run_dir(config: &RunConfig, root: &Path, force: bool) -> Result<PathBuf> {
    let dir = root.join(run_dir_name(config));
    if dir.exists() {
        if !force {
            return Err(Error::config(format!(
                "{} already exists; pass --force to overwrite",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let checkpoints = dir.join("checkpoints");
    std::fs::create_dir_all(&checkpoints).map_err(|e| Error::io(&checkpoints, e))?;
    Ok(dir)
}

/// Validates, trains and writes every artifact. Returns the run directory
/// and its summary.
pub fn execute_run(config: &RunConfig, root: &Path, force: bool) -> Result<(PathBuf, RunSummary)> {
    config.validate()?;
    let dir = prepare_run_dir(config, root, force)?;
    write(&dir.join("config.toml"), to_toml(config)?)?;
    let art = run_schedule(config)?;
    write_run_artifacts(&dir, config, &art)
        .map(|summary| (dir, summary))
}

pub fn write_run_artifacts(dir: &Path, config: &RunConfig, art: &RunArtifacts) -> Result<RunSummary> {
    write_metrics_csv(&dir.join("metrics.csv"), &art.records)?;
    for (i, ck) in art.checkpoints.iter().enumerate() {
        ck.save(&dir.join("checkpoints").join(format!("task-{i}.json")))?;
    }
    let summary = RunSummary::from_artifacts(config, art);
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_run_config;

    const CONFIG: &str = r#"
seed = 1
batch_size = 4
group_size = 4
eval_every = 5

[schedule]
num_prompts = 8
num_answers = 3
overlap = 0.25

[[schedule.tasks]]
iterations = 10
tau = 0.3

[[schedule.tasks]]
iterations = 10
tau = 0.5
"#;

    #[test]
    fn run_directory_contract() {
        let root = tempfile::tempdir().unwrap();
        let config = parse_run_config(CONFIG).unwrap();
        let (dir, summary) = execute_run(&config, root.path(), false).unwrap();
        for f in ["config.toml", "metrics.csv", "summary.json", "checkpoints/task-0.json", "checkpoints/task-1.json"] {
            assert!(dir.join(f).exists(), "{f}");
        }
        let first = std::fs::read(dir.join("metrics.csv")).unwrap();
        assert!(matches!(execute_run(&config, root.path(), false), Err(Error::Config(_))));
        execute_run(&config, root.path(), true).unwrap();
        assert_eq!(std::fs::read(dir.join("metrics.csv")).unwrap(), first);

        let back = RunSummary::load(&dir.join("summary.json")).unwrap();
        assert_eq!(back, summary);
        assert_eq!(back.config, config);
        assert_eq!(back.forgetting.len(), 1);
        let echoed = std::fs::read_to_string(dir.join("config.toml")).unwrap();
        assert_eq!(parse_run_config(&echoed).unwrap(), config);
    }
}
