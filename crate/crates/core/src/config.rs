//! Reading run configurations from TOML.
//!
//! A run file maps one-to-one onto [`RunConfig`]. Unknown keys are rejected,
//! parse errors carry the line and column, and value errors name the field.
//!
//! ```toml
//! seed = 7
//! group_size = 8          # G
//! batch_size = 64         # distinct prompts per iteration
//! eta_theta = 1600.0      # policy step size
//! eta_lambda = 0.01       # dual step size
//! lambda_init = 0.5
//! eval_every = 50
//! cloud_accuracy = 0.984
//!
//! [strategy]
//! kind = "da_grpo"        # or fixed_reward_grpo / naive_router / trained_router / edge_only
//!
//! [rewards]
//! answer_reward = 1.0
//! format_penalty = 0.1
//! cloud_cost = 1.0
//!
//! [schedule]
//! num_prompts = 128
//! num_answers = 4
//! overlap = 0.3           # share of prompts whose answer changes per task
//!
//! [[schedule.tasks]]
//! iterations = 1500
//! tau = 0.3
//! hard_fraction = 0.5
//! format_violation_prob = 0.05
//!
//! [[schedule.tasks]]
//! iterations = 1500
//! tau = 0.5
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trainer::RunConfig;

/// Parses and validates a run configuration.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn to_toml(config: &RunConfig) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::config(e.to_string()))
}

/// SHA-256 of the canonical JSON form of `config` with the seed left out,
/// so seeds of one configuration share a hash.
pub fn config_hash(config: &RunConfig) -> String {
    let mut unseeded = config.clone();
    unseeded.seed = 0;
    let canonical = serde_json::to_vec(&unseeded).expect("config serializes");
    Sha256::digest(canonical)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// `run-<first 12 hex digits of the hash>-s<seed>`.
pub fn run_dir_name(config: &RunConfig) -> String {
    format!("run-{}-s{}", &config_hash(config)[..12], config.seed)
}
