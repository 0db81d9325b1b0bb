//! Load a TOML run file, execute it into a run directory, then reload the
//! final checkpoint and evaluate it again.
//!
//!     cargo run --example run_from_config -- configs/continual.toml

use std::path::PathBuf;

use dagrpo::config::load_run_config;
use dagrpo::environment::make_continual_schedule;
use dagrpo::harness::{execute_run, output_root};
use dagrpo::trainer::{evaluate_state, Checkpoint};

fn main() -> dagrpo::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/continual.toml")));
    let config = load_run_config(&path)?;
    let (dir, summary) = execute_run(&config, &output_root(), true)?;
    println!("run directory {}", dir.display());
    println!("final lambda {:.3}, trailing ratio {:.3}", summary.final_lambda, summary.final_trailing_ratio);
    for (i, f) in summary.forgetting.iter().enumerate() {
        println!("task {i}: accuracy {:.3} -> {:.3}", f.acc_task, f.acc_switch);
    }

    let last = summary.task_end_evals.len() - 1;
    let checkpoint = Checkpoint::load(&dir.join("checkpoints").join(format!("task-{last}.json")))?;
    let state = checkpoint.restore()?;
    let schedule = make_continual_schedule(&config.schedule, config.seed)?;
    let oracle = config.oracle()?;
    for (m, task) in schedule.tasks.iter().enumerate() {
        let eval = evaluate_state(&state, &config, task, &oracle)?;
        println!(
            "restored checkpoint on task {m}: joint accuracy {:.3} (summary says {:.3})",
            eval.joint_accuracy, summary.task_end_evals[last][m].joint_accuracy
        );
    }
    Ok(())
}
