//! Train on one stationary task with a 30% cloud budget and watch the
//! realized ratio and λ settle.
//!
//!     cargo run --example budget_tracking [seed]

use dagrpo::environment::{ScheduleConfig, TaskConfig};
use dagrpo::metrics::trailing_ratio;
use dagrpo::trainer::{run_schedule, RunConfig};

fn main() -> dagrpo::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut config = RunConfig::with_schedule(
        seed,
        ScheduleConfig {
            num_prompts: 256,
            num_answers: 4,
            overlap: 0.0,
            tasks: vec![TaskConfig {
                iterations: 2000,
                tau: 0.3,
                hard_fraction: 0.5,
                format_violation_prob: 0.05,
                tau_phases: vec![],
            }],
        },
    );
    config.batch_size = 64;

    let art = run_schedule(&config)?;
    let ratios = art.ratio_history();
    println!("{:>9} {:>10} {:>8}", "iteration", "ratio@100", "lambda");
    for t in (200..=ratios.len()).step_by(200) {
        println!("{t:>9} {:>10.3} {:>8.3}", trailing_ratio(&ratios[..t], 100)?, art.records[t - 1].lambda);
    }
    let eval = &art.task_end_evals[0][0];
    println!(
        "greedy policy: joint accuracy {:.3}, cloud share {:.3}",
        eval.joint_accuracy, eval.realized_ratio
    );
    Ok(())
}
