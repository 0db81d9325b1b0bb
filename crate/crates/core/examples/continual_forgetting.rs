//! Two tasks in sequence, with 30% of the prompts changing their answer at
//! the switch. Every strategy runs the same schedule; the table shows joint
//! accuracy on task 0 before and after the switch and the forgetting rate.
//!
//!     cargo run --example continual_forgetting [seeds]

use dagrpo::environment::{ScheduleConfig, TaskConfig};
use dagrpo::trainer::{run_schedule, RunConfig, Strategy};

fn task(tau: f64) -> TaskConfig {
    TaskConfig {
        iterations: 1500,
        tau,
        hard_fraction: 0.5,
        format_violation_prob: 0.05,
        tau_phases: vec![],
    }
}

fn main() -> dagrpo::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let strategies = [
        Strategy::DaGrpo,
        Strategy::FixedRewardGrpo { lambda: 0.8, per_phase: vec![] },
        Strategy::NaiveRouter { offload_prob: 0.3 },
        Strategy::TrainedRouter { train_fraction: 0.5 },
        Strategy::EdgeOnly,
    ];
    println!(
        "{:<18} {:>9} {:>9} {:>10} {:>11} {:>11}",
        "strategy", "acc_task", "acc_after", "forgetting", "new_task", "cloud_share"
    );
    for strategy in strategies {
        let mut sums = [0.0; 5];
        for seed in 0..seeds {
            let mut config = RunConfig::with_schedule(
                seed,
                ScheduleConfig {
                    num_prompts: 256,
                    num_answers: 4,
                    overlap: 0.3,
                    tasks: vec![task(0.3), task(0.5)],
                },
            );
            config.batch_size = 64;
            config.eval_every = 500;
            config.strategy = strategy.clone();
            let art = run_schedule(&config)?;
            let f = &art.forgetting[0];
            let new = &art.task_end_evals[1][1];
            for (s, v) in sums.iter_mut().zip([
                f.acc_task,
                f.acc_switch,
                f.forgetting_rate.unwrap_or(f64::NAN),
                new.joint_accuracy,
                new.realized_ratio,
            ]) {
                *s += v / seeds as f64;
            }
        }
        println!(
            "{:<18} {:>9.3} {:>9.3} {:>10.3} {:>11.3} {:>11.3}",
            strategy.name(),
            sums[0],
            sums[1],
            sums[2],
            sums[3],
            sums[4]
        );
    }
    Ok(())
}
