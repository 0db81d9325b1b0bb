//! Sweep the dual step size: too small never reaches the budget, too large
//! makes λ swing. Runs through the same sweep machinery as `dagrpo sweep`
//! and writes under the output root.
//!
//!     cargo run --example eta_lambda_sweep

use dagrpo::config::parse_run_config;
use dagrpo::harness::output_root;
use dagrpo::sweep::{run_sweep, Grid, SweepConfig};

const BASE: &str = r#"
seed = 0
batch_size = 64
eval_every = 500

[schedule]
num_prompts = 256
num_answers = 4

[[schedule.tasks]]
iterations = 2000
tau = 0.3
"#;

fn main() -> dagrpo::Result<()> {
    let base = parse_run_config(BASE)?;
    let sweep = SweepConfig {
        name: "example-eta-lambda".into(),
        base: Some(base.clone()),
        base_file: None,
        grid: Grid {
            eta_lambda: Some(vec![1e-4, 1e-3, 1e-2, 3e-2, 1e-1, 3e-1]),
            ..Grid::default()
        },
    };
    let (dir, entries) = run_sweep(&sweep, &base, &output_root(), true)?;
    println!("{:>8} {:>10} {:>8} {:>12}", "eta_lam", "ratio@100", "lambda", "lambda_std");
    for e in &entries {
        println!(
            "{:>8} {:>10.3} {:>8.3} {:>12.4}",
            e.params.eta_lambda.unwrap(),
            e.final_trailing_ratio.unwrap_or(f64::NAN),
            e.final_lambda.unwrap_or(f64::NAN),
            e.lambda_std_tail.unwrap_or(f64::NAN)
        );
    }
    println!("index: {}", dir.join("index.csv").display());
    Ok(())
}
