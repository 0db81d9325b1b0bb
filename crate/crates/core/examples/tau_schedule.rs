//! Change the target mid-run: one task split into four phases of 1500
//! iterations. Writes the metrics CSV and an SVG with phase markers under
//! the output root (`$DAGRPO_OUT`, default `runs`).
//!
//!     cargo run --example tau_schedule -- 0.1 0.3 0.5 0.7

use dagrpo::environment::{ScheduleConfig, TaskConfig};
use dagrpo::harness::output_root;
use dagrpo::metrics::{trailing_ratio, write_metrics_csv};
use dagrpo::plot::{plot, PhaseMarker, PlotSpec};
use dagrpo::sweep::apply_tau_schedule;
use dagrpo::trainer::{run_schedule, RunConfig};

fn main() -> dagrpo::Result<()> {
    let mut taus: Vec<f64> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    if taus.is_empty() {
        taus = vec![0.1, 0.3, 0.5, 0.7];
    }
    let phase = 1500u64;
    let mut config = RunConfig::with_schedule(
        0,
        ScheduleConfig {
            num_prompts: 256,
            num_answers: 4,
            overlap: 0.0,
            tasks: vec![TaskConfig {
                iterations: phase * taus.len() as u64,
                tau: taus[0],
                hard_fraction: 0.8,
                format_violation_prob: 0.05,
                tau_phases: vec![],
            }],
        },
    );
    config.batch_size = 64;
    config.eval_every = 250;
    apply_tau_schedule(&mut config, &taus)?;

    let art = run_schedule(&config)?;
    let ratios = art.ratio_history();
    for (p, tau) in taus.iter().enumerate() {
        let end = (p as u64 + 1) * phase;
        println!(
            "phase {p} (tau {tau}): ratio over its last 100 iterations {:.3}, lambda {:.3}",
            trailing_ratio(&ratios[..end as usize], 100)?,
            art.records[end as usize - 1].lambda
        );
    }

    let dir = output_root().join("example-tau-schedule");
    std::fs::create_dir_all(&dir).map_err(|e| dagrpo::Error::Io { path: dir.clone(), source: e })?;
    let csv = dir.join("metrics.csv");
    write_metrics_csv(&csv, &art.records)?;
    let spec = PlotSpec {
        source: vec![csv],
        series: vec!["lambda".into(), "j_hat_c".into()],
        output: dir.join("trajectory.svg"),
        phase_markers: taus
            .iter()
            .enumerate()
            .map(|(p, &tau)| PhaseMarker { iteration: p as u64 * phase, tau })
            .collect(),
        title: Some(format!("tau schedule {taus:?}")),
        smooth: Some(50),
    };
    println!("wrote {}", plot(&spec)?.display());
    Ok(())
}
