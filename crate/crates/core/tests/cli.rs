use std::path::Path;
use std::process::{Command, Output};

const MINIMAL: &str = r#"
seed = 4
batch_size = 8
eval_every = 10

[schedule]
num_prompts = 16
num_answers = 3

[[schedule.tasks]]
iterations = 30
tau = 0.3
"#;

fn dagrpo(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagrpo"))
        .args(args)
        .env("DAGRPO_OUT", out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn only_run_dir(out: &Path) -> std::path::PathBuf {
    let dirs: Vec<_> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

#[test]
fn run_writes_artifacts_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, MINIMAL).unwrap();

    let first = dagrpo(&out, &["run", cfg.to_str().unwrap()]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let dir = only_run_dir(&out);
    let name = dir.file_name().unwrap().to_str().unwrap().to_string();
    assert!(name.starts_with("run-") && name.ends_with("-s4"), "{name}");
    let csv = std::fs::read(dir.join("metrics.csv")).unwrap();

    let refused = dagrpo(&out, &["run", cfg.to_str().unwrap()]);
    assert_eq!(refused.status.code(), Some(1));
    assert!(stderr(&refused).contains("--force"));

    let again = dagrpo(&out, &["run", "--force", cfg.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(0), "{}", stderr(&again));
    assert_eq!(std::fs::read(dir.join("metrics.csv")).unwrap(), csv);

    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 4);
}

#[test]
fn out_flag_overrides_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, MINIMAL).unwrap();
    let flag = tmp.path().join("flag");
    let o = dagrpo(&tmp.path().join("env"), &["--out", flag.to_str().unwrap(), "run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(flag.exists());
    assert!(!tmp.path().join("env").exists());
}

#[test]
fn invalid_target_is_rejected_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, MINIMAL.replace("tau = 0.3", "tau = 1.5")).unwrap();
    let o = dagrpo(&out, &["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tau"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn parse_errors_carry_positions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, MINIMAL.replace("batch_size = 8", "batch_size = \"eight\"")).unwrap();
    let o = dagrpo(tmp.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("batch_size"), "{err}");
}

#[test]
fn missing_file_and_bad_usage_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(dagrpo(tmp.path(), &["run", "/nonexistent.toml"]).status.code(), Some(1));
    assert_eq!(dagrpo(tmp.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(dagrpo(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn sweep_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    std::fs::write(tmp.path().join("base.toml"), MINIMAL).unwrap();
    let sweep = tmp.path().join("sweep.toml");
    std::fs::write(
        &sweep,
        "name = \"seeds\"\nbase_file = \"base.toml\"\n[grid]\nseeds = [1, 2, 3]\n",
    )
    .unwrap();
    let o = dagrpo(&out, &["sweep", sweep.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sweep_dir = out.join("sweep-seeds");
    let index: serde_json::Value =
        serde_json::from_slice(&std::fs::read(sweep_dir.join("index.json")).unwrap()).unwrap();
    let cells = index.as_array().unwrap();
    assert_eq!(cells.len(), 3);
    let csvs: Vec<Vec<u8>> = cells
        .iter()
        .map(|c| std::fs::read(sweep_dir.join(c["run_dir"].as_str().unwrap()).join("metrics.csv")).unwrap())
        .collect();
    assert!(csvs[0] != csvs[1] && csvs[1] != csvs[2]);

    let first = sweep_dir.join(cells[0]["run_dir"].as_str().unwrap()).join("metrics.csv");
    let spec = tmp.path().join("plot.toml");
    let write_spec = |series: &str| {
        std::fs::write(
            &spec,
            format!(
                "source = [{first:?}]\nseries = [{series}]\noutput = \"fig.svg\"\n\n[[phase_markers]]\niteration = 15\ntau = 0.3\n"
            ),
        )
        .unwrap()
    };
    write_spec("\"lambda\", \"j_hat_c\"");
    let o = dagrpo(&out, &["plot", spec.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let svg = std::fs::read_to_string(tmp.path().join("fig.svg")).unwrap();
    assert_eq!(svg.matches("class=\"panel\"").count(), 2);
    assert!(svg.contains("class=\"phase\""));

    write_spec("\"lambda\", \"no_such_column\"");
    let o = dagrpo(&out, &["plot", spec.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("no_such_column"));
}

#[test]
fn verify_prints_passing_checks() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dagrpo(tmp.path(), &["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 7);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}
