//! Evaluation, forgetting and the run artifacts.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::{CloudOracle, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::{ActionMask, PolicyParams};

/// Snapshot of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: u64,
    pub task_evaluated: usize,
    pub joint_accuracy: f64,
    /// Accuracy on the prompts answered locally; absent when there are none.
    pub local_only_accuracy: Option<f64>,
    pub local_fraction: f64,
    pub realized_ratio: f64,
    /// Expected number of prompts answered locally, the denominator of
    /// `local_only_accuracy`.
    pub local_count: f64,
    pub lambda: f64,
}

/// Evaluates with explicit per-prompt offload probabilities.
///
/// Offloaded prompts score `oracle.accuracy`; the rest use the greedy answer
/// (HELP excluded) and score 0 or 1. Format noise is not applied.
pub fn evaluate_routed(
    params: &PolicyParams,
    task: &TaskSpec,
    oracle: &CloudOracle,
    offload: &[f64],
) -> Result<EvalRecord> {
    let prompts = task.prompts();
    if offload.len() != prompts.len() {
        return Err(Error::domain("one offload probability per prompt is required"));
    }
    let mut joint = 0.0;
    let mut local_mass = 0.0;
    let mut local_correct = 0.0;
    for (&prompt, &q) in prompts.iter().zip(offload) {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::domain(format!("offload probability {q} outside [0, 1]")));
        }
        let mut hit = 0.0;
        if q < 1.0 {
            let answer = params.greedy_action(prompt, ActionMask::AnswersOnly)?;
            if task.local_answer_correct(prompt, answer)? {
                hit = 1.0;
            }
        }
        joint += q * oracle.accuracy + (1.0 - q) * hit;
        local_mass += 1.0 - q;
        local_correct += (1.0 - q) * hit;
    }
    let n = prompts.len() as f64;
    let local_fraction = local_mass / n;
    Ok(EvalRecord {
        iteration: 0,
        task_evaluated: task.task_id,
        joint_accuracy: joint / n,
        local_only_accuracy: (local_mass > 0.0).then(|| local_correct / local_mass),
        local_fraction,
        realized_ratio: 1.0 - local_fraction,
        local_count: local_mass,
        lambda: 0.0,
    })
}

/// Greedy evaluation of a policy whose own HELP action routes to the cloud.
pub fn evaluate(params: &PolicyParams, task: &TaskSpec, oracle: &CloudOracle) -> Result<EvalRecord> {
    let offload = task
        .prompts()
        .iter()
        .map(|&p| Ok(if params.is_help(params.greedy_action(p, ActionMask::All)?) { 1.0 } else { 0.0 }))
        .collect::<Result<Vec<_>>>()?;
    evaluate_routed(params, task, oracle, &offload)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub acc_task: f64,
    pub acc_switch: f64,
    /// `(acc_task - acc_switch) / acc_task`; absent when `acc_task == 0`.
    pub forgetting_rate: Option<f64>,
}

/// Relative accuracy loss. Works on fractions or percentages alike since
/// the ratio is scale free. Negative values mean backward transfer.
pub fn forgetting(acc_task: f64, acc_switch: f64) -> ForgettingReport {
    ForgettingReport {
        acc_task,
        acc_switch,
        forgetting_rate: (acc_task != 0.0).then(|| (acc_task - acc_switch) / acc_task),
    }
}

/// Mean of the last `window` values.
pub fn trailing_ratio(history: &[f64], window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::domain("empty window"));
    }
    if window > history.len() {
        return Err(Error::domain(format!(
            "window {window} longer than history {}",
            history.len()
        )));
    }
    let tail = &history[history.len() - window..];
    Ok(tail.iter().sum::<f64>() / window as f64)
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub task_index: usize,
    pub lambda: f64,
    pub j_hat_c: f64,
    pub train_mean_reward: f64,
    /// Cloud oracle draws this iteration, and the most drawn for one prompt.
    pub cloud_calls: u64,
    pub max_calls_per_prompt: u64,
    pub eval: Option<EvalRecord>,
}

pub const CSV_HEADER: &str = "iteration,task_index,lambda,j_hat_c,train_mean_reward,eval_joint_acc,eval_local_only_acc,eval_local_fraction";

fn num(out: &mut String, v: f64) {
    // shortest round-trip representation keeps files byte-stable
    write!(out, "{v}").unwrap();
}

pub fn metrics_csv(records: &[IterationRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        write!(out, "{},{},", r.iteration, r.task_index).unwrap();
        num(&mut out, r.lambda);
        out.push(',');
        num(&mut out, r.j_hat_c);
        out.push(',');
        num(&mut out, r.train_mean_reward);
        out.push(',');
        if let Some(e) = &r.eval {
            num(&mut out, e.joint_accuracy);
            out.push(',');
            if let Some(l) = e.local_only_accuracy {
                num(&mut out, l);
            }
            out.push(',');
            num(&mut out, e.local_fraction);
        } else {
            out.push_str(",,");
        }
        out.push('\n');
    }
    out
}

pub fn write_metrics_csv(path: &Path, records: &[IterationRecord]) -> Result<()> {
    std::fs::write(path, metrics_csv(records)).map_err(|e| Error::io(path, e))
}

/// A parsed metrics CSV: header plus numeric columns (`NaN` for empty cells).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::domain("empty CSV"))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let mut columns = vec![Vec::new(); header.len()];
        for (n, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(Error::domain(format!(
                    "CSV row {} has {} cells, header has {}",
                    n + 2,
                    cells.len(),
                    header.len()
                )));
            }
            for (col, cell) in columns.iter_mut().zip(cells) {
                let cell = cell.trim();
                let v = if cell.is_empty() {
                    f64::NAN
                } else {
                    cell.parse().map_err(|_| {
                        Error::domain(format!("CSV row {}: `{cell}` is not a number", n + 2))
                    })?
                };
                col.push(v);
            }
        }
        if columns.first().map_or(true, Vec::is_empty) {
            return Err(Error::domain("CSV has no data rows"));
        }
        Ok(CsvTable { header, columns })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
    }
}
