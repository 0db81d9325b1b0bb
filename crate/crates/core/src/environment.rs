//! Synthetic continual-learning world.
//!
//! A task assigns every prompt of a shared prompt space a ground-truth answer
//! and a solvability flag. Hard prompts cannot be answered correctly by the
//! local policy: a local answer on a hard prompt is always graded wrong, so the
//! only way to earn reward there is to ask the cloud.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{ActionId, PromptId};
use crate::rng::RngStream;

/// Reward and cost magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    /// Reward for a correct, well-formatted answer.
    pub answer_reward: f64,
    /// Penalty magnitude for a format violation.
    pub format_penalty: f64,
    /// Cost of one cloud request.
    pub cloud_cost: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            answer_reward: 1.0,
            format_penalty: 0.1,
            cloud_cost: 1.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.answer_reward) || !ok(self.format_penalty) || !(self.cloud_cost.is_finite() && self.cloud_cost > 0.0) {
            return Err(Error::config(
                "rewards: answer_reward and format_penalty must be >= 0, cloud_cost > 0",
            ));
        }
        Ok(())
    }
}

/// The fixed cloud model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudOracle {
    pub accuracy: f64,
}

impl CloudOracle {
    pub fn new(accuracy: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::domain(format!("cloud accuracy {accuracy} outside [0, 1]")));
        }
        Ok(CloudOracle { accuracy })
    }
}

/// A change of the collaboration target at an offset inside a task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauPhase {
    /// Iteration offset from the start of the task.
    pub start: u64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct PromptEntry {
    correct: ActionId,
    solvable: bool,
}

/// One task of the continual schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub num_answers: usize,
    pub iterations: u64,
    /// Collaboration target per phase, sorted by start; the first phase
    /// starts at offset 0.
    pub tau_phases: Vec<TauPhase>,
    pub format_violation_prob: f64,
    entries: Vec<Option<PromptEntry>>,
    prompts: Vec<PromptId>,
}

impl TaskSpec {
    /// Builds a task over prompts `0..correct.len()`.
    pub fn new(
        task_id: usize,
        num_answers: usize,
        correct_action: Vec<ActionId>,
        locally_solvable: Vec<bool>,
        iterations: u64,
        tau: f64,
        format_violation_prob: f64,
    ) -> Result<Self> {
        if correct_action.len() != locally_solvable.len() || correct_action.is_empty() {
            return Err(Error::domain(
                "correct_action and locally_solvable must be nonempty and aligned",
            ));
        }
        if num_answers < 2 {
            return Err(Error::domain("need at least two answer actions"));
        }
        if let Some(a) = correct_action.iter().find(|a| a.0 >= num_answers) {
            return Err(Error::domain(format!(
                "correct action {} is not an answer action (K = {num_answers})",
                a.0
            )));
        }
        check_unit("tau", tau)?;
        check_unit("format_violation_prob", format_violation_prob)?;
        if iterations == 0 {
            return Err(Error::domain("task iterations must be positive"));
        }
        let entries = correct_action
            .iter()
            .zip(&locally_solvable)
            .map(|(&correct, &solvable)| Some(PromptEntry { correct, solvable }))
            .collect();
        Ok(TaskSpec {
            task_id,
            num_answers,
            iterations,
            tau_phases: vec![TauPhase { start: 0, tau }],
            format_violation_prob,
            entries,
            prompts: (0..correct_action.len()).map(PromptId).collect(),
        })
    }

    pub fn with_tau_phases(mut self, phases: Vec<TauPhase>) -> Result<Self> {
        validate_phases(&phases, self.iterations)?;
        self.tau_phases = phases;
        Ok(self)
    }

    pub fn prompts(&self) -> &[PromptId] {
        &self.prompts
    }

    pub fn help(&self) -> ActionId {
        ActionId(self.num_answers)
    }

    pub fn tau(&self) -> f64 {
        self.tau_phases[0].tau
    }

    /// Target in force at `offset` iterations into the task.
    pub fn tau_at(&self, offset: u64) -> f64 {
        self.tau_phases
            .iter()
            .rev()
            .find(|p| p.start <= offset)
            .map_or(self.tau(), |p| p.tau)
    }

    fn entry(&self, prompt: PromptId) -> Result<PromptEntry> {
        self.entries
            .get(prompt.0)
            .copied()
            .flatten()
            .ok_or_else(|| Error::domain(format!("prompt {} is not part of task {}", prompt.0, self.task_id)))
    }

    pub fn correct_action(&self, prompt: PromptId) -> Result<ActionId> {
        self.entry(prompt).map(|e| e.correct)
    }

    pub fn locally_solvable(&self, prompt: PromptId) -> Result<bool> {
        self.entry(prompt).map(|e| e.solvable)
    }

    /// Whether an answer action chosen locally would be graded correct.
    pub fn local_answer_correct(&self, prompt: PromptId, action: ActionId) -> Result<bool> {
        let e = self.entry(prompt)?;
        Ok(e.solvable && e.correct == action)
    }

    pub fn hard_prompts(&self) -> impl Iterator<Item = PromptId> + '_ {
        self.prompts
            .iter()
            .copied()
            .filter(|&p| matches!(self.entry(p), Ok(e) if !e.solvable))
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::domain(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

fn validate_phases(phases: &[TauPhase], iterations: u64) -> Result<()> {
    match phases.first() {
        Some(p) if p.start == 0 => {}
        _ => return Err(Error::config("tau_phases must start at offset 0")),
    }
    for w in phases.windows(2) {
        if w[1].start <= w[0].start {
            return Err(Error::config("tau_phases starts must be strictly increasing"));
        }
    }
    for p in phases {
        if !(0.0..=1.0).contains(&p.tau) {
            return Err(Error::config(format!("tau = {} outside [0, 1]", p.tau)));
        }
        if p.start >= iterations {
            return Err(Error::config(format!(
                "tau phase starting at {} lies beyond the task length {iterations}",
                p.start
            )));
        }
    }
    Ok(())
}

/// Composition operator: a HELP response is replaced by the cloud answer,
/// any other response passes through unchanged.
pub fn compose(local: ActionId, cloud_answer: ActionId, help: ActionId) -> Result<ActionId> {
    if cloud_answer == help {
        return Err(Error::domain("cloud answer cannot be HELP"));
    }
    Ok(if local == help { cloud_answer } else { local })
}

/// One draw from the cloud: the correct answer with probability
/// `oracle.accuracy`, otherwise a uniformly chosen wrong answer.
pub fn cloud_answer<R: Rng + ?Sized>(
    oracle: &CloudOracle,
    task: &TaskSpec,
    prompt: PromptId,
    rng: &mut R,
) -> Result<ActionId> {
    let correct = task.correct_action(prompt)?;
    let u: f64 = rng.gen();
    if u < oracle.accuracy {
        return Ok(correct);
    }
    let wrong = rng.gen_range(0..task.num_answers - 1);
    Ok(ActionId(if wrong >= correct.0 { wrong + 1 } else { wrong }))
}

/// Reward on the composed response and cost of the local decision.
///
/// A format violation overrides everything: reward `-format_penalty`, no cost.
pub fn reward_and_cost(
    task: &TaskSpec,
    prompt: PromptId,
    local_action: ActionId,
    final_action: ActionId,
    format_ok: bool,
    params: &RewardParams,
) -> Result<(f64, f64)> {
    let help = task.help();
    if final_action.0 >= task.num_answers {
        return Err(Error::domain("final action must be an answer action"));
    }
    let correct_action = task.correct_action(prompt)?;
    if !format_ok {
        return Ok((-params.format_penalty, 0.0));
    }
    let used_cloud = local_action == help;
    let correct = if used_cloud {
        final_action == correct_action
    } else {
        task.local_answer_correct(prompt, final_action)?
    };
    let reward = if correct { params.answer_reward } else { 0.0 };
    let cost = if used_cloud { params.cloud_cost } else { 0.0 };
    Ok((reward, cost))
}

/// `false` (format violated) with probability `task.format_violation_prob`.
pub fn simulate_format<R: Rng + ?Sized>(task: &TaskSpec, rng: &mut R) -> bool {
    rng.gen::<f64>() >= task.format_violation_prob
}

/// A fully realized response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub prompt: PromptId,
    pub local_action: ActionId,
    pub cloud_used: bool,
    pub final_action: ActionId,
    pub format_ok: bool,
    pub reward: f64,
    pub cost: f64,
}

/// Per-task settings of a continual schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub iterations: u64,
    pub tau: f64,
    #[serde(default = "default_hard_fraction")]
    pub hard_fraction: f64,
    #[serde(default = "default_format_violation_prob")]
    pub format_violation_prob: f64,
    /// Additional targets inside the task, e.g. a time-varying budget.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau_phases: Vec<TauPhase>,
}

fn default_hard_fraction() -> f64 {
    0.5
}

fn default_format_violation_prob() -> f64 {
    0.05
}

/// Shape of the synthetic world and its task sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub num_prompts: usize,
    pub num_answers: usize,
    /// Fraction of prompts whose correct answer changes from one task to the
    /// next.
    #[serde(default)]
    pub overlap: f64,
    pub tasks: Vec<TaskConfig>,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_prompts == 0 {
            return Err(Error::config("schedule.num_prompts: empty prompt set"));
        }
        if self.num_answers < 2 {
            return Err(Error::config("schedule.num_answers must be >= 2"));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::config(format!(
                "schedule.overlap = {} outside [0, 1]",
                self.overlap
            )));
        }
        if self.tasks.is_empty() {
            return Err(Error::config("schedule.tasks: at least one task is required"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            let at = |field: &str| format!("schedule.tasks[{i}].{field}");
            if t.iterations == 0 {
                return Err(Error::config(format!("{} must be positive", at("iterations"))));
            }
            for (name, v) in [
                ("tau", t.tau),
                ("hard_fraction", t.hard_fraction),
                ("format_violation_prob", t.format_violation_prob),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::config(format!("{} = {v} outside [0, 1]", at(name))));
                }
            }
            validate_phases(&t.phases(), t.iterations)
                .map_err(|e| Error::config(format!("{}: {e}", at("tau_phases"))))?;
        }
        Ok(())
    }
}

impl TaskConfig {
    fn phases(&self) -> Vec<TauPhase> {
        if self.tau_phases.is_empty() {
            vec![TauPhase { start: 0, tau: self.tau }]
        } else {
            self.tau_phases.clone()
        }
    }
}

/// Ordered tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub num_prompts: usize,
    pub num_answers: usize,
    pub tasks: Vec<TaskSpec>,
}

impl TaskSchedule {
    pub fn total_iterations(&self) -> u64 {
        self.tasks.iter().map(|t| t.iterations).sum()
    }

    /// First global iteration of each task.
    pub fn task_starts(&self) -> Vec<u64> {
        self.tasks
            .iter()
            .scan(0, |acc, t| {
                let s = *acc;
                *acc += t.iterations;
                Some(s)
            })
            .collect()
    }
}

/// Generates the task sequence.
///
/// All tasks share prompts `0..num_prompts`. Task 0 draws answers uniformly;
/// each later task copies the previous answers and reassigns exactly
/// `round(overlap * P)` prompts to a different answer. Each task draws its own
/// hard subset of exactly `round(hard_fraction * P)` prompts.
pub fn make_continual_schedule(config: &ScheduleConfig, seed: u64) -> Result<TaskSchedule> {
    config.validate()?;
    let p = config.num_prompts;
    let k = config.num_answers;
    let stream = RngStream::new(seed, "schedule");
    let mut answers: Vec<ActionId> = Vec::new();
    let mut tasks = Vec::with_capacity(config.tasks.len());
    for (idx, tc) in config.tasks.iter().enumerate() {
        let mut rng = stream.at(&[idx as u64]);
        if idx == 0 {
            answers = (0..p).map(|_| ActionId(rng.gen_range(0..k))).collect();
        } else {
            let changed = (config.overlap * p as f64).round() as usize;
            let mut order: Vec<usize> = (0..p).collect();
            order.shuffle(&mut rng);
            for &i in order.iter().take(changed) {
                let shift = rng.gen_range(1..k);
                answers[i] = ActionId((answers[i].0 + shift) % k);
            }
        }
        let hard = (tc.hard_fraction * p as f64).round() as usize;
        let mut order: Vec<usize> = (0..p).collect();
        order.shuffle(&mut rng);
        let mut solvable = vec![true; p];
        for &i in order.iter().take(hard) {
            solvable[i] = false;
        }
        let task = TaskSpec::new(
            idx,
            k,
            answers.clone(),
            solvable,
            tc.iterations,
            tc.tau,
            tc.format_violation_prob,
        )?
        .with_tau_phases(tc.phases())?;
        tasks.push(task);
    }
    Ok(TaskSchedule {
        num_prompts: p,
        num_answers: k,
        tasks,
    })
}
