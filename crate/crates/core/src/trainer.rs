//! The training loop and the comparison strategies.
//!
//! Each iteration samples a batch of distinct prompts, rolls out a group of
//! `G` local responses per prompt, queries the cloud at most once per group,
//! takes one primal step on the logits and (for `da_grpo`) one dual step on λ.
//! Groups are independent and run in parallel; every random draw comes from a
//! substream addressed by `(iteration, batch slot)` and every reduction runs
//! in batch order, so a run is a pure function of its [`RunConfig`].

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::{group_advantages_with, GroupSample, Normalization};
use crate::dual::{dual_update, empirical_cloud_usage, set_task_target, DualState};
use crate::environment::{
    cloud_answer, compose, make_continual_schedule, reward_and_cost, simulate_format, CloudOracle,
    Outcome, RewardParams, ScheduleConfig, TaskSchedule, TaskSpec,
};
use crate::error::{Error, Result};
use crate::estimator::{group_gradient_row, mean_of_rows};
use crate::metrics::{evaluate, evaluate_routed, forgetting, EvalRecord, ForgettingReport, IterationRecord};
use crate::policy::{ActionMask, PolicyParams, PromptId};
use crate::rng::RngStream;

/// How the local model and the cloud share the work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Dual-weighted advantages with an adaptive λ.
    DaGrpo,
    /// Same loop with a constant λ and no dual step. `per_phase`, when
    /// given, holds one λ per task.
    FixedRewardGrpo {
        lambda: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        per_phase: Vec<f64>,
    },
    /// Local-only training; every prompt is sent to the cloud with a fixed
    /// probability at train and eval time.
    NaiveRouter { offload_prob: f64 },
    /// Local-only training plus a per-prompt success table. Prompts whose
    /// estimated local success falls below a threshold go to the cloud; the
    /// threshold is recalibrated every iteration so the offload rate stays at
    /// or below τ. `train_fraction` of the groups fit the table, the rest are
    /// held out for calibration.
    TrainedRouter {
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
    /// HELP masked out entirely.
    EdgeOnly,
}

fn default_train_fraction() -> f64 {
    0.5
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::DaGrpo => "da_grpo",
            Strategy::FixedRewardGrpo { .. } => "fixed_reward_grpo",
            Strategy::NaiveRouter { .. } => "naive_router",
            Strategy::TrainedRouter { .. } => "trained_router",
            Strategy::EdgeOnly => "edge_only",
        }
    }

    fn mask(&self) -> ActionMask {
        match self {
            Strategy::DaGrpo | Strategy::FixedRewardGrpo { .. } => ActionMask::All,
            _ => ActionMask::AnswersOnly,
        }
    }
}

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "defaults::group_size")]
    pub group_size: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::eta_theta")]
    pub eta_theta: f64,
    #[serde(default = "defaults::eta_lambda")]
    pub eta_lambda: f64,
    #[serde(default = "defaults::lambda_init")]
    pub lambda_init: f64,
    #[serde(default = "defaults::eval_every")]
    pub eval_every: u64,
    #[serde(default = "defaults::cloud_accuracy")]
    pub cloud_accuracy: f64,
    /// Starting logit of HELP on every prompt; answers start at 0.
    #[serde(default)]
    pub initial_help_logit: f64,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "defaults::strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub rewards: RewardParams,
    pub schedule: ScheduleConfig,
}

mod defaults {
    use super::Strategy;

    pub fn group_size() -> usize {
        8
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn eta_theta() -> f64 {
        super::DEFAULT_ETA_THETA
    }
    pub fn eta_lambda() -> f64 {
        1e-2
    }
    pub fn lambda_init() -> f64 {
        0.5
    }
    pub fn eval_every() -> u64 {
        50
    }
    pub fn cloud_accuracy() -> f64 {
        0.984
    }
    pub fn strategy() -> Strategy {
        Strategy::DaGrpo
    }
}

/// Policy step size used when a config does not set one.
pub const DEFAULT_ETA_THETA: f64 = 1600.0;

impl RunConfig {
    /// A config with every default filled in around `schedule`.
    pub fn with_schedule(seed: u64, schedule: ScheduleConfig) -> Self {
        RunConfig {
            seed,
            group_size: defaults::group_size(),
            batch_size: defaults::batch_size(),
            eta_theta: defaults::eta_theta(),
            eta_lambda: defaults::eta_lambda(),
            lambda_init: defaults::lambda_init(),
            eval_every: defaults::eval_every(),
            cloud_accuracy: defaults::cloud_accuracy(),
            initial_help_logit: 0.0,
            normalization: Normalization::None,
            strategy: Strategy::DaGrpo,
            rewards: RewardParams::default(),
            schedule,
        }
    }

    /// Checks every field, naming the offending one.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(msg));
        if self.group_size < 2 {
            return fail(format!("group_size = {} must be >= 2", self.group_size));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        for (name, v) in [("eta_theta", self.eta_theta), ("eta_lambda", self.eta_lambda), ("lambda_init", self.lambda_init)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if !self.initial_help_logit.is_finite() {
            return fail("initial_help_logit must be finite".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.cloud_accuracy) {
            return fail(format!("cloud_accuracy = {} outside [0, 1]", self.cloud_accuracy));
        }
        self.rewards.validate()?;
        self.schedule.validate()?;
        if self.batch_size > self.schedule.num_prompts {
            return fail(format!(
                "batch_size = {} exceeds schedule.num_prompts = {} (batches hold distinct prompts)",
                self.batch_size, self.schedule.num_prompts
            ));
        }
        match &self.strategy {
            Strategy::FixedRewardGrpo { lambda, per_phase } => {
                if !(lambda.is_finite() && *lambda >= 0.0) {
                    return fail(format!("strategy.lambda = {lambda} must be finite and >= 0"));
                }
                if !per_phase.is_empty() && per_phase.len() != self.schedule.tasks.len() {
                    return fail(format!(
                        "strategy.per_phase has {} entries for {} tasks",
                        per_phase.len(),
                        self.schedule.tasks.len()
                    ));
                }
                if per_phase.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                    return fail("strategy.per_phase entries must be finite and >= 0".into());
                }
            }
            Strategy::NaiveRouter { offload_prob } => {
                if !(0.0..=1.0).contains(offload_prob) {
                    return fail(format!("strategy.offload_prob = {offload_prob} outside [0, 1]"));
                }
            }
            Strategy::TrainedRouter { train_fraction } => {
                if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                    return fail(format!("strategy.train_fraction = {train_fraction} outside (0, 1)"));
                }
            }
            Strategy::DaGrpo | Strategy::EdgeOnly => {}
        }
        Ok(())
    }

    pub fn oracle(&self) -> Result<CloudOracle> {
        CloudOracle::new(self.cloud_accuracy)
    }
}

/// Per-prompt local success estimates used by the trained router.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterTable {
    fit: Vec<(f64, f64)>,
    calibration: Vec<(f64, f64)>,
    pub threshold: f64,
}

/// Weight kept by old observations each time a prompt is seen again.
const ROUTER_DECAY: f64 = 0.9;

impl RouterTable {
    pub fn new(num_prompts: usize) -> Self {
        RouterTable {
            fit: vec![(0.0, 0.0); num_prompts],
            calibration: vec![(0.0, 0.0); num_prompts],
            threshold: 0.0,
        }
    }

    fn estimate((successes, trials): (f64, f64)) -> f64 {
        (successes + 1.0) / (trials + 2.0)
    }

    /// Smoothed local success probability of `prompt`.
    pub fn success_estimate(&self, prompt: PromptId) -> f64 {
        Self::estimate(self.fit[prompt.0])
    }

    pub fn observe(&mut self, prompt: PromptId, successes: f64, trials: f64, held_out: bool) {
        let table = if held_out { &mut self.calibration } else { &mut self.fit };
        let (s, n) = table[prompt.0];
        table[prompt.0] = (ROUTER_DECAY * s + successes, ROUTER_DECAY * n + trials);
    }

    /// Largest threshold whose offload rate on the held-out estimates is at
    /// most `tau`.
    pub fn calibrate(&mut self, tau: f64) {
        let mut est: Vec<f64> = self.calibration.iter().map(|&c| Self::estimate(c)).collect();
        est.sort_by(f64::total_cmp);
        let allowed = (tau * est.len() as f64 + 1e-9).floor() as usize;
        self.threshold = if allowed >= est.len() { f64::INFINITY } else { est[allowed] };
    }

    pub fn offloads(&self, prompt: PromptId) -> bool {
        self.success_estimate(prompt) < self.threshold
    }
}

/// Mutable state of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: PolicyParams,
    pub dual: DualState,
    pub iteration: u64,
    pub task_index: usize,
    pub rng_root: RngStream,
    pub router: Option<RouterTable>,
}

impl TrainState {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut params = PolicyParams::zeros(config.schedule.num_prompts, config.schedule.num_answers)?;
        let help = params.help().0;
        params.logits_mut().column_mut(help).fill(config.initial_help_logit);
        let lambda = match &config.strategy {
            Strategy::DaGrpo => config.lambda_init,
            Strategy::FixedRewardGrpo { lambda, per_phase } => per_phase.first().copied().unwrap_or(*lambda),
            _ => 0.0,
        };
        let tau = config.schedule.tasks[0].tau_phases.first().map_or(config.schedule.tasks[0].tau, |p| p.tau);
        let router = matches!(config.strategy, Strategy::TrainedRouter { .. })
            .then(|| RouterTable::new(config.schedule.num_prompts));
        Ok(TrainState {
            params,
            dual: DualState::new(lambda, config.eta_lambda, tau)?,
            iteration: 0,
            task_index: 0,
            rng_root: RngStream::new(config.seed, "train"),
            router,
        })
    }
}

struct SlotResult {
    prompt: PromptId,
    group: Option<GroupSample>,
    row: Option<Array1<f64>>,
    usage: f64,
    mean_reward: f64,
    cloud_calls: u64,
    /// `(successes, trials, held_out)` for the router table.
    observation: Option<(f64, f64, bool)>,
}

/// Wraps the oracle and counts how often it is consulted.
struct CountingOracle<'a> {
    oracle: &'a CloudOracle,
    calls: u64,
}

impl CountingOracle<'_> {
    fn query<R: Rng + ?Sized>(&mut self, task: &TaskSpec, prompt: PromptId, rng: &mut R) -> Result<crate::policy::ActionId> {
        self.calls += 1;
        cloud_answer(self.oracle, task, prompt, rng)
    }
}

/// Rolls out one group and, for strategies that train on it, returns its
/// gradient row.
#[allow(clippy::too_many_arguments)]
fn play_slot(
    params: &PolicyParams,
    config: &RunConfig,
    task: &TaskSpec,
    oracle: &CloudOracle,
    router: Option<&RouterTable>,
    lambda: f64,
    prompt: PromptId,
    rng: &mut impl Rng,
    route_rng: &mut impl Rng,
) -> Result<SlotResult> {
    let mut cloud = CountingOracle { oracle, calls: 0 };
    let rewards = &config.rewards;

    if let Strategy::NaiveRouter { offload_prob } = config.strategy {
        if route_rng.gen::<f64>() < offload_prob {
            let answer = cloud.query(task, prompt, route_rng)?;
            let reward = if answer == task.correct_action(prompt)? { rewards.answer_reward } else { 0.0 };
            return Ok(SlotResult {
                prompt,
                group: None,
                row: None,
                usage: 1.0,
                mean_reward: reward,
                cloud_calls: cloud.calls,
                observation: None,
            });
        }
    }

    let mask = config.strategy.mask();
    let help = params.help();
    let g = config.group_size;
    let locals = (0..g)
        .map(|_| params.sample_action(prompt, mask, rng))
        .collect::<Result<Vec<_>>>()?;
    // one query per group, shared by every HELP response
    let cloud_ans = if locals.contains(&help) {
        Some(cloud.query(task, prompt, rng)?)
    } else {
        None
    };
    let mut outcomes = Vec::with_capacity(g);
    for &local in &locals {
        let format_ok = simulate_format(task, rng);
        let final_action = match cloud_ans {
            Some(c) => compose(local, c, help)?,
            None => local,
        };
        let (reward, cost) = reward_and_cost(task, prompt, local, final_action, format_ok, rewards)?;
        outcomes.push(Outcome {
            prompt,
            local_action: local,
            cloud_used: local == help,
            final_action,
            format_ok,
            reward,
            cost,
        });
    }
    let group = GroupSample::new(prompt, outcomes, mask)?;
    let rs = group.rewards();
    let cs = group.costs();
    let adv = group_advantages_with(&rs, &cs, lambda, config.normalization)?;
    let row = group_gradient_row(params, &group, &adv)?;
    let mut usage = cs.iter().sum::<f64>() / g as f64 / rewards.cloud_cost;
    let mut mean_reward = rs.iter().sum::<f64>() / g as f64;

    let mut observation = None;
    if let (Strategy::TrainedRouter { train_fraction }, Some(router)) = (&config.strategy, router) {
        let successes = rs.iter().filter(|&&r| r > 0.0).count() as f64;
        observation = Some((successes, g as f64, route_rng.gen::<f64>() >= *train_fraction));
        if router.offloads(prompt) {
            let answer = cloud.query(task, prompt, route_rng)?;
            mean_reward = if answer == task.correct_action(prompt)? { rewards.answer_reward } else { 0.0 };
            usage = 1.0;
        }
    }

    Ok(SlotResult {
        prompt,
        group: Some(group),
        row: Some(row),
        usage,
        mean_reward,
        cloud_calls: cloud.calls,
        observation,
    })
}

/// λ used for advantages this iteration.
fn current_lambda(state: &TrainState, config: &RunConfig) -> f64 {
    match &config.strategy {
        Strategy::DaGrpo => state.dual.lambda,
        Strategy::FixedRewardGrpo { lambda, per_phase } => {
            per_phase.get(state.task_index).copied().unwrap_or(*lambda)
        }
        _ => 0.0,
    }
}

/// One iteration of the loop. Returns the metrics row without an eval.
pub fn run_iteration(
    state: &mut TrainState,
    config: &RunConfig,
    task: &TaskSpec,
    oracle: &CloudOracle,
) -> Result<IterationRecord> {
    let t = state.iteration;
    let lambda = current_lambda(state, config);
    let mut batch_rng = state.rng_root.child("batch").at(&[t]);
    let prompts: Vec<PromptId> = rand::seq::index::sample(&mut batch_rng, task.prompts().len(), config.batch_size)
        .into_iter()
        .map(|i| task.prompts()[i])
        .collect();

    let groups_stream = state.rng_root.child("group");
    // routing draws live apart so they never shift the rollout draws
    let route_stream = state.rng_root.child("route");
    let params = &state.params;
    let router = state.router.as_ref();
    let slots = prompts
        .par_iter()
        .enumerate()
        .map(|(slot, &prompt)| {
            let mut rng = groups_stream.at(&[t, slot as u64]);
            let mut route_rng = route_stream.at(&[t, slot as u64]);
            play_slot(params, config, task, oracle, router, lambda, prompt, &mut rng, &mut route_rng)
        })
        .collect::<Result<Vec<_>>>()?;

    // primal step
    let rows: Vec<(PromptId, Array1<f64>)> = slots
        .iter()
        .filter_map(|s| s.row.as_ref().map(|r| (s.prompt, r.clone())))
        .collect();
    if !rows.is_empty() && config.eta_theta != 0.0 {
        let acc = mean_of_rows(state.params.logits().dim(), &rows)?;
        state.params.logits_mut().scaled_add(config.eta_theta, &acc.grad);
        if state.params.check_finite().is_err() {
            return Err(Error::Abort {
                iteration: t,
                reason: "non-finite policy logits after the primal step; eta_theta is too large".into(),
            });
        }
    }

    let n = slots.len() as f64;
    let j_hat_c = match config.strategy {
        Strategy::DaGrpo | Strategy::FixedRewardGrpo { .. } => {
            let groups: Vec<GroupSample> = slots.iter().filter_map(|s| s.group.clone()).collect();
            empirical_cloud_usage(&groups, config.rewards.cloud_cost)?
        }
        _ => (slots.iter().map(|s| s.usage).sum::<f64>() / n).clamp(0.0, 1.0),
    };
    let train_mean_reward = slots.iter().map(|s| s.mean_reward).sum::<f64>() / n;

    // dual step
    match config.strategy {
        Strategy::DaGrpo => dual_update(&mut state.dual, j_hat_c).map_err(|e| match e {
            Error::Abort { reason, .. } => Error::Abort { iteration: t, reason },
            other => other,
        })?,
        _ => state.dual.lambda = lambda,
    }

    if let Some(router) = state.router.as_mut() {
        for s in &slots {
            if let Some((succ, trials, held_out)) = s.observation {
                router.observe(s.prompt, succ, trials, held_out);
            }
        }
        router.calibrate(state.dual.tau_current);
    }

    state.iteration += 1;
    Ok(IterationRecord {
        iteration: t,
        task_index: state.task_index,
        lambda: state.dual.lambda,
        j_hat_c,
        train_mean_reward,
        cloud_calls: slots.iter().map(|s| s.cloud_calls).sum(),
        max_calls_per_prompt: slots.iter().map(|s| s.cloud_calls).max().unwrap_or(0),
        eval: None,
    })
}

/// Noise-free evaluation of the current state on `task` under the run's
/// strategy.
pub fn evaluate_state(state: &TrainState, config: &RunConfig, task: &TaskSpec, oracle: &CloudOracle) -> Result<EvalRecord> {
    let p = task.prompts().len();
    let mut record = match &config.strategy {
        Strategy::DaGrpo | Strategy::FixedRewardGrpo { .. } => evaluate(&state.params, task, oracle)?,
        Strategy::EdgeOnly => evaluate_routed(&state.params, task, oracle, &vec![0.0; p])?,
        Strategy::NaiveRouter { offload_prob } => {
            evaluate_routed(&state.params, task, oracle, &vec![*offload_prob; p])?
        }
        Strategy::TrainedRouter { .. } => {
            let router = state.router.as_ref().ok_or_else(|| Error::domain("router state missing"))?;
            let offload: Vec<f64> = task
                .prompts()
                .iter()
                .map(|&x| if router.offloads(x) { 1.0 } else { 0.0 })
                .collect();
            evaluate_routed(&state.params, task, oracle, &offload)?
        }
    };
    record.iteration = state.iteration.saturating_sub(1);
    record.lambda = state.dual.lambda;
    Ok(record)
}

/// Serialized training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub logits: Array2<f64>,
    pub num_answers: usize,
    pub dual: DualState,
    /// Next iteration to run; also the RNG counter.
    pub iteration: u64,
    pub task_index: usize,
    pub seed: u64,
    pub router: Option<RouterTable>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn capture(state: &TrainState, seed: u64) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            logits: state.params.logits().clone(),
            num_answers: state.params.num_answers(),
            dual: state.dual.clone(),
            iteration: state.iteration,
            task_index: state.task_index,
            seed,
            router: state.router.clone(),
        }
    }

    pub fn restore(&self) -> Result<TrainState> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::domain(format!("unsupported checkpoint version {}", self.version)));
        }
        let params = PolicyParams::from_logits(self.logits.clone())?;
        if params.num_answers() != self.num_answers {
            return Err(Error::domain("checkpoint logits do not match num_answers"));
        }
        Ok(TrainState {
            params,
            dual: self.dual.clone(),
            iteration: self.iteration,
            task_index: self.task_index,
            rng_root: RngStream::new(self.seed, "train"),
            router: self.router.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Output of [`run_schedule`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub schedule: TaskSchedule,
    pub records: Vec<IterationRecord>,
    /// `task_end_evals[l][m]`: task `m` evaluated when task `l` finished.
    pub task_end_evals: Vec<Vec<EvalRecord>>,
    /// One report per task except the last: accuracy at the end of its own
    /// phase against accuracy at the end of the run.
    pub forgetting: Vec<ForgettingReport>,
    /// State at the end of each task.
    pub checkpoints: Vec<Checkpoint>,
    pub final_state: TrainState,
}

impl RunArtifacts {
    /// Per-iteration realized cloud-usage ratio.
    pub fn ratio_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.j_hat_c).collect()
    }

    pub fn lambda_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lambda).collect()
    }
}

/// Runs every task of the schedule in order.
pub fn run_schedule(config: &RunConfig) -> Result<RunArtifacts> {
    let schedule = make_continual_schedule(&config.schedule, config.seed)?;
    let oracle = config.oracle()?;
    let mut state = TrainState::new(config)?;
    let mut records = Vec::with_capacity(schedule.total_iterations() as usize);
    let mut task_end_evals = Vec::new();
    let mut checkpoints = Vec::new();

    for (index, task) in schedule.tasks.iter().enumerate() {
        state.task_index = index;
        for offset in 0..task.iterations {
            let tau = task.tau_at(offset);
            if offset == 0 || tau != state.dual.tau_current {
                set_task_target(&mut state.dual, tau)?;
            }
            let mut record = run_iteration(&mut state, config, task, &oracle)?;
            // the controller's own history is mirrored in the records
            state.dual.clear_history();
            let last = offset + 1 == task.iterations;
            if last || (record.iteration + 1) % config.eval_every == 0 {
                record.eval = Some(evaluate_state(&state, config, task, &oracle)?);
            }
            records.push(record);
        }
        let evals = schedule.tasks[..=index]
            .iter()
            .map(|t| evaluate_state(&state, config, t, &oracle))
            .collect::<Result<Vec<_>>>()?;
        task_end_evals.push(evals);
        checkpoints.push(Checkpoint::capture(&state, config.seed));
    }

    let last = task_end_evals.len() - 1;
    let forgetting = (0..last)
        .map(|m| forgetting(task_end_evals[m][m].joint_accuracy, task_end_evals[last][m].joint_accuracy))
        .collect();
    Ok(RunArtifacts {
        schedule,
        records,
        task_end_evals,
        forgetting,
        checkpoints,
        final_state: state,
    })
}
