//! Self-checks of the estimator and the dual controller, as run by
//! `dagrpo verify`.

use ndarray::Array2;
use rand::Rng;

use crate::advantage::{group_advantages, shaped_reward_advantages};
use crate::dual::{iterate_against, LogisticUsage};
use crate::environment::{CloudOracle, RewardParams, TaskSpec};
use crate::error::Result;
use crate::estimator::{brute_force_policy_gradient, enumerate_estimator_expectation};
use crate::policy::{ActionId, PolicyParams, PromptId};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// A random small world for the unbiasedness check.
#[derive(Debug, Clone)]
pub struct Instance {
    pub params: PolicyParams,
    pub task: TaskSpec,
    pub oracle: CloudOracle,
    pub prompt: PromptId,
    pub lambda: f64,
    pub group_size: usize,
}

/// Instance `index` of the randomized family: logits in [-2, 2], K in
/// {2, 3}, G in {2, 3}, λ in {0, 0.5, 2}, cloud accuracy in {0.5, 1},
/// format violation probability in {0, 0.1}.
pub fn random_instance(seed: u64, index: u64) -> Result<Instance> {
    let mut rng = RngStream::new(seed, "verify-instance").at(&[index]);
    let k = rng.gen_range(2..=3);
    let prompts = 3;
    let logits = Array2::from_shape_fn((prompts, k + 1), |_| rng.gen_range(-2.0..=2.0));
    let correct = (0..prompts).map(|_| ActionId(rng.gen_range(0..k))).collect();
    let solvable = (0..prompts).map(|_| rng.gen_bool(0.5)).collect();
    let fmt = [0.0, 0.1][rng.gen_range(0..2)];
    Ok(Instance {
        params: PolicyParams::from_logits(logits)?,
        task: TaskSpec::new(0, k, correct, solvable, 1, 0.3, fmt)?,
        oracle: CloudOracle::new([0.5, 1.0][rng.gen_range(0..2)])?,
        prompt: PromptId(rng.gen_range(0..prompts)),
        lambda: [0.0, 0.5, 2.0][rng.gen_range(0..3)],
        group_size: rng.gen_range(2..=3),
    })
}

/// Largest entrywise gap between the enumerated estimator expectation and
/// the exact gradient over `count` random instances.
pub fn unbiasedness_gap(seed: u64, count: u64) -> Result<f64> {
    let rewards = RewardParams::default();
    let mut worst = 0.0f64;
    for i in 0..count {
        let inst = random_instance(seed, i)?;
        let exact = brute_force_policy_gradient(&inst.params, &inst.task, &inst.oracle, inst.prompt, inst.lambda, &rewards)?;
        let est = enumerate_estimator_expectation(
            &inst.params,
            &inst.task,
            &inst.oracle,
            inst.prompt,
            inst.lambda,
            inst.group_size,
            &rewards,
        )?;
        worst = worst.max((&exact - &est).iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    Ok(worst)
}

/// Largest gap between the G = 2 and G = 3 expectations on the same
/// instances.
pub fn group_size_gap(seed: u64, count: u64) -> Result<f64> {
    let rewards = RewardParams::default();
    let mut worst = 0.0f64;
    for i in 0..count {
        let inst = random_instance(seed, i)?;
        let run = |g| enumerate_estimator_expectation(&inst.params, &inst.task, &inst.oracle, inst.prompt, inst.lambda, g, &rewards);
        let (a, b) = (run(2)?, run(3)?);
        worst = worst.max((&a - &b).iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    Ok(worst)
}

/// Largest gap between the dual-weighted advantage and the advantage of the
/// shaped reward over `count` random groups.
pub fn shaped_identity_gap(seed: u64, count: u64) -> Result<f64> {
    let stream = RngStream::new(seed, "verify-shaped");
    let mut worst = 0.0f64;
    for i in 0..count {
        let mut rng = stream.at(&[i]);
        let g = rng.gen_range(2..=16);
        let lambda = rng.gen_range(0.0..5.0);
        let rewards: Vec<f64> = (0..g).map(|_| [1.0, 0.0, -0.1][rng.gen_range(0..3)]).collect();
        let costs: Vec<f64> = (0..g).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let pair = group_advantages(&rewards, &costs, lambda)?;
        let shaped = shaped_reward_advantages(&rewards, &costs, lambda)?;
        for (a, b) in pair.dual_weighted.iter().zip(&shaped) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Usage curve of the stub policy used by [`fixed_point_gaps`].
pub const STUB_USAGE: LogisticUsage = LogisticUsage {
    lambda0: 1.0,
    steepness: 4.0,
};

/// `|f(λ_T) − τ|` after `steps` dual updates with η_λ = 0.01 against
/// [`STUB_USAGE`], one entry per target.
pub fn fixed_point_gaps(taus: &[f64], steps: usize) -> Result<Vec<f64>> {
    taus.iter()
        .map(|&tau| {
            let lambda = iterate_against(STUB_USAGE, tau, 0.5, 0.01, steps)?;
            Ok((STUB_USAGE.usage(lambda) - tau).abs())
        })
        .collect()
}

/// Every check, in order.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let gap = unbiasedness_gap(seed, 60)?;
    checks.push(Check {
        name: "estimator expectation equals exact gradient (60 instances)".into(),
        passed: gap <= 1e-10,
        detail: format!("max gap {gap:.3e}"),
    });
    let gap = group_size_gap(seed, 30)?;
    checks.push(Check {
        name: "estimator expectation independent of group size".into(),
        passed: gap <= 1e-10,
        detail: format!("max gap {gap:.3e}"),
    });
    let gap = shaped_identity_gap(seed, 10_000)?;
    checks.push(Check {
        name: "dual-weighted advantage equals shaped-reward advantage (10000 groups)".into(),
        passed: gap <= 1e-12,
        detail: format!("max gap {gap:.3e}"),
    });
    let taus = [0.1, 0.3, 0.5, 0.7];
    let gaps = fixed_point_gaps(&taus, 10_000)?;
    for (tau, gap) in taus.iter().zip(gaps) {
        checks.push(Check {
            name: format!("dual fixed point reaches target usage, tau = {tau}"),
            passed: gap <= 1e-3,
            detail: format!("|f(lambda) - tau| = {gap:.3e}"),
        });
    }
    Ok(checks)
}
