//! Dual-weighted group policy-gradient estimator and its exact oracles.
//!
//! For a group of `G` responses to one prompt the estimator is
//!
//! ```text
//! ĝ = G/(G-1) · (1/G) Σᵢ ∇θ log πθ(yᵢ | x) · Âᵢ  =  1/(G-1) Σᵢ ∇θ log πθ(yᵢ | x) · Âᵢ
//! ```
//!
//! where `yᵢ` is always the *local* action, even when the response was
//! completed by the cloud. Its expectation is exactly
//! `∇θ E[r - λc]`, which [`enumerate_estimator_expectation`] and
//! [`brute_force_policy_gradient`] verify by two independent enumerations.

use ndarray::{Array1, Array2};

use crate::advantage::{group_advantages, AdvantagePair, GroupSample};
use crate::environment::{compose, reward_and_cost, CloudOracle, Outcome, RewardParams, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::{ActionId, ActionMask, PolicyParams, PromptId};

/// Local action tuples the enumeration oracle is willing to visit.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientAccumulator {
    pub grad: Array2<f64>,
    pub sample_count: usize,
}

/// The estimator's only nonzero row (the group's prompt).
pub fn group_gradient_row(
    params: &PolicyParams,
    group: &GroupSample,
    adv: &AdvantagePair,
) -> Result<Array1<f64>> {
    let g = group.size();
    if g < 2 {
        return Err(Error::domain(format!("group size must be >= 2, got {g}")));
    }
    if adv.dual_weighted.len() != g {
        return Err(Error::domain("advantages and group differ in length"));
    }
    let mut row = Array1::zeros(params.num_actions());
    for (&action, &a_hat) in group.local_actions.iter().zip(&adv.dual_weighted) {
        if a_hat != 0.0 {
            let score = params.log_prob_gradient_row(group.prompt, action, group.mask)?;
            row.scaled_add(a_hat, &score);
        }
    }
    row.mapv_inplace(|v| v / (g - 1) as f64);
    Ok(row)
}

pub fn group_gradient(
    params: &PolicyParams,
    group: &GroupSample,
    adv: &AdvantagePair,
) -> Result<Array2<f64>> {
    let row = group_gradient_row(params, group, adv)?;
    let mut grad = Array2::zeros(params.logits().dim());
    grad.row_mut(group.prompt.0).assign(&row);
    Ok(grad)
}

/// Mean of the per-group gradients.
///
/// Groups are reduced in the order given with Neumaier-compensated sums, so
/// the result depends only on that order and not on how the per-group rows
/// were computed.
pub fn batch_gradient(
    params: &PolicyParams,
    groups: &[GroupSample],
    advs: &[AdvantagePair],
) -> Result<GradientAccumulator> {
    if groups.len() != advs.len() {
        return Err(Error::domain("groups and advantages are not aligned"));
    }
    let rows = groups
        .iter()
        .zip(advs)
        .map(|(g, a)| Ok((g.prompt, group_gradient_row(params, g, a)?)))
        .collect::<Result<Vec<_>>>()?;
    mean_of_rows(params.logits().dim(), &rows)
}

/// Compensated mean of sparse per-group rows, reduced in slice order.
pub fn mean_of_rows(
    dim: (usize, usize),
    rows: &[(PromptId, Array1<f64>)],
) -> Result<GradientAccumulator> {
    if rows.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    let mut sum = Array2::<f64>::zeros(dim);
    let mut comp = Array2::<f64>::zeros(dim);
    for (prompt, row) in rows {
        for (j, &v) in row.iter().enumerate() {
            let s = &mut sum[[prompt.0, j]];
            let t = *s + v;
            comp[[prompt.0, j]] += if s.abs() >= v.abs() { (*s - t) + v } else { (v - t) + *s };
            *s = t;
        }
    }
    let n = rows.len() as f64;
    let grad = (sum + comp).mapv(|v| v / n);
    Ok(GradientAccumulator {
        grad,
        sample_count: rows.len(),
    })
}

/// Expected shaped reward `E[r - λc | local action]` for every action, in
/// closed form.
pub fn expected_shaped_rewards(
    task: &TaskSpec,
    oracle: &CloudOracle,
    prompt: PromptId,
    lambda: f64,
    rewards: &RewardParams,
) -> Result<Array1<f64>> {
    let k = task.num_answers;
    let correct = task.correct_action(prompt)?;
    let solvable = task.locally_solvable(prompt)?;
    let f = task.format_violation_prob;
    let penalty = -f * rewards.format_penalty;
    let mut values = Array1::zeros(k + 1);
    for a in 0..k {
        let hit = solvable && a == correct.0;
        values[a] = (1.0 - f) * if hit { rewards.answer_reward } else { 0.0 } + penalty;
    }
    values[k] = (1.0 - f) * (rewards.answer_reward * oracle.accuracy - lambda * rewards.cloud_cost)
        + penalty;
    Ok(values)
}

/// Exact `∇θ E_{y∼πθ}[r - λc]` on `prompt`, via `p_a (r̃_a - Σ_b p_b r̃_b)`.
pub fn brute_force_policy_gradient(
    params: &PolicyParams,
    task: &TaskSpec,
    oracle: &CloudOracle,
    prompt: PromptId,
    lambda: f64,
    rewards: &RewardParams,
) -> Result<Array2<f64>> {
    if params.num_answers() != task.num_answers {
        return Err(Error::domain("policy and task disagree on the number of answers"));
    }
    let probs = params.action_probabilities(prompt)?;
    let values = expected_shaped_rewards(task, oracle, prompt, lambda, rewards)?;
    let baseline = probs.dot(&values);
    let mut grad = Array2::zeros(params.logits().dim());
    for j in 0..params.num_actions() {
        grad[[prompt.0, j]] = probs[j] * (values[j] - baseline);
    }
    Ok(grad)
}

/// Exact expectation of [`group_gradient`] over every joint outcome of one
/// group: all local action tuples, the single shared cloud draw (every
/// possible cloud answer), and each response's format coin.
pub fn enumerate_estimator_expectation(
    params: &PolicyParams,
    task: &TaskSpec,
    oracle: &CloudOracle,
    prompt: PromptId,
    lambda: f64,
    group_size: usize,
    rewards: &RewardParams,
) -> Result<Array2<f64>> {
    if group_size < 2 {
        return Err(Error::domain(format!("group size must be >= 2, got {group_size}")));
    }
    if params.num_answers() != task.num_answers {
        return Err(Error::domain("policy and task disagree on the number of answers"));
    }
    let n_actions = params.num_actions();
    let tuples = (n_actions as u128).checked_pow(group_size as u32).unwrap_or(u128::MAX);
    if tuples > ENUMERATION_LIMIT {
        return Err(Error::Resource {
            outcomes: tuples,
            limit: ENUMERATION_LIMIT,
        });
    }
    let probs = params.action_probabilities(prompt)?;
    let help = params.help();
    let k = task.num_answers;
    let correct = task.correct_action(prompt)?;
    let f = task.format_violation_prob;

    // cloud answer distribution of the single shared query
    let mut cloud_branches = vec![(correct, oracle.accuracy)];
    for a in (0..k).filter(|&a| a != correct.0) {
        cloud_branches.push((ActionId(a), (1.0 - oracle.accuracy) / (k - 1) as f64));
    }

    let mut expectation = Array1::<f64>::zeros(n_actions);
    let mut actions = vec![ActionId(0); group_size];
    for index in 0..tuples as usize {
        let mut rest = index;
        let mut p_tuple = 1.0;
        for slot in actions.iter_mut() {
            *slot = ActionId(rest % n_actions);
            rest /= n_actions;
            p_tuple *= probs[slot.0];
        }
        if p_tuple == 0.0 {
            continue;
        }
        let any_help = actions.contains(&help);
        let branches: &[(ActionId, f64)] = if any_help {
            &cloud_branches
        } else {
            &cloud_branches[..1]
        };
        for &(cloud, p_cloud) in branches {
            let p_cloud = if any_help { p_cloud } else { 1.0 };
            if p_cloud == 0.0 {
                continue;
            }
            for format_mask in 0..(1usize << group_size) {
                let mut p = p_tuple * p_cloud;
                let mut outcomes = Vec::with_capacity(group_size);
                for (i, &local) in actions.iter().enumerate() {
                    let format_ok = format_mask & (1 << i) == 0;
                    p *= if format_ok { 1.0 - f } else { f };
                    let final_action = compose(local, cloud, help)?;
                    let (reward, cost) =
                        reward_and_cost(task, prompt, local, final_action, format_ok, rewards)?;
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
                if p == 0.0 {
                    continue;
                }
                let group = GroupSample::new(prompt, outcomes, ActionMask::All)?;
                let adv = group_advantages(&group.rewards(), &group.costs(), lambda)?;
                let row = group_gradient_row(params, &group, &adv)?;
                expectation.scaled_add(p, &row);
            }
        }
    }
    let mut grad = Array2::zeros(params.logits().dim());
    grad.row_mut(prompt.0).assign(&expectation);
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    fn outcome(prompt: usize, local: usize, reward: f64, cost: f64, help: usize) -> Outcome {
        Outcome {
            prompt: PromptId(prompt),
            local_action: ActionId(local),
            cloud_used: local == help,
            final_action: ActionId(if local == help { 0 } else { local }),
            format_ok: true,
            reward,
            cost,
        }
    }

    /// Two-action world: answer A (correct, reward 1) and HELP (cloud always
    /// right, shaped value 1 - 0.5 = 0.5).
    fn two_action_world() -> (PolicyParams, TaskSpec, CloudOracle) {
        // answer 1 is pinned to zero probability
        let params = PolicyParams::from_logits(array![[0.0, -1e9, 0.0]]).unwrap();
        let task = TaskSpec::new(0, 2, vec![ActionId(0)], vec![true], 10, 0.3, 0.0).unwrap();
        (params, task, CloudOracle::new(1.0).unwrap())
    }

    #[test]
    fn zero_advantages_give_zero_gradient() {
        let params = PolicyParams::zeros(2, 2).unwrap();
        let group = GroupSample::new(
            PromptId(1),
            vec![outcome(1, 0, 1.0, 0.0, 2), outcome(1, 1, 1.0, 0.0, 2)],
            ActionMask::All,
        )
        .unwrap();
        let adv = group_advantages(&group.rewards(), &group.costs(), 0.5).unwrap();
        assert!(group_gradient(&params, &group, &adv).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_two_action_enumeration_by_hand() {
        // uniform over {A, HELP}: four equally likely pairs
        let params = PolicyParams::from_logits(array![[0.0, 0.0]]).unwrap();
        let shaped = [1.0, 0.5];
        let mut mean = Array2::<f64>::zeros((1, 2));
        for a in 0..2 {
            for b in 0..2 {
                let group = GroupSample::new(
                    PromptId(0),
                    vec![outcome(0, a, shaped[a], 0.0, 1), outcome(0, b, shaped[b], 0.0, 1)],
                    ActionMask::All,
                )
                .unwrap();
                let adv = group_advantages(&group.rewards(), &group.costs(), 0.0).unwrap();
                mean = mean + group_gradient(&params, &group, &adv).unwrap() * 0.25;
            }
        }
        assert_abs_diff_eq!(mean[[0, 0]], 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(mean[[0, 1]], -0.125, epsilon = 1e-15);
    }

    #[test]
    fn brute_force_two_action_case() {
        let (params, task, oracle) = two_action_world();
        let rewards = RewardParams::default();
        let g = brute_force_policy_gradient(&params, &task, &oracle, PromptId(0), 0.5, &rewards).unwrap();
        assert_abs_diff_eq!(g[[0, 0]], 0.125, epsilon = 1e-12);
        assert_abs_diff_eq!(g[[0, 1]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[[0, 2]], -0.125, epsilon = 1e-12);
        let e = enumerate_estimator_expectation(&params, &task, &oracle, PromptId(0), 0.5, 2, &rewards).unwrap();
        for (a, b) in e.iter().zip(g.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn saturated_policy_has_no_gradient() {
        let params = PolicyParams::from_logits(array![[800.0, 0.0, 0.0]]).unwrap();
        let task = TaskSpec::new(0, 2, vec![ActionId(1)], vec![true], 10, 0.3, 0.1).unwrap();
        let oracle = CloudOracle::new(0.9).unwrap();
        let g = brute_force_policy_gradient(&params, &task, &oracle, PromptId(0), 0.5, &RewardParams::default()).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn lambda_zero_is_reward_gradient() {
        let params = PolicyParams::from_logits(array![[0.4, -0.3, 0.2, 0.9]]).unwrap();
        let task = TaskSpec::new(0, 3, vec![ActionId(2)], vec![true], 10, 0.3, 0.1).unwrap();
        let oracle = CloudOracle::new(0.8).unwrap();
        let rw = RewardParams::default();
        // lambda = 0 equals lambda > 0 with zero cloud cost
        let free = RewardParams { cloud_cost: 1e-300, ..rw };
        let a = brute_force_policy_gradient(&params, &task, &oracle, PromptId(0), 0.0, &rw).unwrap();
        let b = brute_force_policy_gradient(&params, &task, &oracle, PromptId(0), 3.0, &free).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn estimator_is_linear_in_advantages() {
        let params = PolicyParams::from_logits(array![[0.1, 0.5, -0.2]]).unwrap();
        let group = GroupSample::new(
            PromptId(0),
            vec![outcome(0, 0, 1.0, 0.0, 2), outcome(0, 2, 1.0, 1.0, 2), outcome(0, 1, 0.0, 0.0, 2)],
            ActionMask::All,
        )
        .unwrap();
        let adv = group_advantages(&group.rewards(), &group.costs(), 0.7).unwrap();
        let mut scaled = adv.clone();
        scaled.dual_weighted.iter_mut().for_each(|v| *v *= 3.0);
        let a = group_gradient(&params, &group, &adv).unwrap();
        let b = group_gradient(&params, &group, &scaled).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(3.0 * x, y, epsilon = 1e-14);
        }
    }

    #[test]
    fn batch_mean_contracts() {
        let params = PolicyParams::from_logits(array![[0.1, 0.5, -0.2], [0.0, 1.0, 0.3]]).unwrap();
        let mk = |prompt: usize, acts: [usize; 3], r: [f64; 3]| {
            let outcomes = acts
                .iter()
                .zip(r)
                .map(|(&a, rv)| outcome(prompt, a, rv, if a == 2 { 1.0 } else { 0.0 }, 2))
                .collect();
            let g = GroupSample::new(PromptId(prompt), outcomes, ActionMask::All).unwrap();
            let adv = group_advantages(&g.rewards(), &g.costs(), 0.4).unwrap();
            (g, adv)
        };
        let (g1, a1) = mk(0, [0, 2, 1], [1.0, 1.0, 0.0]);
        let single = batch_gradient(&params, &[g1.clone()], &[a1.clone()]).unwrap();
        assert_eq!(single.grad, group_gradient(&params, &g1, &a1).unwrap());
        assert_eq!(single.sample_count, 1);
        let double = batch_gradient(&params, &[g1.clone(), g1.clone()], &[a1.clone(), a1.clone()]).unwrap();
        for (x, y) in double.grad.iter().zip(single.grad.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
        assert!(batch_gradient(&params, &[], &[]).is_err());

        // permuting then restoring canonical order is bit-identical
        let mut rng = RngStream::new(4, "perm").at(&[0]);
        let mut batch: Vec<(usize, GroupSample, AdvantagePair)> = (0..20)
            .map(|i| {
                let acts = [rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..3)];
                let r = [rng.gen(), rng.gen(), rng.gen()];
                let (g, a) = mk(i % 2, acts, r);
                (i, g, a)
            })
            .collect();
        let canon = |b: &[(usize, GroupSample, AdvantagePair)]| {
            let g: Vec<_> = b.iter().map(|x| x.1.clone()).collect();
            let a: Vec<_> = b.iter().map(|x| x.2.clone()).collect();
            batch_gradient(&params, &g, &a).unwrap().grad
        };
        let reference = canon(&batch);
        batch.reverse();
        batch.swap(3, 11);
        batch.sort_by_key(|x| x.0);
        assert_eq!(canon(&batch), reference);
    }

    #[test]
    fn enumeration_budget() {
        let params = PolicyParams::zeros(1, 3).unwrap();
        let task = TaskSpec::new(0, 3, vec![ActionId(0)], vec![true], 10, 0.3, 0.0).unwrap();
        let oracle = CloudOracle::new(1.0).unwrap();
        let err = enumerate_estimator_expectation(&params, &task, &oracle, PromptId(0), 0.5, 10, &RewardParams::default())
            .unwrap_err();
        match err {
            Error::Resource { outcomes, limit } => {
                assert_eq!(outcomes, 4u128.pow(10));
                assert_eq!(limit, ENUMERATION_LIMIT);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn indifferent_actions_give_zero_expectation() {
        // hard prompt, lambda equal to the cloud's value: every action is worth the same
        let params = PolicyParams::from_logits(array![[0.3, -0.8, 1.1]]).unwrap();
        let task = TaskSpec::new(0, 2, vec![ActionId(0)], vec![false], 10, 0.3, 0.0).unwrap();
        let oracle = CloudOracle::new(0.75).unwrap();
        let e = enumerate_estimator_expectation(&params, &task, &oracle, PromptId(0), 0.75, 3, &RewardParams::default()).unwrap();
        assert!(e.iter().all(|v| v.abs() < 1e-12));
    }
}
