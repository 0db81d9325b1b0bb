//! Group-relative advantages for reward and cost, and their dual-weighted
//! combination `Â = Aʳ - λ·Aᶜ`.

use serde::{Deserialize, Serialize};

use crate::environment::Outcome;
use crate::error::{Error, Result};
use crate::policy::{ActionId, ActionMask, PromptId};

/// One prompt with its `G` realized responses.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub prompt: PromptId,
    pub outcomes: Vec<Outcome>,
    pub local_actions: Vec<ActionId>,
    /// Support the local actions were drawn from.
    pub mask: ActionMask,
}

impl GroupSample {
    pub fn new(prompt: PromptId, outcomes: Vec<Outcome>, mask: ActionMask) -> Result<Self> {
        if outcomes.len() < 2 {
            return Err(Error::domain(format!(
                "group size must be >= 2, got {}",
                outcomes.len()
            )));
        }
        if outcomes.iter().any(|o| o.prompt != prompt) {
            return Err(Error::domain("outcome belongs to a different prompt"));
        }
        let local_actions = outcomes.iter().map(|o| o.local_action).collect();
        Ok(GroupSample {
            prompt,
            outcomes,
            local_actions,
            mask,
        })
    }

    pub fn size(&self) -> usize {
        self.outcomes.len()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.reward).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.cost).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantagePair {
    pub reward_adv: Vec<f64>,
    pub cost_adv: Vec<f64>,
    pub dual_weighted: Vec<f64>,
    pub lambda_used: f64,
}

/// Optional rescaling applied after mean-centering.
///
/// `StdDev` divides all three advantage vectors by the standard deviation of
/// the shaped reward `r - λc` (plus `1e-8`). It exists for ablations only;
/// the unbiased estimator requires `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    StdDev,
}

fn check_inputs(rewards: &[f64], costs: &[f64], lambda: f64) -> Result<()> {
    if rewards.len() != costs.len() {
        return Err(Error::domain("rewards and costs differ in length"));
    }
    if rewards.len() < 2 {
        return Err(Error::domain(format!(
            "group size must be >= 2, got {}",
            rewards.len()
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::domain(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if rewards.iter().chain(costs).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite reward or cost"));
    }
    Ok(())
}

fn centered(values: &[f64]) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| v - mean).collect()
}

pub fn group_advantages(rewards: &[f64], costs: &[f64], lambda: f64) -> Result<AdvantagePair> {
    group_advantages_with(rewards, costs, lambda, Normalization::None)
}

pub fn group_advantages_with(
    rewards: &[f64],
    costs: &[f64],
    lambda: f64,
    normalization: Normalization,
) -> Result<AdvantagePair> {
    check_inputs(rewards, costs, lambda)?;
    let mut reward_adv = centered(rewards);
    let mut cost_adv = centered(costs);
    if normalization == Normalization::StdDev {
        let g = rewards.len() as f64;
        let var = reward_adv
            .iter()
            .zip(&cost_adv)
            .map(|(r, c)| (r - lambda * c).powi(2))
            .sum::<f64>()
            / g;
        let scale = 1.0 / (var.sqrt() + 1e-8);
        reward_adv.iter_mut().for_each(|v| *v *= scale);
        cost_adv.iter_mut().for_each(|v| *v *= scale);
    }
    let dual_weighted = reward_adv
        .iter()
        .zip(&cost_adv)
        .map(|(r, c)| r - lambda * c)
        .collect();
    Ok(AdvantagePair {
        reward_adv,
        cost_adv,
        dual_weighted,
        lambda_used: lambda,
    })
}

/// Group-relative advantages of the scalar shaped reward `r - λc`.
///
/// Algebraically identical to [`AdvantagePair::dual_weighted`]; kept as a
/// separate code path so the identity can be checked.
pub fn shaped_reward_advantages(rewards: &[f64], costs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_inputs(rewards, costs, lambda)?;
    let shaped: Vec<f64> = rewards
        .iter()
        .zip(costs)
        .map(|(r, c)| r - lambda * c)
        .collect();
    Ok(centered(&shaped))
}
