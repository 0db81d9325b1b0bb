//! Projected dual ascent on the cloud-usage multiplier.

use serde::{Deserialize, Serialize};

use crate::advantage::GroupSample;
use crate::error::{Error, Result};

/// λ beyond this is treated as divergence.
pub const LAMBDA_ABORT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualRecord {
    pub iteration: u64,
    pub lambda: f64,
    pub j_hat_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: f64,
    pub eta_lambda: f64,
    pub tau_current: f64,
    pub history: Vec<DualRecord>,
    /// Iteration stamped on the next history record.
    pub next_iteration: u64,
}

impl DualState {
    pub fn new(lambda: f64, eta_lambda: f64, tau: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::domain(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if !(eta_lambda.is_finite() && eta_lambda >= 0.0) {
            return Err(Error::domain(format!("eta_lambda must be finite and >= 0, got {eta_lambda}")));
        }
        check_tau(tau)?;
        Ok(DualState {
            lambda,
            eta_lambda,
            tau_current: tau,
            history: Vec::new(),
            next_iteration: 0,
        })
    }

    /// Keeps the history from growing in long runs where only the last
    /// record matters.
    pub fn clear_history(&mut self) {
        self.history.clear();
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::domain(format!("tau = {tau} outside [0, 1]")));
    }
    Ok(())
}

/// Mean over prompts of the mean group cost, divided by the cloud cost so
/// the result is a rate.
pub fn empirical_cloud_usage(groups: &[GroupSample], cloud_cost: f64) -> Result<f64> {
    let first = groups.first().ok_or_else(|| Error::domain("empty batch"))?;
    if !(cloud_cost > 0.0) {
        return Err(Error::domain("cloud cost must be positive"));
    }
    let g = first.size();
    let mut total = 0.0;
    for group in groups {
        if group.size() != g {
            return Err(Error::domain("groups differ in size"));
        }
        total += group.outcomes.iter().map(|o| o.cost).sum::<f64>() / g as f64;
    }
    Ok((total / groups.len() as f64 / cloud_cost).clamp(0.0, 1.0))
}

/// `λ ← max(0, λ + η_λ (Ĵ_c − τ))`.
pub fn dual_update(state: &mut DualState, j_hat_c: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&j_hat_c) {
        return Err(Error::domain(format!("j_hat_c = {j_hat_c} outside [0, 1]")));
    }
    let lambda = (state.lambda + state.eta_lambda * (j_hat_c - state.tau_current)).max(0.0);
    if !lambda.is_finite() || lambda > LAMBDA_ABORT {
        return Err(Error::Abort {
            iteration: state.next_iteration,
            reason: format!("lambda diverged to {lambda}; eta_lambda = {} is too large", state.eta_lambda),
        });
    }
    state.lambda = lambda;
    state.history.push(DualRecord {
        iteration: state.next_iteration,
        lambda,
        j_hat_c,
    });
    state.next_iteration += 1;
    Ok(())
}

/// New collaboration target. λ carries over unchanged.
pub fn set_task_target(state: &mut DualState, tau: f64) -> Result<()> {
    check_tau(tau)?;
    state.tau_current = tau;
    Ok(())
}

/// Logistic usage curve `f(λ) = σ(k (λ₀ − λ))`, a stand-in for a policy that
/// has fully adapted to each λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticUsage {
    pub lambda0: f64,
    pub steepness: f64,
}

impl LogisticUsage {
    pub fn usage(&self, lambda: f64) -> f64 {
        1.0 / (1.0 + (-self.steepness * (self.lambda0 - lambda)).exp())
    }
}

/// Iterates the dual update against a known usage curve and returns the
/// final λ.
pub fn iterate_against(
    curve: LogisticUsage,
    tau: f64,
    lambda_init: f64,
    eta_lambda: f64,
    steps: usize,
) -> Result<f64> {
    let mut state = DualState::new(lambda_init, eta_lambda, tau)?;
    for _ in 0..steps {
        let j = curve.usage(state.lambda);
        dual_update(&mut state, j)?;
        state.history.clear();
    }
    Ok(state.lambda)
}
