//! Tabular softmax policy over a finite prompt set.
//!
//! Each prompt owns one row of logits over `K` answer actions followed by the
//! reserved HELP action at column `K`. Probabilities and score-function
//! gradients are exact.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a prompt in the dense prompt space `0..P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PromptId(pub usize);

/// Index of an action; `0..K` are answers, `K` is HELP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId(pub usize);

/// Which actions the sampler may pick.
///
/// Strategies that never ask for help train and act with HELP removed from
/// the support; the remaining answer probabilities are renormalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMask {
    All,
    AnswersOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    num_answers: usize,
    logits: Array2<f64>,
}

impl PolicyParams {
    /// All-zero logits for `num_prompts` prompts and `num_answers` answers.
    pub fn zeros(num_prompts: usize, num_answers: usize) -> Result<Self> {
        if num_prompts == 0 || num_answers == 0 {
            return Err(Error::domain(
                "policy needs at least one prompt and one answer action",
            ));
        }
        Ok(PolicyParams {
            num_answers,
            logits: Array2::zeros((num_prompts, num_answers + 1)),
        })
    }

    /// Wraps an explicit logit matrix whose last column is HELP.
    pub fn from_logits(logits: Array2<f64>) -> Result<Self> {
        let (rows, cols) = logits.dim();
        if rows == 0 || cols < 2 {
            return Err(Error::domain(format!(
                "logit matrix must be at least 1x2, got {rows}x{cols}"
            )));
        }
        let p = PolicyParams {
            num_answers: cols - 1,
            logits,
        };
        p.check_finite()?;
        Ok(p)
    }

    pub fn num_prompts(&self) -> usize {
        self.logits.nrows()
    }

    pub fn num_answers(&self) -> usize {
        self.num_answers
    }

    pub fn num_actions(&self) -> usize {
        self.num_answers + 1
    }

    pub fn help(&self) -> ActionId {
        ActionId(self.num_answers)
    }

    pub fn is_help(&self, action: ActionId) -> bool {
        action.0 == self.num_answers
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Array2<f64> {
        &mut self.logits
    }

    pub fn row(&self, prompt: PromptId) -> Result<ArrayView1<'_, f64>> {
        self.check_prompt(prompt)?;
        Ok(self.logits.row(prompt.0))
    }

    pub fn check_prompt(&self, prompt: PromptId) -> Result<()> {
        if prompt.0 >= self.num_prompts() {
            return Err(Error::domain(format!(
                "prompt {} out of range (P = {})",
                prompt.0,
                self.num_prompts()
            )));
        }
        Ok(())
    }

    pub fn check_action(&self, action: ActionId) -> Result<()> {
        if action.0 > self.num_answers {
            return Err(Error::domain(format!(
                "action {} out of range (K+1 = {})",
                action.0,
                self.num_actions()
            )));
        }
        Ok(())
    }

    /// Fails if any logit is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        if let Some((idx, v)) = self.logits.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite logit {v} at (prompt {}, action {})",
                idx.0, idx.1
            )));
        }
        Ok(())
    }

    /// `softmax` of the prompt's logit row.
    pub fn action_probabilities(&self, prompt: PromptId) -> Result<Array1<f64>> {
        self.probabilities(prompt, ActionMask::All)
    }

    pub fn probabilities(&self, prompt: PromptId, mask: ActionMask) -> Result<Array1<f64>> {
        let row = self.row(prompt)?;
        let active = match mask {
            ActionMask::All => self.num_actions(),
            ActionMask::AnswersOnly => self.num_answers,
        };
        let max = row
            .iter()
            .take(active)
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut probs = Array1::zeros(self.num_actions());
        let mut total = 0.0;
        for (j, &v) in row.iter().enumerate().take(active) {
            let e = (v - max).exp();
            probs[j] = e;
            total += e;
        }
        probs.mapv_inplace(|p| p / total);
        Ok(probs)
    }

    /// Draws one action from the prompt's distribution using a single uniform
    /// from `rng` (inverse CDF).
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        prompt: PromptId,
        mask: ActionMask,
        rng: &mut R,
    ) -> Result<ActionId> {
        let probs = self.probabilities(prompt, mask)?;
        Ok(sample_from(&probs, rng))
    }

    /// Argmax action, lowest index wins ties.
    pub fn greedy_action(&self, prompt: PromptId, mask: ActionMask) -> Result<ActionId> {
        let row = self.row(prompt)?;
        let active = match mask {
            ActionMask::All => self.num_actions(),
            ActionMask::AnswersOnly => self.num_answers,
        };
        let mut best = 0;
        for j in 1..active {
            if row[j] > row[best] {
                best = j;
            }
        }
        Ok(ActionId(best))
    }

    /// `∇_θ log π(action | prompt)` as a full matrix: zero outside the
    /// prompt's row, `[j == action] - softmax_j` inside it.
    pub fn log_prob_gradient(&self, prompt: PromptId, action: ActionId) -> Result<Array2<f64>> {
        let row = self.log_prob_gradient_row(prompt, action, ActionMask::All)?;
        let mut grad = Array2::zeros(self.logits.dim());
        grad.row_mut(prompt.0).assign(&row);
        Ok(grad)
    }

    /// The nonzero row of [`log_prob_gradient`](Self::log_prob_gradient),
    /// for the masked distribution when `mask` excludes HELP.
    pub fn log_prob_gradient_row(
        &self,
        prompt: PromptId,
        action: ActionId,
        mask: ActionMask,
    ) -> Result<Array1<f64>> {
        self.check_action(action)?;
        if mask == ActionMask::AnswersOnly && self.is_help(action) {
            return Err(Error::domain("HELP is masked out of this distribution"));
        }
        let mut g = self.probabilities(prompt, mask)?;
        g.mapv_inplace(|p| -p);
        g[action.0] += 1.0;
        Ok(g)
    }
}

/// Inverse-CDF draw from a probability vector.
pub(crate) fn sample_from<R: Rng + ?Sized>(probs: &Array1<f64>, rng: &mut R) -> ActionId {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = j;
            if u < acc {
                return ActionId(j);
            }
        }
    }
    // rounding left u above the final cumulative sum
    ActionId(last_positive)
}
