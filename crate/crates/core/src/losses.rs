//! Preference losses over policy/reference log-probabilities.
//!
//! All losses return their per-sample value and the gradient with respect to
//! the policy log-probabilities they consumed. With implicit rewards
//! `r̂_i = β (log π_θ(i) − log π_ref(i))` and `g_d = r̂_d − r̂_p`:
//!
//! ```text
//! DPO    : −log σ(r̂_p − r̂_d)
//! S-DPO  : −log σ(−log Σ_d exp(g_d))
//! ∂S-DPO : −β·σ(LSE(g)) at the positive, +β·σ(LSE(g))·softmax(r̂_neg)_d at negative d
//! ```
//!
//! BPR and the sampled softmax loss are the same expressions over raw scores
//! instead of implicit rewards.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::{check_finite, log_sigmoid, log_sum_exp, sigmoid, softmax};
use crate::{Error, Result};

/// Policy and reference log-probabilities for one positive and its dispreferred candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbTable {
    policy_logp: Vec<f64>,
    ref_logp: Vec<f64>,
    positive_index: usize,
}

impl LogProbTable {
    pub fn new(policy_logp: Vec<f64>, ref_logp: Vec<f64>, positive_index: usize) -> Result<Self> {
        if policy_logp.len() != ref_logp.len() {
            return Err(Error::LengthMismatch {
                expected: policy_logp.len(),
                actual: ref_logp.len(),
            });
        }
        if policy_logp.len() < 2 {
            return Err(Error::NoNegatives);
        }
        if positive_index >= policy_logp.len() {
            return Err(Error::IndexOutOfRange {
                index: positive_index,
                len: policy_logp.len(),
            });
        }
        check_finite(&policy_logp)?;
        check_finite(&ref_logp)?;
        Ok(Self {
            policy_logp,
            ref_logp,
            positive_index,
        })
    }

    pub fn policy_logp(&self) -> &[f64] {
        &self.policy_logp
    }

    pub fn ref_logp(&self) -> &[f64] {
        &self.ref_logp
    }

    pub fn positive_index(&self) -> usize {
        self.positive_index
    }

    pub fn len(&self) -> usize {
        self.policy_logp.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of dispreferred candidates.
    pub fn num_negatives(&self) -> usize {
        self.policy_logp.len() - 1
    }

    /// Candidate indices other than the positive, in ascending order.
    pub fn negative_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| i != self.positive_index)
    }

    /// Same table with new policy log-probabilities (used for gradient probes).
    pub fn with_policy_logp(&self, policy_logp: &[f64]) -> Self {
        Self {
            policy_logp: policy_logp.to_vec(),
            ref_logp: self.ref_logp.clone(),
            positive_index: self.positive_index,
        }
    }

    pub fn implicit_rewards(&self, beta: f64) -> Vec<f64> {
        self.policy_logp
            .iter()
            .zip(&self.ref_logp)
            .map(|(&p, &r)| implicit_reward(p, r, beta))
            .collect()
    }
}

/// Loss value and `∂loss/∂policy_logp` per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_policy_logp: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Sft,
    Bpr,
    Softmax,
    Dpo,
    Sdpo,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Sft,
        LossKind::Bpr,
        LossKind::Softmax,
        LossKind::Dpo,
        LossKind::Sdpo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Sft => "sft",
            LossKind::Bpr => "bpr",
            LossKind::Softmax => "softmax",
            LossKind::Dpo => "dpo",
            LossKind::Sdpo => "sdpo",
        }
    }

    /// Whether the loss is defined relative to a reference policy.
    pub fn needs_reference(self) -> bool {
        matches!(self, LossKind::Dpo | LossKind::Sdpo)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownLossKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub beta: f64,
    pub num_negatives: usize,
    pub loss_kind: LossKind,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            num_negatives: 3,
            loss_kind: LossKind::Sdpo,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.num_negatives == 0 {
            return Err(Error::Config("num_negatives must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// `β (log π_θ − log π_ref)`; the `β log Z(x)` term cancels in every difference and is dropped.
pub fn implicit_reward(policy_logp: f64, ref_logp: f64, beta: f64) -> f64 {
    beta * (policy_logp - ref_logp)
}

/// Pairwise DPO on a two-candidate table.
pub fn dpo_loss(t: &LogProbTable, beta: f64) -> Result<LossOutput> {
    if t.len() != 2 {
        return Err(Error::LengthMismatch {
            expected: 2,
            actual: t.len(),
        });
    }
    let p = t.positive_index;
    let d = 1 - p;
    let r = t.implicit_rewards(beta);
    let value = -log_sigmoid(r[p] - r[d]);
    let weight = beta * sigmoid(r[d] - r[p]);
    let mut grad = vec![0.0; 2];
    grad[p] = -weight;
    grad[d] = weight;
    Ok(LossOutput {
        value,
        grad_policy_logp: grad,
    })
}

/// Mean of pairwise DPO over every (positive, negative) pair of the table.
///
/// This is what "DPO with K negatives" means when each negative is paired
/// with the positive as an independent preference pair.
pub fn multi_pair_dpo_loss(t: &LogProbTable, beta: f64) -> Result<LossOutput> {
    let p = t.positive_index;
    let k = t.num_negatives() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; t.len()];
    for d in t.negative_indices() {
        let pair = LogProbTable {
            policy_logp: vec![t.policy_logp[p], t.policy_logp[d]],
            ref_logp: vec![t.ref_logp[p], t.ref_logp[d]],
            positive_index: 0,
        };
        let out = dpo_loss(&pair, beta)?;
        value += out.value / k;
        grad[p] += out.grad_policy_logp[0] / k;
        grad[d] += out.grad_policy_logp[1] / k;
    }
    Ok(LossOutput {
        value,
        grad_policy_logp: grad,
    })
}

/// Softmax-DPO over one positive and every remaining candidate as a negative.
pub fn sdpo_loss(t: &LogProbTable, beta: f64) -> Result<LossOutput> {
    let r = t.implicit_rewards(beta);
    let p = t.positive_index;
    let (value, grad) = softmax_form(r[p], &negatives_of(&r, p))?;
    Ok(LossOutput {
        value,
        grad_policy_logp: scatter(t, grad, beta),
    })
}

/// Per-negative gradient weights `softmax(r̂_neg)`; larger implicit reward, larger weight.
pub fn negative_weights(t: &LogProbTable, beta: f64) -> Result<Vec<f64>> {
    let r = t.implicit_rewards(beta);
    softmax(&negatives_of(&r, t.positive_index))
}

/// `σ(log Σ_d exp(r̂_d − r̂_p))`, the per-sample factor shared by every gradient term.
pub fn sdpo_outer_weight(t: &LogProbTable, beta: f64) -> Result<f64> {
    let r = t.implicit_rewards(beta);
    let p = t.positive_index;
    let gaps: Vec<f64> = negatives_of(&r, p).iter().map(|&x| x - r[p]).collect();
    Ok(sigmoid(log_sum_exp(&gaps)?))
}

/// BPR: `−log σ(f_p − f_d)`; gradient is `[∂/∂f_p, ∂/∂f_d]`.
pub fn bpr_loss(score_pos: f64, score_neg: f64) -> LossOutput {
    let w = sigmoid(score_neg - score_pos);
    LossOutput {
        value: -log_sigmoid(score_pos - score_neg),
        grad_policy_logp: vec![-w, w],
    }
}

/// Sampled softmax loss `−log σ(−log Σ_d exp(f_d − f_p))`.
///
/// Gradient is ordered `[∂/∂f_p, ∂/∂f_d1, ..]`.
pub fn softmax_ranking_loss(score_pos: f64, scores_neg: &[f64]) -> Result<LossOutput> {
    let (value, grad) = softmax_form(score_pos, scores_neg)?;
    Ok(LossOutput {
        value,
        grad_policy_logp: grad,
    })
}

/// Item-level negative log-likelihood of the positive.
pub fn sft_nll(t: &LogProbTable) -> LossOutput {
    let mut grad = vec![0.0; t.len()];
    grad[t.positive_index] = -1.0;
    LossOutput {
        value: -t.policy_logp[t.positive_index],
        grad_policy_logp: grad,
    }
}

/// Dispatches on `kind`. BPR and softmax consume `β·log π_θ` as scores and
/// ignore the reference; with K > 1 negatives BPR and DPO average their pairs.
pub fn compute_loss(kind: LossKind, t: &LogProbTable, beta: f64) -> Result<LossOutput> {
    match kind {
        LossKind::Sft => Ok(sft_nll(t)),
        LossKind::Dpo if t.len() == 2 => dpo_loss(t, beta),
        LossKind::Dpo => multi_pair_dpo_loss(t, beta),
        LossKind::Sdpo => sdpo_loss(t, beta),
        LossKind::Bpr => {
            let p = t.positive_index;
            let k = t.num_negatives() as f64;
            let mut value = 0.0;
            let mut grad = vec![0.0; t.len()];
            for d in t.negative_indices() {
                let out = bpr_loss(beta * t.policy_logp[p], beta * t.policy_logp[d]);
                value += out.value / k;
                grad[p] += beta * out.grad_policy_logp[0] / k;
                grad[d] += beta * out.grad_policy_logp[1] / k;
            }
            Ok(LossOutput {
                value,
                grad_policy_logp: grad,
            })
        }
        LossKind::Softmax => {
            let scores: Vec<f64> = t.policy_logp.iter().map(|&x| beta * x).collect();
            let p = t.positive_index;
            let (value, grad) = softmax_form(scores[p], &negatives_of(&scores, p))?;
            Ok(LossOutput {
                value,
                grad_policy_logp: scatter(t, grad, beta),
            })
        }
    }
}

fn negatives_of(values: &[f64], positive: usize) -> Vec<f64> {
    values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != positive)
        .map(|(_, &v)| v)
        .collect()
}

/// Value and score-space gradient `[pos, neg..]` of `−log σ(−LSE(f_neg − f_pos))`.
fn softmax_form(pos: f64, negs: &[f64]) -> Result<(f64, Vec<f64>)> {
    if negs.is_empty() {
        return Err(Error::NoNegatives);
    }
    let gaps: Vec<f64> = negs.iter().map(|&x| x - pos).collect();
    let lse = log_sum_exp(&gaps)?;
    let outer = sigmoid(lse);
    let weights = softmax(negs)?;
    let mut grad = Vec::with_capacity(negs.len() + 1);
    grad.push(-outer);
    grad.extend(weights.iter().map(|w| outer * w));
    Ok((-log_sigmoid(-lse), grad))
}

/// Maps a `[pos, neg..]` score gradient back to table order, scaled by `beta`.
fn scatter(t: &LogProbTable, score_grad: Vec<f64>, beta: f64) -> Vec<f64> {
    let mut grad = vec![0.0; t.len()];
    grad[t.positive_index] = beta * score_grad[0];
    for (d, g) in t.negative_indices().zip(&score_grad[1..]) {
        grad[d] = beta * g;
    }
    grad
}
