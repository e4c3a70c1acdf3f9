//! Plackett-Luce and Bradley-Terry preference distributions.
//!
//! Under Plackett-Luce with rewards `r`, a ranking `τ` has probability
//!
//! ```text
//! p(τ | r) = Π_j exp(r_τ(j)) / Σ_{l ≥ j} exp(r_τ(l))
//! ```
//!
//! and the probability that candidate `p` is ranked first (i.e. preferred
//! over every other candidate) marginalizes to `softmax(r)_p`.
//! [`brute_force_top_choice`] computes that marginal by summing over every
//! ranking that starts with `p`, independently of the closed form.

use rand::Rng;

use crate::numerics::{check_finite, log_sum_exp, sigmoid, softmax};
use crate::{Error, Result};

/// Largest candidate count the factorial oracle accepts.
pub const ORACLE_MAX_K: usize = 8;

/// Per-candidate rewards for one context, in log-odds units.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector(Vec<f64>);

impl RewardVector {
    pub fn new(rewards: Vec<f64>) -> Result<Self> {
        if rewards.is_empty() {
            return Err(Error::EmptyVector);
        }
        check_finite(&rewards)?;
        Ok(Self(rewards))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A permutation of `0..K`; position `j` holds the candidate ranked `j`-th.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ranking(Vec<usize>);

impl Ranking {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &c in &order {
            if c >= order.len() {
                return Err(Error::InvalidRanking(format!(
                    "candidate {c} out of range for {} candidates",
                    order.len()
                )));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::InvalidRanking(format!("candidate {c} appears twice")));
            }
        }
        Ok(Self(order))
    }

    pub fn identity(k: usize) -> Self {
        Self((0..k).collect())
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Advances to the next permutation in lexicographic order; `false` once exhausted.
    fn advance(&mut self) -> bool {
        let v = &mut self.0;
        let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
            return false;
        };
        let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).unwrap();
        v.swap(i - 1, j);
        v[i..].reverse();
        true
    }
}

/// Probability of `tau` under Plackett-Luce, accumulated in log space.
pub fn pl_ranking_probability(r: &RewardVector, tau: &Ranking) -> Result<f64> {
    if tau.len() != r.len() {
        return Err(Error::LengthMismatch {
            expected: r.len(),
            actual: tau.len(),
        });
    }
    let ordered: Vec<f64> = tau.order().iter().map(|&c| r.0[c]).collect();
    let mut log_p = 0.0;
    for j in 0..ordered.len() {
        log_p += ordered[j] - log_sum_exp(&ordered[j..])?;
    }
    Ok(log_p.exp())
}

/// Probability that candidate `p` is preferred over all others: `softmax(r)_p`.
pub fn top_choice_probability(r: &RewardVector, p: usize) -> Result<f64> {
    if p >= r.len() {
        return Err(Error::IndexOutOfRange { index: p, len: r.len() });
    }
    Ok(softmax(&r.0)?[p])
}

/// Sums [`pl_ranking_probability`] over every ranking whose first element is `p`.
///
/// Rankings are visited in lexicographic order. Cost is `(K-1)!`, hence the
/// [`ORACLE_MAX_K`] guard.
pub fn brute_force_top_choice(r: &RewardVector, p: usize) -> Result<f64> {
    let k = r.len();
    if k > ORACLE_MAX_K {
        return Err(Error::OracleTooLarge { k, max: ORACLE_MAX_K });
    }
    if p >= k {
        return Err(Error::IndexOutOfRange { index: p, len: k });
    }
    let mut rest = Ranking((0..k).filter(|&c| c != p).collect());
    let mut total = 0.0;
    loop {
        let mut order = Vec::with_capacity(k);
        order.push(p);
        order.extend_from_slice(rest.order());
        total += pl_ranking_probability(r, &Ranking(order))?;
        if !rest.advance() {
            break;
        }
    }
    Ok(total)
}

/// Every ranking of `0..k` in lexicographic order.
pub fn all_rankings(k: usize) -> Vec<Ranking> {
    let mut current = Ranking::identity(k);
    let mut out = vec![current.clone()];
    while current.advance() {
        out.push(current.clone());
    }
    out
}

/// Bradley-Terry probability that the winner beats the loser: `σ(r_w - r_l)`.
pub fn bt_pair_probability(r_w: f64, r_l: f64) -> f64 {
    sigmoid(r_w - r_l)
}

/// Draws a ranking from the Plackett-Luce distribution by repeatedly picking
/// a remaining candidate with probability proportional to `exp(r)`.
pub fn sample_ranking<R: Rng + ?Sized>(r: &RewardVector, rng: &mut R) -> Ranking {
    let mut remaining: Vec<usize> = (0..r.len()).collect();
    let mut order = Vec::with_capacity(r.len());
    while !remaining.is_empty() {
        let pick = sample_proportional(remaining.iter().map(|&c| r.0[c]), rng);
        order.push(remaining.remove(pick));
    }
    Ranking(order)
}

/// Index drawn with probability `softmax(scores)`. Scores must be non-empty and finite.
pub(crate) fn sample_proportional<I, R>(scores: I, rng: &mut R) -> usize
where
    I: Iterator<Item = f64> + Clone,
    R: Rng + ?Sized,
{
    let max = scores.clone().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = scores.clone().map(|s| (s - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, s) in scores.enumerate() {
        let w = (s - max).exp();
        if u < w {
            return i;
        }
        u -= w;
        last = i;
    }
    // Rounding left u marginally above the accumulated mass.
    last
}
