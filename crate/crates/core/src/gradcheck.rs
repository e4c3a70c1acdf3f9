//! Randomized analytic-vs-finite-difference gradient checks.
//!
//! `Level::LogProb` differentiates a loss with respect to the candidates'
//! policy log-probabilities. The policy levels push the same loss through a
//! tabular or embedding policy and differentiate with respect to every
//! parameter, using the trainer's own per-sample loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::data::PreferenceSample;
use crate::losses::{compute_loss, AlignmentConfig, LogProbTable, LossKind};
use crate::numerics::{finite_difference_gradient, max_relative_error, DEFAULT_FD_STEP};
use crate::policy::{snapshot_reference, EmbeddingPolicy, Policy, PolicyModel, Pooling, TabularPolicy};
use crate::seed;
use crate::training::sample_loss;
use crate::{Error, Result};

/// Denominator floor of the relative error.
pub const ERROR_FLOOR: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const BETAS: [f64; 5] = [0.1, 0.5, 1.0, 3.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    LogProb,
    Tabular,
    Embedding,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::LogProb, Level::Tabular, Level::Embedding];
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::LogProb => "logprob",
            Level::Tabular => "tabular",
            Level::Embedding => "embedding",
        })
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logprob" => Ok(Level::LogProb),
            "tabular" => Ok(Level::Tabular),
            "embedding" => Ok(Level::Embedding),
            other => Err(Error::Config(format!("unknown gradcheck level `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub loss: LossKind,
    pub level: Level,
    pub num_negatives: usize,
    pub trials: usize,
    pub max_rel_error: f64,
    pub worst_trial: usize,
    /// Coordinate of the largest error within the worst trial.
    pub worst_coordinate: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// Options for [`check_gradients`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub loss: LossKind,
    pub level: Level,
    pub num_negatives: usize,
    pub trials: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Negate the analytic gradient, to confirm the check can fail.
    pub flip_sign: bool,
}

impl GradCheck {
    pub fn new(loss: LossKind, level: Level, num_negatives: usize, trials: usize) -> Self {
        Self {
            loss,
            level,
            num_negatives,
            trials,
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
            flip_sign: false,
        }
    }
}

pub fn check_gradients(opts: &GradCheck) -> Result<GradCheckReport> {
    if opts.trials == 0 {
        return Err(Error::Config("gradcheck needs at least one trial".into()));
    }
    if opts.num_negatives == 0 {
        return Err(Error::NoNegatives);
    }
    let mut report = GradCheckReport {
        loss: opts.loss,
        level: opts.level,
        num_negatives: opts.num_negatives,
        trials: opts.trials,
        max_rel_error: 0.0,
        worst_trial: 0,
        worst_coordinate: 0,
        tolerance: opts.tolerance,
    };
    for trial in 0..opts.trials {
        let mut rng = seed::rng(opts.seed, &[opts.loss as u64, opts.num_negatives as u64, trial as u64]);
        let beta = BETAS[rng.random_range(0..BETAS.len())];
        let (mut analytic, numeric) = match opts.level {
            Level::LogProb => log_prob_trial(opts.loss, opts.num_negatives, beta, &mut rng)?,
            Level::Tabular | Level::Embedding => policy_trial(opts.loss, opts.level, opts.num_negatives, beta, &mut rng)?,
        };
        if opts.flip_sign {
            analytic.iter_mut().for_each(|g| *g = -*g);
        }
        let (err, at) = max_relative_error(&analytic, &numeric, ERROR_FLOOR);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = err;
            report.worst_trial = trial;
            report.worst_coordinate = at;
        }
    }
    Ok(report)
}

fn log_prob_trial<R: Rng>(kind: LossKind, k: usize, beta: f64, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut draw = || (0..=k).map(|_| -6.0 * rng.random::<f64>()).collect::<Vec<f64>>();
    let (policy, reference) = (draw(), draw());
    let table = LogProbTable::new(policy, reference, rng.random_range(0..=k))?;
    let analytic = compute_loss(kind, &table, beta)?.grad_policy_logp;
    let numeric = finite_difference_gradient(
        |x| match compute_loss(kind, &table.with_policy_logp(x), beta) {
            Ok(out) => out.value,
            Err(_) => f64::NAN,
        },
        table.policy_logp(),
        DEFAULT_FD_STEP,
    )?;
    Ok((analytic, numeric))
}

fn policy_trial<R: Rng>(kind: LossKind, level: Level, k: usize, beta: f64, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    let items = k + 2 + rng.random_range(0..4);
    let users = 2;
    let base: PolicyModel = match level {
        Level::Embedding => {
            let pooling = if rng.random::<bool>() { Pooling::Mean } else { Pooling::Last };
            EmbeddingPolicy::init(items, 3, pooling, rng)?.into()
        }
        _ => TabularPolicy::from_logits(users, items, (0..users * items).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())?.into(),
    };
    let reference = snapshot_reference(&base);
    let mut policy = base;
    for p in policy.params_mut() {
        *p += rng.random::<f64>() * 0.4 - 0.2;
    }
    let picked = rand::seq::index::sample(rng, items, k + 1).into_vec();
    let sample = PreferenceSample {
        user: rng.random_range(0..users),
        user_id: 0,
        history: (0..1 + rng.random_range(0..3)).map(|_| rng.random_range(0..items)).collect(),
        positive: picked[0],
        negatives: picked[1..].to_vec(),
    };
    let align = AlignmentConfig {
        beta,
        num_negatives: k,
        loss_kind: kind,
    };
    let mut analytic = vec![0.0; policy.params().len()];
    sample_loss(&policy, Some(&reference), &sample, &align, Some((&mut analytic, 1.0)))?;
    let numeric = finite_difference_gradient(
        |theta| {
            let mut probe = policy.clone();
            probe.params_mut().copy_from_slice(theta);
            sample_loss(&probe, Some(&reference), &sample, &align, None).unwrap_or(f64::NAN)
        },
        policy.params(),
        DEFAULT_FD_STEP,
    )?;
    Ok((analytic, numeric))
}
