//! SFT and preference-alignment stages.
//!
//! Both stages share one loop: per epoch, build samples, shuffle with an
//! epoch-derived seed, compute per-sample gradients (in parallel), reduce
//! them in sample order, and take one optimizer step per batch. Every random
//! choice is derived from `(seed, stream, epoch, ...)`, so a run is a pure
//! function of its config and data, and a checkpoint taken after any epoch
//! can be resumed without replaying RNG state.

use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_preference_samples, non_interacted, Part, PreferenceSample, SplitDataset};
use crate::losses::{compute_loss, implicit_reward, AlignmentConfig, LogProbTable, LossKind};
use crate::policy::{codec, Context, EmbeddingPolicy, LogProbSource, Policy, PolicyModel, Pooling, ReferencePolicy, TabularPolicy};
use crate::seed::{self, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Sft,
    Align,
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sft" => Ok(Stage::Sft),
            "align" => Ok(Stage::Align),
            other => Err(Error::Config(format!("unknown stage `{other}` (sft|align)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::adam()),
            other => Err(Error::Config(format!("unknown optimizer `{other}` (sgd|adam)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub align: AlignmentConfig,
    /// Rescale the batch gradient to at most this L2 norm.
    pub clip_norm: Option<f64>,
    /// Draw fresh negatives every epoch (otherwise epoch 0's are reused).
    pub resample_negatives: bool,
    /// Return the epoch with the lowest validation loss instead of the last.
    pub select_best: bool,
}

impl TrainConfig {
    pub fn sft() -> Self {
        Self {
            stage: Stage::Sft,
            epochs: 50,
            batch_size: 128,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            align: AlignmentConfig {
                loss_kind: LossKind::Sft,
                ..AlignmentConfig::default()
            },
            clip_norm: None,
            resample_negatives: true,
            select_best: true,
        }
    }

    pub fn align() -> Self {
        Self {
            stage: Stage::Align,
            epochs: 3,
            learning_rate: 1e-3,
            align: AlignmentConfig::default(),
            select_best: false,
            ..Self::sft()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        self.align.validate()?;
        match (self.stage, self.align.loss_kind) {
            (Stage::Sft, LossKind::Sft) => Ok(()),
            (Stage::Sft, k) => Err(Error::Config(format!("sft stage trains the sft loss, not `{k}`"))),
            (Stage::Align, LossKind::Sft) => Err(Error::Config("alignment stage needs one of dpo, sdpo, bpr, softmax".into())),
            (Stage::Align, _) => Ok(()),
        }
    }
}

/// Optimizer state: nothing for SGD, moments and step count for Adam.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<f64>,
        v: Vec<f64>,
    },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam { beta1, beta2, eps } => OptimizerState::Adam {
                beta1,
                beta2,
                eps,
                step: 0,
                m: vec![0.0; params],
                v: vec![0.0; params],
            },
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            OptimizerState::Sgd => 0,
            OptimizerState::Adam { step, .. } => *step,
        }
    }
}

/// SGD: `θ ← θ − lr·g`. Adam: bias-corrected first/second moments.
pub fn optimizer_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    match state {
        OptimizerState::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        OptimizerState::Adam {
            beta1,
            beta2,
            eps,
            step,
            m,
            v,
        } => {
            if m.len() != params.len() {
                return Err(Error::LengthMismatch {
                    expected: m.len(),
                    actual: params.len(),
                });
            }
            *step += 1;
            let c1 = 1.0 - beta1.powi(*step as i32);
            let c2 = 1.0 - beta2.powi(*step as i32);
            for i in 0..params.len() {
                let g = grads[i];
                m[i] = *beta1 * m[i] + (1.0 - *beta1) * g;
                v[i] = *beta2 * v[i] + (1.0 - *beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                params[i] -= lr * m_hat / (v_hat.sqrt() + *eps);
            }
        }
    }
    Ok(())
}

/// One JSONL record of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub stage: Stage,
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub mean_pos_reward: Option<f64>,
    pub wall_ms: u64,
}

pub fn write_metrics_jsonl<W: Write>(log: &[EpochMetrics], w: &mut W) -> Result<()> {
    for m in log {
        serde_json::to_writer(&mut *w, m).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_metrics_jsonl<R: Read>(r: R) -> Result<Vec<EpochMetrics>> {
    let mut text = String::new();
    std::io::BufReader::new(r).read_to_string(&mut text)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("metric log: {e}"))))
        .collect()
}

/// How a fresh policy is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PolicySpec {
    Embedding { dim: usize, pooling: Pooling },
    Tabular,
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::Embedding {
            dim: 8,
            pooling: Pooling::Mean,
        }
    }
}

impl PolicySpec {
    pub fn init(&self, users: usize, item_count: usize, run_seed: u64) -> Result<PolicyModel> {
        let mut rng = seed::rng(run_seed, &[stream::INIT]);
        Ok(match *self {
            PolicySpec::Embedding { dim, pooling } => EmbeddingPolicy::init(item_count, dim, pooling, &mut rng)?.into(),
            PolicySpec::Tabular => TabularPolicy::zeros(users, item_count)?.into(),
        })
    }
}

/// Everything needed to continue a run after an epoch boundary.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub policy: PolicyModel,
    pub optimizer: OptimizerState,
    /// Completed epochs.
    pub epoch: usize,
    pub log: Vec<EpochMetrics>,
    /// Lowest validation loss so far, its epoch and parameters.
    pub best: Option<(usize, f64, Vec<f64>)>,
}

const OPT_MAGIC: &[u8; 4] = b"OPT1";
const RUN_MAGIC: &[u8; 4] = b"RUN1";

impl Checkpoint {
    pub fn fresh(policy: PolicyModel, cfg: &TrainConfig) -> Self {
        let optimizer = OptimizerState::new(cfg.optimizer, policy.params().len());
        Self {
            policy,
            optimizer,
            epoch: 0,
            log: Vec::new(),
            best: None,
        }
    }

    /// Policy in `PALN1` layout, then an `OPT1` optimizer section and a `RUN1` progress section.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_policy(w, &self.policy)?;
        w.write_all(OPT_MAGIC)?;
        match &self.optimizer {
            OptimizerState::Sgd => w.write_all(&[0])?,
            OptimizerState::Adam {
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                w.write_all(&[1])?;
                codec::write_f64s(w, &[*beta1, *beta2, *eps])?;
                w.write_all(&step.to_le_bytes())?;
                codec::write_f64s(w, m)?;
                codec::write_f64s(w, v)?;
            }
        }
        w.write_all(RUN_MAGIC)?;
        w.write_all(&(self.epoch as u64).to_le_bytes())?;
        w.write_all(&(self.log.len() as u64).to_le_bytes())?;
        for m in &self.log {
            w.write_all(&[m.stage as u8])?;
            w.write_all(&(m.epoch as u64).to_le_bytes())?;
            codec::write_f64s(
                w,
                &[
                    m.train_loss,
                    m.valid_loss.unwrap_or(f64::NAN),
                    m.mean_pos_reward.unwrap_or(f64::NAN),
                ],
            )?;
            w.write_all(&m.wall_ms.to_le_bytes())?;
        }
        match &self.best {
            None => w.write_all(&[0])?,
            Some((epoch, loss, params)) => {
                w.write_all(&[1])?;
                w.write_all(&(*epoch as u64).to_le_bytes())?;
                codec::write_f64s(w, &[*loss])?;
                codec::write_f64s(w, params)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let policy = codec::read_policy(r)?;
        let n = policy.params().len();
        expect_magic(r, OPT_MAGIC)?;
        let optimizer = match read_u8(r)? {
            0 => OptimizerState::Sgd,
            1 => {
                let hyper = codec::read_f64s(r, 3)?;
                let step = codec::read_u64(r)?;
                OptimizerState::Adam {
                    beta1: hyper[0],
                    beta2: hyper[1],
                    eps: hyper[2],
                    step,
                    m: codec::read_f64s(r, n)?,
                    v: codec::read_f64s(r, n)?,
                }
            }
            other => return Err(Error::Format(format!("unknown optimizer tag {other}"))),
        };
        expect_magic(r, RUN_MAGIC)?;
        let epoch = codec::read_u64(r)? as usize;
        let entries = codec::read_u64(r)? as usize;
        let mut log = Vec::with_capacity(entries);
        for _ in 0..entries {
            let stage = match read_u8(r)? {
                0 => Stage::Sft,
                1 => Stage::Align,
                other => return Err(Error::Format(format!("unknown stage tag {other}"))),
            };
            let e = codec::read_u64(r)? as usize;
            let vals = codec::read_f64s(r, 3)?;
            let wall_ms = codec::read_u64(r)?;
            let opt = |x: f64| if x.is_nan() { None } else { Some(x) };
            log.push(EpochMetrics {
                stage,
                epoch: e,
                train_loss: vals[0],
                valid_loss: opt(vals[1]),
                mean_pos_reward: opt(vals[2]),
                wall_ms,
            });
        }
        let best = match read_u8(r)? {
            0 => None,
            _ => {
                let e = codec::read_u64(r)? as usize;
                let loss = codec::read_f64s(r, 1)?[0];
                Some((e, loss, codec::read_f64s(r, n)?))
            }
        };
        Ok(Self {
            policy,
            optimizer,
            epoch,
            log,
            best,
        })
    }

    /// The selected policy: best-by-validation when recorded, else the latest.
    pub fn selected_policy(&self) -> PolicyModel {
        let mut p = self.policy.clone();
        if let Some((_, _, params)) = &self.best {
            p.params_mut().copy_from_slice(params);
        }
        p
    }
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::Format(format!("expected section {}", String::from_utf8_lossy(magic))));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Selected policy (lowest validation loss when `select_best`, else last epoch).
    pub policy: PolicyModel,
    pub log: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    /// Full state after the last epoch, for resumption.
    pub checkpoint: Checkpoint,
}

/// Loss of one (context, positive, negatives) sample; accumulates the
/// parameter gradient scaled by `grad_scale` into `grad` when given.
///
/// DPO and BPR evaluate each (positive, negative) pair separately and average
/// over pairs; S-DPO, softmax and SFT evaluate all candidates at once.
pub fn sample_loss(
    policy: &PolicyModel,
    reference: Option<&ReferencePolicy>,
    sample: &PreferenceSample,
    align: &AlignmentConfig,
    grad: Option<(&mut [f64], f64)>,
) -> Result<f64> {
    let kind = align.loss_kind;
    let ctx = Context::new(sample.user, &sample.history);
    let reference = match reference {
        Some(r) => Some(r),
        None if kind.needs_reference() => return Err(Error::MissingReference(kind.to_string())),
        None => None,
    };
    let ref_logp = |items: &[usize]| -> Result<Vec<f64>> {
        match (kind.needs_reference(), reference) {
            (true, Some(r)) => r.log_probs(&ctx, items),
            _ => Ok(vec![0.0; items.len()]),
        }
    };
    let groups: Vec<Vec<usize>> = match kind {
        LossKind::Sft => vec![vec![sample.positive]],
        LossKind::Dpo | LossKind::Bpr => sample.negatives.iter().map(|&d| vec![sample.positive, d]).collect(),
        LossKind::Sdpo | LossKind::Softmax => vec![sample.candidates()],
    };
    if kind != LossKind::Sft && sample.negatives.is_empty() {
        return Err(Error::NoNegatives);
    }
    let share = 1.0 / groups.len() as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for items in &groups {
        let lp = policy.log_probs(&ctx, items)?;
        let out = if kind == LossKind::Sft {
            crate::losses::LossOutput {
                value: -lp[0],
                grad_policy_logp: vec![-1.0],
            }
        } else {
            compute_loss(kind, &LogProbTable::new(lp, ref_logp(items)?, 0)?, align.beta)?
        };
        total += share * out.value;
        if let Some((buf, scale)) = grad.as_mut() {
            let g: Vec<f64> = out.grad_policy_logp.iter().map(|x| x * share * *scale).collect();
            policy.backprop(&ctx, items, &g, buf)?;
        }
    }
    Ok(total)
}

/// Next-item samples without negatives (the SFT training set).
pub fn sft_samples(split: &SplitDataset, part: Part) -> Vec<PreferenceSample> {
    split
        .held_out(part)
        .into_iter()
        .map(|h| PreferenceSample {
            user: h.user,
            user_id: split.sequence(h.user).user_id,
            history: split.history(h).to_vec(),
            positive: split.target(h),
            negatives: Vec::new(),
        })
        .collect()
}

/// Validation samples with negatives fixed by `(seed, user, position)`.
pub fn heldout_preference_samples(split: &SplitDataset, part: Part, k: usize, run_seed: u64) -> Result<Vec<PreferenceSample>> {
    split
        .held_out(part)
        .into_iter()
        .map(|h| {
            let seq = split.sequence(h.user);
            let pool = non_interacted(split.item_count(), &seq.items);
            if pool.len() < k {
                return Err(Error::InsufficientNegatives {
                    user: seq.user_id,
                    requested: k,
                    available: pool.len(),
                });
            }
            let mut rng = seed::rng(run_seed, &[stream::HELDOUT, h.user as u64, h.position as u64]);
            Ok(PreferenceSample {
                user: h.user,
                user_id: seq.user_id,
                history: split.history(h).to_vec(),
                positive: split.target(h),
                negatives: rand::seq::index::sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i]).collect(),
            })
        })
        .collect()
}

/// Mean `β (log π_θ(e_p) − log π_ref(e_p))` over the samples' positives.
pub fn mean_positive_reward(policy: &PolicyModel, reference: &ReferencePolicy, samples: &[PreferenceSample], beta: f64) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let rewards: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let ctx = Context::new(s.user, &s.history);
            let lp = policy.log_probs(&ctx, &[s.positive])?[0];
            let rp = reference.log_probs(&ctx, &[s.positive])?[0];
            Ok(implicit_reward(lp, rp, beta))
        })
        .collect::<Result<_>>()?;
    Ok(Some(rewards.iter().sum::<f64>() / rewards.len() as f64))
}

/// Drives epochs for one stage over one dataset.
pub struct Trainer<'a> {
    split: &'a SplitDataset,
    cfg: TrainConfig,
    reference: Option<&'a ReferencePolicy>,
    reward_reference: ReferencePolicy,
    heldout: Vec<PreferenceSample>,
}

impl<'a> Trainer<'a> {
    pub fn new(split: &'a SplitDataset, cfg: TrainConfig, reference: Option<&'a ReferencePolicy>) -> Result<Self> {
        cfg.validate()?;
        if cfg.align.loss_kind.needs_reference() && reference.is_none() {
            return Err(Error::MissingReference(cfg.align.loss_kind.to_string()));
        }
        let heldout = match cfg.stage {
            Stage::Sft => sft_samples(split, Part::Valid),
            Stage::Align => heldout_preference_samples(split, Part::Valid, cfg.align.num_negatives, cfg.seed)?,
        };
        Ok(Self {
            split,
            cfg,
            reference,
            reward_reference: match reference {
                Some(r) => r.clone(),
                None => ReferencePolicy::uniform(split.item_count())?,
            },
            heldout,
        })
    }

    fn training_samples(&self, epoch: usize) -> Result<Vec<PreferenceSample>> {
        match self.cfg.stage {
            Stage::Sft => Ok(sft_samples(self.split, Part::Train)),
            Stage::Align => {
                let negative_epoch = if self.cfg.resample_negatives { epoch as u64 } else { 0 };
                build_preference_samples(self.split, self.cfg.align.num_negatives, self.cfg.seed, negative_epoch)
            }
        }
    }

    /// Mean loss over `samples` without touching parameters.
    pub fn evaluate_loss(&self, policy: &PolicyModel, samples: &[PreferenceSample]) -> Result<Option<f64>> {
        if samples.is_empty() {
            return Ok(None);
        }
        let losses: Vec<f64> = samples
            .par_iter()
            .map(|s| sample_loss(policy, self.reference, s, &self.cfg.align, None))
            .collect::<Result<_>>()?;
        Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
    }

    /// Runs one epoch (0-based `state.epoch`) and appends its metrics.
    pub fn run_epoch(&self, state: &mut Checkpoint) -> Result<EpochMetrics> {
        let started = Instant::now();
        let epoch = state.epoch;
        let samples = self.training_samples(epoch)?;
        if samples.is_empty() {
            return Err(Error::Config("no training samples (every user's training prefix is shorter than 2)".into()));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut seed::rng(self.cfg.seed, &[stream::SHUFFLE, epoch as u64]));

        let n_params = state.policy.params().len();
        let mut loss_sum = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            let policy = &state.policy;
            let per_sample: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = vec![0.0; n_params];
                    let v = sample_loss(policy, self.reference, &samples[i], &self.cfg.align, Some((&mut g, scale)))?;
                    if !v.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            sample: i,
                            user: samples[i].user_id,
                            epoch,
                        });
                    }
                    Ok((v, g))
                })
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; n_params];
            for (v, g) in &per_sample {
                loss_sum += v;
                for (acc, x) in grad.iter_mut().zip(g) {
                    *acc += x;
                }
            }
            if let Some(max_norm) = self.cfg.clip_norm {
                let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > max_norm {
                    grad.iter_mut().for_each(|x| *x *= max_norm / norm);
                }
            }
            optimizer_step(state.policy.params_mut(), &grad, &mut state.optimizer, self.cfg.learning_rate)?;
        }

        let valid_loss = self.evaluate_loss(&state.policy, &self.heldout)?;
        let mean_pos_reward = match self.cfg.stage {
            Stage::Sft => None,
            Stage::Align => mean_positive_reward(&state.policy, &self.reward_reference, &self.heldout, self.cfg.align.beta)?,
        };
        state.epoch += 1;
        let metrics = EpochMetrics {
            stage: self.cfg.stage,
            epoch: state.epoch,
            train_loss: loss_sum / samples.len() as f64,
            valid_loss,
            mean_pos_reward,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if let Some(v) = valid_loss {
            if state.best.as_ref().is_none_or(|(_, best, _)| v < *best) {
                state.best = Some((state.epoch, v, state.policy.params().to_vec()));
            }
        }
        state.log.push(metrics.clone());
        Ok(metrics)
    }

    /// Continues `state` until `cfg.epochs` epochs are complete.
    pub fn run(&self, mut state: Checkpoint) -> Result<TrainOutcome> {
        while state.epoch < self.cfg.epochs {
            self.run_epoch(&mut state)?;
        }
        let (policy, best_epoch) = match (&state.best, self.cfg.select_best) {
            (Some((e, _, _)), true) => (state.selected_policy(), Some(*e)),
            _ => (state.policy.clone(), None),
        };
        Ok(TrainOutcome {
            policy,
            log: state.log.clone(),
            best_epoch,
            checkpoint: state,
        })
    }
}

/// Minimizes mean item-level NLL on training next-item samples.
pub fn run_sft_stage(policy: PolicyModel, split: &SplitDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.stage != Stage::Sft {
        return Err(Error::Config("run_sft_stage needs stage = sft".into()));
    }
    Trainer::new(split, *cfg, None)?.run(Checkpoint::fresh(policy, cfg))
}

/// Minimizes the configured preference loss against a frozen reference.
pub fn run_alignment_stage(policy: PolicyModel, reference: Option<&ReferencePolicy>, split: &SplitDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.stage != Stage::Align {
        return Err(Error::Config("run_alignment_stage needs stage = align".into()));
    }
    Trainer::new(split, *cfg, reference)?.run(Checkpoint::fresh(policy, cfg))
}
