//! Offline evaluation: HR@1 over candidate sets, training curves, the
//! forward-pass cost model and hyperparameter sweeps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_eval_cases, EvalCase, GroundTruth, Part, SplitDataset};
use crate::losses::LossKind;
use crate::policy::{snapshot_reference, Context, LogProbSource};
use crate::seed;
use crate::training::{run_alignment_stage, run_sft_stage, EpochMetrics, PolicySpec, TrainConfig};
use crate::{Error, Result};

/// Anything that can score a candidate list for a context.
pub trait CandidateScorer: Sync {
    fn score(&self, case: &EvalCase, items: &[usize]) -> Result<Vec<f64>>;
}

impl<T: LogProbSource> CandidateScorer for T {
    fn score(&self, case: &EvalCase, items: &[usize]) -> Result<Vec<f64>> {
        self.log_probs(&Context::new(case.user, &case.history), items)
    }
}

/// Scores candidates by the hidden synthetic reward.
pub struct GroundTruthScorer<'a>(pub &'a GroundTruth);

impl CandidateScorer for GroundTruthScorer<'_> {
    fn score(&self, case: &EvalCase, items: &[usize]) -> Result<Vec<f64>> {
        Ok(items.iter().map(|&i| self.0.reward(case.user, i)).collect())
    }
}

/// Scores are a deterministic hash of `(seed, user, position, item)`.
pub struct RandomScorer {
    pub seed: u64,
}

impl CandidateScorer for RandomScorer {
    fn score(&self, case: &EvalCase, items: &[usize]) -> Result<Vec<f64>> {
        Ok(items
            .iter()
            .map(|&i| (seed::derive(self.seed, &[case.user as u64, case.history.len() as u64, i as u64]) >> 11) as f64)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hr_at_1: f64,
    pub cases: usize,
    pub hits: usize,
    /// Cases whose top score was shared by more than one candidate.
    pub ties: usize,
    pub per_case_hits: Vec<bool>,
}

/// Index of the best candidate; equal scores go to the lowest item index.
/// Returns the winner and whether the maximum was shared.
pub fn argmax_item(items: &[usize], scores: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tied = false;
    for c in 1..items.len() {
        if scores[c] > scores[best] {
            best = c;
            tied = false;
        } else if scores[c] == scores[best] {
            tied = true;
            if items[c] < items[best] {
                best = c;
            }
        }
    }
    (items[best], tied)
}

/// Fraction of cases whose ground-truth positive is ranked first.
pub fn hit_ratio_at_1<S: CandidateScorer + ?Sized>(scorer: &S, cases: &[EvalCase]) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let outcomes: Vec<(bool, bool)> = cases
        .par_iter()
        .map(|case| {
            let items = case.candidates.items();
            let scores = scorer.score(case, &items)?;
            let (winner, tied) = argmax_item(&items, &scores);
            Ok((winner == case.candidates.positive, tied))
        })
        .collect::<Result<_>>()?;
    let hits = outcomes.iter().filter(|o| o.0).count();
    Ok(EvalReport {
        hr_at_1: hits as f64 / cases.len() as f64,
        cases: cases.len(),
        hits,
        ties: outcomes.iter().filter(|o| o.1).count(),
        per_case_hits: outcomes.into_iter().map(|o| o.0).collect(),
    })
}

/// Per-epoch series extracted from a metric log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveSeries {
    pub epoch: Vec<usize>,
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<Option<f64>>,
    pub mean_pos_reward: Vec<Option<f64>>,
}

pub fn track_curves(log: &[EpochMetrics]) -> CurveSeries {
    CurveSeries {
        epoch: log.iter().map(|m| m.epoch).collect(),
        train_loss: log.iter().map(|m| m.train_loss).collect(),
        valid_loss: log.iter().map(|m| m.valid_loss).collect(),
        mean_pos_reward: log.iter().map(|m| m.mean_pos_reward).collect(),
    }
}

/// Element-wise mean of several runs' series over their common epochs.
pub fn average_curves(runs: &[CurveSeries]) -> CurveSeries {
    let n = runs.iter().map(|r| r.epoch.len()).min().unwrap_or(0);
    let mean = |f: &dyn Fn(&CurveSeries, usize) -> Option<f64>, e: usize| -> Option<f64> {
        let v: Option<Vec<f64>> = runs.iter().map(|r| f(r, e)).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    CurveSeries {
        epoch: (0..n).map(|e| runs[0].epoch[e]).collect(),
        train_loss: (0..n).map(|e| mean(&|r, e| Some(r.train_loss[e]), e).unwrap_or(f64::NAN)).collect(),
        valid_loss: (0..n).map(|e| mean(&|r, e| r.valid_loss[e], e)).collect(),
        mean_pos_reward: (0..n).map(|e| mean(&|r, e| r.mean_pos_reward[e], e)).collect(),
    }
}

/// Labelled curves as CSV rows `label,epoch,train_loss,valid_loss,mean_pos_reward`.
pub fn write_curves_csv<W: Write>(curves: &[(&str, &CurveSeries)], w: &mut W) -> Result<()> {
    writeln!(w, "label,epoch,train_loss,valid_loss,mean_pos_reward")?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    for (label, c) in curves {
        for i in 0..c.epoch.len() {
            writeln!(
                w,
                "{label},{},{:.6},{},{}",
                c.epoch[i],
                c.train_loss[i],
                opt(c.valid_loss[i]),
                opt(c.mean_pos_reward[i])
            )?;
        }
    }
    Ok(())
}

/// Forward evaluations per training sample for a loss kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub loss_kind: LossKind,
    pub num_negatives: usize,
    pub policy_evals: u64,
    pub reference_evals: u64,
}

impl CostModel {
    pub fn per_sample(&self) -> u64 {
        self.policy_evals + self.reference_evals
    }

    pub fn total(&self, samples: u64) -> u64 {
        self.per_sample() * samples
    }
}

/// Item log-probability evaluations one training sample costs.
///
/// S-DPO scores the positive and all K negatives once under each network;
/// pairwise DPO scores each of its K pairs separately under both.
pub fn count_forward_evals(kind: LossKind, k: usize) -> Result<CostModel> {
    if k == 0 && kind != LossKind::Sft {
        return Err(Error::NoNegatives);
    }
    let k64 = k as u64;
    let (policy_evals, reference_evals) = match kind {
        LossKind::Sdpo => (k64 + 1, k64 + 1),
        LossKind::Dpo => (2 * k64, 2 * k64),
        LossKind::Softmax => (k64 + 1, 0),
        LossKind::Bpr => (2 * k64, 0),
        LossKind::Sft => (1, 0),
    };
    Ok(CostModel {
        loss_kind: kind,
        num_negatives: k,
        policy_evals,
        reference_evals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Beta,
    Negatives,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(SweepAxis::Beta),
            "negatives" | "k" => Ok(SweepAxis::Negatives),
            other => Err(Error::Config(format!("unknown sweep axis `{other}` (beta|negatives)"))),
        }
    }
}

impl SweepAxis {
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepAxis::Beta => vec![0.1, 0.5, 1.0, 3.0, 5.0],
            SweepAxis::Negatives => vec![1.0, 3.0, 5.0, 8.0, 10.0, 15.0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Beta => "beta",
            SweepAxis::Negatives => "negatives",
        }
    }
}

/// The SFT → snapshot → align → evaluate pipeline shared by sweeps and experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub policy: PolicySpec,
    pub sft: TrainConfig,
    pub align: TrainConfig,
    /// Negatives per evaluation candidate set.
    pub eval_negatives: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            policy: PolicySpec::default(),
            sft: TrainConfig::sft(),
            align: TrainConfig::align(),
            eval_negatives: crate::data::DEFAULT_CANDIDATE_NEGATIVES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub sft_log: Vec<EpochMetrics>,
    pub align_log: Vec<EpochMetrics>,
    pub sft_report: EvalReport,
    pub report: EvalReport,
}

/// SFT with `seed`, then one alignment run per `align` config from the same SFT checkpoint.
pub fn run_pipeline(split: &SplitDataset, cfg: &PipelineConfig, seed: u64, aligns: &[TrainConfig]) -> Result<Vec<PipelineRun>> {
    let init = cfg.policy.init(split.users(), split.item_count(), seed)?;
    let sft = run_sft_stage(init, split, &TrainConfig { seed, ..cfg.sft })?;
    let reference = snapshot_reference(&sft.policy);
    let cases = build_eval_cases(split, Part::Test, cfg.eval_negatives, seed)?;
    let sft_report = hit_ratio_at_1(&sft.policy, &cases)?;
    aligns
        .iter()
        .map(|a| {
            let align = run_alignment_stage(sft.policy.clone(), Some(&reference), split, &TrainConfig { seed, ..*a })?;
            Ok(PipelineRun {
                sft_log: sft.log.clone(),
                align_log: align.log,
                sft_report: sft_report.clone(),
                report: hit_ratio_at_1(&align.policy, &cases)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub hr_at_1: f64,
    pub final_valid_loss: f64,
    pub mean_pos_reward: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "value,seed,hr_at_1,final_valid_loss,mean_pos_reward";

    pub fn to_csv(&self) -> String {
        format!(
            "{:.6},{},{:.6},{:.6},{:.6}",
            self.value, self.seed, self.hr_at_1, self.final_valid_loss, self.mean_pos_reward
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = || Error::Format(format!("malformed sweep row `{line}`"));
        if f.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(Self {
            value: num(f[0])?,
            seed: f[1].parse().map_err(|_| bad())?,
            hr_at_1: num(f[2])?,
            final_valid_loss: num(f[3])?,
            mean_pos_reward: num(f[4])?,
        })
    }

    fn key(&self) -> (String, u64) {
        (format!("{:.6}", self.value), self.seed)
    }
}

/// Varies one alignment hyperparameter across `values × seeds`.
///
/// Rows already present in `done` are skipped; each new row is handed to
/// `on_row` as soon as it is computed, so an interrupted sweep can resume.
pub fn run_sweep(
    split: &SplitDataset,
    axis: SweepAxis,
    values: &[f64],
    seeds: &[u64],
    base: &PipelineConfig,
    done: &[SweepRow],
    mut on_row: impl FnMut(&SweepRow) -> Result<()>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one value and one seed".into()));
    }
    let mut configs = Vec::with_capacity(values.len());
    for &v in values {
        let mut a = base.align;
        match axis {
            SweepAxis::Beta => a.align.beta = v,
            SweepAxis::Negatives => {
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(Error::Config(format!("negatives must be a positive integer, got {v}")));
                }
                a.align.num_negatives = v as usize;
            }
        }
        a.validate()?;
        configs.push(a);
    }
    let finished: std::collections::HashSet<_> = done.iter().map(SweepRow::key).collect();
    let mut rows = done.to_vec();
    for &s in seeds {
        let pending: Vec<usize> = (0..values.len())
            .filter(|&i| !finished.contains(&(format!("{:.6}", values[i]), s)))
            .collect();
        if pending.is_empty() {
            continue;
        }
        let aligns: Vec<TrainConfig> = pending.iter().map(|&i| configs[i]).collect();
        let runs = run_pipeline(split, base, s, &aligns)?;
        for (&i, run) in pending.iter().zip(runs) {
            let last = run.align_log.last().ok_or_else(|| Error::Config("alignment produced no epochs".into()))?;
            let row = SweepRow {
                value: values[i],
                seed: s,
                hr_at_1: run.report.hr_at_1,
                final_valid_loss: last.valid_loss.unwrap_or(f64::NAN),
                mean_pos_reward: last.mean_pos_reward.unwrap_or(f64::NAN),
            };
            on_row(&row)?;
            rows.push(row);
        }
    }
    Ok(rows)
}
