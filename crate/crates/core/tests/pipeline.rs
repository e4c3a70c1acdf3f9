use prefalign::data::{build_eval_cases, chronological_split, synth_generate, Part, SplitDataset, SplitRatios, SynthConfig};
use prefalign::evaluation::{count_forward_evals, hit_ratio_at_1, run_pipeline, GroundTruthScorer, PipelineConfig};
use prefalign::losses::LossKind;
use prefalign::policy::{snapshot_reference, LogProbSource};
use prefalign::training::{heldout_preference_samples, sample_loss, PolicySpec, TrainConfig};

fn small_split(seed: u64) -> (SplitDataset, prefalign::data::GroundTruth) {
    let synth = synth_generate(&SynthConfig { users: 150, items: 60, interactions_per_user: 20, seed, ..Default::default() }).unwrap();
    (chronological_split(synth.dataset, SplitRatios::default()).unwrap(), synth.truth)
}

fn align(loss: LossKind, k: usize) -> TrainConfig {
    let mut cfg = TrainConfig::align();
    cfg.align.loss_kind = loss;
    cfg.align.num_negatives = k;
    cfg
}

#[test]
fn pipeline_beats_chance_and_shares_sft() {
    let (split, truth) = small_split(1);
    let cfg = PipelineConfig { sft: TrainConfig { epochs: 15, ..TrainConfig::sft() }, ..Default::default() };
    let runs = run_pipeline(&split, &cfg, 4, &[align(LossKind::Sdpo, 3), align(LossKind::Dpo, 3)]).unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0].sft_log, runs[1].sft_log);
    assert_eq!(runs[0].sft_log.len(), 15);
    assert_eq!(runs[0].align_log.len(), 3);
    let chance = 1.0 / 21.0;
    assert!(runs[0].sft_report.hr_at_1 > 2.0 * chance, "{}", runs[0].sft_report.hr_at_1);
    for run in &runs {
        assert_eq!(run.report.cases, 150 * 2);
        assert!(run.align_log.iter().all(|m| m.train_loss.is_finite()));
    }
    let cases = build_eval_cases(&split, Part::Test, 20, 4).unwrap();
    let skyline = hit_ratio_at_1(&GroundTruthScorer(&truth), &cases).unwrap();
    assert!(skyline.hr_at_1 >= runs[0].sft_report.hr_at_1 - 0.1);

    let again = run_pipeline(&split, &cfg, 4, &[align(LossKind::Sdpo, 3)]).unwrap();
    let untimed = |log: &[prefalign::training::EpochMetrics]| log.iter().map(|m| (m.train_loss, m.valid_loss, m.mean_pos_reward)).collect::<Vec<_>>();
    assert_eq!(untimed(&again[0].align_log), untimed(&runs[0].align_log));
    assert_eq!(again[0].report, runs[0].report);
}

#[test]
fn forward_counts_match_cost_model() {
    let (split, _) = small_split(2);
    let policy = PolicySpec::default().init(split.users(), split.item_count(), 0).unwrap();
    let reference = snapshot_reference(&policy);
    for k in [1, 2, 5] {
        let samples = heldout_preference_samples(&split, Part::Train, k, 0).unwrap();
        for loss in [LossKind::Sdpo, LossKind::Dpo, LossKind::Softmax, LossKind::Bpr] {
            let mut cfg = TrainConfig::align().align;
            cfg.loss_kind = loss;
            cfg.num_negatives = k;
            policy.reset_forward_evals();
            reference.reset_forward_evals();
            let mut grad = vec![0.0; prefalign::policy::Policy::params(&policy).len()];
            for s in &samples {
                sample_loss(&policy, Some(&reference), s, &cfg, Some((&mut grad, 1.0))).unwrap();
            }
            let cost = count_forward_evals(loss, k).unwrap();
            let n = samples.len() as u64;
            assert_eq!(policy.forward_evals(), cost.policy_evals * n, "{loss:?} K={k}");
            assert_eq!(reference.forward_evals(), cost.reference_evals * n, "{loss:?} K={k}");
        }
    }
}
