use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use prefalign::data::{
    build_eval_cases, chronological_split, ingest_tsv_filtered, layout, read_split_dir, synth_generate, write_split_dir, GroundTruth,
    ItemMapping, Part, SplitDataset, SplitRatios, SynthConfig,
};
use prefalign::evaluation::{hit_ratio_at_1, run_sweep, GroundTruthScorer, PipelineConfig, RandomScorer, SweepAxis, SweepRow};
use prefalign::gradcheck::{check_gradients, GradCheck, Level};
use prefalign::losses::LossKind;
use prefalign::policy::{codec, snapshot_reference, LogProbSource, PolicyModel, Pooling, ReferencePolicy};
use prefalign::training::{write_metrics_jsonl, Checkpoint, OptimizerKind, PolicySpec, Stage, TrainConfig, Trainer};

use crate::config::Settings;
use crate::manifest::{fingerprint, RunManifest};
use crate::{EvalArgs, GradcheckArgs, IngestArgs, SweepArgs, SynthArgs, TrainArgs};

pub const MODEL_FILE: &str = "model.bin";
pub const STATE_FILE: &str = "state.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SWEEP_FILE: &str = "sweep.csv";

fn dataset_fingerprint(dir: &Path) -> Result<String> {
    let files: Vec<PathBuf> = [layout::TRAIN, layout::VALID, layout::TEST, layout::ITEMS].iter().map(|f| dir.join(f)).collect();
    fingerprint(&files.iter().map(PathBuf::as_path).collect::<Vec<_>>())
}

fn load_split(dir: &Path) -> Result<SplitDataset> {
    let (split, _) = read_split_dir(dir).with_context(|| format!("loading dataset directory {}", dir.display()))?;
    Ok(split)
}

/// Reads the policy block at the start of a model or state file.
fn load_policy(path: &Path) -> Result<PolicyModel> {
    let mut r = std::io::BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    codec::read_policy(&mut r).with_context(|| format!("reading policy from {}", path.display()))
}

fn write_atomically(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> prefalign::Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn split_stats(manifest: RunManifest, split: &SplitDataset) -> RunManifest {
    manifest
        .stat("users", split.users())
        .stat("items", split.item_count())
        .stat("interactions", split.dataset.interactions())
        .stat("short_users", split.short_users.len())
        .stat("valid_empty_users", split.valid_empty_users.len())
}

pub fn ingest(a: IngestArgs) -> Result<bool> {
    let ingested = ingest_tsv_filtered(&a.input, a.min_interactions)?;
    let split = chronological_split(ingested.dataset, SplitRatios::default())?;
    let config = serde_json::json!({ "input": a.input.display().to_string(), "min_interactions": a.min_interactions });
    let manifest = RunManifest::new("ingest", config, fingerprint(&[&a.input])?, 0, &a.output).stat("dropped_users", ingested.dropped_users);
    split_stats(manifest, &split).write(&a.output)?;
    write_split_dir(&a.output, &split, &ingested.mapping)?;
    println!(
        "ingested {} users, {} items, {} interactions ({} users dropped, {} kept whole in train) into {}",
        split.users(),
        split.item_count(),
        split.dataset.interactions(),
        ingested.dropped_users,
        split.short_users.len(),
        a.output.display()
    );
    Ok(true)
}

pub fn synth(a: SynthArgs) -> Result<bool> {
    let cfg = SynthConfig {
        users: a.users,
        items: a.items,
        dim: a.dim,
        interactions_per_user: a.per_user,
        seed: a.seed,
        reward_scale: a.reward_scale,
    };
    let data = synth_generate(&cfg)?;
    let split = chronological_split(data.dataset, SplitRatios::default())?;
    write_split_dir(&a.output, &split, &ItemMapping::identity(cfg.items))?;
    write_atomically(&a.output.join(layout::GROUND_TRUTH), |w| data.truth.write(w))?;
    let config = serde_json::json!({
        "users": a.users, "items": a.items, "dim": a.dim, "per_user": a.per_user,
        "seed": a.seed, "reward_scale": a.reward_scale,
    });
    let manifest = RunManifest::new("synth", config, dataset_fingerprint(&a.output)?, a.seed, &a.output);
    split_stats(manifest, &split).write(&a.output)?;
    println!("generated {} interactions for {} users into {}", split.dataset.interactions(), split.users(), a.output.display());
    Ok(true)
}

const TRAIN_KEYS: &[&str] = &[
    "data", "output", "stage", "loss", "beta", "negatives", "seed", "reference", "init", "epochs", "batch-size", "lr", "optimizer",
    "clip-norm", "resample-negatives", "select-best", "policy", "dim", "pooling",
];

fn train_settings(a: &TrainArgs) -> Result<Settings> {
    let mut s = match &a.config {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    s.set_opt("data", a.data.as_ref().map(|p| p.display()));
    s.set_opt("output", a.output.as_ref().map(|p| p.display()));
    s.set_opt("stage", a.stage.as_ref());
    s.set_opt("loss", a.loss.as_ref());
    s.set_opt("beta", a.beta);
    s.set_opt("negatives", a.negatives);
    s.set_opt("seed", a.seed);
    s.set_opt("reference", a.reference.as_ref());
    s.set_opt("init", a.init.as_ref().map(|p| p.display()));
    s.set_opt("epochs", a.epochs);
    s.set_opt("batch-size", a.batch_size);
    s.set_opt("lr", a.lr);
    s.set_opt("optimizer", a.optimizer.as_ref());
    s.set_opt("clip-norm", a.clip_norm);
    s.set_opt("policy", a.policy.as_ref());
    s.set_opt("dim", a.dim);
    s.set_opt("pooling", a.pooling.as_ref());
    s.check_keys(TRAIN_KEYS)?;
    Ok(s)
}

fn train_config(s: &Settings) -> Result<TrainConfig> {
    let stage: Stage = s.get("stage")?.unwrap_or(Stage::Sft);
    let mut cfg = match stage {
        Stage::Sft => TrainConfig::sft(),
        Stage::Align => TrainConfig::align(),
    };
    if let Some(kind) = s.get::<LossKind>("loss")? {
        cfg.align.loss_kind = kind;
    }
    if let Some(v) = s.get("beta")? {
        cfg.align.beta = v;
    }
    if let Some(v) = s.get("negatives")? {
        cfg.align.num_negatives = v;
    }
    if let Some(v) = s.get("seed")? {
        cfg.seed = v;
    }
    if let Some(v) = s.get("epochs")? {
        cfg.epochs = v;
    }
    if let Some(v) = s.get("batch-size")? {
        cfg.batch_size = v;
    }
    if let Some(v) = s.get("lr")? {
        cfg.learning_rate = v;
    }
    if let Some(v) = s.get::<OptimizerKind>("optimizer")? {
        cfg.optimizer = v;
    }
    if let Some(v) = s.get("clip-norm")? {
        cfg.clip_norm = Some(v);
    }
    if let Some(v) = s.get("resample-negatives")? {
        cfg.resample_negatives = v;
    }
    if let Some(v) = s.get("select-best")? {
        cfg.select_best = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn policy_spec(s: &Settings) -> Result<PolicySpec> {
    match s.get::<String>("policy")?.as_deref().unwrap_or("embedding") {
        "embedding" => Ok(PolicySpec::Embedding {
            dim: s.get("dim")?.unwrap_or(8),
            pooling: s.get::<Pooling>("pooling")?.unwrap_or_default(),
        }),
        "tabular" => Ok(PolicySpec::Tabular),
        other => bail!("unknown policy `{other}` (embedding|tabular)"),
    }
}

fn check_shape(policy: &PolicyModel, split: &SplitDataset, what: &str) -> Result<()> {
    if policy.item_count() != split.item_count() {
        bail!("{what} covers {} items but the dataset has {}", policy.item_count(), split.item_count());
    }
    if let PolicyModel::Tabular(t) = policy {
        if t.users() != split.users() {
            bail!("{what} has {} user rows but the dataset has {} users", t.users(), split.users());
        }
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<bool> {
    let s = train_settings(&a)?;
    let cfg = train_config(&s)?;
    let data: PathBuf = s.require("data")?;
    let output: PathBuf = s.require("output")?;
    let split = load_split(&data)?;

    let reference_setting: Option<String> = s.get("reference")?;
    let reference = match reference_setting.as_deref() {
        None if cfg.align.loss_kind.needs_reference() => bail!(
            "loss `{}` needs a frozen reference policy: pass --reference <model.bin from an SFT run> or --reference uniform",
            cfg.align.loss_kind
        ),
        None => None,
        Some("uniform") => Some(ReferencePolicy::uniform(split.item_count())?),
        Some(path) => {
            let p = load_policy(Path::new(path))?;
            check_shape(&p, &split, "reference")?;
            Some(snapshot_reference(&p))
        }
    };

    let state_path = output.join(STATE_FILE);
    let resumed = a.resume && state_path.exists();
    let state = if resumed {
        let mut r = std::io::BufReader::new(File::open(&state_path)?);
        Checkpoint::read(&mut r).with_context(|| format!("reading {}", state_path.display()))?
    } else {
        let init = match (s.get::<PathBuf>("init")?, reference_setting.as_deref()) {
            (Some(p), _) => load_policy(&p)?,
            (None, Some(r)) if r != "uniform" && cfg.stage == Stage::Align => load_policy(Path::new(r))?,
            _ => policy_spec(&s)?.init(split.users(), split.item_count(), cfg.seed)?,
        };
        check_shape(&init, &split, "initial policy")?;
        Checkpoint::fresh(init, &cfg)
    };

    let mut effective = s.to_json();
    effective["effective"] = serde_json::to_value(cfg)?;
    effective["no-timing"] = serde_json::Value::Bool(a.no_timing);
    split_stats(RunManifest::new("train", effective, dataset_fingerprint(&data)?, cfg.seed, &output), &split).write(&output)?;

    let trainer = Trainer::new(&split, cfg, reference.as_ref())?;
    let mut state = state;
    while state.epoch < cfg.epochs {
        trainer.run_epoch(&mut state)?;
        if a.no_timing {
            if let Some(m) = state.log.last_mut() {
                m.wall_ms = 0;
            }
        }
        write_atomically(&state_path, |w| state.write(w))?;
        write_atomically(&output.join(METRICS_FILE), |w| write_metrics_jsonl(&state.log, w))?;
        let m = state.log.last().expect("epoch logged");
        eprintln!(
            "epoch {:>3}  train {:.6}  valid {}  reward {}",
            m.epoch,
            m.train_loss,
            m.valid_loss.map_or("-".into(), |v| format!("{v:.6}")),
            m.mean_pos_reward.map_or("-".into(), |v| format!("{v:.6}")),
        );
    }
    let selected = if cfg.select_best { state.selected_policy() } else { state.policy.clone() };
    write_atomically(&output.join(MODEL_FILE), |w| codec::write_policy(w, &selected))?;
    println!(
        "{} stage ({}) finished {} epochs; model written to {}",
        match cfg.stage {
            Stage::Sft => "sft",
            Stage::Align => "alignment",
        },
        cfg.align.loss_kind,
        state.epoch,
        output.join(MODEL_FILE).display()
    );
    Ok(true)
}

pub fn eval(a: EvalArgs) -> Result<bool> {
    let split = load_split(&a.data)?;
    let part = match a.part.as_str() {
        "test" => Part::Test,
        "valid" => Part::Valid,
        other => bail!("unknown part `{other}` (test|valid)"),
    };
    let cases = build_eval_cases(&split, part, a.candidates, a.seed)?;
    let (label, report) = match (&a.checkpoint, a.scorer.as_deref()) {
        (Some(path), None) => {
            let policy = load_policy(path)?;
            check_shape(&policy, &split, "checkpoint")?;
            ("checkpoint".to_string(), hit_ratio_at_1(&policy, &cases)?)
        }
        (None, Some("random")) => ("random".to_string(), hit_ratio_at_1(&RandomScorer { seed: a.seed }, &cases)?),
        (None, Some("uniform")) => ("uniform".to_string(), hit_ratio_at_1(&ReferencePolicy::uniform(split.item_count())?, &cases)?),
        (None, Some("ground-truth")) => {
            let path = a.data.join(layout::GROUND_TRUTH);
            let mut r = std::io::BufReader::new(File::open(&path).with_context(|| format!("opening {}", path.display()))?);
            // rankings do not depend on the positive reward scale
            let truth = GroundTruth::read(&mut r, 1.0)?;
            if truth.item_count() != split.item_count() || truth.users() != split.users() {
                bail!("ground truth does not match the dataset shape");
            }
            ("ground-truth".to_string(), hit_ratio_at_1(&GroundTruthScorer(&truth), &cases)?)
        }
        (None, Some(other)) => bail!("unknown scorer `{other}` (random|uniform|ground-truth)"),
        (None, None) => bail!("pass --checkpoint <model.bin> or --scorer random|uniform|ground-truth"),
        (Some(_), Some(_)) => unreachable!("clap rejects both"),
    };
    let csv = format!(
        "scorer,part,candidates,seed,cases,hits,ties,hr_at_1\n{label},{},{},{},{},{},{},{:.6}\n",
        a.part,
        a.candidates + 1,
        a.seed,
        report.cases,
        report.hits,
        report.ties,
        report.hr_at_1
    );
    match &a.output {
        Some(p) => std::fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(true)
}

fn parse_list<T>(text: &str, what: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|v| v.parse::<T>().map_err(|e| anyhow!("bad {what} `{v}`: {e}")))
        .collect()
}

pub fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    if a.trials == 0 {
        bail!("--trials must be ≥ 1");
    }
    let losses: Vec<LossKind> = match a.loss.as_str() {
        "all" => LossKind::ALL.to_vec(),
        other => vec![other.parse()?],
    };
    let levels: Vec<Level> = match a.level.as_str() {
        "all" => Level::ALL.to_vec(),
        other => vec![other.parse()?],
    };
    let ks: Vec<usize> = parse_list(&a.negatives, "negative count")?;
    let mut ok = true;
    println!("loss,level,negatives,trials,max_rel_error,worst_trial,worst_coordinate,result");
    for &loss in &losses {
        for &level in &levels {
            for &k in &ks {
                let r = check_gradients(&GradCheck {
                    loss,
                    level,
                    num_negatives: k,
                    trials: a.trials,
                    tolerance: a.tolerance,
                    seed: a.seed,
                    flip_sign: a.flip_sign,
                })?;
                ok &= r.passed();
                println!(
                    "{loss},{level},{k},{},{:.3e},{},{},{}",
                    r.trials,
                    r.max_rel_error,
                    r.worst_trial,
                    r.worst_coordinate,
                    if r.passed() { "PASS" } else { "FAIL" }
                );
            }
        }
    }
    if !ok {
        eprintln!("gradient check failed at tolerance {:e}", a.tolerance);
    }
    Ok(ok)
}

pub fn sweep(a: SweepArgs) -> Result<bool> {
    let axis: SweepAxis = a.axis.parse()?;
    let values: Vec<f64> = match &a.values {
        Some(v) => parse_list(v, "value")?,
        None => axis.default_values(),
    };
    let seeds: Vec<u64> = parse_list(&a.seeds, "seed")?;
    let split = load_split(&a.data)?;
    let mut base = PipelineConfig {
        policy: PolicySpec::Embedding { dim: a.dim, pooling: Pooling::Mean },
        sft: TrainConfig { epochs: a.sft_epochs, learning_rate: a.sft_lr, ..TrainConfig::sft() },
        align: TrainConfig { epochs: a.align_epochs, learning_rate: a.align_lr, ..TrainConfig::align() },
        eval_negatives: a.candidates,
    };
    base.align.align.loss_kind = a.loss.parse()?;
    base.align.align.beta = a.beta;
    base.align.align.num_negatives = a.negatives;
    base.align.validate()?;

    let csv_path = a.output.join(SWEEP_FILE);
    let done: Vec<SweepRow> = if csv_path.exists() {
        std::fs::read_to_string(&csv_path)?
            .lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(SweepRow::from_csv)
            .collect::<prefalign::Result<_>>()?
    } else {
        Vec::new()
    };
    let config = serde_json::json!({
        "axis": axis.as_str(), "values": values, "seeds": seeds, "loss": a.loss, "beta": a.beta,
        "negatives": a.negatives, "sft_epochs": a.sft_epochs, "align_epochs": a.align_epochs,
        "sft_lr": a.sft_lr, "align_lr": a.align_lr, "dim": a.dim, "candidates": a.candidates,
    });
    RunManifest::new("sweep", config, dataset_fingerprint(&a.data)?, seeds.first().copied().unwrap_or(0), &a.output).write(&a.output)?;
    if done.is_empty() {
        std::fs::write(&csv_path, format!("{}\n", SweepRow::CSV_HEADER))?;
    }
    let mut out = std::fs::OpenOptions::new().append(true).open(&csv_path)?;
    let rows = run_sweep(&split, axis, &values, &seeds, &base, &done, |row| {
        writeln!(out, "{}", row.to_csv())?;
        out.flush()?;
        eprintln!("{} = {} seed {}: hr@1 {:.4}", axis.as_str(), row.value, row.seed, row.hr_at_1);
        Ok(())
    })?;
    println!("{} rows ({} resumed) in {}", rows.len(), done.len(), csv_path.display());
    Ok(true)
}
