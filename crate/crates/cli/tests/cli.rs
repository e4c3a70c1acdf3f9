use std::path::Path;
use std::process::{Command, Output};

use prefalign::policy::{codec, PolicyModel, TabularPolicy};
use prefalign::training::{read_metrics_jsonl, EpochMetrics};

fn prefalign(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefalign")).args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = prefalign(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) {
    ok(dir, &["synth", "--users", "60", "--items", "40", "--per-user", "15", "--seed", "3", "--output", "data"]);
}

fn metrics(path: &Path) -> Vec<EpochMetrics> {
    read_metrics_jsonl(std::fs::File::open(path).unwrap()).unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn ingest_writes_split_files_and_counts_dropped_users() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut tsv = String::new();
    for user in 0..5u64 {
        let n = if user == 4 { 3 } else { 25 };
        for t in 0..n {
            tsv += &format!("{}\titem{}\t{}\n", user + 100, (user as usize * 7 + t) % 30, 1000 + t);
        }
    }
    std::fs::write(dir.join("log.tsv"), &tsv).unwrap();
    ok(dir, &["ingest", "--input", "log.tsv", "--output", "out", "--min-interactions", "20"]);
    for f in ["interactions.tsv", "train.tsv", "valid.tsv", "test.tsv", "items.csv", "manifest.json"] {
        assert!(dir.join("out").join(f).exists(), "{f}");
    }
    let m = manifest(&dir.join("out"));
    assert_eq!(m["stats"]["dropped_users"], 1);
    assert_eq!(m["stats"]["users"], 4);
    assert_eq!(m["dataset_fingerprint"].as_str().unwrap().len(), 64);
    let train = std::fs::read_to_string(dir.join("out/train.tsv")).unwrap();
    assert_eq!(train.lines().count(), 4 * 20);
}

#[test]
fn malformed_line_is_reported_with_its_number() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut tsv: String = (0..16).map(|t| format!("1\t{t}\t{t}\n")).collect();
    tsv += "1\tseventeen\n";
    std::fs::write(dir.join("bad.tsv"), tsv).unwrap();
    let out = prefalign(dir, &["ingest", "--input", "bad.tsv", "--output", "out"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 17"), "{err}");
}

#[test]
fn sdpo_with_one_negative_logs_like_dpo() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    ok(dir, &["train", "--data", "data", "--output", "sft", "--epochs", "2", "--no-timing"]);
    for loss in ["sdpo", "dpo"] {
        ok(
            dir,
            &["train", "--data", "data", "--stage", "align", "--loss", loss, "--negatives", "1", "--reference", "sft/model.bin", "--epochs", "3", "--seed", "7", "--output", loss],
        );
    }
    let (a, b) = (metrics(&dir.join("sdpo/metrics.jsonl")), metrics(&dir.join("dpo/metrics.jsonl")));
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert!((x.train_loss - y.train_loss).abs() <= 1e-12);
        assert!((x.valid_loss.unwrap() - y.valid_loss.unwrap()).abs() <= 1e-12);
        assert!((x.mean_pos_reward.unwrap() - y.mean_pos_reward.unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn dpo_without_reference_fails_with_guidance() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let out = prefalign(dir, &["train", "--data", "data", "--stage", "align", "--loss", "dpo", "--output", "run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--reference"));
    assert!(!dir.join("run/model.bin").exists());
}

#[test]
fn defaults_and_config_file_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    std::fs::write(dir.join("run.cfg"), "# alignment\nstage = align\nloss = softmax\nbeta = 0.5\nepochs = 1\ndata = data\n").unwrap();
    ok(dir, &["train", "--config", "run.cfg", "--beta", "3", "--output", "r1"]);
    let m = manifest(&dir.join("r1"));
    assert_eq!(m["config"]["effective"]["align"]["beta"], 3.0);
    assert_eq!(m["config"]["effective"]["align"]["loss_kind"], "softmax");
    assert_eq!(m["config"]["effective"]["align"]["num_negatives"], 3);

    ok(dir, &["train", "--data", "data", "--stage", "align", "--reference", "uniform", "--epochs", "1", "--output", "r2"]);
    let m = manifest(&dir.join("r2"));
    assert_eq!(m["config"]["effective"]["align"]["beta"], 1.0);
    assert_eq!(m["config"]["effective"]["align"]["loss_kind"], "sdpo");

    std::fs::write(dir.join("typo.cfg"), "betta = 1\n").unwrap();
    assert!(!prefalign(dir, &["train", "--config", "typo.cfg", "--data", "data", "--output", "r3"]).status.success());
}

#[test]
fn resumed_training_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    ok(dir, &["train", "--data", "data", "--epochs", "4", "--no-timing", "--output", "straight"]);
    ok(dir, &["train", "--data", "data", "--epochs", "2", "--no-timing", "--output", "split"]);
    ok(dir, &["train", "--data", "data", "--epochs", "4", "--no-timing", "--resume", "--output", "split"]);
    for f in ["metrics.jsonl", "model.bin", "state.ckpt"] {
        assert_eq!(std::fs::read(dir.join("straight").join(f)).unwrap(), std::fs::read(dir.join("split").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    for (threads, out) in [("1", "one"), ("4", "four")] {
        let status = Command::new(env!("CARGO_BIN_EXE_prefalign"))
            .args(["train", "--data", "data", "--epochs", "2", "--no-timing", "--output", out])
            .env("PREFALIGN_THREADS", threads)
            .current_dir(dir)
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(std::fs::read(dir.join("one/model.bin")).unwrap(), std::fs::read(dir.join("four/model.bin")).unwrap());
    let bad = Command::new(env!("CARGO_BIN_EXE_prefalign")).args(["gradcheck", "--trials", "1"]).env("PREFALIGN_THREADS", "0").output().unwrap();
    assert!(!bad.status.success());
}

#[test]
fn eval_perfect_oracle_and_baselines() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // 10 interactions per user: 8 train, 1 valid, 1 test
    let (users, items) = (30usize, 60usize);
    let mut tsv = String::new();
    let mut logits = vec![0.0; users * items];
    for u in 0..users {
        for t in 0..10 {
            tsv += &format!("{u}\t{}\t{t}\n", (u * 3 + t * 5) % items);
        }
        logits[u * items + (u * 3 + 45) % items] = 10.0;
    }
    std::fs::write(dir.join("log.tsv"), tsv).unwrap();
    ok(dir, &["ingest", "--input", "log.tsv", "--output", "data"]);
    let oracle: PolicyModel = TabularPolicy::from_logits(users, items, logits).unwrap().into();
    let mut bytes = Vec::new();
    codec::write_policy(&mut bytes, &oracle).unwrap();
    std::fs::write(dir.join("oracle.bin"), bytes).unwrap();

    let csv = ok(dir, &["eval", "--checkpoint", "oracle.bin", "--data", "data"]);
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[2], "21");
    assert_eq!(row[4], "30");
    assert_eq!(row[7], "1.000000");

    let a = ok(dir, &["eval", "--scorer", "random", "--data", "data", "--seed", "2"]);
    assert_eq!(a, ok(dir, &["eval", "--scorer", "random", "--data", "data", "--seed", "2"]));
    assert!(!prefalign(dir, &["eval", "--data", "data"]).status.success());
    assert!(!prefalign(dir, &["eval", "--scorer", "ground-truth", "--data", "data"]).status.success());
}

#[test]
fn gradcheck_passes_and_catches_sabotage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let report = ok(dir, &["gradcheck", "--trials", "20"]);
    assert_eq!(report.lines().count(), 1 + 5 * 3 * 5);
    assert!(report.lines().skip(1).all(|l| l.ends_with(",PASS")));

    let out = prefalign(dir, &["gradcheck", "--loss", "dpo", "--level", "tabular", "--negatives", "2", "--trials", "3", "--flip-sign"]);
    assert!(!out.status.success());
    let line = String::from_utf8(out.stdout).unwrap().lines().nth(1).unwrap().to_string();
    let fields: Vec<&str> = line.split(',').collect();
    assert_eq!(fields[7], "FAIL");
    assert!(fields[4].parse::<f64>().unwrap() > 1.0);
    assert!(fields[6].parse::<usize>().is_ok());

    let zero = prefalign(dir, &["gradcheck", "--trials", "0"]);
    assert!(!zero.status.success());
}

#[test]
fn sweep_rows_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let args = ["sweep", "--axis", "beta", "--values", "0.5,1", "--seeds", "0,1", "--data", "data", "--output", "sw", "--sft-epochs", "2", "--align-epochs", "1"];
    ok(dir, &args);
    let csv = std::fs::read_to_string(dir.join("sw/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert_eq!(csv.lines().next().unwrap(), "value,seed,hr_at_1,final_valid_loss,mean_pos_reward");

    // drop the last row, rerun: only the missing cell is recomputed
    let partial: String = csv.lines().take(4).map(|l| format!("{l}\n")).collect();
    std::fs::write(dir.join("sw/sweep.csv"), partial).unwrap();
    let out = ok(dir, &args);
    assert!(out.contains("4 rows (3 resumed)"), "{out}");
    assert_eq!(std::fs::read_to_string(dir.join("sw/sweep.csv")).unwrap(), csv);

    ok(dir, &args);
    assert_eq!(std::fs::read_to_string(dir.join("sw/sweep.csv")).unwrap(), csv);
    assert!(!prefalign(dir, &["sweep", "--axis", "gamma", "--data", "data", "--output", "x"]).status.success());
}
