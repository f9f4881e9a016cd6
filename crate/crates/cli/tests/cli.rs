use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn gngode(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gngode"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gngode(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("clicks.csv");
        let data = dir.path().join("data");
        ok(&["synth", "--output", s(&log), "--num-items", "10", "--num-sessions", "80", "--seed", "5"]);
        ok(&["prepare", "--input", s(&log), "--output-dir", s(&data), "--min-item-freq", "1"]);
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(out);
        let data = self.path("data");
        let mut args = vec!["train", "--data-dir", s(&data), "--out", s(&out)];
        args.extend_from_slice(&["--dim", "4", "--batch-size", "32", "--micro-batch", "16"]);
        if !extra.contains(&"--epochs") {
            args.extend_from_slice(&["--epochs", "1"]);
        }
        args.extend_from_slice(extra);
        ok(&args);
        out
    }
}

fn checkpoint_config(path: &Path) -> String {
    let bytes = fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&bytes);
    text.lines().find_map(|l| l.strip_prefix("config ")).unwrap().to_string()
}

#[test]
fn help_matches_snapshots() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots");
    let update = std::env::var_os("UPDATE_SNAPSHOTS").is_some();
    for cmd in ["", "prepare", "synth", "train", "evaluate", "recommend", "solver-bench"] {
        let args: Vec<&str> = if cmd.is_empty() { vec!["--help"] } else { vec![cmd, "--help"] };
        let help = ok(&args);
        let file = dir.join(format!("{}.txt", if cmd.is_empty() { "main" } else { cmd }));
        if update {
            fs::create_dir_all(&dir).unwrap();
            fs::write(&file, &help).unwrap();
        }
        assert_eq!(help, fs::read_to_string(&file).unwrap(), "help for {cmd:?}");
    }
}

#[test]
fn prepare_and_synth_rerun_byte_identical() {
    let f = Fixture::new();
    let log = f.path("clicks.csv");
    let again = f.path("again.csv");
    ok(&["synth", "--output", s(&again), "--num-items", "10", "--num-sessions", "80", "--seed", "5"]);
    assert_eq!(fs::read(&log).unwrap(), fs::read(&again).unwrap());

    let other = f.path("data2");
    ok(&["prepare", "--input", s(&log), "--output-dir", s(&other), "--min-item-freq", "1"]);
    for name in ["vocab.csv", "train.csv", "valid.csv"] {
        assert_eq!(
            fs::read(f.path("data").join(name)).unwrap(),
            fs::read(other.join(name)).unwrap()
        );
    }
}

#[test]
fn prepare_prints_counts_and_rejects_empty_vocabulary() {
    let f = Fixture::new();
    let log = f.path("clicks.csv");
    let out = ok(&["prepare", "--input", s(&log), "--output-dir", s(&f.path("d")), "--min-item-freq", "1"]);
    let keys: Vec<&str> = out.lines().map(|l| l.split('=').next().unwrap()).collect();
    assert_eq!(keys, ["items", "train_sessions", "valid_sessions", "filtered_items", "dropped_sessions"]);

    let r = gngode(&["prepare", "--input", s(&log), "--output-dir", s(&f.path("e")), "--min-item-freq", "1000000"]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).starts_with("error: "));
}

#[test]
fn missing_data_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = dir.path().join("out");
    let r = gngode(&["train", "--data-dir", s(&missing), "--out", s(&out), "--epochs", "1"]);
    assert!(!r.status.success());
    assert_ne!(r.status.code(), Some(0));
}

#[test]
fn zero_epochs_writes_an_empty_loss_log() {
    let f = Fixture::new();
    let out = f.train("zero", &["--epochs", "0"]);
    assert!(out.join("model.ckpt").exists());
    assert_eq!(fs::read_to_string(out.join("loss.csv")).unwrap(), "");
}

#[test]
fn training_reruns_are_identical_and_report_evaluates() {
    let f = Fixture::new();
    let a = f.train("a", &[]);
    let b = f.train("b", &[]);
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(fs::read(a.join("loss.csv")).unwrap(), fs::read(b.join("loss.csv")).unwrap());
    assert_eq!(fs::read_to_string(a.join("loss.csv")).unwrap().lines().count(), 1);

    let valid = f.path("data").join("valid.csv");
    let report = ok(&["evaluate", "--checkpoint", s(&a.join("model.ckpt")), "--data", s(&valid), "--k", "5,10"]);
    let keys: Vec<&str> = report.lines().map(|l| l.split('=').next().unwrap()).collect();
    assert_eq!(keys, ["HR@5", "HR@10", "MRR@5", "MRR@10", "samples", "skipped"]);
}

#[test]
fn seed_lists_train_one_model_each_and_aggregate() {
    let f = Fixture::new();
    let out = f.train("multi", &["--seed", "1,2"]);
    let (c1, c2) = (out.join("model.seed1.ckpt"), out.join("model.seed2.ckpt"));
    assert!(c1.exists() && c2.exists() && out.join("loss.seed2.csv").exists());
    let valid = f.path("data").join("valid.csv");
    let both = format!("{},{}", s(&c1), s(&c2));
    let report = ok(&["evaluate", "--checkpoint", &both, "--data", s(&valid)]);
    assert!(report.contains("HR@20.stdev="));
    assert!(report.contains("checkpoints=2"));
}

#[test]
fn recommend_ranks_the_whole_vocabulary() {
    let f = Fixture::new();
    let ckpt = f.train("r", &[]).join("model.ckpt");
    let vocab = fs::read_to_string(f.path("data").join("vocab.csv")).unwrap();
    let n = vocab.lines().count();
    let out = ok(&[
        "recommend",
        "--checkpoint",
        s(&ckpt),
        "--session",
        "1:0,2:60,2:120,3:180",
        "--topk",
        &n.to_string(),
    ]);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("rank,item,score"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), n);
    let mut items: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    items.sort();
    items.dedup();
    assert_eq!(items.len(), n);
    let scores: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!((scores.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn recommend_with_only_unknown_items_is_a_usage_error() {
    let f = Fixture::new();
    let ckpt = f.train("u", &["--epochs", "0"]).join("model.ckpt");
    let r = gngode(&["recommend", "--checkpoint", s(&ckpt), "--session", "nope:0,missing:10"]);
    assert_eq!(r.status.code(), Some(2));

    let partial = ok(&["recommend", "--checkpoint", s(&ckpt), "--session", "nope:0,1:10", "--topk", "3"]);
    assert_eq!(partial.lines().count(), 4);
}

#[test]
fn solver_bench_lists_every_setting() {
    let f = Fixture::new();
    let ckpt = f.train("bench", &[]).join("model.ckpt");
    let valid = f.path("data").join("valid.csv");
    let args = ["solver-bench", "--checkpoint", s(&ckpt), "--data", s(&valid), "--omit-timing"];
    let first = ok(&args);
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "solver,setting,hr@20,mrr@20,wall_time_s");
    assert_eq!(lines.len(), 12);
    assert_eq!(lines.iter().filter(|l| l.starts_with("euler,")).count(), 5);
    assert_eq!(lines.iter().filter(|l| l.starts_with("rk4,")).count(), 5);
    assert!(lines[11].starts_with("dopri5,rtol=0.001/atol=0.0001,"));
    assert!(lines[1..].iter().all(|l| l.ends_with(",na")));
    assert_eq!(first, ok(&args));
}

#[test]
fn flags_override_the_config_file() {
    let f = Fixture::new();
    let cfg = f.path("cfg.json");
    fs::write(&cfg, r#"{"dim": 6, "lr": 0.01, "solver": "euler"}"#).unwrap();
    let out = f.train("cfg", &["--config", s(&cfg), "--epochs", "0"]);
    let saved = checkpoint_config(&out.join("model.ckpt"));
    // The fixture passes --dim 4, which wins over the file.
    assert!(saved.contains(r#""dim":4"#), "{saved}");
    assert!(saved.contains(r#""lr":0.01"#), "{saved}");
    assert!(saved.contains(r#""solver":"euler""#), "{saved}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let f = Fixture::new();
    let cfg = f.path("bad.json");
    fs::write(&cfg, r#"{"dimension": 6}"#).unwrap();
    let data = f.path("data");
    let out = f.path("bad");
    let r = gngode(&["train", "--config", s(&cfg), "--data-dir", s(&data), "--out", s(&out)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("dimension"));
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    assert_eq!(gngode(&["synth", "--output", "x.csv", "--rule", "zigzag"]).status.code(), Some(2));
    assert_eq!(gngode(&["frobnicate"]).status.code(), Some(2));
}
