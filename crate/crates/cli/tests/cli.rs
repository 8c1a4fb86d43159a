use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use rose_core::corpus::{load_tsv, save_tsv, Corpus, RefactoringLabel};
use rose_core::synth;

const BIN: &str = env!("CARGO_BIN_EXE_rose");

const SMALL: &str = "\
[model]
d_model = 16
n_heads = 2
n_layers = 1
d_ff = 32
max_pos = 64
[window]
length = 48
stride = 24
model_max = 64
[train]
learning_rate = 2e-3
batch_size = 8
epochs = 6
";

fn rose(dir: &Path, args: &[&str]) -> Output {
    rose_env(dir, args, None)
}

fn rose_env(dir: &Path, args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).current_dir(dir).env_remove("ROSE_SEED");
    if let Some(s) = seed {
        cmd.env("ROSE_SEED", s);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json_file(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.cfg"), SMALL).unwrap();
    dir
}

/// Trains the small model on a 60-sample synthetic corpus into `run/`.
fn trained(dir: &Path) {
    let out = rose(dir, &["synth", "--per-class", "20", "-o", "s.tsv"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = rose(dir, &["--config", "small.cfg", "train", "--corpus", "s.tsv", "--out-dir", "run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn ingest_reports_counts_and_normalizes() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(
        d.join("in.tsv"),
        "int a;\tExtract Method\nclass A {}\tMoveClass\tp1\r\nclass B extends A {}\tPullUpMethod\n\nvoid f() {}\tExtractMethod\n",
    )
    .unwrap();
    let out = rose(d, &["ingest", "in.tsv", "-o", "norm.tsv"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("4 samples: ExtractMethod=2 MoveClass=1 PullUpMethod=1"));
    let norm = std::fs::read_to_string(d.join("norm.tsv")).unwrap();
    assert!(norm.starts_with("int a;\tExtractMethod\n"));
    assert!(norm.contains("class A {}\tMoveClass\tp1\n"));
    assert_eq!(load_tsv(d.join("norm.tsv")).unwrap(), load_tsv(d.join("in.tsv")).unwrap());
}

#[test]
fn ingest_rejects_bad_rows_and_empty_files() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.tsv"), "int a;\tExtractMethod\nint b;\tRename Method\n").unwrap();
    let out = rose(d, &["ingest", "bad.tsv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
    assert!(stderr(&out).contains("Rename Method"));

    std::fs::write(d.join("empty.tsv"), "").unwrap();
    let out = rose(d, &["ingest", "empty.tsv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("empty corpus"));

    let out = rose(d, &["ingest", "missing.tsv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn synth_is_deterministic_and_valid() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&rose(d, &["synth", "--per-class", "100", "-o", "a.tsv"])), 0);
    assert_eq!(code(&rose(d, &["synth", "--per-class", "100", "-o", "b.tsv"])), 0);
    assert_eq!(code(&rose(d, &["synth", "--per-class", "100", "--seed", "1", "-o", "c.tsv"])), 0);
    let a = std::fs::read(d.join("a.tsv")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.tsv")).unwrap());
    assert_ne!(a, std::fs::read(d.join("c.tsv")).unwrap());
    let corpus = load_tsv(d.join("a.tsv")).unwrap();
    assert_eq!(corpus.len(), 300);
    assert_eq!(corpus.counts(), [100, 100, 100]);
    let out = rose(d, &["ingest", "a.tsv"]);
    assert_eq!(code(&out), 0);
    assert_eq!(code(&rose(d, &["synth", "--per-class", "0", "-o", "z.tsv"])), 2);
}

#[test]
fn seed_precedence_is_file_then_env_then_flags() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("seed.cfg"), "train.seed = 5\n").unwrap();
    let gen = |name: &str, args: &[&str], env: Option<&str>| {
        let mut full = args.to_vec();
        full.extend(["synth", "--per-class", "3", "-o", name]);
        assert_eq!(code(&rose_env(d, &full, env)), 0);
        std::fs::read(d.join(name)).unwrap()
    };
    let direct = |seed: u64| rose_core::corpus::to_tsv(&synth::generate(3, seed)).into_bytes();
    assert_eq!(gen("d.tsv", &[], None), direct(42));
    assert_eq!(gen("f.tsv", &["--config", "seed.cfg"], None), direct(5));
    assert_eq!(gen("e.tsv", &["--config", "seed.cfg"], Some("6")), direct(6));
    assert_eq!(gen("s.tsv", &["--config", "seed.cfg", "--set", "train.seed=7"], Some("6")), direct(7));
}

#[test]
fn bad_configuration_is_an_input_error() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.cfg"), "train.nonsense = 1\n").unwrap();
    let out = rose(d, &["--config", "bad.cfg", "synth", "-o", "x.tsv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 1"));
    assert_eq!(code(&rose_env(d, &["synth", "-o", "x.tsv"], Some("forty"))), 2);
    assert_eq!(code(&rose(d, &["synth", "--per-class", "2", "-o", "s.tsv"])), 0);
    for set in ["model.n_heads=3", "window.length=600", "train.batch_size=0"] {
        let out = rose(d, &["--config", "small.cfg", "--set", set, "train", "--corpus", "s.tsv"]);
        assert_eq!(code(&out), 2, "{set}: {}", stderr(&out));
    }
    assert_eq!(code(&rose(d, &["train"])), 2);
}

#[test]
fn train_writes_artifacts_and_prints_the_history() {
    let dir = setup();
    let d = dir.path();
    let out = rose(d, &["synth", "--per-class", "20", "-o", "s.tsv"]);
    assert_eq!(code(&out), 0);
    let out = rose(d, &["--config", "small.cfg", "train", "--corpus", "s.tsv", "--out-dir", "run"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["checkpoint.bin", "vocab.txt", "history.csv", "report.json", "matrix.csv", "run.json", "train.tsv"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let history = std::fs::read_to_string(d.join("run/history.csv")).unwrap();
    let printed = stdout(&out);
    for row in history.lines().skip(1) {
        let fields: Vec<&str> = row.split(',').collect();
        let line = printed
            .lines()
            .find(|l| l.split_whitespace().next() == Some(fields[0]))
            .unwrap_or_else(|| panic!("epoch {} not printed", fields[0]));
        assert_eq!(line.split_whitespace().collect::<Vec<_>>(), fields);
    }
    let report = json_file(&d.join("run/report.json"));
    assert_eq!(report["fp_total"], report["fn_total"]);
    let matrix = std::fs::read_to_string(d.join("run/matrix.csv")).unwrap();
    assert!(matrix.starts_with("true\\predicted,ExtractMethod,MoveClass,PullUpMethod\n"));
}

#[test]
fn balance_undersamples_before_splitting() {
    let dir = setup();
    let d = dir.path();
    let full = synth::generate(10, 3);
    let keep: Vec<usize> = (0..full.len())
        .filter(|&i| {
            let s = &full.samples()[i];
            let rank = full.samples()[..i].iter().filter(|t| t.label == s.label).count();
            match s.label {
                RefactoringLabel::ExtractMethod => true,
                RefactoringLabel::MoveClass => rank < 7,
                RefactoringLabel::PullUpMethod => rank < 5,
            }
        })
        .collect();
    let corpus: Corpus = full.select(&keep);
    assert_eq!(corpus.counts(), [10, 7, 5]);
    save_tsv(&corpus, d.join("u.tsv")).unwrap();
    let out = rose(
        d,
        &["--config", "small.cfg", "train", "--balance", "--epochs", "1", "--corpus", "u.tsv", "--out-dir", "b"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("balanced counts: ExtractMethod=5 MoveClass=5 PullUpMethod=5"));
}

#[test]
fn diverging_training_exits_3() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&rose(d, &["synth", "--per-class", "5", "-o", "s.tsv"])), 0);
    let out = rose(d, &["--config", "small.cfg", "train", "--lr", "1e39", "--corpus", "s.tsv", "--out-dir", "x"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"));
}

#[test]
fn eval_reproduces_the_test_report_and_checks_the_vocab() {
    let dir = setup();
    let d = dir.path();
    trained(d);
    let out = rose(d, &["eval", "--checkpoint", "run/checkpoint.bin", "--corpus", "run/test.tsv", "--out-dir", "ev"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report, json_file(&d.join("run/report.json")));
    assert_eq!(report["fp_total"], report["fn_total"]);
    assert_eq!(json_file(&d.join("ev/report.json")), report);

    std::fs::write(d.join("empty.tsv"), "\n").unwrap();
    let out = rose(d, &["eval", "--checkpoint", "run/checkpoint.bin", "--corpus", "empty.tsv"]);
    assert_eq!(code(&out), 2);

    std::fs::write(d.join("other_vocab.txt"), "x\ny\n").unwrap();
    let out = rose(
        d,
        &["eval", "--checkpoint", "run/checkpoint.bin", "--corpus", "s.tsv", "--vocab", "other_vocab.txt"],
    );
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("does not match"));

    let mut bytes = std::fs::read(d.join("run/checkpoint.bin")).unwrap();
    bytes[0] = b'X';
    std::fs::write(d.join("broken.bin"), &bytes).unwrap();
    std::fs::copy(d.join("run/vocab.txt"), d.join("vocab.txt")).unwrap();
    let out = rose(d, &["eval", "--checkpoint", "broken.bin", "--corpus", "s.tsv"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn predict_maps_smells_and_is_deterministic() {
    let dir = setup();
    let d = dir.path();
    trained(d);
    let corpus = load_tsv(d.join("s.tsv")).unwrap();
    let sample = corpus
        .samples()
        .iter()
        .find(|s| s.label == RefactoringLabel::ExtractMethod)
        .unwrap();
    std::fs::write(d.join("snippet.java"), &sample.code).unwrap();
    let args = ["predict", "--checkpoint", "run/checkpoint.bin", "snippet.java", "--smell", "god_class"];
    let first = rose(d, &args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert_eq!(first.stdout, rose(d, &args).stdout);
    let v: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(v["smell_expected_label"], "ExtractMethod");
    assert_eq!(v["agree"], v["predicted_label"] == "ExtractMethod");
    let sum: f64 = ["ExtractMethod", "MoveClass", "PullUpMethod"]
        .iter()
        .map(|k| v["probabilities"][k].as_f64().unwrap())
        .sum();
    // three values printed to six decimals: 1e-6 plus rounding
    assert!((sum - 1.0).abs() <= 1e-6 + 1.5e-6, "{sum}");

    for (smell, label) in [("cyclic_dependency", "MoveClass"), ("Hub-like Dependency", "PullUpMethod")] {
        let out = rose(d, &["predict", "--checkpoint", "run/checkpoint.bin", "snippet.java", "--smell", smell]);
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["smell_expected_label"], label);
    }
    let plain = rose(d, &["predict", "--checkpoint", "run/checkpoint.bin", "snippet.java"]);
    let v: Value = serde_json::from_slice(&plain.stdout).unwrap();
    assert!(v.get("smell_expected_label").is_none());

    let out = rose(d, &["predict", "--checkpoint", "run/checkpoint.bin", "snippet.java", "--smell", "feature_envy"]);
    assert_eq!(code(&out), 2);
    let out = rose(d, &["predict", "--checkpoint", "run/checkpoint.bin", "missing.java"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn search_leaderboard_is_sorted() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&rose(d, &["synth", "--per-class", "10", "-o", "s.tsv"])), 0);
    let out = rose(
        d,
        &[
            "--config", "small.cfg",
            "--set", "search.lr_grid=1e-5,2e-3",
            "--set", "search.batch_grid=8",
            "--set", "search.wd_grid=0.0,0.01",
            "search", "--budget", "3", "--epochs", "2", "--corpus", "s.tsv", "--out-dir", "sr",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let board = json_file(&d.join("sr/leaderboard.json"));
    let f1s: Vec<f64> = board
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["best_f1"].as_f64().unwrap())
        .collect();
    assert_eq!(f1s.len(), 3);
    assert!(f1s.windows(2).all(|w| w[0] >= w[1]), "{f1s:?}");
    let best = json_file(&d.join("sr/best_config.json"));
    assert_eq!(best["best_f1"].as_f64().unwrap(), f1s[0]);
    let out = rose(d, &["search", "--budget", "0", "--corpus", "s.tsv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn kfold_rejects_too_small_classes() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&rose(d, &["synth", "--per-class", "4", "-o", "s.tsv"])), 0);
    let out = rose(d, &["--config", "small.cfg", "kfold", "--k", "5", "--corpus", "s.tsv", "--out-dir", "kf"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("need at least 5"), "{}", stderr(&out));
    let out = rose(d, &["--config", "small.cfg", "kfold", "--k", "1", "--corpus", "s.tsv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn kfold_reports_its_validation_source() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(code(&rose(d, &["synth", "--per-class", "10", "-o", "s.tsv"])), 0);
    let args = ["--config", "small.cfg", "--set", "train.epochs=1", "kfold", "--k", "3", "--corpus", "s.tsv"];
    let mut a = args.to_vec();
    a.extend(["--out-dir", "a"]);
    let mut b = args.to_vec();
    b.extend(["--out-dir", "b"]);
    assert_eq!(code(&rose(d, &a)), 0);
    assert_eq!(code(&rose(d, &b)), 0);
    let summary = json_file(&d.join("a/kfold.json"));
    assert_eq!(summary["folds"], 3);
    assert_eq!(summary["validation_source"].as_array().unwrap().len(), 3);
    assert_eq!(
        std::fs::read(d.join("a/kfold.json")).unwrap(),
        std::fs::read(d.join("b/kfold.json")).unwrap()
    );
    let mean = summary["mean"]["accuracy"].as_f64().unwrap();
    let folds: Vec<f64> = (1..=3)
        .map(|f| json_file(&d.join(format!("a/fold_{f:02}.json")))["accuracy"].as_f64().unwrap())
        .collect();
    let lo = folds.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = folds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(mean >= lo - 1e-6 && mean <= hi + 1e-6);
}

#[test]
fn reference_command() {
    let dir = setup();
    let d = dir.path();
    let out = rose(d, &["reference", "codebert", "--out-dir", "ref"]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["fp_total"], 585);
    assert!(d.join("ref/matrix.csv").exists());
    assert_eq!(code(&rose(d, &["reference", "gpt"])), 2);
}
