use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

use rose_core::corpus::{
    balance_undersample, kfold_split, kfold_split_grouped, load_tsv, save_tsv, smell_to_refactoring,
    split_holdout, split_train_val_test, Corpus, CorpusError, RefactoringLabel, SmellKind,
};
use rose_core::metrics::{fixed6, kfold_evaluate, reference, summarize, ConfusionMatrix, Report};
use rose_core::model::{classify_with, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use rose_core::synth;
use rose_core::tokenizer::{build_vocab, Vocab};
use rose_core::trainer::{
    encode_corpus, evaluate, history_csv, random_search, EpochRecord, TrainError, TrainResult, Trainer,
};
use rose_core::windowing::Aggregation;

use crate::config::RunConfig;

pub const SPLIT: [f64; 3] = [0.8, 0.1, 0.1];
pub const KFOLD_HOLDOUT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Training(String),
    #[error("{0}")]
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Training(_) => 3,
            CliError::Model(_) => 4,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Training(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Model(e.to_string())
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn counts_line(counts: [usize; 3]) -> String {
    RefactoringLabel::ALL
        .iter()
        .map(|l| format!("{}={}", l.as_str(), counts[l.code()]))
        .collect::<Vec<_>>()
        .join(" ")
}

fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    let corpus = load_tsv(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if corpus.is_empty() {
        return Err(CliError::Input(format!("{}: empty corpus", path.display())));
    }
    Ok(corpus)
}

fn require_corpus(cfg: &RunConfig) -> Result<&Path, CliError> {
    cfg.corpus
        .as_deref()
        .ok_or_else(|| input("no corpus given (use --corpus or paths.corpus)"))
}

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

pub fn cmd_ingest(path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let corpus = load_corpus(path)?;
    println!("{} samples: {}", corpus.len(), counts_line(corpus.counts()));
    if let Some(out) = out {
        save_tsv(&corpus, out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

pub fn cmd_synth(out: &Path, per_class: usize, seed: u64) -> Result<(), CliError> {
    if per_class == 0 {
        return Err(input("--per-class must be at least 1"));
    }
    let corpus = synth::generate(per_class, seed);
    save_tsv(&corpus, out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
    println!("wrote {} samples to {}", corpus.len(), out.display());
    Ok(())
}

const TABLE_HEADER: &str = "epoch  train_loss    val_loss    accuracy   precision      recall          f1";

fn table_row(r: &EpochRecord) -> String {
    format!(
        "{:>5} {:>11.6} {:>11.6} {:>11.6} {:>11.6} {:>11.6} {:>11.6}",
        r.epoch, r.train_loss, r.val_loss, r.accuracy, r.precision, r.recall, r.f1
    )
}

/// Balancing (optional) and the stratified 80/10/10 split.
fn split_corpus(cfg: &RunConfig) -> Result<(Corpus, Corpus, Corpus), CliError> {
    let mut corpus = load_corpus(require_corpus(cfg)?)?;
    println!("corpus counts: {}", counts_line(corpus.counts()));
    if cfg.balance {
        corpus = balance_undersample(&corpus, cfg.train.seed)?;
        println!("balanced counts: {}", counts_line(corpus.counts()));
    }
    let (train, val, test) = split_train_val_test(&corpus, SPLIT, cfg.train.seed)?;
    println!(
        "split sizes: train={} val={} test={}",
        train.len(),
        val.len(),
        test.len()
    );
    println!("training set counts: {}", counts_line(train.counts()));
    Ok((train, val, test))
}

fn save_splits(dir: &Path, train: &Corpus, val: &Corpus, test: &Corpus) -> Result<(), CliError> {
    for (name, part) in [("train.tsv", train), ("val.tsv", val), ("test.tsv", test)] {
        save_tsv(part, dir.join(name)).map_err(input)?;
    }
    Ok(())
}

fn vocab_for(cfg: &RunConfig, train: &Corpus) -> Result<Vocab, CliError> {
    build_vocab(train, cfg.vocab_size).map_err(input)
}

fn report_files(dir: &Path, report: &Report) -> Result<(), CliError> {
    write(&dir.join("report.json"), report.to_json())?;
    write(&dir.join("matrix.csv"), report.matrix.to_csv())
}

fn run_json(cfg: &RunConfig, vocab: &Vocab, result: &TrainResult) -> Value {
    json!({
        "model": cfg.model_for(vocab.len()),
        "train": result.config,
        "window": cfg.plan,
        "best_epoch": result.best_epoch,
        "best_val_f1": fixed6(result.best_f1()),
        "epochs_run": result.history.len(),
        "stopped_early": result.stopped_early,
        "vocab_sha256": vocab.fingerprint(),
    })
}

/// Writes the artifacts of one finished training run and returns the
/// held-out test report.
fn write_run(
    dir: &Path,
    cfg: &RunConfig,
    vocab: &Vocab,
    result: &TrainResult,
    test: &Corpus,
) -> Result<Report, CliError> {
    vocab.save(dir.join("vocab.txt")).map_err(input)?;
    save_checkpoint(&result.best, dir.join("checkpoint.bin"))?;
    write(&dir.join("history.csv"), history_csv(&result.history))?;
    let test_data = encode_corpus(test, vocab, &cfg.plan);
    let (_, report) = evaluate(&result.best.params, &test_data)?;
    report_files(dir, &report)?;
    write(&dir.join("run.json"), json_text(&run_json(cfg, vocab, result)))?;
    Ok(report)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<(), CliError> {
    let (train, val, test) = split_corpus(cfg)?;
    let vocab = vocab_for(cfg, &train)?;
    let mconfig = cfg.model_for(vocab.len());
    prepare_out_dir(&cfg.out_dir)?;
    save_splits(&cfg.out_dir, &train, &val, &test)?;
    println!("{TABLE_HEADER}");
    let result = Trainer::new(&train, &val, &vocab, &cfg.plan, &mconfig, &cfg.train)?
        .run(|r| println!("{}", table_row(r)))?;
    if result.stopped_early {
        println!("early stop after epoch {}", result.history.len());
    }
    let report = write_run(&cfg.out_dir, cfg, &vocab, &result, &test)?;
    println!(
        "best epoch {} (val macro-F1 {:.6}); test accuracy {:.6}, macro-F1 {:.6}",
        result.best_epoch,
        result.best_f1(),
        report.accuracy,
        report.macro_f1
    );
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}

pub fn cmd_search(cfg: &RunConfig) -> Result<(), CliError> {
    let (train, val, test) = split_corpus(cfg)?;
    let vocab = vocab_for(cfg, &train)?;
    let mconfig = cfg.model_for(vocab.len());
    prepare_out_dir(&cfg.out_dir)?;
    save_splits(&cfg.out_dir, &train, &val, &test)?;
    let result = random_search(
        &cfg.search,
        cfg.train.seed,
        &train,
        &val,
        &vocab,
        &cfg.plan,
        &mconfig,
        &cfg.train,
        |t| {
            println!(
                "trial {:>3}: lr={:e} batch={} wd={} -> best val F1 {:.6} (epoch {})",
                t.index + 1,
                t.config.learning_rate,
                t.config.batch_size,
                t.config.weight_decay,
                t.result.best_f1(),
                t.result.best_epoch
            )
        },
    )?;
    write(&cfg.out_dir.join("leaderboard.json"), result.leaderboard_json())?;
    let best = result.best_trial();
    write(&cfg.out_dir.join("best_config.json"), json_text(&best.to_json_value()))?;
    let report = write_run(&cfg.out_dir, cfg, &vocab, &best.result, &test)?;
    println!(
        "best: trial {} lr={:e} batch={} wd={} (val macro-F1 {:.6}); test accuracy {:.6}",
        best.index + 1,
        best.config.learning_rate,
        best.config.batch_size,
        best.config.weight_decay,
        best.result.best_f1(),
        report.accuracy
    );
    Ok(())
}

/// Loads a checkpoint and the vocabulary it was trained with. A vocabulary
/// whose fingerprint differs from the one recorded in the checkpoint is a
/// compatibility error.
pub fn load_model(checkpoint: &Path, vocab: Option<&Path>) -> Result<(Checkpoint, Vocab), CliError> {
    let ckpt = load_checkpoint(checkpoint)
        .map_err(|e| CliError::Model(format!("{}: {e}", checkpoint.display())))?;
    let vocab_path: PathBuf = match vocab {
        Some(p) => p.to_path_buf(),
        None => checkpoint
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&ckpt.vocab.path),
    };
    let vocab = Vocab::load(&vocab_path)
        .map_err(|e| CliError::Model(format!("{}: {e}", vocab_path.display())))?;
    if !ckpt.vocab.matches(&vocab) {
        return Err(CliError::Model(format!(
            "{} does not match the checkpoint vocabulary (sha256 {}, size {})",
            vocab_path.display(),
            ckpt.vocab.sha256,
            ckpt.vocab.size
        )));
    }
    Ok((ckpt, vocab))
}

pub fn cmd_eval(
    checkpoint: &Path,
    corpus: &Path,
    vocab: Option<&Path>,
    out_dir: Option<&Path>,
    how: Aggregation,
) -> Result<(), CliError> {
    let (ckpt, vocab) = load_model(checkpoint, vocab)?;
    let corpus = load_corpus(corpus)?;
    let mut matrix = ConfusionMatrix::default();
    for s in corpus.samples() {
        let (pred, _) = classify_with(&ckpt.params, &vocab, &ckpt.plan, &s.code, how)
            .map_err(|e| CliError::Model(e.to_string()))?;
        matrix.add(s.label, pred);
    }
    let report = summarize(&matrix).expect("non-empty corpus");
    if let Some(dir) = out_dir {
        prepare_out_dir(dir)?;
        report_files(dir, &report)?;
    }
    print!("{}", report.to_json());
    Ok(())
}

pub fn cmd_kfold(cfg: &RunConfig) -> Result<(), CliError> {
    let corpus = load_corpus(require_corpus(cfg)?)?;
    let corpus = if cfg.balance {
        balance_undersample(&corpus, cfg.train.seed)?
    } else {
        corpus
    };
    let folds = if cfg.grouped {
        kfold_split_grouped(&corpus, cfg.k, cfg.train.seed)?
    } else {
        kfold_split(&corpus, cfg.k, cfg.train.seed)?
    };
    prepare_out_dir(&cfg.out_dir)?;
    let mut reports = Vec::with_capacity(cfg.k);
    let mut sources = Vec::with_capacity(cfg.k);
    for fold in 0..cfg.k {
        let seed = cfg.train.seed + fold as u64;
        let rest = corpus.select(&folds.train_indices(fold));
        let test = corpus.select(&folds.test_indices(fold));
        let (train, val, source) = match split_holdout(&rest, KFOLD_HOLDOUT, seed) {
            Ok((t, v)) if !t.is_empty() && !v.is_empty() => (t, v, "holdout"),
            Ok(_) | Err(CorpusError::ClassTooSmall { .. }) => (rest, test.clone(), "test_fold"),
            Err(e) => return Err(e.into()),
        };
        let vocab = vocab_for(cfg, &train)?;
        let mconfig = cfg.model_for(vocab.len());
        let tconfig = rose_core::trainer::TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let result = Trainer::new(&train, &val, &vocab, &cfg.plan, &mconfig, &tconfig)?.run(|_| {})?;
        let test_data = encode_corpus(&test, &vocab, &cfg.plan);
        let (_, report) = evaluate(&result.best.params, &test_data)?;
        println!(
            "fold {:>2}: n={} validation={} best epoch {} test accuracy {:.6} macro-F1 {:.6}",
            fold + 1,
            test.len(),
            source,
            result.best_epoch,
            report.accuracy,
            report.macro_f1
        );
        write(
            &cfg.out_dir.join(format!("fold_{:02}.json", fold + 1)),
            report.to_json(),
        )?;
        reports.push(report);
        sources.push(source);
    }
    let summary = kfold_evaluate(&reports).map_err(input)?;
    let mut value = summary.to_json_value();
    let obj: &mut Map<String, Value> = value.as_object_mut().expect("object");
    obj.insert("seed".into(), json!(cfg.train.seed));
    obj.insert("grouped".into(), json!(cfg.grouped));
    obj.insert("fold_sizes".into(), json!(folds.fold_sizes()));
    obj.insert("validation_source".into(), json!(sources));
    write(&cfg.out_dir.join("kfold.json"), json_text(&value))?;
    println!(
        "mean accuracy {:.6} ± {:.6}, mean macro-F1 {:.6} ± {:.6}",
        summary.mean.accuracy, summary.std.accuracy, summary.mean.macro_f1, summary.std.macro_f1
    );
    Ok(())
}

pub fn cmd_predict(
    checkpoint: &Path,
    code_path: &Path,
    vocab: Option<&Path>,
    smell: Option<&str>,
    how: Aggregation,
) -> Result<(), CliError> {
    let smell: Option<SmellKind> = smell.map(|s| s.parse().map_err(input)).transpose()?;
    let (ckpt, vocab) = load_model(checkpoint, vocab)?;
    let code = fs::read_to_string(code_path)
        .map_err(|e| CliError::Model(format!("{}: {e}", code_path.display())))?;
    let (label, probs) = classify_with(&ckpt.params, &vocab, &ckpt.plan, &code, how)
        .map_err(|e| CliError::Model(e.to_string()))?;
    let mut probabilities = Map::new();
    for l in RefactoringLabel::ALL {
        probabilities.insert(l.as_str().into(), fixed6(f64::from(probs[l.code()])));
    }
    let mut out = json!({
        "predicted_label": label.as_str(),
        "probabilities": probabilities,
    });
    if let Some(smell) = smell {
        let expected = smell_to_refactoring(smell);
        let obj = out.as_object_mut().expect("object");
        obj.insert("smell".into(), json!(smell.as_str()));
        obj.insert("smell_expected_label".into(), json!(expected.as_str()));
        obj.insert("agree".into(), json!(expected == label));
    }
    print!("{}", json_text(&out));
    Ok(())
}

pub fn cmd_reference(baseline: &str, out_dir: Option<&Path>) -> Result<(), CliError> {
    let baseline: reference::Baseline = baseline.parse().map_err(input)?;
    let report = reference::report(baseline);
    if let Some(dir) = out_dir {
        prepare_out_dir(dir)?;
        report_files(dir, &report)?;
    }
    print!("{}", report.to_json());
    Ok(())
}
