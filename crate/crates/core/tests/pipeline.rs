use rose_core::corpus::{balance_undersample, load_tsv, save_tsv, split_train_val_test, Corpus};
use rose_core::metrics::ConfusionMatrix;
use rose_core::model::checkpoint::{load_checkpoint, save_checkpoint};
use rose_core::model::{classify_with, ModelConfig};
use rose_core::synth;
use rose_core::tokenizer::{build_vocab, Vocab};
use rose_core::trainer::{encode_corpus, evaluate, history_csv, train, TrainConfig, Trainer};
use rose_core::windowing::{Aggregation, WindowPlan};

const PLAN: WindowPlan = WindowPlan {
    window_len: 48,
    stride: 24,
    model_max: 64,
};

fn model(vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ff: 32,
        max_pos: 64,
        ..ModelConfig::default()
    }
}

fn tconfig(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 2e-3,
        batch_size: 8,
        epochs,
        early_stop_patience: epochs,
        ..TrainConfig::default()
    }
}

fn prepared() -> (Corpus, Corpus, Corpus, Vocab) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.tsv");
    save_tsv(&synth::generate(16, 5), &path).unwrap();
    let corpus = balance_undersample(&load_tsv(&path).unwrap(), 5).unwrap();
    let (train, val, test) = split_train_val_test(&corpus, [0.8, 0.1, 0.1], 5).unwrap();
    let vocab = build_vocab(&train, 2000).unwrap();
    (train, val, test, vocab)
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let (train_c, val, _, vocab) = prepared();
    let m = model(&vocab);
    let full = train(&train_c, &val, &vocab, &PLAN, &m, &tconfig(4)).unwrap();

    let first = train(&train_c, &val, &vocab, &PLAN, &m, &tconfig(2)).unwrap();
    let mut resumed = Trainer::resume(&train_c, &val, &vocab, &first.last, &tconfig(4)).unwrap();
    assert_eq!(resumed.epochs_done(), 2);
    let mut history = first.history.clone();
    history.push(resumed.run_epoch().unwrap());
    history.push(resumed.run_epoch().unwrap());

    assert_eq!(history_csv(&history), history_csv(&full.history));
    assert_eq!(resumed.params(), &full.last.params);
}

#[test]
fn saved_checkpoint_scores_like_per_snippet_classification() {
    let (train_c, val, test, vocab) = prepared();
    let result = train(&train_c, &val, &vocab, &PLAN, &model(&vocab), &tconfig(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.bin");
    save_checkpoint(&result.best, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert!(loaded.vocab.matches(&vocab));
    assert_eq!(loaded.plan, PLAN);

    let (_, report) = evaluate(&loaded.params, &encode_corpus(&test, &vocab, &PLAN)).unwrap();
    let mut matrix = ConfusionMatrix::default();
    for s in test.samples() {
        let (label, probs) = classify_with(&loaded.params, &vocab, &PLAN, &s.code, Aggregation::MeanLogits).unwrap();
        assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        matrix.add(s.label, label);
    }
    assert_eq!(report.matrix, matrix);
    assert_eq!(report.matrix.total(), test.len() as u64);
}
