//! Deterministic training: mean cross-entropy over aggregated window logits,
//! AdamW, per-epoch validation and early stopping on validation macro-F1.
//!
//! Each epoch draws its shuffle order and dropout masks from a ChaCha stream
//! keyed by `(seed, epoch)`, so a run resumed from a checkpoint replays the
//! same epochs as an uninterrupted one.

pub mod optim;
pub mod search;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, RefactoringLabel, NUM_CLASSES};
use crate::metrics::{summarize, ConfusionMatrix, Report};
use crate::model::checkpoint::VocabRef;
use crate::model::{
    argmax, backward, forward, forward_cached, Checkpoint, Mode, ModelConfig, ModelError,
    OptimizerMoments, Parameters, Scalar,
};
use crate::tokenizer::{encode, Vocab};
use crate::windowing::{chunk, Window, WindowPlan};

pub use optim::{adamw_step, cross_entropy, cross_entropy_grad, AdamW};
pub use search::{random_search, HpSearchSpace, SearchResult, Trial};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite logits")]
    NonFiniteInput,
    #[error("parameter, gradient and optimizer shapes differ")]
    ShapeMismatch,
    #[error("non-finite parameters after step {0}")]
    Diverged(u64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            batch_size: 16,
            epochs: 10,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            early_stop_patience: 3,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || !(self.epsilon > 0.0) {
            return bad("weight_decay must be >= 0 and epsilon > 0");
        }
        Ok(())
    }
}

/// A sample already encoded and chunked.
#[derive(Debug, Clone)]
pub struct EncodedSample {
    pub windows: Vec<Window>,
    pub label: RefactoringLabel,
}

pub fn encode_corpus(corpus: &Corpus, vocab: &Vocab, plan: &WindowPlan) -> Vec<EncodedSample> {
    corpus
        .samples()
        .iter()
        .map(|s| EncodedSample {
            windows: chunk(&encode(&s.code, vocab), plan),
            label: s.label,
        })
        .collect()
}

/// Mean-over-windows logits of one sample plus the caches for backward.
fn sample_forward<T: Scalar>(
    params: &Parameters<T>,
    sample: &EncodedSample,
    mode: &mut Mode<'_>,
) -> Result<([T; NUM_CLASSES], Vec<crate::model::ForwardCache<T>>), TrainError> {
    let mut sum = [T::zero(); NUM_CLASSES];
    let mut caches = Vec::with_capacity(sample.windows.len());
    for w in &sample.windows {
        let (logits, cache) = forward_cached(params, w, mode)?;
        for (s, l) in sum.iter_mut().zip(logits) {
            *s = *s + l;
        }
        caches.push(cache);
    }
    let n = T::from_f64(sample.windows.len() as f64);
    Ok((sum.map(|s| s / n), caches))
}

/// Mean cross-entropy of a batch and its exact gradient with respect to every
/// parameter. Samples are reduced in index order.
pub fn batch_gradients<T: Scalar>(
    params: &Parameters<T>,
    batch: &[&EncodedSample],
    mode: &mut Mode<'_>,
) -> Result<(T, Parameters<T>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyCorpus("batch"));
    }
    let mut grads = Parameters::zeros(&params.config);
    let n = T::from_f64(batch.len() as f64);
    let mut total = T::zero();
    for sample in batch {
        let (logits, caches) = sample_forward(params, sample, mode)?;
        total = total + cross_entropy(&logits, sample.label)?;
        let windows = T::from_f64(caches.len() as f64);
        let dlogits = cross_entropy_grad(&logits, sample.label).map(|g| g / (n * windows));
        for cache in &caches {
            backward(params, cache, &dlogits, &mut grads);
        }
    }
    Ok((total / n, grads))
}

/// Eval-mode loss and report over an encoded corpus.
pub fn evaluate(params: &Parameters<f32>, data: &[EncodedSample]) -> Result<(f64, Report), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyCorpus("evaluation"));
    }
    let mut matrix = ConfusionMatrix::default();
    let mut loss = 0.0f64;
    for s in data {
        let per_window = s
            .windows
            .iter()
            .map(|w| forward(params, w, &mut Mode::Eval))
            .collect::<Result<Vec<_>, _>>()?;
        let logits = crate::windowing::aggregate(&per_window).map_err(ModelError::from)?;
        loss += f64::from(cross_entropy(&logits, s.label)?);
        let pred = RefactoringLabel::from_code(argmax(&logits)).expect("class index");
        matrix.add(s.label, pred);
    }
    let report = summarize(&matrix).expect("non-empty");
    Ok((loss / data.len() as f64, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,accuracy,precision,recall,f1";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.train_loss, self.val_loss, self.accuracy, self.precision, self.recall, self.f1
        )
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(EpochRecord::CSV_HEADER);
    s.push('\n');
    for r in history {
        writeln!(s, "{}", r.csv_row()).unwrap();
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Checkpoint of the epoch with the highest validation macro-F1 (earliest
    /// on ties).
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub config: TrainConfig,
    pub stopped_early: bool,
    /// State after the last completed epoch, optimizer moments included.
    pub last: Checkpoint,
}

impl TrainResult {
    pub fn best_f1(&self) -> f64 {
        self.history[self.best_epoch - 1].f1
    }
}

/// Tracks the best validation macro-F1. Only a strict improvement resets the
/// patience counter, so ties keep the earlier epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    /// Records an epoch; returns true if it is the new best.
    pub fn observe(&mut self, epoch: usize, f1: f64) -> bool {
        let improved = self.best.is_none_or(|(_, best)| f1 > best);
        if improved {
            self.best = Some((epoch, f1));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

/// Epoch-by-epoch training state.
pub struct Trainer {
    train: Vec<EncodedSample>,
    val: Vec<EncodedSample>,
    vocab_ref: VocabRef,
    plan: WindowPlan,
    config: TrainConfig,
    opt: AdamW,
    params: Parameters<f32>,
    moments: OptimizerMoments,
    epoch: usize,
}

impl Trainer {
    pub fn new(
        train: &Corpus,
        val: &Corpus,
        vocab: &Vocab,
        plan: &WindowPlan,
        mconfig: &ModelConfig,
        tconfig: &TrainConfig,
    ) -> Result<Self, TrainError> {
        let params = Parameters::init(mconfig, tconfig.seed)?;
        let moments = OptimizerMoments::new(mconfig);
        Self::assemble(train, val, vocab, plan, tconfig, params, moments, 0)
    }

    /// Continues from a checkpoint that carries optimizer moments.
    pub fn resume(
        train: &Corpus,
        val: &Corpus,
        vocab: &Vocab,
        ckpt: &Checkpoint,
        tconfig: &TrainConfig,
    ) -> Result<Self, TrainError> {
        let moments = ckpt
            .optimizer
            .clone()
            .ok_or_else(|| TrainError::InvalidConfig("checkpoint has no optimizer state".into()))?;
        Self::assemble(
            train,
            val,
            vocab,
            &ckpt.plan,
            tconfig,
            ckpt.params.clone(),
            moments,
            ckpt.epoch,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        train: &Corpus,
        val: &Corpus,
        vocab: &Vocab,
        plan: &WindowPlan,
        tconfig: &TrainConfig,
        params: Parameters<f32>,
        moments: OptimizerMoments,
        epoch: usize,
    ) -> Result<Self, TrainError> {
        tconfig.validate()?;
        params.config.validate_plan(plan)?;
        if params.config.vocab_size != vocab.len() {
            return Err(TrainError::InvalidConfig(format!(
                "model vocab_size {} != vocabulary size {}",
                params.config.vocab_size,
                vocab.len()
            )));
        }
        if train.is_empty() {
            return Err(TrainError::EmptyCorpus("training"));
        }
        if val.is_empty() {
            return Err(TrainError::EmptyCorpus("validation"));
        }
        Ok(Trainer {
            train: encode_corpus(train, vocab, plan),
            val: encode_corpus(val, vocab, plan),
            vocab_ref: VocabRef::of(vocab, "vocab.txt"),
            plan: *plan,
            config: tconfig.clone(),
            opt: AdamW::from(tconfig),
            params,
            moments,
            epoch,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn params(&self) -> &Parameters<f32> {
        &self.params
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        rng
    }

    /// Runs one epoch of optimization followed by validation.
    pub fn run_epoch(&mut self) -> Result<EpochRecord, TrainError> {
        self.epoch += 1;
        let mut rng = self.epoch_rng(self.epoch);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch_idx in order.chunks(self.config.batch_size) {
            let batch: Vec<&EncodedSample> = batch_idx.iter().map(|&i| &self.train[i]).collect();
            let (loss, grads) = batch_gradients(&self.params, &batch, &mut Mode::Train(&mut rng))?;
            loss_sum += f64::from(loss) * batch.len() as f64;
            adamw_step(&mut self.params, &grads, &mut self.moments, &self.opt)?;
            if !self.params.is_finite() {
                return Err(TrainError::Diverged(self.moments.step));
            }
        }
        let (val_loss, report) = evaluate(&self.params, &self.val)?;
        Ok(EpochRecord {
            epoch: self.epoch,
            train_loss: loss_sum / self.train.len() as f64,
            val_loss,
            accuracy: report.accuracy,
            precision: report.macro_precision,
            recall: report.macro_recall,
            f1: report.macro_f1,
        })
    }

    /// Current state; `with_moments` embeds the optimizer section.
    pub fn checkpoint(&self, with_moments: bool) -> Checkpoint {
        Checkpoint {
            plan: self.plan,
            vocab: self.vocab_ref.clone(),
            seed: self.config.seed,
            epoch: self.epoch,
            params: self.params.clone(),
            optimizer: with_moments.then(|| self.moments.clone()),
        }
    }

    /// Trains until `epochs` are done or validation macro-F1 has not improved
    /// for `early_stop_patience` consecutive epochs.
    pub fn run(mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainResult, TrainError> {
        let mut history = Vec::new();
        let mut stopper = EarlyStopping::new(self.config.early_stop_patience);
        let mut best: Option<Checkpoint> = None;
        let mut stopped_early = false;
        while self.epoch < self.config.epochs {
            let record = self.run_epoch()?;
            on_epoch(&record);
            if stopper.observe(record.epoch, record.f1) {
                best = Some(self.checkpoint(false));
            }
            history.push(record);
            if stopper.should_stop() && self.epoch < self.config.epochs {
                stopped_early = true;
                break;
            }
        }
        let best = best.ok_or(TrainError::InvalidConfig("no epochs left to run".into()))?;
        let best_epoch = stopper.best_epoch().expect("observed at least one epoch");
        Ok(TrainResult {
            best,
            best_epoch,
            history,
            config: self.config.clone(),
            stopped_early,
            last: self.checkpoint(true),
        })
    }
}

/// Trains a fresh model. See [`Trainer::run`].
pub fn train(
    train: &Corpus,
    val: &Corpus,
    vocab: &Vocab,
    plan: &WindowPlan,
    mconfig: &ModelConfig,
    tconfig: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    Trainer::new(train, val, vocab, plan, mconfig, tconfig)?.run(|_| {})
}
