//! A small transformer encoder with a linear classification head over the
//! first-position representation.

pub mod checkpoint;
pub mod encoder;
pub mod linalg;
pub mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, OptimizerMoments};
pub use encoder::{backward, forward, forward_cached, ForwardCache, Mode, MASK_PENALTY};
pub use linalg::Scalar;
pub use params::{tensor_specs, Parameters, TensorKind, TensorSpec};

use crate::corpus::RefactoringLabel;
pub use crate::corpus::NUM_CLASSES;
use crate::tokenizer::{encode, Vocab};
use crate::windowing::{aggregate_with, chunk, Aggregation, WindowError, WindowPlan};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: u32, vocab_size: usize },
    #[error("non-finite logits")]
    NonFiniteInput,
    #[error(transparent)]
    Window(#[from] WindowError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_pos: usize,
    pub n_classes: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: crate::tokenizer::DEFAULT_VOCAB_SIZE,
            d_model: 128,
            n_heads: 4,
            n_layers: 2,
            d_ff: 512,
            max_pos: 512,
            n_classes: NUM_CLASSES,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.vocab_size <= crate::tokenizer::NUM_SPECIALS {
            return bad(format!("vocab_size {} leaves no room for tokens", self.vocab_size));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_pos == 0 {
            return bad("dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_classes != NUM_CLASSES {
            return bad(format!("n_classes must be {NUM_CLASSES}"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} not in [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    /// Checks the config against a window plan.
    pub fn validate_plan(&self, plan: &WindowPlan) -> Result<(), ModelError> {
        plan.validate()?;
        if plan.window_len > self.max_pos {
            return Err(ModelError::InvalidConfig(format!(
                "window_len {} exceeds max_pos {}",
                plan.window_len, self.max_pos
            )));
        }
        Ok(())
    }
}

/// Numerically stable softmax over class logits.
pub fn softmax(logits: &[f32; NUM_CLASSES]) -> [f32; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps = logits.map(|v| f64::from(v - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| (e / sum) as f32)
}

pub fn predict_proba(logits: &[f32; NUM_CLASSES]) -> Result<[f32; NUM_CLASSES], ModelError> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteInput);
    }
    Ok(softmax(logits))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32; NUM_CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if values[c] > values[best] {
            best = c;
        }
    }
    best
}

/// Aggregated logits of a snippet across all of its windows (eval mode).
pub fn snippet_logits(
    params: &Parameters<f32>,
    vocab: &Vocab,
    plan: &WindowPlan,
    code: &str,
    how: Aggregation,
) -> Result<[f32; NUM_CLASSES], ModelError> {
    let seq = encode(code, vocab);
    let per_window = chunk(&seq, plan)
        .iter()
        .map(|w| forward(params, w, &mut Mode::Eval))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate_with(&per_window, how)?)
}

/// encode → chunk → forward per window → aggregate → softmax → argmax.
pub fn classify(
    params: &Parameters<f32>,
    vocab: &Vocab,
    plan: &WindowPlan,
    code: &str,
) -> Result<(RefactoringLabel, [f32; NUM_CLASSES]), ModelError> {
    classify_with(params, vocab, plan, code, Aggregation::MeanLogits)
}

pub fn classify_with(
    params: &Parameters<f32>,
    vocab: &Vocab,
    plan: &WindowPlan,
    code: &str,
    how: Aggregation,
) -> Result<(RefactoringLabel, [f32; NUM_CLASSES]), ModelError> {
    let logits = snippet_logits(params, vocab, plan, code, how)?;
    let probs = predict_proba(&logits)?;
    let label = RefactoringLabel::from_code(argmax(&logits)).expect("class index");
    Ok((label, probs))
}
