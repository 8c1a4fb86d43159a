//! Sliding-window decomposition of long token sequences and aggregation of
//! per-window logits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::NUM_CLASSES;
use crate::tokenizer::{TokenSeq, PAD};

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("invalid window plan: need 0 < stride ({stride}) <= window_len ({window_len}) <= model_max ({model_max})")]
    InvalidPlan {
        window_len: usize,
        stride: usize,
        model_max: usize,
    },
    #[error("cannot aggregate an empty list of window logits")]
    EmptyInput,
    #[error("non-finite window logits")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window_len: usize,
    pub stride: usize,
    pub model_max: usize,
}

impl Default for WindowPlan {
    fn default() -> Self {
        WindowPlan {
            window_len: 200,
            stride: 100,
            model_max: 512,
        }
    }
}

impl WindowPlan {
    pub fn new(window_len: usize, stride: usize, model_max: usize) -> Result<Self, WindowError> {
        let plan = WindowPlan {
            window_len,
            stride,
            model_max,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), WindowError> {
        if 0 < self.stride && self.stride <= self.window_len && self.window_len <= self.model_max {
            Ok(())
        } else {
            Err(WindowError::InvalidPlan {
                window_len: self.window_len,
                stride: self.stride,
                model_max: self.model_max,
            })
        }
    }

    /// Number of windows for a sequence of `len` tokens.
    pub fn window_count(&self, len: usize) -> usize {
        if len <= self.window_len {
            1
        } else {
            (len - self.window_len).div_ceil(self.stride) + 1
        }
    }
}

/// A fixed-length slice of a token sequence. `mask[i]` is true for real
/// tokens; the trues always form a non-empty prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl Window {
    /// Builds a window from real tokens, PAD-filling up to `len`.
    pub fn padded(tokens: &[u32], len: usize) -> Self {
        debug_assert!(!tokens.is_empty() && tokens.len() <= len);
        let mut ids = tokens.to_vec();
        ids.resize(len, PAD);
        let mut mask = vec![true; tokens.len()];
        mask.resize(len, false);
        Window { ids, mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().take_while(|&&m| m).count()
    }
}

/// Window `i` covers `[i * stride, i * stride + window_len)`.
pub fn chunk(seq: &TokenSeq, plan: &WindowPlan) -> Vec<Window> {
    let count = plan.window_count(seq.len());
    (0..count)
        .map(|i| {
            let start = i * plan.stride;
            let end = (start + plan.window_len).min(seq.len());
            Window::padded(&seq.ids[start..end], plan.window_len)
        })
        .collect()
}

/// How per-window logits combine into one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    MeanLogits,
    /// Log of the mean softmax probability; argmax-equivalent to averaging
    /// probabilities.
    MeanProbs,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean_logits" => Ok(Aggregation::MeanLogits),
            "mean_probs" => Ok(Aggregation::MeanProbs),
            _ => Err(format!("unknown aggregation {s:?}")),
        }
    }
}

/// Component-wise arithmetic mean of the window logits.
pub fn aggregate(window_logits: &[[f32; NUM_CLASSES]]) -> Result<[f32; NUM_CLASSES], WindowError> {
    if window_logits.is_empty() {
        return Err(WindowError::EmptyInput);
    }
    if window_logits.iter().flatten().any(|v| !v.is_finite()) {
        return Err(WindowError::NonFinite);
    }
    let mut sum = [0f64; NUM_CLASSES];
    for l in window_logits {
        for (s, v) in sum.iter_mut().zip(l) {
            *s += f64::from(*v);
        }
    }
    let n = window_logits.len() as f64;
    Ok(sum.map(|s| (s / n) as f32))
}

pub fn aggregate_with(
    window_logits: &[[f32; NUM_CLASSES]],
    how: Aggregation,
) -> Result<[f32; NUM_CLASSES], WindowError> {
    match how {
        Aggregation::MeanLogits => aggregate(window_logits),
        Aggregation::MeanProbs => {
            aggregate(window_logits)?; // validation
            let probs: Vec<[f32; NUM_CLASSES]> = window_logits
                .iter()
                .map(crate::model::softmax)
                .collect();
            let mean = aggregate(&probs)?;
            Ok(mean.map(|p| p.max(f32::MIN_POSITIVE).ln()))
        }
    }
}
