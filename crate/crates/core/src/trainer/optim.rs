//! Cross-entropy loss and the AdamW update.

use crate::corpus::{RefactoringLabel, NUM_CLASSES};
use crate::model::params::TensorKind;
use crate::model::{OptimizerMoments, Parameters, Scalar};

use super::{TrainConfig, TrainError};

/// `-log softmax(logits)[label]`, via log-sum-exp.
pub fn cross_entropy<T: Scalar>(logits: &[T; NUM_CLASSES], label: RefactoringLabel) -> Result<T, TrainError> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteInput);
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    Ok(lse - logits[label.code()])
}

/// Gradient of [`cross_entropy`] with respect to the logits:
/// `softmax(logits) - onehot(label)`.
pub fn cross_entropy_grad<T: Scalar>(logits: &[T; NUM_CLASSES], label: RefactoringLabel) -> [T; NUM_CLASSES] {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps = logits.map(|v| (v - max).exp());
    let sum: T = exps.iter().copied().sum();
    let mut g = exps.map(|e| e / sum);
    g[label.code()] = g[label.code()] - T::one();
    g
}

/// Scalar AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamW {
    fn from(c: &TrainConfig) -> Self {
        AdamW {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
            weight_decay: c.weight_decay,
        }
    }
}

impl AdamW {
    /// One update of a single tensor at 1-based `step`. `decay` selects
    /// whether decoupled weight decay applies to this tensor.
    pub fn update(
        &self,
        theta: &mut [f32],
        grad: &[f32],
        m: &mut [f32],
        v: &mut [f32],
        step: u64,
        decay: bool,
    ) {
        let bc1 = 1.0 - self.beta1.powi(step as i32);
        let bc2 = 1.0 - self.beta2.powi(step as i32);
        let wd = if decay { self.weight_decay } else { 0.0 };
        for i in 0..theta.len() {
            let g = f64::from(grad[i]);
            let mi = self.beta1 * f64::from(m[i]) + (1.0 - self.beta1) * g;
            let vi = self.beta2 * f64::from(v[i]) + (1.0 - self.beta2) * g * g;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            let t = f64::from(theta[i]);
            let updated = t
                - self.learning_rate * (m_hat / (v_hat.sqrt() + self.epsilon))
                - self.learning_rate * wd * t;
            theta[i] = updated as f32;
        }
    }
}

/// Applies one AdamW step to every tensor. Biases and layer-norm parameters
/// are excluded from weight decay.
pub fn adamw_step(
    params: &mut Parameters<f32>,
    grads: &Parameters<f32>,
    state: &mut OptimizerMoments,
    opt: &AdamW,
) -> Result<(), TrainError> {
    if grads.config != params.config
        || state.first.config != params.config
        || state.second.config != params.config
    {
        return Err(TrainError::ShapeMismatch);
    }
    state.step += 1;
    let step = state.step;
    let specs = params.specs();
    let grads = grads.tensors();
    let firsts = state.first.tensors_mut();
    let seconds = state.second.tensors_mut();
    for ((((theta, g), m), v), spec) in params
        .tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(firsts)
        .zip(seconds)
        .zip(&specs)
    {
        let decay = spec.kind.decays();
        debug_assert!(!matches!(spec.kind, TensorKind::Bias | TensorKind::NormGain) || !decay);
        opt.update(theta, g, m, v, step, decay);
    }
    Ok(())
}
