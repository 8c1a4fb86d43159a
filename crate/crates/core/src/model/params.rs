use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linalg::Scalar;
use super::{ModelConfig, ModelError};

const INIT_STD: f64 = 0.02;

/// What a tensor is, which decides initialization and weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Embedding,
    Weight,
    Bias,
    NormGain,
    NormBias,
}

impl TensorKind {
    pub fn decays(self) -> bool {
        matches!(self, TensorKind::Embedding | TensorKind::Weight)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: TensorKind,
}

impl TensorSpec {
    fn new(name: impl Into<String>, shape: &[usize], kind: TensorKind) -> Self {
        TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            kind,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gain: Vec<T>,
    pub ln1_bias: Vec<T>,
    pub wq: Vec<T>,
    pub bq: Vec<T>,
    pub wk: Vec<T>,
    pub bk: Vec<T>,
    pub wv: Vec<T>,
    pub bv: Vec<T>,
    pub wo: Vec<T>,
    pub bo: Vec<T>,
    pub ln2_gain: Vec<T>,
    pub ln2_bias: Vec<T>,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T> LayerParams<T> {
    fn tensors(&self) -> [&Vec<T>; 16] {
        [
            &self.ln1_gain, &self.ln1_bias, &self.wq, &self.bq, &self.wk, &self.bk, &self.wv,
            &self.bv, &self.wo, &self.bo, &self.ln2_gain, &self.ln2_bias, &self.w1, &self.b1,
            &self.w2, &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<T>; 16] {
        [
            &mut self.ln1_gain, &mut self.ln1_bias, &mut self.wq, &mut self.bq, &mut self.wk,
            &mut self.bk, &mut self.wv, &mut self.bv, &mut self.wo, &mut self.bo,
            &mut self.ln2_gain, &mut self.ln2_bias, &mut self.w1, &mut self.b1, &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// Every trainable tensor of the encoder. Matrices are row-major and applied
/// as `x · W` (shape `[in, out]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub config: ModelConfig,
    pub token_embedding: Vec<T>,
    pub position_embedding: Vec<T>,
    pub layers: Vec<LayerParams<T>>,
    pub classifier_weight: Vec<T>,
    pub classifier_bias: Vec<T>,
}

/// Canonical tensor manifest for a config. Order matches
/// [`Parameters::tensors`].
pub fn tensor_specs(config: &ModelConfig) -> Vec<TensorSpec> {
    use TensorKind::*;
    let (d, f, c) = (config.d_model, config.d_ff, config.n_classes);
    let mut specs = vec![
        TensorSpec::new("embeddings.token", &[config.vocab_size, d], Embedding),
        TensorSpec::new("embeddings.position", &[config.max_pos, d], Embedding),
    ];
    for l in 0..config.n_layers {
        let p = format!("layers.{l}");
        specs.extend([
            TensorSpec::new(format!("{p}.attn_norm.gain"), &[d], NormGain),
            TensorSpec::new(format!("{p}.attn_norm.bias"), &[d], NormBias),
            TensorSpec::new(format!("{p}.attn.query.weight"), &[d, d], Weight),
            TensorSpec::new(format!("{p}.attn.query.bias"), &[d], Bias),
            TensorSpec::new(format!("{p}.attn.key.weight"), &[d, d], Weight),
            TensorSpec::new(format!("{p}.attn.key.bias"), &[d], Bias),
            TensorSpec::new(format!("{p}.attn.value.weight"), &[d, d], Weight),
            TensorSpec::new(format!("{p}.attn.value.bias"), &[d], Bias),
            TensorSpec::new(format!("{p}.attn.output.weight"), &[d, d], Weight),
            TensorSpec::new(format!("{p}.attn.output.bias"), &[d], Bias),
            TensorSpec::new(format!("{p}.ffn_norm.gain"), &[d], NormGain),
            TensorSpec::new(format!("{p}.ffn_norm.bias"), &[d], NormBias),
            TensorSpec::new(format!("{p}.ffn.up.weight"), &[d, f], Weight),
            TensorSpec::new(format!("{p}.ffn.up.bias"), &[f], Bias),
            TensorSpec::new(format!("{p}.ffn.down.weight"), &[f, d], Weight),
            TensorSpec::new(format!("{p}.ffn.down.bias"), &[d], Bias),
        ]);
    }
    specs.push(TensorSpec::new("classifier.weight", &[d, c], Weight));
    specs.push(TensorSpec::new("classifier.bias", &[c], Bias));
    specs
}

impl<T: Scalar> Parameters<T> {
    /// All-zero tensors with the config's shapes (gradient buffers, moments).
    pub fn zeros(config: &ModelConfig) -> Self {
        let specs = tensor_specs(config);
        Self::from_flat(
            config,
            specs.iter().map(|s| vec![T::zero(); s.numel()]).collect(),
        )
        .expect("shapes from specs")
    }

    /// Seeded initialization: matrices ~ N(0, 0.02), biases 0, norm gains 1.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, INIT_STD).expect("valid std");
        let tensors = tensor_specs(config)
            .iter()
            .map(|spec| {
                let n = spec.numel();
                match spec.kind {
                    TensorKind::Embedding | TensorKind::Weight => {
                        (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect()
                    }
                    TensorKind::NormGain => vec![T::one(); n],
                    TensorKind::Bias | TensorKind::NormBias => vec![T::zero(); n],
                }
            })
            .collect();
        Self::from_flat(config, tensors)
    }

    /// Assembles parameters from tensors in manifest order.
    pub fn from_flat(config: &ModelConfig, tensors: Vec<Vec<T>>) -> Result<Self, ModelError> {
        let specs = tensor_specs(config);
        if tensors.len() != specs.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&tensors) {
            if t.len() != spec.numel() {
                return Err(ModelError::ShapeMismatch(format!(
                    "{}: expected {} values, got {}",
                    spec.name,
                    spec.numel(),
                    t.len()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let token_embedding = next();
        let position_embedding = next();
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                ln1_gain: next(),
                ln1_bias: next(),
                wq: next(),
                bq: next(),
                wk: next(),
                bk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln2_gain: next(),
                ln2_bias: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            })
            .collect();
        Ok(Parameters {
            config: config.clone(),
            token_embedding,
            position_embedding,
            layers,
            classifier_weight: next(),
            classifier_bias: next(),
        })
    }

    pub fn specs(&self) -> Vec<TensorSpec> {
        tensor_specs(&self.config)
    }

    /// Tensors in manifest order.
    pub fn tensors(&self) -> Vec<&Vec<T>> {
        let mut out = vec![&self.token_embedding, &self.position_embedding];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.push(&self.classifier_weight);
        out.push(&self.classifier_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.push(&mut self.classifier_weight);
        out.push(&mut self.classifier_bias);
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Converts every value to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters::from_flat(
            &self.config,
            self.tensors()
                .into_iter()
                .map(|t| t.iter().map(|v| U::from_f64(Scalar::to_f64(*v))).collect())
                .collect(),
        )
        .expect("same config")
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Parameters<T>, scale: T) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + scale * *y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v * factor;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}
