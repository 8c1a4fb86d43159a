//! Binary checkpoint format.
//!
//! ```text
//! "ROSE"            4 bytes magic
//! version           u32 LE
//! header_len        u64 LE
//! header            JSON (config, window plan, vocab reference, seed, epoch,
//!                   tensor manifest, optional optimizer section)
//! tensor data       f32 LE, manifest order
//! [moments]         if header.optimizer is set: first moments then second
//!                   moments, each in manifest order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::{tensor_specs, Parameters};
use super::{ModelConfig, ModelError};
use crate::tokenizer::Vocab;
use crate::windowing::WindowPlan;

pub const MAGIC: &[u8; 4] = b"ROSE";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint is truncated: {0}")]
    TruncatedFile(String),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint tensors: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabRef {
    pub path: String,
    pub sha256: String,
    pub size: usize,
}

impl VocabRef {
    pub fn of(vocab: &Vocab, path: impl Into<String>) -> Self {
        VocabRef {
            path: path.into(),
            sha256: vocab.fingerprint(),
            size: vocab.len(),
        }
    }

    pub fn matches(&self, vocab: &Vocab) -> bool {
        self.size == vocab.len() && self.sha256 == vocab.fingerprint()
    }
}

/// AdamW moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerMoments {
    pub step: u64,
    pub first: Parameters<f32>,
    pub second: Parameters<f32>,
}

impl OptimizerMoments {
    pub fn new(config: &ModelConfig) -> Self {
        OptimizerMoments {
            step: 0,
            first: Parameters::zeros(config),
            second: Parameters::zeros(config),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub plan: WindowPlan,
    pub vocab: VocabRef,
    pub seed: u64,
    pub epoch: usize,
    pub params: Parameters<f32>,
    pub optimizer: Option<OptimizerMoments>,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    plan: WindowPlan,
    vocab: VocabRef,
    seed: u64,
    epoch: usize,
    tensors: Vec<ManifestEntry>,
    optimizer: Option<OptimizerHeader>,
}

fn push_tensors(out: &mut Vec<u8>, params: &Parameters<f32>) {
    for t in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>, CheckpointError> {
    let header = Header {
        config: ckpt.config().clone(),
        plan: ckpt.plan,
        vocab: ckpt.vocab.clone(),
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        tensors: ckpt
            .params
            .specs()
            .into_iter()
            .map(|s| ManifestEntry {
                name: s.name,
                shape: s.shape,
            })
            .collect(),
        optimizer: ckpt
            .optimizer
            .as_ref()
            .map(|o| OptimizerHeader { step: o.step }),
    };
    let json = serde_json::to_vec(&header)?;
    let n = ckpt.params.num_values();
    let moments = if ckpt.optimizer.is_some() { 3 } else { 1 };
    let mut out = Vec::with_capacity(16 + json.len() + 4 * n * moments);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_tensors(&mut out, &ckpt.params);
    if let Some(o) = &ckpt.optimizer {
        push_tensors(&mut out, &o.first);
        push_tensors(&mut out, &o.second);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::TruncatedFile(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn tensors(&mut self, config: &ModelConfig, what: &str) -> Result<Parameters<f32>, CheckpointError> {
        let mut tensors = Vec::new();
        for spec in tensor_specs(config) {
            let raw = self.take(spec.numel() * 4, &format!("{what} {}", spec.name))?;
            tensors.push(
                raw.chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect(),
            );
        }
        Ok(Parameters::from_flat(config, tensors)?)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let header_len = u64::from_le_bytes(r.take(8, "header length")?.try_into().expect("8 bytes"));
    let header_len = usize::try_from(header_len)
        .map_err(|_| CheckpointError::TruncatedFile("header length overflows".into()))?;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)?;
    header.config.validate()?;
    let specs = tensor_specs(&header.config);
    let manifest_ok = specs.len() == header.tensors.len()
        && specs
            .iter()
            .zip(&header.tensors)
            .all(|(s, m)| s.name == m.name && s.shape == m.shape);
    if !manifest_ok {
        return Err(ModelError::ShapeMismatch("tensor manifest does not match config".into()).into());
    }
    let params = r.tensors(&header.config, "tensor")?;
    let optimizer = match header.optimizer {
        Some(o) => Some(OptimizerMoments {
            step: o.step,
            first: r.tensors(&header.config, "first moment")?,
            second: r.tensors(&header.config, "second moment")?,
        }),
        None => None,
    };
    if r.pos != bytes.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} trailing bytes after tensor data",
            bytes.len() - r.pos
        ))
        .into());
    }
    Ok(Checkpoint {
        plan: header.plan,
        vocab: header.vocab,
        seed: header.seed,
        epoch: header.epoch,
        params,
        optimizer,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    from_bytes(&fs::read(path)?)
}
