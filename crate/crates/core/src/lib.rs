//! Refactoring recommendation for architectural smells.
//!
//! A code fragment is tokenized, cut into overlapping windows, scored by a
//! small transformer encoder, and classified as needing Extract Method, Move
//! Class or Pull Up Method. The crate also carries the training loop,
//! hyperparameter search, cross-validation and every evaluation metric.

pub mod corpus;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tokenizer;
pub mod trainer;
pub mod windowing;

pub use corpus::{Corpus, RefactoringLabel, Sample, SmellKind};
pub use model::{ModelConfig, Parameters};
pub use tokenizer::Vocab;
pub use windowing::WindowPlan;
