//! Run configuration: defaults, then a `section.key = value` file, then the
//! `ROSE_SEED` environment variable, then command-line overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rose_core::model::ModelConfig;
use rose_core::tokenizer::DEFAULT_VOCAB_SIZE;
use rose_core::trainer::{HpSearchSpace, TrainConfig};
use rose_core::windowing::{Aggregation, WindowPlan};

pub const SEED_ENV: &str = "ROSE_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub plan: WindowPlan,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub search: HpSearchSpace,
    pub vocab_size: usize,
    pub balance: bool,
    pub k: usize,
    pub grouped: bool,
    pub aggregation: Aggregation,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            vocab: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            plan: WindowPlan::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            search: HpSearchSpace::default(),
            vocab_size: DEFAULT_VOCAB_SIZE,
            balance: false,
            k: 10,
            grouped: false,
            aggregation: Aggregation::MeanLogits,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn flag(key: &str, value: &str) -> Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("{key}: expected a boolean, got {value:?}")),
    }
}

impl RunConfig {
    #[cfg(test)]
    pub const KEYS: &'static [&'static str] = &[
        "paths.corpus",
        "paths.vocab",
        "paths.checkpoint",
        "paths.out_dir",
        "window.length",
        "window.stride",
        "window.model_max",
        "window.aggregation",
        "model.d_model",
        "model.n_heads",
        "model.n_layers",
        "model.d_ff",
        "model.max_pos",
        "model.dropout",
        "vocab.max_size",
        "train.learning_rate",
        "train.batch_size",
        "train.epochs",
        "train.weight_decay",
        "train.beta1",
        "train.beta2",
        "train.epsilon",
        "train.patience",
        "train.seed",
        "train.balance",
        "search.lr_grid",
        "search.batch_grid",
        "search.wd_grid",
        "search.budget",
        "kfold.k",
        "kfold.grouped",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key.trim() {
            "paths.corpus" => self.corpus = Some(PathBuf::from(v)),
            "paths.vocab" => self.vocab = Some(PathBuf::from(v)),
            "paths.checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "paths.out_dir" => self.out_dir = PathBuf::from(v),
            "window.length" => self.plan.window_len = num(key, v)?,
            "window.stride" => self.plan.stride = num(key, v)?,
            "window.model_max" => self.plan.model_max = num(key, v)?,
            "window.aggregation" => self.aggregation = v.parse()?,
            "model.d_model" => self.model.d_model = num(key, v)?,
            "model.n_heads" => self.model.n_heads = num(key, v)?,
            "model.n_layers" => self.model.n_layers = num(key, v)?,
            "model.d_ff" => self.model.d_ff = num(key, v)?,
            "model.max_pos" => self.model.max_pos = num(key, v)?,
            "model.dropout" => self.model.dropout_rate = num(key, v)?,
            "vocab.max_size" => self.vocab_size = num(key, v)?,
            "train.learning_rate" => self.train.learning_rate = num(key, v)?,
            "train.batch_size" => self.train.batch_size = num(key, v)?,
            "train.epochs" => self.train.epochs = num(key, v)?,
            "train.weight_decay" => self.train.weight_decay = num(key, v)?,
            "train.beta1" => self.train.beta1 = num(key, v)?,
            "train.beta2" => self.train.beta2 = num(key, v)?,
            "train.epsilon" => self.train.epsilon = num(key, v)?,
            "train.patience" => self.train.early_stop_patience = num(key, v)?,
            "train.seed" => self.train.seed = num(key, v)?,
            "train.balance" => self.balance = flag(key, v)?,
            "search.lr_grid" => self.search.lr_grid = list(key, v)?,
            "search.batch_grid" => self.search.batch_grid = list(key, v)?,
            "search.wd_grid" => self.search.wd_grid = list(key, v)?,
            "search.budget" => self.search.budget = num(key, v)?,
            "kfold.k" => self.k = num(key, v)?,
            "kfold.grouped" => self.grouped = flag(key, v)?,
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Applies a config file. Blank lines and lines starting with `#` are
    /// skipped; a `[section]` header prefixes bare keys that follow it.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            let key = key.trim();
            let full = if key.contains('.') || section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            self.set(&full, value).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.apply_text(&text)
            .map_err(|e| format!("{}: {e}", path.display()))
    }

    /// `ROSE_SEED`, if set, replaces the seed from defaults or the file.
    pub fn apply_env_seed(&mut self, value: Option<String>) -> Result<(), String> {
        if let Some(v) = value {
            self.train.seed = num(SEED_ENV, &v)?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<(), String> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| format!("--set expects key=value, got {pair:?}"))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Checks the numeric constraints owned by the core modules.
    pub fn validate(&self) -> Result<(), String> {
        self.plan.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        if self.vocab_size <= rose_core::tokenizer::NUM_SPECIALS {
            return Err("vocab.max_size must exceed the number of special tokens".into());
        }
        if self.k < 2 {
            return Err("kfold.k must be at least 2".into());
        }
        let model = self.model_for(self.vocab_size);
        model.validate().map_err(|e| e.to_string())?;
        model.validate_plan(&self.plan).map_err(|e| e.to_string())?;
        Ok(())
    }

    /// Model config for a concrete vocabulary.
    pub fn model_for(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            ..self.model
        }
    }
}
