//! Random hyperparameter search over a learning-rate × batch-size ×
//! weight-decay grid, sampled without replacement.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{train, TrainConfig, TrainError, TrainResult};
use crate::corpus::Corpus;
use crate::metrics::fixed6;
use crate::model::ModelConfig;
use crate::tokenizer::Vocab;
use crate::windowing::WindowPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpSearchSpace {
    pub lr_grid: Vec<f64>,
    pub batch_grid: Vec<usize>,
    pub wd_grid: Vec<f64>,
    pub budget: usize,
}

impl Default for HpSearchSpace {
    fn default() -> Self {
        HpSearchSpace {
            lr_grid: vec![1e-5, 2e-5, 5e-5, 7e-5, 8e-5],
            batch_grid: vec![8, 16, 32],
            wd_grid: vec![0.0, 0.01, 0.1],
            budget: 40,
        }
    }
}

impl HpSearchSpace {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr_grid.is_empty() || self.batch_grid.is_empty() || self.wd_grid.is_empty() {
            return Err(TrainError::InvalidConfig("search grids must be non-empty".into()));
        }
        if self.budget == 0 {
            return Err(TrainError::InvalidConfig("search budget must be at least 1".into()));
        }
        Ok(())
    }

    /// Grid product in fixed nesting order (learning rate outermost).
    pub fn combinations(&self) -> Vec<(f64, usize, f64)> {
        let mut out = Vec::new();
        for &lr in &self.lr_grid {
            for &b in &self.batch_grid {
                for &wd in &self.wd_grid {
                    out.push((lr, b, wd));
                }
            }
        }
        out
    }

    /// The first `budget` configs of a seeded permutation of the grid: a
    /// uniform draw without replacement, capped at the grid size.
    pub fn draw(&self, base: &TrainConfig, seed: u64) -> Vec<TrainConfig> {
        let mut combos = self.combinations();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        combos.shuffle(&mut rng);
        combos
            .into_iter()
            .take(self.budget)
            .map(|(learning_rate, batch_size, weight_decay)| TrainConfig {
                learning_rate,
                batch_size,
                weight_decay,
                ..base.clone()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Trial {
    /// Position in draw order, 0-based.
    pub index: usize,
    pub config: TrainConfig,
    pub result: TrainResult,
}

impl Trial {
    pub fn to_json_value(&self) -> Value {
        json!({
            "config": self.config,
            "best_f1": fixed6(self.result.best_f1()),
            "best_epoch": self.result.best_epoch,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: usize,
    /// Trials in draw order.
    pub trials: Vec<Trial>,
}

impl SearchResult {
    pub fn best_trial(&self) -> &Trial {
        &self.trials[self.best]
    }

    pub fn best_config(&self) -> &TrainConfig {
        &self.best_trial().config
    }

    /// Trials by descending best validation macro-F1; ties keep draw order.
    pub fn leaderboard(&self) -> Vec<&Trial> {
        let mut board: Vec<&Trial> = self.trials.iter().collect();
        board.sort_by(|a, b| {
            b.result
                .best_f1()
                .partial_cmp(&a.result.best_f1())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        board
    }

    pub fn leaderboard_json(&self) -> String {
        let arr: Vec<Value> = self.leaderboard().iter().map(|t| t.to_json_value()).collect();
        let mut s = serde_json::to_string_pretty(&Value::Array(arr)).expect("serializable");
        s.push('\n');
        s
    }
}

/// Trains one model per drawn config; the winner has the highest best
/// validation macro-F1, earlier draws winning ties.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    space: &HpSearchSpace,
    seed: u64,
    train_set: &Corpus,
    val_set: &Corpus,
    vocab: &Vocab,
    plan: &WindowPlan,
    mconfig: &ModelConfig,
    base: &TrainConfig,
    mut on_trial: impl FnMut(&Trial),
) -> Result<SearchResult, TrainError> {
    space.validate()?;
    let mut trials: Vec<Trial> = Vec::new();
    let mut best = 0;
    for (index, config) in space.draw(base, seed).into_iter().enumerate() {
        let result = train(train_set, val_set, vocab, plan, mconfig, &config)?;
        let trial = Trial {
            index,
            config,
            result,
        };
        on_trial(&trial);
        if index > 0 && trial.result.best_f1() > trials[best].result.best_f1() {
            best = index;
        }
        trials.push(trial);
    }
    Ok(SearchResult { best, trials })
}
