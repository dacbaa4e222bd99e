use serde::{Deserialize, Serialize};

use super::{AdamConfig, InitMode};
use crate::error::{Error, Result};
use crate::lm::{count_params, ModelConfig};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdaptStrategy {
    None,
    FineTune,
    PromptTune { prompt_size: usize, init: InitMode },
}

impl AdaptStrategy {
    pub fn kind(&self) -> &'static str {
        match self {
            AdaptStrategy::None => "none",
            AdaptStrategy::FineTune => "fine_tune",
            AdaptStrategy::PromptTune { .. } => "prompt_tune",
        }
    }

    pub fn label(&self) -> String {
        match self {
            AdaptStrategy::PromptTune { prompt_size, .. } => format!("prompt_tune(P={prompt_size})"),
            other => other.kind().to_string(),
        }
    }

    pub fn prompt_size(&self) -> Option<usize> {
        match self {
            AdaptStrategy::PromptTune { prompt_size, .. } => Some(*prompt_size),
            _ => None,
        }
    }

    /// Sort key for report rows: none, prompt sizes ascending, fine tuning.
    pub fn order_key(&self) -> (u8, usize) {
        match self {
            AdaptStrategy::None => (0, 0),
            AdaptStrategy::PromptTune { prompt_size, .. } => (1, *prompt_size),
            AdaptStrategy::FineTune => (2, 0),
        }
    }

    pub fn trainable_params(&self, config: &ModelConfig) -> usize {
        match self {
            AdaptStrategy::None => 0,
            AdaptStrategy::FineTune => count_params(config).total,
            AdaptStrategy::PromptTune { prompt_size, .. } => prompt_size * config.d_model,
        }
    }

    pub fn trainable_fraction(&self, config: &ModelConfig) -> f64 {
        trainable_fraction(self, config)
    }
}

/// Share of the base parameter count that the strategy trains.
pub fn trainable_fraction(strategy: &AdaptStrategy, config: &ModelConfig) -> f64 {
    match strategy {
        AdaptStrategy::FineTune => 1.0,
        other => other.trainable_params(config) as f64 / count_params(config).total as f64,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Hyperparams {
    pub fn prompt_tuning() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            max_epochs: 50,
            patience: 3,
            seed: 0,
        }
    }

    pub fn fine_tuning() -> Self {
        Self {
            learning_rate: 3e-4,
            ..Self::prompt_tuning()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let reals = [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
        ];
        for (name, x) in reals {
            if !(x.is_finite() && x > 0.0) {
                problems.push(format!("{name} must be positive, got {x}"));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if b >= 1.0 {
                problems.push(format!("{name} must be below 1, got {b}"));
            }
        }
        for (name, n) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ] {
            if n == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        if self.patience > self.max_epochs {
            problems.push(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
