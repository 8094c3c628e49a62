//! Model shape and training hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    /// Share the token-embedding table as the output projection.
    pub tied_output: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, value) in dims {
            if value < 1 {
                return Err(CoreError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the generation loss in the joint objective.
    pub lambda: f64,
    /// Contrastive temperature dividing similarities.
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub n_hard_negatives: usize,
    pub max_thought_tokens: usize,
    pub k_thoughts: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Cosine mode: L2-normalize embeddings before the inner product.
    pub normalize: bool,
    /// "adam" or "sgd".
    pub optimizer: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.5,
            tau: 0.05,
            lr: 1e-4,
            batch_size: 64,
            n_hard_negatives: 15,
            max_thought_tokens: 256,
            k_thoughts: 4,
            epochs: 1,
            seed: 0,
            normalize: false,
            optimizer: "adam".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CoreError::LambdaOutOfRange(self.lambda));
        }
        if !(self.tau > 0.0) {
            return Err(CoreError::InvalidConfig(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lr > 0.0) {
            return Err(CoreError::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size < 1 {
            return Err(CoreError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.k_thoughts < 1 {
            return Err(CoreError::InvalidConfig("k_thoughts must be >= 1".into()));
        }
        if self.optimizer != "adam" && self.optimizer != "sgd" {
            return Err(CoreError::InvalidConfig(format!(
                "optimizer must be adam or sgd, got {}",
                self.optimizer
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            max_seq_len: 16,
            seed: 0,
            tied_output: false,
        }
    }

    #[test]
    fn divisibility_is_enforced() {
        let cfg = ModelConfig { d_model: 6, n_heads: 4, ..base() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_dim_is_rejected() {
        let cfg = ModelConfig { n_layers: 0, ..base() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn train_config_bounds() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.lambda = 1.5;
        assert!(matches!(cfg.validate(), Err(CoreError::LambdaOutOfRange(_))));
        cfg.lambda = 0.5;
        cfg.tau = 0.0;
        assert!(cfg.validate().is_err());
    }
}
