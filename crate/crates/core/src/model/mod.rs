//! Micro decoder-only transformer with causal attention.
//!
//! Everything runs in f64 with hand-written forward caches and backprop, so
//! gradients can be checked against central finite differences. Checkpoints
//! store tensors as 32-bit little-endian values.

mod attribution;
mod backward;
mod batch;
mod checkpoint;
mod config;
mod forward;
mod generate;
mod loss;
mod optim;
mod params;
mod tensor;

pub use attribution::attention_attribution;
pub use backward::backward;
pub use batch::TrainingBatch;
pub use checkpoint::{load_params, load_train_state, save_params, save_train_state, TrainState};
pub use config::{ModelConfig, TrainConfig};
pub use forward::{encode, encode_with_cache, extract_embedding, ForwardCache};
pub use generate::{generate_thoughts, SamplingConfig};
pub use loss::{grad, loss_ctr, loss_gen, loss_joint, LossParts};
pub use optim::{train_step, Optimizer, OptimizerState, StepStats};
pub use params::{init_params, LayerParams, LayerNormParams, ModelParams};
pub use tensor::Matrix;

use crate::error::{CoreError, Result};

/// A dense embedding extracted at the `<emb>` position.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, normalized: bool) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidConfig("embedding has non-finite values".into()));
        }
        Ok(EmbeddingVector { values, normalized })
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// L2-normalizes in place; zero vectors are left untouched.
pub fn l2_normalize(values: &mut [f64]) {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in values.iter_mut() {
            *v /= norm;
        }
    }
}
