//! Attention attribution from the embedding token.
//!
//! For a chosen layer, each position j gets the attention probability the
//! `<emb>` row assigns to j, summed over heads. Rows are softmax-normalized
//! per head, so the scores over all positions sum to the head count.

use crate::error::{CoreError, Result};
use crate::model::forward::encode_with_cache;
use crate::model::params::ModelParams;
use crate::textproc::TokenSequence;

pub fn attention_attribution(
    params: &ModelParams,
    seq: &TokenSequence,
    layer: usize,
) -> Result<Vec<f64>> {
    let emb_pos = seq.emb_pos.ok_or(CoreError::MissingEmbToken)?;
    if layer >= params.config.n_layers {
        return Err(CoreError::InvalidLayer { layer, n_layers: params.config.n_layers });
    }
    let (_, cache) = encode_with_cache(params, seq)?;
    let mut scores = vec![0.0; seq.ids.len()];
    for probs in cache.attention_probs(layer) {
        for (j, s) in scores.iter_mut().enumerate() {
            *s += probs.at(emb_pos, j);
        }
    }
    Ok(scores)
}
