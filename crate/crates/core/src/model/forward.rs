//! Forward pass with per-layer caches for backprop.
//!
//! Pre-LN blocks: `x + attn(ln1(x))` then `x + ffn(ln2(x))`, a final layer
//! norm, and logits through the (possibly tied) output projection. Attention
//! is causally masked, so the hidden state at position j depends only on
//! ids[0..=j].

use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::model::params::{LayerNormParams, ModelParams};
use crate::model::tensor::Matrix;
use crate::model::EmbeddingVector;
use crate::textproc::TokenSequence;

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
pub(crate) struct LnCache {
    pub x_hat: Matrix,
    pub rstd: Vec<f64>,
    pub out: Matrix,
}

#[derive(Debug)]
pub(crate) struct LayerCache {
    pub ln1: LnCache,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Per-head attention probabilities, each seq_len x seq_len with zeros
    /// above the diagonal.
    pub attn_probs: Vec<Matrix>,
    pub ctx: Matrix,
    pub ln2: LnCache,
    pub ff_pre: Matrix,
    pub ff_act: Matrix,
}

#[derive(Debug)]
pub struct ForwardCache {
    pub(crate) ids: Vec<usize>,
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) final_ln: LnCache,
}

impl ForwardCache {
    /// Attention probabilities for one layer, one matrix per head.
    pub fn attention_probs(&self, layer: usize) -> &[Matrix] {
        &self.layers[layer].attn_probs
    }
}

fn layer_norm(x: &Matrix, ln: &LayerNormParams) -> LnCache {
    let d = x.cols;
    let mut x_hat = Matrix::zeros(x.rows, d);
    let mut out = Matrix::zeros(x.rows, d);
    let mut rstd = vec![0.0; x.rows];
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        let xh = x_hat.row_mut(r);
        for (i, &v) in row.iter().enumerate() {
            xh[i] = (v - mean) * rs;
        }
        let o = out.row_mut(r);
        for i in 0..d {
            o[i] = x_hat.at(r, i) * ln.gain[i] + ln.bias[i];
        }
    }
    LnCache { x_hat, rstd, out }
}

/// x @ w^T + b, with w stored [out x in].
pub(crate) fn linear(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut y = x.matmul_nt(w);
    for r in 0..y.rows {
        let row = y.row_mut(r);
        for (v, bi) in row.iter_mut().zip(b) {
            *v += bi;
        }
    }
    y
}

pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

pub(crate) fn gelu_deriv(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

/// Encodes one sequence, returning the final hidden states (seq_len x
/// d_model, after the final layer norm) and the cache backprop needs.
pub fn encode_with_cache(
    params: &ModelParams,
    seq: &TokenSequence,
) -> Result<(Matrix, ForwardCache)> {
    let cfg = &params.config;
    let len = seq.ids.len();
    if len == 0 {
        return Err(CoreError::InvalidConfig("cannot encode an empty sequence".into()));
    }
    if len > cfg.max_seq_len {
        return Err(CoreError::SequenceOverflow { len, max: cfg.max_seq_len });
    }
    for &id in &seq.ids {
        if id >= cfg.vocab_size {
            return Err(CoreError::TokenOutOfRange { id, vocab_size: cfg.vocab_size });
        }
    }

    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let d_head = cfg.d_head();
    let scale = 1.0 / (d_head as f64).sqrt();

    let mut x = Matrix::zeros(len, d);
    for (p, &id) in seq.ids.iter().enumerate() {
        let row = x.row_mut(p);
        let te = params.tok_emb.row(id);
        let pe = params.pos_emb.row(p);
        for i in 0..d {
            row[i] = te[i] + pe[i];
        }
    }

    let mut layer_caches = Vec::with_capacity(cfg.n_layers);
    for layer in &params.layers {
        let ln1 = layer_norm(&x, &layer.ln1);
        let q = linear(&ln1.out, &layer.wq, &layer.bq);
        let k = linear(&ln1.out, &layer.wk, &layer.bk);
        let v = linear(&ln1.out, &layer.wv, &layer.bv);

        let mut attn_probs = Vec::with_capacity(n_heads);
        let mut ctx = Matrix::zeros(len, d);
        for h in 0..n_heads {
            let hs = h * d_head;
            let mut probs = Matrix::zeros(len, len);
            for i in 0..len {
                // Causal mask: attend to positions 0..=i only.
                let qi = &q.row(i)[hs..hs + d_head];
                let mut scores = Vec::with_capacity(i + 1);
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    let kj = &k.row(j)[hs..hs + d_head];
                    let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    if s > max {
                        max = s;
                    }
                    scores.push(s);
                }
                let mut denom = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    denom += *s;
                }
                let prow = probs.row_mut(i);
                for (j, s) in scores.iter().enumerate() {
                    prow[j] = s / denom;
                }
                let crow = ctx.row_mut(i);
                for j in 0..=i {
                    let p = probs.at(i, j);
                    let vj = &v.row(j)[hs..hs + d_head];
                    for (c, vv) in crow[hs..hs + d_head].iter_mut().zip(vj) {
                        *c += p * vv;
                    }
                }
            }
            attn_probs.push(probs);
        }

        let attn_out = linear(&ctx, &layer.wo, &layer.bo);
        let mut x_mid = x;
        x_mid.add_assign(&attn_out);

        let ln2 = layer_norm(&x_mid, &layer.ln2);
        let ff_pre = linear(&ln2.out, &layer.w1, &layer.b1);
        let mut ff_act = ff_pre.clone();
        ff_act.data.iter_mut().for_each(|v| *v = gelu(*v));
        let ff_out = linear(&ff_act, &layer.w2, &layer.b2);

        let mut x_out = x_mid.clone();
        x_out.add_assign(&ff_out);

        layer_caches.push(LayerCache {
            ln1,
            q,
            k,
            v,
            attn_probs,
            ctx,
            ln2,
            ff_pre,
            ff_act,
        });
        x = x_out;
    }

    let final_ln = layer_norm(&x, &params.final_norm);
    let hidden = final_ln.out.clone();
    Ok((hidden, ForwardCache { ids: seq.ids.clone(), layers: layer_caches, final_ln }))
}

/// Encodes a batch; one hidden-state matrix per sequence. Items are
/// independent, so the batch is mapped in parallel with order preserved.
pub fn encode(params: &ModelParams, batch: &[TokenSequence]) -> Result<Vec<Matrix>> {
    batch
        .par_iter()
        .map(|seq| encode_with_cache(params, seq).map(|(h, _)| h))
        .collect()
}

/// Returns the hidden state at the sequence's `<emb>` position.
pub fn extract_embedding(
    hidden: &Matrix,
    seq: &TokenSequence,
    normalize: bool,
) -> Result<EmbeddingVector> {
    let pos = seq.emb_pos.ok_or(CoreError::MissingEmbToken)?;
    let mut values = hidden.row(pos).to_vec();
    if normalize {
        crate::model::l2_normalize(&mut values);
    }
    EmbeddingVector::new(values, normalize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::model::params::init_params;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 16,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 12,
            seed: 0,
            tied_output: false,
        }
    }

    fn seq(ids: Vec<usize>, emb: bool) -> TokenSequence {
        let emb_pos = if emb { Some(ids.len() - 1) } else { None };
        TokenSequence { ids, query_span: 0..0, thought_span: 0..0, emb_pos }
    }

    #[test]
    fn appending_a_token_leaves_earlier_states_unchanged() {
        let params = init_params(&tiny_config(), 1).unwrap();
        let short = seq(vec![1, 2, 3], false);
        let long = seq(vec![1, 2, 3, 9], false);
        let (h_short, _) = encode_with_cache(&params, &short).unwrap();
        let (h_long, _) = encode_with_cache(&params, &long).unwrap();
        for p in 0..3 {
            for i in 0..8 {
                assert!(
                    (h_short.at(p, i) - h_long.at(p, i)).abs() < 1e-9,
                    "position {p} changed when a later token was appended"
                );
            }
        }
    }

    #[test]
    fn identical_batch_items_encode_identically() {
        let params = init_params(&tiny_config(), 2).unwrap();
        let a = seq(vec![4, 5, 6], false);
        let b = seq(vec![4, 5, 6], false);
        let out = encode(&params, &[a, b]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn incremental_reencode_oracle() {
        // Oracle: re-encode each prefix independently; the last row of the
        // prefix encoding must match the full encoding at that position.
        let params = init_params(&tiny_config(), 3).unwrap();
        let ids = vec![1, 7, 2, 9, 4, 11];
        let full = encode_with_cache(&params, &seq(ids.clone(), false)).unwrap().0;
        for p in 1..=ids.len() {
            let prefix = encode_with_cache(&params, &seq(ids[..p].to_vec(), false)).unwrap().0;
            for i in 0..8 {
                assert!(
                    (prefix.at(p - 1, i) - full.at(p - 1, i)).abs() < 1e-6,
                    "prefix {p} disagrees at dim {i}"
                );
            }
        }
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let params = init_params(&tiny_config(), 0).unwrap();
        let err = encode_with_cache(&params, &seq(vec![1, 99], false)).unwrap_err();
        assert!(matches!(err, CoreError::TokenOutOfRange { id: 99, .. }));
    }

    #[test]
    fn overlong_sequences_are_rejected() {
        let params = init_params(&tiny_config(), 0).unwrap();
        let err = encode_with_cache(&params, &seq(vec![1; 13], false)).unwrap_err();
        assert!(matches!(err, CoreError::SequenceOverflow { len: 13, max: 12 }));
    }

    #[test]
    fn extract_takes_the_emb_row() {
        let params = init_params(&tiny_config(), 4).unwrap();
        let s = seq(vec![1, 2, 3], true);
        let (h, _) = encode_with_cache(&params, &s).unwrap();
        let e = extract_embedding(&h, &s, false).unwrap();
        assert_eq!(e.values, h.row(2).to_vec());
    }

    #[test]
    fn extract_without_emb_is_an_error() {
        let params = init_params(&tiny_config(), 4).unwrap();
        let s = seq(vec![1, 2, 3], false);
        let (h, _) = encode_with_cache(&params, &s).unwrap();
        assert!(matches!(
            extract_embedding(&h, &s, false),
            Err(CoreError::MissingEmbToken)
        ));
    }

    #[test]
    fn normalized_mode_has_unit_norm() {
        let params = init_params(&tiny_config(), 5).unwrap();
        let s = seq(vec![1, 2, 3, 4], true);
        let (h, _) = encode_with_cache(&params, &s).unwrap();
        let e = extract_embedding(&h, &s, true).unwrap();
        assert!((e.norm() - 1.0).abs() < 1e-6);
        assert!(e.normalized);
    }

    #[test]
    fn embedding_depends_only_on_the_emb_row() {
        let params = init_params(&tiny_config(), 6).unwrap();
        let s = seq(vec![1, 2, 3, 4], true);
        let (mut h, _) = encode_with_cache(&params, &s).unwrap();
        let before = extract_embedding(&h, &s, false).unwrap();
        for i in 0..h.cols {
            *h.at_mut(0, i) += 100.0;
            *h.at_mut(1, i) -= 3.0;
        }
        let after = extract_embedding(&h, &s, false).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let params = init_params(&tiny_config(), 7).unwrap();
        let s = seq(vec![1, 2, 3, 4, 5], false);
        let (_, cache) = encode_with_cache(&params, &s).unwrap();
        for layer in 0..2 {
            for probs in cache.attention_probs(layer) {
                for i in 0..5 {
                    let sum: f64 = probs.row(i).iter().sum();
                    assert!((sum - 1.0).abs() < 1e-12);
                    for j in i + 1..5 {
                        assert_eq!(probs.at(i, j), 0.0, "future position attended");
                    }
                }
            }
        }
    }
}
