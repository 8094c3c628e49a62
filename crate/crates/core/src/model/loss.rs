//! Generation loss, composite contrastive loss, and the joint objective.
//!
//! The joint loss encodes every sequence exactly once and feeds the shared
//! hidden states to both heads: next-token prediction over the thought span
//! (terminator included) and InfoNCE over the plain-query and
//! thought-augmented-query embeddings against a shared candidate list.

use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::model::backward::backward;
use crate::model::batch::TrainingBatch;
use crate::model::config::TrainConfig;
use crate::model::forward::{encode_with_cache, ForwardCache};
use crate::model::params::ModelParams;
use crate::model::tensor::Matrix;
use crate::textproc::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub joint: f64,
    pub gen: f64,
    pub ctr: f64,
}

struct Encoded {
    hidden: Matrix,
    cache: ForwardCache,
}

struct BatchForward {
    triplets: Vec<Encoded>,
    queries: Vec<Encoded>,
    positives: Vec<Encoded>,
    negatives: Vec<Vec<Encoded>>,
}

fn forward_group(params: &ModelParams, seqs: &[TokenSequence]) -> Result<Vec<Encoded>> {
    seqs.par_iter()
        .map(|s| encode_with_cache(params, s).map(|(hidden, cache)| Encoded { hidden, cache }))
        .collect()
}

fn forward_batch(params: &ModelParams, batch: &TrainingBatch) -> Result<BatchForward> {
    Ok(BatchForward {
        triplets: forward_group(params, &batch.triplets)?,
        queries: forward_group(params, &batch.queries)?,
        positives: forward_group(params, &batch.positives)?,
        negatives: batch
            .hard_negatives
            .iter()
            .map(|negs| forward_group(params, negs))
            .collect::<Result<_>>()?,
    })
}

/// Positions whose tokens carry generation-loss terms: the thought span plus
/// the `</s>` terminator. Query tokens contribute no terms.
fn gen_targets(seq: &TokenSequence) -> std::ops::RangeInclusive<usize> {
    seq.thought_span.start..=seq.thought_span.end
}

fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits[target] - lse
}

fn gen_loss_for_item(params: &ModelParams, seq: &TokenSequence, hidden: &Matrix) -> f64 {
    let w = params.output_weight();
    let mut total = 0.0;
    for pos in gen_targets(seq) {
        let target = seq.ids[pos];
        let h = hidden.row(pos - 1);
        let logits: Vec<f64> = (0..w.rows)
            .map(|v| w.row(v).iter().zip(h).map(|(a, b)| a * b).sum())
            .collect();
        total -= log_softmax_at(&logits, target);
    }
    total
}

/// Mean over the batch of the summed next-token NLL across each item's
/// thought span and terminator.
pub fn loss_gen(params: &ModelParams, batch: &TrainingBatch) -> Result<f64> {
    let fwd = forward_group(params, &batch.triplets)?;
    gen_loss(params, batch, &fwd)
}

fn gen_loss(params: &ModelParams, batch: &TrainingBatch, fwd: &[Encoded]) -> Result<f64> {
    if batch.triplets.iter().all(|s| s.thought_span.is_empty()) {
        return Err(CoreError::EmptyThoughtSpans);
    }
    let total: f64 = batch
        .triplets
        .iter()
        .zip(fwd)
        .map(|(seq, enc)| gen_loss_for_item(params, seq, &enc.hidden))
        .sum();
    Ok(total / batch.len() as f64)
}

fn embedding_of(enc: &Encoded, seq: &TokenSequence, normalize: bool) -> Vec<f64> {
    let pos = seq.emb_pos.expect("batch sequences carry <emb>");
    let mut v = enc.hidden.row(pos).to_vec();
    if normalize {
        crate::model::l2_normalize(&mut v);
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct CtrForward {
    /// Per item: embeddings of the plain query and the thought-augmented query.
    query_embs: Vec<Vec<f64>>,
    triplet_embs: Vec<Vec<f64>>,
    /// Per item: candidate embeddings — all in-batch positives first (own
    /// positive at the item's index), then the item's own hard negatives.
    candidates: Vec<Vec<Vec<f64>>>,
}

fn ctr_forward(batch: &TrainingBatch, fwd: &BatchForward, cfg: &TrainConfig) -> CtrForward {
    let b = batch.len();
    let positive_embs: Vec<Vec<f64>> = (0..b)
        .map(|i| embedding_of(&fwd.positives[i], &batch.positives[i], cfg.normalize))
        .collect();
    let mut candidates = Vec::with_capacity(b);
    for i in 0..b {
        let mut cands = positive_embs.clone();
        for (j, neg) in fwd.negatives[i].iter().enumerate() {
            cands.push(embedding_of(neg, &batch.hard_negatives[i][j], cfg.normalize));
        }
        candidates.push(cands);
    }
    CtrForward {
        query_embs: (0..b)
            .map(|i| embedding_of(&fwd.queries[i], &batch.queries[i], cfg.normalize))
            .collect(),
        triplet_embs: (0..b)
            .map(|i| embedding_of(&fwd.triplets[i], &batch.triplets[i], cfg.normalize))
            .collect(),
        candidates,
    }
}

fn ctr_loss_value(ctr: &CtrForward, tau: f64) -> Result<f64> {
    let b = ctr.query_embs.len();
    let mut total = 0.0;
    for i in 0..b {
        let cands = &ctr.candidates[i];
        if cands.is_empty() {
            return Err(CoreError::NoCandidates);
        }
        for q in [&ctr.query_embs[i], &ctr.triplet_embs[i]] {
            let scores: Vec<f64> = cands.iter().map(|c| dot(q, c) / tau).collect();
            total -= log_softmax_at(&scores, i);
        }
    }
    Ok(total / b as f64)
}

/// Composite InfoNCE: for each item, the plain-query term plus the
/// thought-augmented-query term over {own positive, other in-batch
/// positives, own hard negatives}; batch mean.
pub fn loss_ctr(params: &ModelParams, batch: &TrainingBatch, cfg: &TrainConfig) -> Result<f64> {
    let fwd = forward_batch(params, batch)?;
    ctr_loss_value(&ctr_forward(batch, &fwd, cfg), cfg.tau)
}

/// λ·L_gen + (1−λ)·L_ctr from one shared encode pass per sequence.
pub fn loss_joint(
    params: &ModelParams,
    batch: &TrainingBatch,
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<LossParts> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CoreError::LambdaOutOfRange(lambda));
    }
    let fwd = forward_batch(params, batch)?;
    let gen = gen_loss(params, batch, &fwd.triplets)?;
    let ctr = ctr_loss_value(&ctr_forward(batch, &fwd, cfg), cfg.tau)?;
    Ok(LossParts { joint: lambda * gen + (1.0 - lambda) * ctr, gen, ctr })
}

/// Gradient of an embedding through the optional L2 normalization.
/// With u = e/‖e‖: de = (du − u·(u⊤du)) / ‖e‖.
fn normalize_backward(e: &[f64], u: &[f64], du: &[f64]) -> Vec<f64> {
    let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return du.to_vec();
    }
    let proj = dot(u, du);
    u.iter().zip(du).map(|(&ui, &dui)| (dui - ui * proj) / norm).collect()
}

/// Joint loss and its gradient with respect to every parameter. Returns the
/// loss parts along with a `ModelParams`-shaped gradient.
pub fn grad(
    params: &ModelParams,
    batch: &TrainingBatch,
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<(LossParts, ModelParams)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CoreError::LambdaOutOfRange(lambda));
    }
    let b = batch.len();
    let fwd = forward_batch(params, batch)?;
    let mut grads = params.zeros_like();

    // Per-sequence hidden-state gradients, same layout as the forward groups.
    let mut d_triplets: Vec<Matrix> =
        fwd.triplets.iter().map(|e| Matrix::zeros(e.hidden.rows, e.hidden.cols)).collect();
    let mut d_queries: Vec<Matrix> =
        fwd.queries.iter().map(|e| Matrix::zeros(e.hidden.rows, e.hidden.cols)).collect();
    let mut d_positives: Vec<Matrix> =
        fwd.positives.iter().map(|e| Matrix::zeros(e.hidden.rows, e.hidden.cols)).collect();
    let mut d_negatives: Vec<Vec<Matrix>> = fwd
        .negatives
        .iter()
        .map(|negs| negs.iter().map(|e| Matrix::zeros(e.hidden.rows, e.hidden.cols)).collect())
        .collect();

    // Generation head over the shared triplet encodings.
    let gen = gen_loss(params, batch, &fwd.triplets)?;
    let gen_scale = lambda / b as f64;
    let w = params.output_weight();
    let mut d_w_out = Matrix::zeros(w.rows, w.cols);
    for (i, seq) in batch.triplets.iter().enumerate() {
        let hidden = &fwd.triplets[i].hidden;
        for pos in gen_targets(seq) {
            let target = seq.ids[pos];
            let h = hidden.row(pos - 1);
            let mut logits: Vec<f64> =
                (0..w.rows).map(|v| dot(w.row(v), h)).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|v| (v - max).exp()).sum();
            for (v, logit) in logits.iter_mut().enumerate() {
                let p = (*logit - max).exp() / denom;
                let dlogit = (p - if v == target { 1.0 } else { 0.0 }) * gen_scale;
                *logit = dlogit; // reuse the buffer for dlogits
            }
            let dh = d_triplets[i].row_mut(pos - 1);
            for (v, &dlogit) in logits.iter().enumerate() {
                if dlogit == 0.0 {
                    continue;
                }
                let wrow = w.row(v);
                for (dhv, &wv) in dh.iter_mut().zip(wrow) {
                    *dhv += dlogit * wv;
                }
                let dwrow = d_w_out.row_mut(v);
                for (dwv, &hv) in dwrow.iter_mut().zip(h) {
                    *dwv += dlogit * hv;
                }
            }
        }
    }

    // Contrastive head. Raw (pre-normalization) embeddings are needed for
    // the normalize backward, so gather both.
    let ctrf = ctr_forward(batch, &fwd, cfg);
    let ctr = ctr_loss_value(&ctrf, cfg.tau)?;
    let raw_emb = |enc: &Encoded, seq: &TokenSequence| -> Vec<f64> {
        enc.hidden.row(seq.emb_pos.unwrap()).to_vec()
    };

    let ctr_scale = (1.0 - lambda) / b as f64;
    let mut d_query_emb: Vec<Vec<f64>> = ctrf.query_embs.iter().map(|e| vec![0.0; e.len()]).collect();
    let mut d_triplet_emb: Vec<Vec<f64>> =
        ctrf.triplet_embs.iter().map(|e| vec![0.0; e.len()]).collect();
    let mut d_positive_emb: Vec<Vec<f64>> = (0..b).map(|_| vec![0.0; params.config.d_model]).collect();
    let mut d_negative_emb: Vec<Vec<Vec<f64>>> = batch
        .hard_negatives
        .iter()
        .map(|negs| negs.iter().map(|_| vec![0.0; params.config.d_model]).collect())
        .collect();

    for i in 0..b {
        let cands = &ctrf.candidates[i];
        for (q_emb, d_q) in [
            (&ctrf.query_embs[i], &mut d_query_emb[i]),
            (&ctrf.triplet_embs[i], &mut d_triplet_emb[i]),
        ] {
            let scores: Vec<f64> = cands.iter().map(|c| dot(q_emb, c) / cfg.tau).collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = scores.iter().map(|v| (v - max).exp()).sum();
            for (c, cand) in cands.iter().enumerate() {
                let p = (scores[c] - max).exp() / denom;
                let ds = (p - if c == i { 1.0 } else { 0.0 }) * ctr_scale / cfg.tau;
                if ds == 0.0 {
                    continue;
                }
                for (dqv, &cv) in d_q.iter_mut().zip(cand) {
                    *dqv += ds * cv;
                }
                let d_cand = if c < b { &mut d_positive_emb[c] } else { &mut d_negative_emb[i][c - b] };
                for (dcv, &qv) in d_cand.iter_mut().zip(q_emb) {
                    *dcv += ds * qv;
                }
            }
        }
    }

    // Route embedding gradients into the hidden-state gradients, chaining
    // through L2 normalization when enabled.
    let route = |d_emb: &[f64], emb_norm: &[f64], enc: &Encoded, seq: &TokenSequence, dh: &mut Matrix| {
        let pos = seq.emb_pos.unwrap();
        let d_raw = if cfg.normalize {
            let raw = raw_emb(enc, seq);
            normalize_backward(&raw, emb_norm, d_emb)
        } else {
            d_emb.to_vec()
        };
        let row = dh.row_mut(pos);
        for (r, v) in row.iter_mut().zip(&d_raw) {
            *r += v;
        }
    };
    for i in 0..b {
        route(&d_query_emb[i], &ctrf.query_embs[i], &fwd.queries[i], &batch.queries[i], &mut d_queries[i]);
        route(
            &d_triplet_emb[i],
            &ctrf.triplet_embs[i],
            &fwd.triplets[i],
            &batch.triplets[i],
            &mut d_triplets[i],
        );
        route(
            &d_positive_emb[i],
            &ctrf.candidates[i][i],
            &fwd.positives[i],
            &batch.positives[i],
            &mut d_positives[i],
        );
        for (j, dn) in d_negative_emb[i].iter().enumerate() {
            route(
                dn,
                &ctrf.candidates[i][b + j],
                &fwd.negatives[i][j],
                &batch.hard_negatives[i][j],
                &mut d_negatives[i][j],
            );
        }
    }

    // Output-projection gradient: its own tensor when untied, folded into
    // the token embedding when tied.
    match &mut grads.out_proj {
        Some(g) => g.add_assign(&d_w_out),
        None => grads.tok_emb.add_assign(&d_w_out),
    }

    // Backprop each sequence through the transformer stack.
    for (enc, dh) in fwd.triplets.iter().zip(&d_triplets) {
        backward(params, &enc.cache, dh, &mut grads);
    }
    for (enc, dh) in fwd.queries.iter().zip(&d_queries) {
        backward(params, &enc.cache, dh, &mut grads);
    }
    for (enc, dh) in fwd.positives.iter().zip(&d_positives) {
        backward(params, &enc.cache, dh, &mut grads);
    }
    for (negs, dns) in fwd.negatives.iter().zip(&d_negatives) {
        for (enc, dh) in negs.iter().zip(dns) {
            backward(params, &enc.cache, dh, &mut grads);
        }
    }

    let parts = LossParts { joint: lambda * gen + (1.0 - lambda) * ctr, gen, ctr };
    if !parts.joint.is_finite() {
        return Err(CoreError::NonFiniteLoss { step: 0, value: parts.joint });
    }
    Ok((parts, grads))
}
