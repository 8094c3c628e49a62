//! Training orchestration over a triplets file.
//!
//! Epochs shuffle the triplet order with a per-epoch seed; each batch joins
//! the rendered triplet, plain-query, positive-document, and hard-negative
//! sequences. Resuming continues from the absolute step counter, so an
//! interrupted run walks the same batch schedule as an uninterrupted one.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{CoreError, Result};
use crate::model::{
    train_step, LossParts, ModelParams, TrainConfig, TrainState, TrainingBatch,
};
use crate::synthesis::ThoughtTriplet;
use crate::textproc::{
    encode, render_document_sequence, render_query_only_sequence, render_training_sequence,
    SequenceLimits, TokenSequence, Vocab,
};

pub struct TrainOutcome {
    pub steps_run: u64,
    pub first_loss: Option<LossParts>,
    pub final_loss: Option<LossParts>,
    /// Parameters at the lowest-loss step.
    pub best: Option<(f64, ModelParams)>,
}

fn doc_sequence(
    corpus: &Corpus,
    doc_id: &str,
    vocab: &Vocab,
    limits: &SequenceLimits,
) -> Result<TokenSequence> {
    let doc = corpus.get(doc_id).ok_or_else(|| CoreError::UnknownDocId(doc_id.to_string()))?;
    let mut ids = encode(&doc.text, vocab);
    ids.truncate(limits.max_text_tokens);
    render_document_sequence(&ids, vocab, limits)
}

/// Renders one aligned batch from triplet records.
pub fn build_batch(
    triplets: &[&ThoughtTriplet],
    corpus: &Corpus,
    vocab: &Vocab,
    limits: &SequenceLimits,
    n_hard_negatives: usize,
) -> Result<TrainingBatch> {
    let mut t_seqs = Vec::with_capacity(triplets.len());
    let mut q_seqs = Vec::with_capacity(triplets.len());
    let mut p_seqs = Vec::with_capacity(triplets.len());
    let mut n_seqs = Vec::with_capacity(triplets.len());
    for t in triplets {
        let query_ids = encode(&t.query, vocab);
        let thought_ids = encode(&t.thought, vocab);
        t_seqs.push(render_training_sequence(&query_ids, &thought_ids, true, vocab, limits)?);
        q_seqs.push(render_query_only_sequence(&query_ids, vocab, limits)?);
        p_seqs.push(doc_sequence(corpus, &t.doc_id, vocab, limits)?);
        n_seqs.push(
            t.hard_negatives
                .iter()
                .take(n_hard_negatives)
                .map(|id| doc_sequence(corpus, id, vocab, limits))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    TrainingBatch::new(t_seqs, q_seqs, p_seqs, n_seqs)
}

/// Runs `cfg.epochs` passes over the triplets, starting from
/// `state.step`. The step callback sees (step, loss parts) after every
/// update; training stops early on a non-finite loss, leaving `params` at
/// their last good values.
pub fn train(
    params: &mut ModelParams,
    triplets: &[ThoughtTriplet],
    corpus: &Corpus,
    vocab: &Vocab,
    limits: &SequenceLimits,
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_step: impl FnMut(u64, &LossParts),
) -> Result<TrainOutcome> {
    if triplets.is_empty() {
        return Err(CoreError::Config("no training triplets".into()));
    }
    cfg.validate()?;
    let steps_per_epoch = triplets.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;

    let mut outcome =
        TrainOutcome { steps_run: 0, first_loss: None, final_loss: None, best: None };
    while state.step < total_steps {
        let epoch = state.step / steps_per_epoch;
        let batch_in_epoch = (state.step % steps_per_epoch) as usize;

        // Per-epoch deterministic shuffle of triplet indices.
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch + 1));
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let start = batch_in_epoch * cfg.batch_size;
        let end = (start + cfg.batch_size).min(order.len());
        let chosen: Vec<&ThoughtTriplet> = order[start..end].iter().map(|&i| &triplets[i]).collect();

        let batch = build_batch(&chosen, corpus, vocab, limits, cfg.n_hard_negatives)?;
        let stats = train_step(params, &batch, cfg, &mut state.optimizer, state.step as usize)?;
        state.step += 1;
        outcome.steps_run += 1;
        if outcome.first_loss.is_none() {
            outcome.first_loss = Some(stats.loss);
        }
        let improved = outcome.best.as_ref().map_or(true, |(b, _)| stats.loss.joint < *b);
        if improved {
            outcome.best = Some((stats.loss.joint, params.clone()));
        }
        outcome.final_loss = Some(stats.loss);
        on_step(state.step, &stats.loss);
    }
    Ok(outcome)
}
