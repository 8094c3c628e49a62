//! Aligned groups of training sequences.

use crate::error::{CoreError, Result};
use crate::textproc::TokenSequence;

/// One contrastive/generative training batch. The four groups are
/// index-aligned: item i couples `triplets[i]` (the `<query> q <thought> t
/// </s> <emb>` form), `queries[i]` (plain query), `positives[i]` (its judged
/// document), and `hard_negatives[i]`. Every sequence carries a terminal
/// `<emb>` token.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub triplets: Vec<TokenSequence>,
    pub queries: Vec<TokenSequence>,
    pub positives: Vec<TokenSequence>,
    pub hard_negatives: Vec<Vec<TokenSequence>>,
}

impl TrainingBatch {
    pub fn new(
        triplets: Vec<TokenSequence>,
        queries: Vec<TokenSequence>,
        positives: Vec<TokenSequence>,
        hard_negatives: Vec<Vec<TokenSequence>>,
    ) -> Result<Self> {
        let b = triplets.len();
        if b == 0 {
            return Err(CoreError::InvalidConfig("empty training batch".into()));
        }
        if queries.len() != b || positives.len() != b || hard_negatives.len() != b {
            return Err(CoreError::InvalidConfig(format!(
                "misaligned batch groups: {b} triplets, {} queries, {} positives, {} negative lists",
                queries.len(),
                positives.len(),
                hard_negatives.len()
            )));
        }
        let groups = triplets
            .iter()
            .chain(&queries)
            .chain(&positives)
            .chain(hard_negatives.iter().flatten());
        for seq in groups {
            if seq.emb_pos != Some(seq.len() - 1) {
                return Err(CoreError::MissingEmbToken);
            }
        }
        Ok(TrainingBatch { triplets, queries, positives, hard_negatives })
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::{
        build_vocab, render_document_sequence, render_query_only_sequence,
        render_training_sequence, SequenceLimits, Vocab,
    };

    fn vocab() -> Vocab {
        build_vocab(["a b c d e f"], 1).unwrap()
    }

    #[test]
    fn alignment_is_enforced() {
        let v = vocab();
        let lim = SequenceLimits::default();
        let t = render_training_sequence(&[6], &[7], true, &v, &lim).unwrap();
        let q = render_query_only_sequence(&[6], &v, &lim).unwrap();
        let d = render_document_sequence(&[8], &v, &lim).unwrap();
        let err = TrainingBatch::new(vec![t], vec![q], vec![d], vec![vec![], vec![]]).unwrap_err();
        assert!(matches!(err, CoreError::InvalidConfig(_)));
    }

    #[test]
    fn missing_emb_is_rejected() {
        let v = vocab();
        let lim = SequenceLimits::default();
        let t = render_training_sequence(&[6], &[7], false, &v, &lim).unwrap(); // no <emb>
        let q = render_query_only_sequence(&[6], &v, &lim).unwrap();
        let d = render_document_sequence(&[8], &v, &lim).unwrap();
        let err = TrainingBatch::new(vec![t], vec![q], vec![d], vec![vec![]]).unwrap_err();
        assert!(matches!(err, CoreError::MissingEmbToken));
    }
}
