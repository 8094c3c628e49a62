//! Training- and inference-sequence templates.
//!
//! The triplet form is `<query> q <thought> t </s>` with an optional trailing
//! `<emb>` whose final hidden state serves as the text embedding. Query-only
//! and document sequences reuse the same terminator + embedding-token tail.

use std::ops::Range;

use crate::error::{CoreError, Result};
use crate::textproc::Vocab;

/// Hard token-count limits for rendered segments. Overflow is an error, not
/// a silent truncation: truncation would corrupt the span bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceLimits {
    pub max_query_tokens: usize,
    pub max_text_tokens: usize,
}

impl Default for SequenceLimits {
    fn default() -> Self {
        // Query capped at 32 tokens, passages and thoughts at 192.
        SequenceLimits { max_query_tokens: 32, max_text_tokens: 192 }
    }
}

/// Token ids plus span markers. `query_span` and `thought_span` are half-open
/// ranges over content tokens (markers excluded); `emb_pos`, when present, is
/// always the final index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub query_span: Range<usize>,
    pub thought_span: Range<usize>,
    pub emb_pos: Option<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn query_ids(&self) -> &[usize] {
        &self.ids[self.query_span.clone()]
    }

    pub fn thought_ids(&self) -> &[usize] {
        &self.ids[self.thought_span.clone()]
    }

    /// Index of the `</s>` terminator, if the thought span is followed by one.
    pub fn eos_pos(&self) -> usize {
        self.thought_span.end
    }
}

fn check(segment: &'static str, len: usize, limit: usize) -> Result<()> {
    if len > limit {
        Err(CoreError::SequenceTooLong { segment, len, limit })
    } else {
        Ok(())
    }
}

/// Renders `<query> q <thought> t </s>` (+ `<emb>` when `with_emb`).
pub fn render_training_sequence(
    query_ids: &[usize],
    thought_ids: &[usize],
    with_emb: bool,
    vocab: &Vocab,
    limits: &SequenceLimits,
) -> Result<TokenSequence> {
    check("query", query_ids.len(), limits.max_query_tokens)?;
    check("thought", thought_ids.len(), limits.max_text_tokens)?;

    let mut ids = Vec::with_capacity(query_ids.len() + thought_ids.len() + 4);
    ids.push(vocab.query_id());
    let query_span = ids.len()..ids.len() + query_ids.len();
    ids.extend_from_slice(query_ids);
    ids.push(vocab.thought_id());
    let thought_span = ids.len()..ids.len() + thought_ids.len();
    ids.extend_from_slice(thought_ids);
    ids.push(vocab.eos_id());
    let emb_pos = if with_emb {
        ids.push(vocab.emb_id());
        Some(ids.len() - 1)
    } else {
        None
    };
    Ok(TokenSequence { ids, query_span, thought_span, emb_pos })
}

/// Renders the plain-query embedding input `<query> q </s> <emb>`.
pub fn render_query_only_sequence(
    query_ids: &[usize],
    vocab: &Vocab,
    limits: &SequenceLimits,
) -> Result<TokenSequence> {
    check("query", query_ids.len(), limits.max_query_tokens)?;

    let mut ids = Vec::with_capacity(query_ids.len() + 3);
    ids.push(vocab.query_id());
    let query_span = ids.len()..ids.len() + query_ids.len();
    ids.extend_from_slice(query_ids);
    ids.push(vocab.eos_id());
    ids.push(vocab.emb_id());
    let emb_pos = Some(ids.len() - 1);
    let end = query_span.end;
    Ok(TokenSequence { ids, query_span, thought_span: end..end, emb_pos })
}

/// Renders the document embedding input `d </s> <emb>`. Documents carry no
/// query or thought markers.
pub fn render_document_sequence(
    doc_ids: &[usize],
    vocab: &Vocab,
    limits: &SequenceLimits,
) -> Result<TokenSequence> {
    check("document", doc_ids.len(), limits.max_text_tokens)?;

    let mut ids = Vec::with_capacity(doc_ids.len() + 2);
    ids.extend_from_slice(doc_ids);
    ids.push(vocab.eos_id());
    ids.push(vocab.emb_id());
    Ok(TokenSequence {
        ids,
        query_span: 0..0,
        thought_span: 0..0,
        emb_pos: Some(doc_ids.len() + 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::build_vocab;
    use proptest::prelude::*;

    fn vocab() -> Vocab {
        // ids 6.. follow frequency order; enough room for the raw ids below.
        build_vocab(["a b c d e f g h i j k l"], 1).unwrap()
    }

    #[test]
    fn triplet_template_with_emb() {
        let v = vocab();
        let seq = render_training_sequence(&[7], &[9, 4], true, &v, &SequenceLimits::default())
            .unwrap();
        assert_eq!(seq.ids, vec![v.query_id(), 7, v.thought_id(), 9, 4, v.eos_id(), v.emb_id()]);
        assert_eq!(seq.query_span, 1..2);
        assert_eq!(seq.thought_span, 3..5);
        assert_eq!(seq.emb_pos, Some(6));
    }

    #[test]
    fn triplet_template_empty_thought_no_emb() {
        let v = vocab();
        let seq = render_training_sequence(&[7], &[], false, &v, &SequenceLimits::default())
            .unwrap();
        assert_eq!(seq.ids, vec![v.query_id(), 7, v.thought_id(), v.eos_id()]);
        assert_eq!(seq.emb_pos, None);
        assert!(seq.thought_span.is_empty());
    }

    #[test]
    fn query_overflow_is_an_error() {
        let v = vocab();
        let long: Vec<usize> = (0..33).map(|_| 7).collect();
        let err =
            render_training_sequence(&long, &[], true, &v, &SequenceLimits::default()).unwrap_err();
        match err {
            CoreError::SequenceTooLong { segment, len, limit } => {
                assert_eq!(segment, "query");
                assert_eq!((len, limit), (33, 32));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn thought_overflow_names_the_segment() {
        let v = vocab();
        let long: Vec<usize> = (0..193).map(|_| 7).collect();
        let err = render_training_sequence(&[7], &long, true, &v, &SequenceLimits::default())
            .unwrap_err();
        assert!(matches!(err, CoreError::SequenceTooLong { segment: "thought", .. }));
    }

    #[test]
    fn query_only_template() {
        let v = vocab();
        let seq = render_query_only_sequence(&[7], &v, &SequenceLimits::default()).unwrap();
        assert_eq!(seq.ids, vec![v.query_id(), 7, v.eos_id(), v.emb_id()]);
        assert_eq!(seq.emb_pos, Some(3));
        assert!(seq.thought_span.is_empty());
    }

    #[test]
    fn query_only_template_empty_query() {
        let v = vocab();
        let seq = render_query_only_sequence(&[], &v, &SequenceLimits::default()).unwrap();
        assert_eq!(seq.ids, vec![v.query_id(), v.eos_id(), v.emb_id()]);
        assert_eq!(seq.emb_pos, Some(2));
    }

    #[test]
    fn document_template() {
        let v = vocab();
        let seq = render_document_sequence(&[8, 9], &v, &SequenceLimits::default()).unwrap();
        assert_eq!(seq.ids, vec![8, 9, v.eos_id(), v.emb_id()]);
        assert_eq!(seq.emb_pos, Some(3));
    }

    proptest! {
        // The thought span always reconstructs the input thought ids, emb_pos
        // is always the final index, and rendering is deterministic.
        #[test]
        fn spans_reconstruct_inputs(
            q in proptest::collection::vec(6usize..18, 0..32),
            t in proptest::collection::vec(6usize..18, 0..64),
            with_emb: bool,
        ) {
            let v = vocab();
            let limits = SequenceLimits::default();
            let seq = render_training_sequence(&q, &t, with_emb, &v, &limits).unwrap();
            prop_assert_eq!(seq.query_ids(), &q[..]);
            prop_assert_eq!(seq.thought_ids(), &t[..]);
            prop_assert!(seq.query_span.end <= seq.thought_span.start);
            if with_emb {
                prop_assert_eq!(seq.emb_pos, Some(seq.len() - 1));
            }
            let again = render_training_sequence(&q, &t, with_emb, &v, &limits).unwrap();
            prop_assert_eq!(seq, again);
        }

        // Plain text encodings never place special ids inside content spans.
        #[test]
        fn content_spans_hold_no_special_ids(
            qwords in proptest::collection::vec("[a-l]", 0..8),
            twords in proptest::collection::vec("[a-l]", 0..8),
        ) {
            let v = vocab();
            let q = crate::textproc::encode(&qwords.join(" "), &v);
            let t = crate::textproc::encode(&twords.join(" "), &v);
            let seq =
                render_training_sequence(&q, &t, true, &v, &SequenceLimits::default()).unwrap();
            for &id in seq.query_ids().iter().chain(seq.thought_ids()) {
                prop_assert!(!v.is_special(id));
            }
        }
    }
}
