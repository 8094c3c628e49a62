//! Committee scoring: Okapi BM25 and embedding cosine.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{CoreError, Result};
use crate::model::{encode_with_cache, extract_embedding, load_params, ModelParams};
use crate::textproc::{encode, render_document_sequence, SequenceLimits, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scorer", rename_all = "kebab-case")]
pub enum ScorerKind {
    LexicalBm25 { k1: f64, b: f64 },
    EmbeddingCosine { checkpoint: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitteeMember {
    pub name: String,
    #[serde(flatten)]
    pub kind: ScorerKind,
}

impl CommitteeMember {
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ScorerKind::LexicalBm25 { k1, b } => {
                if !(*k1 > 0.0) {
                    return Err(CoreError::MemberMisconfigured {
                        member: self.name.clone(),
                        reason: format!("k1 must be > 0, got {k1}"),
                    });
                }
                if !(0.0..=1.0).contains(b) {
                    return Err(CoreError::MemberMisconfigured {
                        member: self.name.clone(),
                        reason: format!("b must lie in [0, 1], got {b}"),
                    });
                }
            }
            ScorerKind::EmbeddingCosine { checkpoint } => {
                if checkpoint.as_os_str().is_empty() {
                    return Err(CoreError::MemberMisconfigured {
                        member: self.name.clone(),
                        reason: "empty checkpoint path".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

fn bm25_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// Corpus-wide statistics shared by every lexical member.
#[derive(Debug)]
struct Bm25Stats {
    n_docs: f64,
    avgdl: f64,
    doc_freq: HashMap<String, usize>,
    /// doc_id -> (length, term frequencies)
    docs: HashMap<String, (f64, HashMap<String, usize>)>,
}

impl Bm25Stats {
    fn build(corpus: &Corpus) -> Self {
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        let mut docs = HashMap::with_capacity(corpus.len());
        let mut total_len = 0usize;
        for doc in corpus.docs() {
            let tokens = bm25_tokens(&doc.text);
            total_len += tokens.len();
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in tokens.iter() {
                *tf.entry(t.clone()).or_insert(0) += 1;
            }
            for term in tf.keys() {
                *doc_freq.entry(term.clone()).or_insert(0) += 1;
            }
            docs.insert(doc.doc_id.clone(), (tokens.len() as f64, tf));
        }
        Bm25Stats {
            n_docs: corpus.len() as f64,
            avgdl: total_len as f64 / corpus.len().max(1) as f64,
            doc_freq,
            docs,
        }
    }

    /// Okapi BM25 with the +1 idf form: each query-token occurrence adds
    /// idf(t) * tf(k1+1) / (tf + k1(1-b+b*dl/avgdl)).
    fn score(&self, query_text: &str, doc_id: &str, k1: f64, b: f64) -> f64 {
        let Some((dl, tf_map)) = self.docs.get(doc_id) else { return 0.0 };
        let mut total = 0.0;
        for term in bm25_tokens(query_text) {
            let tf = tf_map.get(&term).copied().unwrap_or(0) as f64;
            if tf == 0.0 {
                continue;
            }
            let df = self.doc_freq.get(&term).copied().unwrap_or(0) as f64;
            let idf = ((self.n_docs - df + 0.5) / (df + 0.5) + 1.0).ln();
            let tf_norm = tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / self.avgdl));
            total += idf * tf_norm;
        }
        total
    }
}

struct EmbeddingScorer {
    params: ModelParams,
    doc_embs: HashMap<String, Vec<f64>>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

enum Prepared {
    Bm25 { k1: f64, b: f64 },
    Embedding(EmbeddingScorer),
}

/// A committee bound to one corpus: lexical statistics and per-member
/// document embeddings are computed once up front.
pub struct Committee {
    member_specs: Vec<CommitteeMember>,
    prepared: Vec<Prepared>,
    bm25: Bm25Stats,
    vocab: Vocab,
    limits: SequenceLimits,
}

impl Committee {
    pub fn new(
        members: &[CommitteeMember],
        corpus: &Corpus,
        vocab: &Vocab,
        limits: SequenceLimits,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(CoreError::Config("committee has no members".into()));
        }
        let bm25 = Bm25Stats::build(corpus);
        let mut prepared = Vec::with_capacity(members.len());
        for member in members {
            member.validate()?;
            prepared.push(match &member.kind {
                ScorerKind::LexicalBm25 { k1, b } => Prepared::Bm25 { k1: *k1, b: *b },
                ScorerKind::EmbeddingCosine { checkpoint } => {
                    let params = load_params(checkpoint)?;
                    let mut doc_embs = HashMap::with_capacity(corpus.len());
                    for doc in corpus.docs() {
                        doc_embs.insert(
                            doc.doc_id.clone(),
                            embed_text(&params, vocab, &doc.text, &limits)?,
                        );
                    }
                    Prepared::Embedding(EmbeddingScorer { params, doc_embs })
                }
            });
        }
        Ok(Committee {
            member_specs: members.to_vec(),
            prepared,
            bm25,
            vocab: vocab.clone(),
            limits,
        })
    }

    pub fn len(&self) -> usize {
        self.prepared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prepared.is_empty()
    }

    pub fn member_name(&self, idx: usize) -> &str {
        &self.member_specs[idx].name
    }

    /// Index of the first embedding member, used for hard-negative mining
    /// unless a name is designated.
    pub fn embedding_member(&self, designated: Option<&str>) -> Result<usize> {
        match designated {
            Some(name) => self
                .member_specs
                .iter()
                .position(|m| m.name == name && matches!(m.kind, ScorerKind::EmbeddingCosine { .. }))
                .ok_or_else(|| CoreError::Config(format!("no embedding member named {name}"))),
            None => self
                .prepared
                .iter()
                .position(|p| matches!(p, Prepared::Embedding(_)))
                .ok_or_else(|| CoreError::Config("committee has no embedding member".into())),
        }
    }

    /// Similarity of a thought to a corpus document under one member.
    pub fn score(&self, member_idx: usize, thought: &str, doc: &Document) -> Result<f64> {
        if doc.text.trim().is_empty() {
            return Err(CoreError::Config(format!("document {} is empty", doc.doc_id)));
        }
        match &self.prepared[member_idx] {
            Prepared::Bm25 { k1, b } => Ok(self.bm25.score(thought, &doc.doc_id, *k1, *b)),
            Prepared::Embedding(scorer) => {
                let t = embed_text(&scorer.params, &self.vocab, thought, &self.limits)?;
                let d = scorer
                    .doc_embs
                    .get(&doc.doc_id)
                    .ok_or_else(|| CoreError::UnknownDocId(doc.doc_id.clone()))?;
                Ok(cosine(&t, d))
            }
        }
    }

    /// Scores every candidate and returns (argmax index, scores). Ties break
    /// toward the lowest index.
    pub fn select_per_member(
        &self,
        member_idx: usize,
        candidates: &[String],
        doc: &Document,
    ) -> Result<(usize, Vec<f64>)> {
        if candidates.is_empty() {
            return Err(CoreError::Config("no candidates to select from".into()));
        }
        let scores: Vec<f64> = candidates
            .iter()
            .map(|c| self.score(member_idx, c, doc))
            .collect::<Result<_>>()?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        Ok((best, scores))
    }

    /// Cosine of a free-text query against every cached document embedding
    /// of `member_idx` (must be an embedding member), descending, excluding
    /// `exclude`.
    pub fn rank_docs_by_embedding(
        &self,
        member_idx: usize,
        text: &str,
        exclude: &str,
    ) -> Result<Vec<(String, f64)>> {
        let Prepared::Embedding(scorer) = &self.prepared[member_idx] else {
            return Err(CoreError::MemberMisconfigured {
                member: self.member_name(member_idx).to_string(),
                reason: "hard-negative mining needs an embedding member".into(),
            });
        };
        let q = embed_text(&scorer.params, &self.vocab, text, &self.limits)?;
        let mut scored: Vec<(String, f64)> = scorer
            .doc_embs
            .iter()
            .filter(|(id, _)| id.as_str() != exclude)
            .map(|(id, v)| (id.clone(), cosine(&q, v)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0))
        });
        Ok(scored)
    }
}

/// Doc-style embedding of arbitrary text (truncated to the passage limit).
fn embed_text(
    params: &ModelParams,
    vocab: &Vocab,
    text: &str,
    limits: &SequenceLimits,
) -> Result<Vec<f64>> {
    let mut ids = encode(text, vocab);
    ids.truncate(limits.max_text_tokens);
    let seq = render_document_sequence(&ids, vocab, limits)?;
    let (hidden, _) = encode_with_cache(params, &seq)?;
    Ok(extract_embedding(&hidden, &seq, false)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, save_params, ModelConfig};
    use crate::textproc::build_vocab;

    fn bm25_member(k1: f64, b: f64) -> CommitteeMember {
        CommitteeMember { name: "lex".into(), kind: ScorerKind::LexicalBm25 { k1, b } }
    }

    fn two_doc_corpus() -> Corpus {
        Corpus::new(vec![
            Document { doc_id: "d1".into(), text: "a b a".into() },
            Document { doc_id: "d2".into(), text: "b c".into() },
        ])
        .unwrap()
    }

    #[test]
    fn member_validation() {
        assert!(bm25_member(0.9, 0.4).validate().is_ok());
        assert!(bm25_member(0.0, 0.4).validate().is_err());
        assert!(bm25_member(0.9, 1.5).validate().is_err());
        let empty = CommitteeMember {
            name: "e".into(),
            kind: ScorerKind::EmbeddingCosine { checkpoint: PathBuf::new() },
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn bm25_no_shared_terms_scores_zero() {
        let corpus = two_doc_corpus();
        let vocab = build_vocab(["a b c"], 1).unwrap();
        let committee =
            Committee::new(&[bm25_member(0.9, 0.4)], &corpus, &vocab, SequenceLimits::default())
                .unwrap();
        let d2 = corpus.get("d2").unwrap();
        assert_eq!(committee.score(0, "a", d2).unwrap(), 0.0);
    }

    #[test]
    fn bm25_matches_hand_evaluated_okapi_value() {
        // Corpus {d1: "a b a", d2: "b c"}, thought "a", k1=0.9, b=0.4.
        // N=2, df(a)=1 -> idf = ln((2-1+0.5)/(1+0.5) + 1) = ln 2.
        // d1: tf=2, dl=3, avgdl=2.5
        //   tf_norm = 2*1.9 / (2 + 0.9*(0.6 + 0.4*3/2.5))
        let corpus = two_doc_corpus();
        let vocab = build_vocab(["a b c"], 1).unwrap();
        let committee =
            Committee::new(&[bm25_member(0.9, 0.4)], &corpus, &vocab, SequenceLimits::default())
                .unwrap();
        let d1 = corpus.get("d1").unwrap();
        let got = committee.score(0, "a", d1).unwrap();
        let idf = ((2.0f64 - 1.0 + 0.5) / (1.0 + 0.5) + 1.0).ln();
        let tf_norm = 2.0 * (0.9 + 1.0) / (2.0 + 0.9 * (1.0 - 0.4 + 0.4 * 3.0 / 2.5));
        let expected = idf * tf_norm;
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
    }

    fn embedding_member_fixture(dir: &std::path::Path) -> (CommitteeMember, Vocab) {
        let vocab = build_vocab(["apple banana cherry dog echo fox"], 1).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 16,
            seed: 0,
            tied_output: false,
        };
        let params = init_params(&cfg, 7).unwrap();
        let path = dir.join("committee.ckpt");
        save_params(&params, &path).unwrap();
        (
            CommitteeMember { name: "emb".into(), kind: ScorerKind::EmbeddingCosine { checkpoint: path } },
            vocab,
        )
    }

    #[test]
    fn identical_texts_have_unit_cosine() {
        let dir = tempfile::tempdir().unwrap();
        let (member, vocab) = embedding_member_fixture(dir.path());
        let corpus = Corpus::new(vec![
            Document { doc_id: "d1".into(), text: "apple banana".into() },
            Document { doc_id: "d2".into(), text: "dog echo".into() },
        ])
        .unwrap();
        let committee =
            Committee::new(&[member], &corpus, &vocab, SequenceLimits::default()).unwrap();
        let d1 = corpus.get("d1").unwrap();
        let s = committee.score(0, "apple banana", d1).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "self-cosine {s}");
    }

    #[test]
    fn embedding_argmax_is_scale_invariant() {
        // Cosine ignores positive rescaling of the embedder's vectors, so
        // rescaling every stored doc embedding must not move the argmax.
        let dir = tempfile::tempdir().unwrap();
        let (member, vocab) = embedding_member_fixture(dir.path());
        let corpus = Corpus::new(vec![
            Document { doc_id: "d1".into(), text: "apple banana cherry".into() },
        ])
        .unwrap();
        let mut committee =
            Committee::new(&[member], &corpus, &vocab, SequenceLimits::default()).unwrap();
        let candidates: Vec<String> =
            ["apple banana", "dog echo fox", "cherry apple"].iter().map(|s| s.to_string()).collect();
        let d1 = corpus.get("d1").unwrap().clone();
        let (before, scores_before) = committee.select_per_member(0, &candidates, &d1).unwrap();
        if let Prepared::Embedding(scorer) = &mut committee.prepared[0] {
            for v in scorer.doc_embs.values_mut() {
                v.iter_mut().for_each(|x| *x *= 3.5);
            }
        }
        let (after, scores_after) = committee.select_per_member(0, &candidates, &d1).unwrap();
        assert_eq!(before, after);
        for (a, b) in scores_before.iter().zip(&scores_after) {
            assert!((a - b).abs() < 1e-9, "cosine should be scale-invariant");
        }
    }

    #[test]
    fn select_breaks_ties_toward_lowest_index() {
        let corpus = two_doc_corpus();
        let vocab = build_vocab(["a b c"], 1).unwrap();
        let committee =
            Committee::new(&[bm25_member(0.9, 0.4)], &corpus, &vocab, SequenceLimits::default())
                .unwrap();
        let d2 = corpus.get("d2").unwrap();
        // Neither candidate shares a term with d2: both score 0.
        let cands = vec!["a".to_string(), "a a".to_string()];
        let (idx, scores) = committee.select_per_member(0, &cands, d2).unwrap();
        assert_eq!(scores, vec![0.0, 0.0]);
        assert_eq!(idx, 0);
        // Single candidate selects index 0.
        let (only, _) =
            committee.select_per_member(0, &cands[..1].to_vec(), d2).unwrap();
        assert_eq!(only, 0);
    }

    #[test]
    fn argmax_picks_highest_score() {
        let corpus = two_doc_corpus();
        let vocab = build_vocab(["a b c"], 1).unwrap();
        let committee =
            Committee::new(&[bm25_member(0.9, 0.4)], &corpus, &vocab, SequenceLimits::default())
                .unwrap();
        let d1 = corpus.get("d1").unwrap();
        let cands = vec!["c".to_string(), "a a b".to_string(), "b".to_string()];
        let (idx, _) = committee.select_per_member(0, &cands, d1).unwrap();
        assert_eq!(idx, 1);
    }
}
