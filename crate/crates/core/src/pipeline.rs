//! End-to-end retrieval: think, encode, mean-pool, search.
//!
//! `with_thought` mode samples k thoughts from the model, encodes each
//! thought-augmented query, and averages the vectors; `query_only` skips
//! thinking entirely. Run files use the six-field line format
//! `qid Q0 docid rank score tag` with ranks from 1 and scores to six
//! decimals.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{Document, Query};
use crate::error::{CoreError, Result};
use crate::index::EmbeddingStore;
use crate::model::{
    encode_with_cache, extract_embedding, generate_thoughts, EmbeddingVector, ModelParams,
    SamplingConfig,
};
use crate::textproc::{
    encode, render_document_sequence, render_query_only_sequence, render_training_sequence,
    SequenceLimits, Vocab,
};

#[derive(Debug, Clone, PartialEq)]
pub enum RetrievalMode {
    QueryOnly,
    WithThought { k: usize, sampling: SamplingConfig },
}

/// Knobs shared by query and corpus embedding.
#[derive(Debug, Clone)]
pub struct EmbedOptions {
    pub normalize: bool,
    pub limits: SequenceLimits,
    pub max_thought_tokens: usize,
    pub seed: u64,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        EmbedOptions {
            normalize: false,
            limits: SequenceLimits::default(),
            max_thought_tokens: 256,
            seed: 0,
        }
    }
}

fn fnv1a(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn encode_embedding(
    params: &ModelParams,
    seq: &crate::textproc::TokenSequence,
    normalize: bool,
) -> Result<EmbeddingVector> {
    let (hidden, _) = encode_with_cache(params, seq)?;
    extract_embedding(&hidden, seq, normalize)
}

fn mean_pool(vectors: &[Vec<f64>]) -> Vec<f64> {
    let k = vectors.len() as f64;
    let mut out = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= k);
    out
}

/// Embeds one query. In `with_thought` mode the k thought-augmented
/// encodings are mean-pooled (and re-normalized iff normalization is on);
/// if every thought fails to render, the result falls back to the
/// query-only embedding and the flag is set.
pub fn embed_query(
    params: &ModelParams,
    vocab: &Vocab,
    query: &Query,
    mode: &RetrievalMode,
    opts: &EmbedOptions,
) -> Result<(EmbeddingVector, bool)> {
    let query_ids = encode(&query.text, vocab);
    if query_ids.is_empty() {
        return Err(CoreError::EmptyQuery(query.query_id.clone()));
    }

    let query_only = |params: &ModelParams| -> Result<EmbeddingVector> {
        let seq = render_query_only_sequence(&query_ids, vocab, &opts.limits)?;
        encode_embedding(params, &seq, opts.normalize)
    };

    match mode {
        RetrievalMode::QueryOnly => Ok((query_only(params)?, false)),
        RetrievalMode::WithThought { k, sampling } => {
            let seed = opts.seed ^ fnv1a(&query.query_id);
            let thoughts = generate_thoughts(
                params,
                vocab,
                &query_ids,
                *k,
                opts.max_thought_tokens,
                sampling,
                seed,
            )?;
            let mut limits = opts.limits;
            limits.max_text_tokens = limits.max_text_tokens.max(opts.max_thought_tokens);
            let mut components: Vec<Vec<f64>> = Vec::with_capacity(*k);
            for thought in &thoughts {
                match render_training_sequence(&query_ids, thought, true, vocab, &limits) {
                    Ok(seq) => {
                        components.push(encode_embedding(params, &seq, opts.normalize)?.values)
                    }
                    Err(e) => log::warn!("thought dropped for {}: {e}", query.query_id),
                }
            }
            if components.is_empty() {
                return Ok((query_only(params)?, true));
            }
            let mut pooled = mean_pool(&components);
            if opts.normalize {
                crate::model::l2_normalize(&mut pooled);
            }
            Ok((EmbeddingVector::new(pooled, opts.normalize)?, false))
        }
    }
}

/// Embeds every document into a store. Documents longer than the passage
/// limit are truncated (with a warning), unlike queries which hard-error.
pub fn embed_corpus(
    params: &ModelParams,
    vocab: &Vocab,
    docs: &[Document],
    opts: &EmbedOptions,
) -> Result<EmbeddingStore> {
    if docs.is_empty() {
        return Err(CoreError::EmptyCorpus);
    }
    let vectors: Vec<(String, Vec<f64>)> = docs
        .par_iter()
        .map(|doc| {
            let mut ids = encode(&doc.text, vocab);
            if ids.len() > opts.limits.max_text_tokens {
                log::warn!(
                    "document {} truncated from {} to {} tokens",
                    doc.doc_id,
                    ids.len(),
                    opts.limits.max_text_tokens
                );
                ids.truncate(opts.limits.max_text_tokens);
            }
            let seq = render_document_sequence(&ids, vocab, &opts.limits)?;
            // Stored raw; the store applies normalization itself.
            let emb = encode_embedding(params, &seq, false)?;
            Ok((doc.doc_id.clone(), emb.values))
        })
        .collect::<Result<_>>()?;

    let mut store = EmbeddingStore::new(params.config.d_model, opts.normalize);
    for (doc_id, v) in vectors {
        store.add(&doc_id, &v)?;
    }
    Ok(store)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDoc {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRun {
    pub query_id: String,
    pub docs: Vec<RankedDoc>,
    /// True when thought generation failed and the query fell back to
    /// query-only embedding.
    pub flagged: bool,
}

/// Ranked retrieval output for a set of queries, ordered by query id.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub tag: String,
    pub queries: Vec<QueryRun>,
}

const FALLBACK_SUFFIX: &str = "+qfallback";

impl RunFile {
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for q in &self.queries {
            let tag = if q.flagged {
                format!("{}{}", self.tag, FALLBACK_SUFFIX)
            } else {
                self.tag.clone()
            };
            for (i, doc) in q.docs.iter().enumerate() {
                writeln!(
                    w,
                    "{} Q0 {} {} {:.6} {}",
                    q.query_id,
                    doc.doc_id,
                    i + 1,
                    doc.score,
                    tag
                )
                .map_err(|e| CoreError::io(path, e))?;
            }
        }
        w.flush().map_err(|e| CoreError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<RunFile> {
        let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
        let mut tag = String::new();
        let mut per_query: BTreeMap<String, QueryRun> = BTreeMap::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CoreError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(CoreError::parse(path, lineno + 1, "expected 6 fields"));
            }
            let rank: usize = fields[3]
                .parse()
                .map_err(|_| CoreError::parse(path, lineno + 1, "bad rank"))?;
            let score: f64 = fields[4]
                .parse()
                .map_err(|_| CoreError::parse(path, lineno + 1, "bad score"))?;
            let (base_tag, flagged) = match fields[5].strip_suffix(FALLBACK_SUFFIX) {
                Some(b) => (b.to_string(), true),
                None => (fields[5].to_string(), false),
            };
            if tag.is_empty() {
                tag = base_tag;
            }
            let entry = per_query.entry(fields[0].to_string()).or_insert_with(|| QueryRun {
                query_id: fields[0].to_string(),
                docs: Vec::new(),
                flagged,
            });
            if rank != entry.docs.len() + 1 {
                return Err(CoreError::parse(
                    path,
                    lineno + 1,
                    format!("rank {rank} not contiguous (expected {})", entry.docs.len() + 1),
                ));
            }
            if let Some(last) = entry.docs.last() {
                if score > last.score {
                    return Err(CoreError::parse(path, lineno + 1, "scores increase within query"));
                }
            }
            entry.docs.push(RankedDoc { doc_id: fields[2].to_string(), score });
        }
        Ok(RunFile { tag, queries: per_query.into_values().collect() })
    }
}

/// Embeds each query under `mode` and searches the store, producing ranked
/// results ordered by query id. Per-query sampling seeds derive from the
/// query id, so completion order is irrelevant.
pub fn run_retrieval(
    params: &ModelParams,
    vocab: &Vocab,
    store: &EmbeddingStore,
    queries: &[Query],
    mode: &RetrievalMode,
    n: usize,
    tag: &str,
    opts: &EmbedOptions,
) -> Result<RunFile> {
    if store.is_empty() {
        return Err(CoreError::EmptyStore);
    }
    let mut runs: Vec<QueryRun> = queries
        .par_iter()
        .map(|query| {
            let (emb, flagged) = embed_query(params, vocab, query, mode, opts)?;
            let q32: Vec<f32> = emb.values.iter().map(|&v| v as f32).collect();
            let result = store.search(&q32, n)?;
            Ok(QueryRun {
                query_id: query.query_id.clone(),
                docs: result
                    .hits
                    .into_iter()
                    .map(|(doc_id, score)| RankedDoc { doc_id, score })
                    .collect(),
                flagged,
            })
        })
        .collect::<Result<_>>()?;
    runs.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(RunFile { tag: tag.to_string(), queries: runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::textproc::build_vocab;

    fn setup() -> (ModelParams, Vocab) {
        let vocab = build_vocab(["alpha beta gamma delta epsilon zeta"], 1).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 24,
            seed: 0,
            tied_output: false,
        };
        (init_params(&cfg, 8).unwrap(), vocab)
    }

    fn q(id: &str, text: &str) -> Query {
        Query { query_id: id.into(), text: text.into() }
    }

    #[test]
    fn mean_pool_arithmetic() {
        assert_eq!(mean_pool(&[vec![1.0, 0.0], vec![0.0, 1.0]]), vec![0.5, 0.5]);
    }

    #[test]
    fn mean_pool_is_permutation_invariant() {
        let a = vec![0.3, -0.2, 1.0];
        let b = vec![0.9, 0.4, -1.0];
        let c = vec![-0.5, 0.0, 0.25];
        let x = mean_pool(&[a.clone(), b.clone(), c.clone()]);
        let y = mean_pool(&[c, a, b]);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn k_one_equals_the_single_encoding() {
        let (params, vocab) = setup();
        let query = q("q1", "alpha beta");
        let opts = EmbedOptions { max_thought_tokens: 4, ..EmbedOptions::default() };
        let mode = RetrievalMode::WithThought {
            k: 1,
            sampling: SamplingConfig { greedy: true, temperature: 1.0 },
        };
        let (pooled, flagged) = embed_query(&params, &vocab, &query, &mode, &opts).unwrap();
        assert!(!flagged);

        // Rebuild the single component by hand.
        let query_ids = encode("alpha beta", &vocab);
        let thoughts = generate_thoughts(
            &params,
            &vocab,
            &query_ids,
            1,
            4,
            &SamplingConfig { greedy: true, temperature: 1.0 },
            opts.seed ^ fnv1a("q1"),
        )
        .unwrap();
        let seq =
            render_training_sequence(&query_ids, &thoughts[0], true, &vocab, &opts.limits).unwrap();
        let single = encode_embedding(&params, &seq, false).unwrap();
        assert_eq!(pooled.values, single.values);
    }

    #[test]
    fn identical_thoughts_pool_to_the_single_result() {
        // Greedy decoding is unavailable at k=3, but a trained-free model
        // with temperature ~0 collapses samples to the argmax path, making
        // all thoughts identical.
        let (params, vocab) = setup();
        let query = q("q1", "alpha");
        let sampling = SamplingConfig { greedy: false, temperature: 1e-9 };
        let opts = EmbedOptions { max_thought_tokens: 3, ..EmbedOptions::default() };
        let (k3, _) = embed_query(
            &params,
            &vocab,
            &query,
            &RetrievalMode::WithThought { k: 3, sampling },
            &opts,
        )
        .unwrap();
        let (k1, _) = embed_query(
            &params,
            &vocab,
            &query,
            &RetrievalMode::WithThought { k: 1, sampling },
            &opts,
        )
        .unwrap();
        for (a, b) in k3.values.iter().zip(&k1.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn query_only_is_independent_of_seed() {
        let (params, vocab) = setup();
        let query = q("q1", "gamma");
        let a = embed_query(
            &params,
            &vocab,
            &query,
            &RetrievalMode::QueryOnly,
            &EmbedOptions { seed: 1, ..EmbedOptions::default() },
        )
        .unwrap();
        let b = embed_query(
            &params,
            &vocab,
            &query,
            &RetrievalMode::QueryOnly,
            &EmbedOptions { seed: 999, ..EmbedOptions::default() },
        )
        .unwrap();
        assert_eq!(a.0.values, b.0.values);
    }

    #[test]
    fn normalized_query_embedding_has_unit_norm() {
        let (params, vocab) = setup();
        let query = q("q1", "alpha delta");
        let opts =
            EmbedOptions { normalize: true, max_thought_tokens: 4, ..EmbedOptions::default() };
        let mode = RetrievalMode::WithThought { k: 3, sampling: SamplingConfig::default() };
        let (emb, _) = embed_query(&params, &vocab, &query, &mode, &opts).unwrap();
        assert!((emb.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_query_is_rejected() {
        let (params, vocab) = setup();
        let query = q("q1", "   ");
        let err = embed_query(
            &params,
            &vocab,
            &query,
            &RetrievalMode::QueryOnly,
            &EmbedOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::EmptyQuery(_)));
    }

    #[test]
    fn corpus_embedding_truncates_long_docs_to_the_prefix() {
        let (params, vocab) = setup();
        let opts = EmbedOptions {
            limits: SequenceLimits { max_query_tokens: 32, max_text_tokens: 4 },
            ..EmbedOptions::default()
        };
        let long =
            Document { doc_id: "long".into(), text: "alpha beta gamma delta epsilon".into() };
        let prefix = Document { doc_id: "prefix".into(), text: "alpha beta gamma delta".into() };
        let store = embed_corpus(&params, &vocab, &[long, prefix], &opts).unwrap();
        assert_eq!(store.vector("long").unwrap(), store.vector("prefix").unwrap());
    }

    #[test]
    fn rerun_embeds_identically() {
        let (params, vocab) = setup();
        let docs = vec![
            Document { doc_id: "d1".into(), text: "alpha beta".into() },
            Document { doc_id: "d2".into(), text: "gamma".into() },
        ];
        let a = embed_corpus(&params, &vocab, &docs, &EmbedOptions::default()).unwrap();
        let b = embed_corpus(&params, &vocab, &docs, &EmbedOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn retrieval_returns_all_docs_when_n_exceeds_corpus() {
        let (params, vocab) = setup();
        let docs = vec![
            Document { doc_id: "d1".into(), text: "alpha".into() },
            Document { doc_id: "d2".into(), text: "beta".into() },
        ];
        let store = embed_corpus(&params, &vocab, &docs, &EmbedOptions::default()).unwrap();
        let run = run_retrieval(
            &params,
            &vocab,
            &store,
            &[q("q1", "alpha")],
            &RetrievalMode::QueryOnly,
            10,
            "test",
            &EmbedOptions::default(),
        )
        .unwrap();
        assert_eq!(run.queries[0].docs.len(), 2);
    }

    #[test]
    fn run_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.run");
        let run = RunFile {
            tag: "demo".into(),
            queries: vec![
                QueryRun {
                    query_id: "q1".into(),
                    docs: vec![
                        RankedDoc { doc_id: "d2".into(), score: 0.9 },
                        RankedDoc { doc_id: "d1".into(), score: 0.5 },
                    ],
                    flagged: false,
                },
                QueryRun {
                    query_id: "q2".into(),
                    docs: vec![RankedDoc { doc_id: "d3".into(), score: -0.25 }],
                    flagged: true,
                },
            ],
        };
        run.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("q1 Q0 d2 1 0.900000 demo"));
        assert!(text.contains("q2 Q0 d3 1 -0.250000 demo+qfallback"));
        let back = RunFile::read(&path).unwrap();
        assert_eq!(back.tag, "demo");
        assert_eq!(back.queries[0].docs.len(), 2);
        assert!(back.queries[1].flagged);
    }

    #[test]
    fn run_file_rejects_non_contiguous_ranks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.run");
        std::fs::write(&path, "q1 Q0 d1 1 0.9 t\nq1 Q0 d2 3 0.8 t\n").unwrap();
        assert!(matches!(RunFile::read(&path), Err(CoreError::Parse { .. })));
    }

    #[test]
    fn rerun_retrieval_is_byte_identical() {
        let (params, vocab) = setup();
        let docs: Vec<Document> = ["alpha", "beta", "gamma", "delta"]
            .iter()
            .enumerate()
            .map(|(i, t)| Document { doc_id: format!("d{i}"), text: (*t).into() })
            .collect();
        let store = embed_corpus(&params, &vocab, &docs, &EmbedOptions::default()).unwrap();
        let queries = vec![q("qa", "alpha beta"), q("qb", "gamma")];
        let mode = RetrievalMode::WithThought { k: 2, sampling: SamplingConfig::default() };
        let opts = EmbedOptions { max_thought_tokens: 4, seed: 5, ..EmbedOptions::default() };
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.run"), dir.path().join("b.run"));
        run_retrieval(&params, &vocab, &store, &queries, &mode, 4, "t", &opts)
            .unwrap()
            .write(&p1)
            .unwrap();
        run_retrieval(&params, &vocab, &store, &queries, &mode, 4, "t", &opts)
            .unwrap()
            .write(&p2)
            .unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
