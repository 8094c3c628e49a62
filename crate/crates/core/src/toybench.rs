//! Deterministic synthetic benchmark with latent expansion keys.
//!
//! Every topic pairs a query-side trigger word with a latent key that only
//! appears in the topic's relevant document. Queries never contain the key;
//! the synthetic generator's expansion table does. Background documents
//! recycle trigger and filler words as lexical traps, so retrieval that
//! leans on the raw query words alone is deliberately harder than retrieval
//! through a key-bearing thought.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_jsonl, Document, QDocPair, Query};
use crate::error::{CoreError, Result};
use crate::model::{init_params, save_params, ModelConfig};
use crate::textproc::build_vocab;

pub const TOY_SEED: u64 = 2025_0811;

const N_TOPICS: usize = 48;
const N_BACKGROUND: usize = 100;
const N_DOC_FILLERS: usize = 40;
const N_QUERY_FILLERS: usize = 30;
/// Training query variants per topic. One variant lets a model key the
/// thought off the (nearly unique) filler pair instead of the trigger word
/// and fail on unseen fillers; several variants leave the trigger as the
/// only stable signal.
const N_TRAIN_VARIANTS: usize = 3;
/// Query fillers reserved for evaluation queries. They occur in background
/// documents (so they are in-vocabulary and act as lexical traps) but never
/// in a training query, keeping the eval surface forms out of distribution
/// for the plain-query route.
const N_EVAL_FILLERS: usize = 10;

#[derive(Debug, Clone)]
pub struct ToyBench {
    pub corpus: Vec<Document>,
    pub train_pairs: Vec<QDocPair>,
    pub eval_queries: Vec<Query>,
    /// (query_id, doc_id, grade)
    pub qrels: Vec<(String, String, u32)>,
    /// Trigger word -> expansion text containing the latent key.
    pub expansion: BTreeMap<String, String>,
}

const SYLLABLES: [&str; 20] = [
    "ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "mu", "na", "pe", "ri", "so", "tu", "ve",
    "wa", "yo", "zu", "ne", "qa",
];

fn make_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let n = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..n {
            w.push_str(SYLLABLES[rng.gen_range(0..SYLLABLES.len())]);
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn sample_distinct<'a>(rng: &mut ChaCha8Rng, pool: &'a [String], n: usize) -> Vec<&'a String> {
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    for i in 0..n.min(pool.len()) {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    indices[..n.min(pool.len())].iter().map(|&i| &pool[i]).collect()
}

fn shuffled(rng: &mut ChaCha8Rng, mut words: Vec<String>) -> Vec<String> {
    for i in (1..words.len()).rev() {
        let j = rng.gen_range(0..=i);
        words.swap(i, j);
    }
    words
}

/// Builds the whole benchmark from one seed.
pub fn generate(seed: u64) -> ToyBench {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let triggers: Vec<String> = (0..N_TOPICS).map(|_| make_word(&mut rng, &mut used)).collect();
    let keys: Vec<String> = (0..N_TOPICS).map(|_| make_word(&mut rng, &mut used)).collect();
    let doc_fillers: Vec<String> =
        (0..N_DOC_FILLERS).map(|_| make_word(&mut rng, &mut used)).collect();
    let query_fillers: Vec<String> =
        (0..N_QUERY_FILLERS).map(|_| make_word(&mut rng, &mut used)).collect();

    let mut corpus = Vec::new();
    let mut train_pairs = Vec::new();
    let mut expansion = BTreeMap::new();
    let mut topic_doc_fillers: Vec<Vec<String>> = Vec::with_capacity(N_TOPICS);

    for t in 0..N_TOPICS {
        let fillers: Vec<String> =
            sample_distinct(&mut rng, &doc_fillers, 5).into_iter().cloned().collect();
        // Relevant document: the key three times among its fillers; the
        // trigger word never appears.
        let mut words: Vec<String> = vec![keys[t].clone(); 3];
        words.extend(fillers.iter().cloned());
        let doc_id = format!("d{t:03}");
        corpus.push(Document {
            doc_id: doc_id.clone(),
            text: shuffled(&mut rng, words).join(" "),
        });

        // Expansion: key-heavy, reusing the document's own fillers.
        let mut exp: Vec<String> = vec![keys[t].clone(); 3];
        exp.extend(sample_distinct(&mut rng, &fillers, 4).into_iter().cloned());
        expansion.insert(triggers[t].clone(), shuffled(&mut rng, exp).join(" "));

        // Training queries: trigger plus two fillers, several filler pairs
        // per topic, drawn from the training-filler pool only.
        let train_pool = &query_fillers[..N_QUERY_FILLERS - N_EVAL_FILLERS];
        let qf: Vec<String> = sample_distinct(&mut rng, train_pool, 2 * N_TRAIN_VARIANTS)
            .into_iter()
            .cloned()
            .collect();
        for v in 0..N_TRAIN_VARIANTS {
            train_pairs.push(QDocPair {
                query_id: format!("tq{t:03}v{v}"),
                query: format!("{} {} {}", triggers[t], qf[2 * v], qf[2 * v + 1]),
                doc_id: doc_id.clone(),
            });
        }
        topic_doc_fillers.push(fillers);
    }

    // Trap documents: one per topic, surface-matching that topic's eval
    // queries (trigger plus eval-pool fillers) while never containing the
    // key. Plain-query retrieval has to get past these; key-bearing
    // thoughts walk around them.
    let eval_pool = &query_fillers[N_QUERY_FILLERS - N_EVAL_FILLERS..];
    for t in 0..N_TOPICS {
        let mut words: Vec<String> = vec![triggers[t].clone()];
        words.extend(sample_distinct(&mut rng, eval_pool, 3).into_iter().cloned());
        words.extend(sample_distinct(&mut rng, &doc_fillers, 2).into_iter().cloned());
        corpus.push(Document {
            doc_id: format!("tr{t:03}"),
            text: shuffled(&mut rng, words).join(" "),
        });
    }

    // Background documents: milder mixtures of trigger words, query
    // fillers, and doc fillers, never a key. Trigger and query-filler slots
    // cycle round-robin so every query-side word is guaranteed corpus
    // coverage (the shared vocabulary is built from the corpus alone).
    for b in 0..N_BACKGROUND {
        let mut words: Vec<String> = vec![
            triggers[(2 * b) % N_TOPICS].clone(),
            triggers[(2 * b + 1) % N_TOPICS].clone(),
            query_fillers[(3 * b) % N_QUERY_FILLERS].clone(),
            query_fillers[(3 * b + 1) % N_QUERY_FILLERS].clone(),
            query_fillers[(3 * b + 2) % N_QUERY_FILLERS].clone(),
        ];
        words.extend(sample_distinct(&mut rng, &doc_fillers, 3).into_iter().cloned());
        corpus.push(Document {
            doc_id: format!("bg{b:03}"),
            text: shuffled(&mut rng, words).join(" "),
        });
    }

    // 64 eval queries: two variants for the first 16 topics, one for the
    // rest. Fillers come from the reserved eval pool, so no eval query
    // surface form was ever seen during training.
    let mut eval_queries = Vec::new();
    let mut qrels = Vec::new();
    let mut eq = 0usize;
    for t in 0..N_TOPICS {
        let variants = if t < 16 { 2 } else { 1 };
        for _ in 0..variants {
            let qf: Vec<String> =
                sample_distinct(&mut rng, eval_pool, 2).into_iter().cloned().collect();
            let query_id = format!("eq{eq:03}");
            eval_queries.push(Query {
                query_id: query_id.clone(),
                text: format!("{} {} {}", triggers[t], qf[0], qf[1]),
            });
            qrels.push((query_id, format!("d{t:03}"), if t < 8 { 2 } else { 1 }));
            eq += 1;
        }
    }

    ToyBench { corpus, train_pairs, eval_queries, qrels, expansion }
}

/// Shape of the bundled committee embedder.
pub fn committee_model_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        vocab_size,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_seq_len: 224,
        seed: 1,
        tied_output: false,
    }
}

/// The bundled run manifest; inputs sit next to the config file, outputs go
/// under `out/` unless overridden with `--set`.
pub const TOY_CONFIG: &str = "\
# bundled toy benchmark manifest

# inputs
corpus = corpus.jsonl
pairs = pairs_train.jsonl
queries = queries_eval.jsonl
qrels = qrels_eval.txt
expansion_table = expansion.json
vocab = vocab.txt

# outputs
triplets = out/triplets.jsonl
votes = out/votes.jsonl
checkpoint = out/model.ckpt
index = out/index.bin
runfile = out/with-thought.run
report = out/report.jsonl
attribution_out = out/attribution.tsv

# model
d_model = 48
n_layers = 2
n_heads = 4
d_ff = 96
max_seq_len = 64
tied_output = false

# training
lambda = 0.5
tau = 0.05
lr = 0.002
batch_size = 8
n_hard_negatives = 4
max_thought_tokens = 12
k_thoughts = 4
epochs = 150
seed = 42
normalize = true
optimizer = adam
min_freq = 1

# synthesis
generator = synthetic
noise_seed = 7
gen_max_tokens = 16
k_candidates = 4
m_examples = 3
hard_negative_member = emb
committee.0.name = bm25
committee.0.kind = lexical-bm25
committee.0.k1 = 0.9
committee.0.b = 0.4
committee.1.name = emb
committee.1.kind = embedding-cosine
committee.1.checkpoint = committee.ckpt

# retrieval
mode = with-thought
k = 4
top_n = 100
run_tag = toy
sample_temperature = 1.0
greedy = false

# evaluation
metrics = mrr@10,recall@100,ndcg@10

threads = 0
";

/// Writes the complete asset set: corpus, pairs, queries, qrels, expansion
/// table, vocabulary, committee checkpoint, and the run manifest.
pub fn write_assets(bench: &ToyBench, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    write_jsonl(&dir.join("corpus.jsonl"), &bench.corpus)?;
    write_jsonl(&dir.join("pairs_train.jsonl"), &bench.train_pairs)?;
    write_jsonl(&dir.join("queries_eval.jsonl"), &bench.eval_queries)?;

    let mut qrels = String::new();
    for (qid, did, grade) in &bench.qrels {
        qrels.push_str(&format!("{qid} 0 {did} {grade}\n"));
    }
    let qrels_path = dir.join("qrels_eval.txt");
    std::fs::write(&qrels_path, qrels).map_err(|e| CoreError::io(&qrels_path, e))?;

    let exp_path = dir.join("expansion.json");
    let exp_json = serde_json::to_string_pretty(&bench.expansion)
        .map_err(|e| CoreError::parse(&exp_path, 0, e.to_string()))?;
    std::fs::write(&exp_path, exp_json + "\n").map_err(|e| CoreError::io(&exp_path, e))?;

    let vocab = build_vocab(bench.corpus.iter().map(|d| d.text.as_str()), 1)?;
    vocab.save(&dir.join("vocab.txt"))?;

    let committee = init_params(&committee_model_config(vocab.len()), 1)?;
    save_params(&committee, &dir.join("committee.ckpt"))?;

    let conf_path = dir.join("toy.conf");
    std::fs::write(&conf_path, TOY_CONFIG).map_err(|e| CoreError::io(&conf_path, e))?;
    Ok(())
}
