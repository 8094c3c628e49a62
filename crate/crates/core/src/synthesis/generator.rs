//! Candidate-thought generators.
//!
//! The remote kind posts to an OpenAI-style `/v1/chat/completions` endpoint
//! with exponential-backoff retries; the synthetic kind expands a trigger
//! token found in the query through a fixed table, perturbed by seeded
//! lexical noise, so the whole pipeline runs offline and deterministically.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QDocPair, Query};
use crate::error::{CoreError, Result};
use crate::textproc::{render_prompt, PromptExample, PromptTemplate, RenderedPrompt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    Remote {
        endpoint: String,
        model: String,
        max_tokens: usize,
        timeout_secs: u64,
        /// Additional attempts after the first failure.
        retries: usize,
        /// Name of the environment variable holding the bearer token.
        api_key_env: String,
        temperature: f64,
    },
    Synthetic {
        /// Trigger token (lowercased) -> expansion text.
        expansion: BTreeMap<String, String>,
        noise_seed: u64,
        max_tokens: usize,
    },
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorSpec::Remote { endpoint, model, .. } => {
                if endpoint.is_empty() {
                    return Err(CoreError::Config("remote generator endpoint is empty".into()));
                }
                if model.is_empty() {
                    return Err(CoreError::Config("remote generator model is empty".into()));
                }
                Ok(())
            }
            GeneratorSpec::Synthetic { expansion, .. } => {
                if expansion.is_empty() {
                    return Err(CoreError::Config("synthetic expansion table is empty".into()));
                }
                Ok(())
            }
        }
    }
}

/// One candidate draw: thought text, or the failure marker kept in its slot.
pub type Candidate = std::result::Result<String, String>;

fn fnv1a(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Samples m (query, response) pairs without replacement, never including
/// the target query's own pair. Deterministic for a given seed.
pub fn sample_examples(
    pairs: &[QDocPair],
    corpus: &Corpus,
    target_query_id: &str,
    m: usize,
    seed: u64,
) -> Result<Vec<PromptExample>> {
    let eligible: Vec<&QDocPair> =
        pairs.iter().filter(|p| p.query_id != target_query_id).collect();
    if eligible.len() < m {
        return Err(CoreError::InsufficientPairs { requested: m, available: eligible.len() });
    }
    let mut indices: Vec<usize> = (0..eligible.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher-Yates: the first m slots are the sample.
    for i in 0..m {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    indices[..m]
        .iter()
        .map(|&i| {
            let pair = eligible[i];
            let doc = pair_doc_text(pair, corpus)?;
            Ok(PromptExample { query: pair.query.clone(), response: doc })
        })
        .collect()
}

fn pair_doc_text(pair: &QDocPair, corpus: &Corpus) -> Result<String> {
    corpus
        .get(&pair.doc_id)
        .map(|d| d.text.clone())
        .ok_or_else(|| CoreError::UnknownDocId(pair.doc_id.clone()))
}

fn synthetic_candidate(
    query: &Query,
    expansion: &BTreeMap<String, String>,
    noise_seed: u64,
    max_tokens: usize,
    candidate_idx: usize,
) -> String {
    let mut rng =
        ChaCha8Rng::seed_from_u64(noise_seed ^ fnv1a(&query.query_id) ^ (candidate_idx as u64));
    let pool: Vec<&str> =
        expansion.values().flat_map(|t| t.split_whitespace()).collect();
    let base = query
        .text
        .split_whitespace()
        .map(|w| w.to_lowercase())
        .find_map(|w| expansion.get(&w).cloned());
    let words: Vec<String> = match base {
        Some(text) => text
            .split_whitespace()
            .map(|w| {
                // Seeded lexical noise: occasionally swap a word for a pool
                // word, which can also corrupt the expansion key. The
                // committee exists to filter those draws out.
                if rng.gen_bool(0.2) && !pool.is_empty() {
                    pool[rng.gen_range(0..pool.len())].to_string()
                } else {
                    w.to_string()
                }
            })
            .collect(),
        None => (0..6)
            .map(|_| pool[rng.gen_range(0..pool.len())].to_string())
            .collect(),
    };
    words
        .into_iter()
        .take(max_tokens)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    max_tokens: usize,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatContent,
}

#[derive(Deserialize)]
struct ChatContent {
    content: String,
}

fn remote_candidate(
    prompt: &RenderedPrompt,
    endpoint: &str,
    model: &str,
    max_tokens: usize,
    timeout_secs: u64,
    retries: usize,
    api_key_env: &str,
    temperature: f64,
) -> Candidate {
    let url = format!("{}/v1/chat/completions", endpoint.trim_end_matches('/'));
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(timeout_secs))
        .build()
        .map_err(|e| format!("client: {e}"))?;
    let body = ChatRequest {
        model,
        messages: vec![
            ChatMessage { role: "system", content: &prompt.system },
            ChatMessage { role: "user", content: &prompt.user },
        ],
        max_tokens,
        temperature,
    };
    let token = std::env::var(api_key_env).ok();

    let mut last_err = String::new();
    for attempt in 0..=retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(100 << (attempt - 1).min(5)));
        }
        let mut req = client.post(&url).json(&body);
        if let Some(t) = &token {
            req = req.bearer_auth(t);
        }
        match req.send() {
            Ok(resp) if resp.status().is_success() => {
                let parsed: ChatResponse = match resp.json() {
                    Ok(p) => p,
                    Err(e) => {
                        last_err = format!("bad response body: {e}");
                        continue;
                    }
                };
                let text = parsed
                    .choices
                    .first()
                    .map(|c| c.message.content.trim().to_string())
                    .unwrap_or_default();
                if text.is_empty() {
                    last_err = "empty completion".into();
                    continue;
                }
                return Ok(text);
            }
            Ok(resp) => last_err = format!("status {}", resp.status()),
            Err(e) => last_err = format!("request: {e}"),
        }
    }
    Err(last_err)
}

/// Draws `k_candidates` thoughts for a query. Remote failures exhaust the
/// retry budget before marking the slot failed; the caller skips the query
/// when every slot fails.
pub fn generate_candidates(
    query: &Query,
    k_candidates: usize,
    generator: &GeneratorSpec,
    template: &PromptTemplate,
    pairs: &[QDocPair],
    corpus: &Corpus,
    seed: u64,
) -> Result<Vec<Candidate>> {
    if k_candidates < 1 {
        return Err(CoreError::Config("k_candidates must be >= 1".into()));
    }
    generator.validate()?;
    let mut out = Vec::with_capacity(k_candidates);
    for j in 0..k_candidates {
        let candidate = match generator {
            GeneratorSpec::Synthetic { expansion, noise_seed, max_tokens } => {
                Ok(synthetic_candidate(query, expansion, *noise_seed, *max_tokens, j))
            }
            GeneratorSpec::Remote {
                endpoint,
                model,
                max_tokens,
                timeout_secs,
                retries,
                api_key_env,
                temperature,
            } => {
                let examples = sample_examples(
                    pairs,
                    corpus,
                    &query.query_id,
                    template.m,
                    seed ^ fnv1a(&query.query_id) ^ (j as u64),
                )?;
                let prompt = render_prompt(template, &examples, &query.text)?;
                remote_candidate(
                    &prompt,
                    endpoint,
                    model,
                    *max_tokens,
                    *timeout_secs,
                    *retries,
                    api_key_env,
                    *temperature,
                )
            }
        };
        out.push(candidate);
    }
    Ok(out)
}
