//! Frequency-built vocabulary with reserved special tokens.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};

/// Reserved special tokens, in id order. `<query>` = 0, `<thought>` = 1,
/// `</s>` = 2, `<emb>` = 3, `<pad>` = 4, `<unk>` = 5.
pub const SPECIAL_TOKENS: [&str; 6] = ["<query>", "<thought>", "</s>", "<emb>", "<pad>", "<unk>"];

/// Bidirectional token map. Ids 0..6 are the specials from
/// [`SPECIAL_TOKENS`]; regular tokens follow, ordered by descending corpus
/// frequency then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let mut id_to_token = Vec::with_capacity(SPECIAL_TOKENS.len() + tokens.len());
        id_to_token.extend(SPECIAL_TOKENS.iter().map(|s| s.to_string()));
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { token_to_id, id_to_token }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn query_id(&self) -> usize {
        0
    }

    pub fn thought_id(&self) -> usize {
        1
    }

    pub fn eos_id(&self) -> usize {
        2
    }

    pub fn emb_id(&self) -> usize {
        3
    }

    pub fn pad_id(&self) -> usize {
        4
    }

    pub fn unk_id(&self) -> usize {
        5
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIAL_TOKENS.len()
    }

    /// Persists the vocabulary as a text file, one token per line; the line
    /// number (from zero) is the token id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for token in &self.id_to_token {
            out.push_str(token);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < SPECIAL_TOKENS.len() {
            return Err(CoreError::CorruptFile {
                kind: "vocab",
                path: path.to_path_buf(),
                reason: "fewer lines than special tokens".into(),
            });
        }
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if lines[i] != *special {
                return Err(CoreError::CorruptFile {
                    kind: "vocab",
                    path: path.to_path_buf(),
                    reason: format!("line {i} should be {special}, found {}", lines[i]),
                });
            }
        }
        Ok(Vocab::from_tokens(
            lines[SPECIAL_TOKENS.len()..].iter().map(|s| s.to_string()).collect(),
        ))
    }
}

/// Builds a vocabulary from a text corpus. Every whitespace-delimited,
/// lowercased token with frequency >= `min_freq` gets an id; ordering is
/// frequency-descending, ties broken lexicographically. Corpus tokens that
/// collide with a special-token literal are dropped so plain text can never
/// encode to a special id.
pub fn build_vocab<I, S>(corpus: I, min_freq: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut saw_text = false;
    for text in corpus {
        saw_text = true;
        for raw in text.as_ref().split_whitespace() {
            let token = raw.to_lowercase();
            if SPECIAL_TOKENS.contains(&token.as_str()) {
                continue;
            }
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    if !saw_text {
        return Err(CoreError::EmptyCorpus);
    }
    let mut tokens: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    tokens.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocab::from_tokens(tokens.into_iter().map(|(t, _)| t).collect()))
}

/// Encodes text: lowercase, split on whitespace, map unknown tokens to
/// `<unk>`.
pub fn encode(text: &str, vocab: &Vocab) -> Vec<usize> {
    text.split_whitespace()
        .map(|raw| {
            let token = raw.to_lowercase();
            if SPECIAL_TOKENS.contains(&token.as_str()) {
                vocab.unk_id()
            } else {
                vocab.id(&token).unwrap_or_else(|| vocab.unk_id())
            }
        })
        .collect()
}

/// Decodes ids back to space-joined tokens, skipping `<pad>`.
pub fn decode(ids: &[usize], vocab: &Vocab) -> String {
    let mut parts = Vec::with_capacity(ids.len());
    for &id in ids {
        if id == vocab.pad_id() {
            continue;
        }
        parts.push(vocab.token(id).unwrap_or("<unk>"));
    }
    parts.join(" ")
}
