//! The full data-production loop with resumable output.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, Corpus, QDocPair, Query};
use crate::error::{CoreError, Result};
use crate::synthesis::committee::{Committee, CommitteeMember};
use crate::synthesis::generator::{generate_candidates, GeneratorSpec};
use crate::synthesis::vote::{vote, MemberChoice, VoteRecord};
use crate::textproc::{PromptTemplate, SequenceLimits, Vocab};

/// One line of the triplets file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtTriplet {
    pub query_id: String,
    pub query: String,
    pub thought: String,
    pub doc_id: String,
    pub doc: String,
    pub hard_negatives: Vec<String>,
}

impl ThoughtTriplet {
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        if self.thought.trim().is_empty() {
            return Err(CoreError::Config(format!("triplet {} has an empty thought", self.query_id)));
        }
        if corpus.get(&self.doc_id).is_none() {
            return Err(CoreError::UnknownDocId(self.doc_id.clone()));
        }
        if self.hard_negatives.iter().any(|n| n == &self.doc_id) {
            return Err(CoreError::Config(format!(
                "triplet {} lists its positive among hard negatives",
                self.query_id
            )));
        }
        Ok(())
    }
}

pub struct SynthesisJob<'a> {
    pub pairs: &'a [QDocPair],
    pub corpus: &'a Corpus,
    pub generator: &'a GeneratorSpec,
    pub members: &'a [CommitteeMember],
    pub template: &'a PromptTemplate,
    pub vocab: &'a Vocab,
    pub limits: SequenceLimits,
    pub k_candidates: usize,
    pub n_hard_negatives: usize,
    /// Name of the embedding member that mines hard negatives; the first
    /// embedding member when unset.
    pub hard_negative_member: Option<&'a str>,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildSummary {
    pub written: usize,
    /// Queries already present from a previous interrupted run.
    pub resumed: usize,
    /// Queries skipped because every candidate failed.
    pub skipped: Vec<String>,
    /// Queries dropped because the winning thought reproduced the positive
    /// document verbatim.
    pub dropped_verbatim: Vec<String>,
}

fn fnv1a(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Longest prefix of `pairs` already covered by valid lines in the triplets
/// file. Partially written trailing lines are discarded by rewriting the
/// file to the surviving prefix.
fn resume_prefix(
    triplets_path: &Path,
    votes_path: &Path,
    pairs: &[QDocPair],
) -> Result<(usize, Vec<ThoughtTriplet>, Vec<VoteRecord>)> {
    if !triplets_path.exists() {
        return Ok((0, Vec::new(), Vec::new()));
    }
    let tolerant_read = |path: &Path| -> Result<Vec<serde_json::Value>> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Ok(text
            .lines()
            .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
            .collect())
    };
    let triplet_lines = tolerant_read(triplets_path)?;
    let vote_lines = if votes_path.exists() { tolerant_read(votes_path)? } else { Vec::new() };

    let mut triplets: Vec<ThoughtTriplet> = Vec::new();
    let mut votes: Vec<VoteRecord> = Vec::new();
    let mut done = 0usize;
    // Walk pairs in order; a pair counts as done only when both files carry
    // its record at the matching position. Skipped queries appear in the
    // vote log only, with selected == n_candidates marker absent; to keep
    // resume simple, a skipped query writes a triplet-less vote line that we
    // also replay here.
    let mut ti = 0usize;
    let mut vi = 0usize;
    for pair in pairs {
        let Some(vline) = vote_lines.get(vi) else { break };
        let Ok(vrec) = serde_json::from_value::<VoteRecord>(vline.clone()) else { break };
        if vrec.query_id != pair.query_id {
            break;
        }
        if vrec.n_candidates == 0 {
            // Skipped or dropped query: no triplet line expected.
            votes.push(vrec);
            vi += 1;
            done += 1;
            continue;
        }
        let Some(tline) = triplet_lines.get(ti) else { break };
        let Ok(trec) = serde_json::from_value::<ThoughtTriplet>(tline.clone()) else { break };
        if trec.query_id != pair.query_id {
            break;
        }
        triplets.push(trec);
        votes.push(vrec);
        ti += 1;
        vi += 1;
        done += 1;
    }
    Ok((done, triplets, votes))
}

fn write_line<T: Serialize>(w: &mut BufWriter<File>, path: &Path, record: &T) -> Result<()> {
    let line =
        serde_json::to_string(record).map_err(|e| CoreError::parse(path, 0, e.to_string()))?;
    writeln!(w, "{line}").map_err(|e| CoreError::io(path, e))?;
    w.flush().map_err(|e| CoreError::io(path, e))
}

/// Runs sample -> generate -> score -> select -> vote for every pair,
/// mining hard negatives with the designated embedding member, and streams
/// triplets plus vote records as JSON lines. Interrupted runs resume by
/// query id and end in the same files as an uninterrupted run.
pub fn build_dataset(
    job: &SynthesisJob,
    triplets_path: &Path,
    votes_path: &Path,
) -> Result<BuildSummary> {
    if job.corpus.is_empty() {
        return Err(CoreError::EmptyCorpus);
    }
    let committee = Committee::new(job.members, job.corpus, job.vocab, job.limits)?;
    let miner = committee.embedding_member(job.hard_negative_member)?;

    let (done, kept_triplets, kept_votes) = resume_prefix(triplets_path, votes_path, job.pairs)?;

    // Rewrite the surviving prefix so partially written tails disappear.
    let reopen = |path: &Path| -> Result<BufWriter<File>> {
        Ok(BufWriter::new(
            OpenOptions::new()
                .write(true)
                .create(true)
                .truncate(true)
                .open(path)
                .map_err(|e| CoreError::io(path, e))?,
        ))
    };
    let mut tw = reopen(triplets_path)?;
    let mut vw = reopen(votes_path)?;
    for t in &kept_triplets {
        write_line(&mut tw, triplets_path, t)?;
    }
    for v in &kept_votes {
        write_line(&mut vw, votes_path, v)?;
    }

    let mut summary = BuildSummary { resumed: done, ..BuildSummary::default() };
    for pair in &job.pairs[done..] {
        let query = Query { query_id: pair.query_id.clone(), text: pair.query.clone() };
        let doc = job
            .corpus
            .get(&pair.doc_id)
            .ok_or_else(|| CoreError::UnknownDocId(pair.doc_id.clone()))?
            .clone();

        let per_query_seed = job.seed ^ fnv1a(&pair.query_id);
        let candidates = generate_candidates(
            &query,
            job.k_candidates,
            job.generator,
            job.template,
            job.pairs,
            job.corpus,
            per_query_seed,
        )?;
        let ok: Vec<String> = candidates.iter().filter_map(|c| c.clone().ok()).collect();
        if ok.is_empty() {
            log::warn!(
                "query {} skipped: all {} candidates failed",
                pair.query_id,
                candidates.len()
            );
            summary.skipped.push(pair.query_id.clone());
            write_line(
                &mut vw,
                votes_path,
                &VoteRecord {
                    query_id: pair.query_id.clone(),
                    n_candidates: 0,
                    members: Vec::new(),
                    selected: 0,
                    tie_break: crate::synthesis::vote::TieBreak::Majority,
                },
            )?;
            continue;
        }

        let mut choices = Vec::with_capacity(committee.len());
        let mut score_table = Vec::with_capacity(committee.len());
        for m in 0..committee.len() {
            let (choice, scores) = committee.select_per_member(m, &ok, &doc)?;
            choices.push(choice);
            score_table.push(scores);
        }
        let (selected, tie_break) = vote(&choices, &score_table)?;
        let thought = ok[selected].clone();

        let record = VoteRecord {
            query_id: pair.query_id.clone(),
            n_candidates: ok.len(),
            members: (0..committee.len())
                .map(|m| MemberChoice {
                    member: committee.member_name(m).to_string(),
                    choice: choices[m],
                })
                .collect(),
            selected,
            tie_break,
        };

        // A thought that reproduces the positive document verbatim would let
        // the embedding task collapse onto copying; drop it.
        if normalize_ws(&thought) == normalize_ws(&doc.text) {
            log::warn!("query {} dropped: selected thought equals the positive document", pair.query_id);
            summary.dropped_verbatim.push(pair.query_id.clone());
            write_line(&mut vw, votes_path, &VoteRecord { n_candidates: 0, ..record })?;
            continue;
        }

        let ranked = committee.rank_docs_by_embedding(miner, &pair.query, &pair.doc_id)?;
        let hard_negatives: Vec<String> = ranked
            .into_iter()
            .take(job.n_hard_negatives)
            .map(|(id, _)| id)
            .collect();

        let triplet = ThoughtTriplet {
            query_id: pair.query_id.clone(),
            query: pair.query.clone(),
            thought,
            doc_id: pair.doc_id.clone(),
            doc: doc.text.clone(),
            hard_negatives,
        };
        triplet.validate(job.corpus)?;
        write_line(&mut tw, triplets_path, &triplet)?;
        write_line(&mut vw, votes_path, &record)?;
        summary.written += 1;
    }
    Ok(summary)
}

/// Loads and validates a triplets file against a corpus.
pub fn load_triplets(path: &Path, corpus: &Corpus) -> Result<Vec<ThoughtTriplet>> {
    let triplets: Vec<ThoughtTriplet> = read_jsonl(path)?;
    for t in &triplets {
        t.validate(corpus)?;
    }
    Ok(triplets)
}
