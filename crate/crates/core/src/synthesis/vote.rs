//! Majority voting over per-member candidate nominations.
//!
//! The plurality winner is the selected thought. Ties break first by the
//! highest mean min-max-normalized score across members, then by the lowest
//! candidate index; the record logs which path fired.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    Majority,
    NormalizedScore,
    LowestIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberChoice {
    pub member: String,
    pub choice: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub query_id: String,
    pub n_candidates: usize,
    pub members: Vec<MemberChoice>,
    pub selected: usize,
    pub tie_break: TieBreak,
}

fn min_max_normalize(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        scores.iter().map(|s| (s - min) / (max - min)).collect()
    } else {
        vec![0.0; scores.len()]
    }
}

/// `choices[m]` is member m's nominated candidate; `scores[m]` that member's
/// full per-candidate score vector (used only for tie-breaking).
pub fn vote(choices: &[usize], scores: &[Vec<f64>]) -> Result<(usize, TieBreak)> {
    if choices.is_empty() {
        return Err(CoreError::Config("vote needs at least one member".into()));
    }
    if choices.len() != scores.len() {
        return Err(CoreError::Config(format!(
            "{} choices but {} score vectors",
            choices.len(),
            scores.len()
        )));
    }
    let n_candidates = scores[0].len();
    for (m, &c) in choices.iter().enumerate() {
        if c >= n_candidates || scores[m].len() != n_candidates {
            return Err(CoreError::Config(format!("member {m} choice out of range")));
        }
    }

    let mut counts = vec![0usize; n_candidates];
    for &c in choices {
        counts[c] += 1;
    }
    let top = *counts.iter().max().unwrap();
    let tied: Vec<usize> =
        (0..n_candidates).filter(|&c| counts[c] == top).collect();
    if tied.len() == 1 {
        return Ok((tied[0], TieBreak::Majority));
    }

    // Tie rule 1: highest mean min-max-normalized score across members.
    let normalized: Vec<Vec<f64>> = scores.iter().map(|s| min_max_normalize(s)).collect();
    let mean_of = |c: usize| -> f64 {
        normalized.iter().map(|n| n[c]).sum::<f64>() / normalized.len() as f64
    };
    let best_mean = tied.iter().map(|&c| mean_of(c)).fold(f64::NEG_INFINITY, f64::max);
    let by_score: Vec<usize> =
        tied.iter().copied().filter(|&c| mean_of(c) == best_mean).collect();
    if by_score.len() == 1 {
        return Ok((by_score[0], TieBreak::NormalizedScore));
    }
    // Tie rule 2: lowest index.
    Ok((by_score[0], TieBreak::LowestIndex))
}
