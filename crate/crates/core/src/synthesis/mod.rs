//! Exploration-refinement data production.
//!
//! For each query/document pair: sample in-context examples, draw candidate
//! thoughts from a generator (a remote chat-completion endpoint or the
//! offline synthetic expander), score every candidate against the target
//! document with each committee member, take per-member argmaxes, and keep
//! the plurality winner as the training thought. Hard negatives are mined
//! with a designated embedding member.

mod committee;
mod dataset;
mod generator;
mod vote;

pub use committee::{Committee, CommitteeMember, ScorerKind};
pub use dataset::{build_dataset, load_triplets, BuildSummary, SynthesisJob, ThoughtTriplet};
pub use generator::{generate_candidates, sample_examples, Candidate, GeneratorSpec};
pub use vote::{vote, MemberChoice, TieBreak, VoteRecord};
