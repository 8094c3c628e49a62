//! Think-before-retrieve dense retrieval.
//!
//! A query is not searched directly: the model first writes short "thoughts"
//! that spell out what a relevant document would say, then embeds the
//! thought-augmented query and runs exact inner-product search. The crate
//! covers the whole loop at desk scale:
//!
//! - [`textproc`] — whitespace tokenizer, special-token vocabulary, and the
//!   prompt / training-sequence templates.
//! - [`model`] — a micro decoder-only transformer (f64, hand-rolled backprop)
//!   with joint generative + contrastive training, thought sampling, and
//!   attention attribution from the embedding token.
//! - [`synthesis`] — exploration/refinement data production: candidate
//!   thoughts from a pluggable generator, committee scoring, majority voting,
//!   hard-negative mining, triplet emission.
//! - [`index`] — exact top-N inner-product search with binary persistence.
//! - [`pipeline`] — end-to-end retrieval (think, encode, mean-pool, search)
//!   and run-file output.
//! - [`evalkit`] — MRR@k / Recall@k / nDCG@k plus base-vs-with-thought deltas.
//! - [`config`] — the flat key-value run configuration shared by the CLI.

pub mod config;
pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod index;
pub mod model;
pub mod pipeline;
pub mod synthesis;
pub mod textproc;
pub mod toybench;
pub mod trainer;

pub use error::CoreError;
