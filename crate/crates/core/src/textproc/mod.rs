//! Tokenization, vocabulary management, and template rendering.
//!
//! The tokenizer is whitespace + lowercasing over a frequency-built
//! vocabulary. Six reserved special tokens occupy the lowest ids and landmark
//! the training-sequence template: the query marker, the thought marker, the
//! generation terminator, the embedding token, padding, and unknown.

mod prompt;
mod sequence;
mod vocab;

pub use prompt::{render_prompt, PromptExample, PromptTemplate, RenderedPrompt};
pub use sequence::{
    render_document_sequence, render_query_only_sequence, render_training_sequence,
    SequenceLimits, TokenSequence,
};
pub use vocab::{build_vocab, decode, encode, Vocab, SPECIAL_TOKENS};
