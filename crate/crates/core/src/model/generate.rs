//! Autoregressive thought generation.
//!
//! Decoding starts from `<query> q <thought>` and stops at `</s>` or the
//! token budget. Each of the k samples uses its own ChaCha stream of the
//! base seed, so samples differ while the whole draw stays reproducible.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::model::forward::encode_with_cache;
use crate::model::params::ModelParams;
use crate::textproc::{TokenSequence, Vocab};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub greedy: bool,
    pub temperature: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { greedy: false, temperature: 1.0 }
    }
}

fn bare_sequence(ids: Vec<usize>) -> TokenSequence {
    TokenSequence { ids, query_span: 0..0, thought_span: 0..0, emb_pos: None }
}

fn next_token(
    params: &ModelParams,
    ids: &[usize],
    sampling: &SamplingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let (hidden, _) = encode_with_cache(params, &bare_sequence(ids.to_vec()))?;
    let h = hidden.row(ids.len() - 1);
    let w = params.output_weight();
    let logits: Vec<f64> = (0..w.rows)
        .map(|v| w.row(v).iter().zip(h).map(|(a, b)| a * b).sum())
        .collect();

    if sampling.greedy {
        let mut best = 0;
        for (v, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = v;
            }
        }
        return Ok(best);
    }

    let temp = sampling.temperature.max(1e-6);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| ((l - max) / temp).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u: f64 = rng.gen_range(0.0..1.0) * total;
    for (v, &wv) in weights.iter().enumerate() {
        u -= wv;
        if u <= 0.0 {
            return Ok(v);
        }
    }
    Ok(weights.len() - 1)
}

/// Generates k thoughts for a query; each is the decoded token list without
/// the terminator. Greedy mode requires k = 1.
pub fn generate_thoughts(
    params: &ModelParams,
    vocab: &Vocab,
    query_ids: &[usize],
    k: usize,
    max_tokens: usize,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k < 1 {
        return Err(CoreError::InvalidConfig("k must be >= 1".into()));
    }
    if sampling.greedy && k > 1 {
        return Err(CoreError::GreedyNeedsSingleSample(k));
    }

    let mut prefix = Vec::with_capacity(query_ids.len() + 2);
    prefix.push(vocab.query_id());
    prefix.extend_from_slice(query_ids);
    prefix.push(vocab.thought_id());
    if prefix.len() + 2 > params.config.max_seq_len {
        return Err(CoreError::SequenceOverflow {
            len: prefix.len() + 2,
            max: params.config.max_seq_len,
        });
    }
    // Leave room for </s> and <emb> so the thought can be re-rendered as a
    // full embedding sequence afterwards.
    let budget = max_tokens.min(params.config.max_seq_len - prefix.len() - 2);

    let mut thoughts = Vec::with_capacity(k);
    for sample in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(sample as u64);
        let mut ids = prefix.clone();
        let mut thought = Vec::new();
        for _ in 0..budget {
            let tok = next_token(params, &ids, sampling, &mut rng)?;
            if tok == vocab.eos_id() {
                break;
            }
            thought.push(tok);
            ids.push(tok);
        }
        thoughts.push(thought);
    }
    Ok(thoughts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::batch::TrainingBatch;
    use crate::model::config::{ModelConfig, TrainConfig};
    use crate::model::optim::{train_step, Optimizer, OptimizerState};
    use crate::model::params::init_params;
    use crate::textproc::{
        build_vocab, encode, render_document_sequence, render_query_only_sequence,
        render_training_sequence, SequenceLimits,
    };

    #[test]
    fn greedy_with_k_above_one_is_rejected() {
        let vocab = build_vocab(["a"], 1).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 8,
            max_seq_len: 16,
            seed: 0,
            tied_output: false,
        };
        let params = init_params(&cfg, 0).unwrap();
        let sampling = SamplingConfig { greedy: true, temperature: 1.0 };
        let err = generate_thoughts(&params, &vocab, &[6], 2, 4, &sampling, 0).unwrap_err();
        assert!(matches!(err, CoreError::GreedyNeedsSingleSample(2)));
    }

    #[test]
    fn zero_budget_yields_empty_thought() {
        let vocab = build_vocab(["a"], 1).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 8,
            max_seq_len: 16,
            seed: 0,
            tied_output: false,
        };
        let params = init_params(&cfg, 0).unwrap();
        let thoughts =
            generate_thoughts(&params, &vocab, &[6], 3, 0, &SamplingConfig::default(), 7).unwrap();
        assert_eq!(thoughts, vec![Vec::<usize>::new(), vec![], vec![]]);
        // The rendered sequence around an empty thought stays terminated.
        let seq = render_training_sequence(&[6], &thoughts[0], true, &vocab, &SequenceLimits::default())
            .unwrap();
        assert_eq!(seq.ids[seq.eos_pos()], vocab.eos_id());
    }

    #[test]
    fn same_seed_reproduces_thoughts() {
        let vocab = build_vocab(["a b c d e"], 1).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 8,
            max_seq_len: 20,
            seed: 0,
            tied_output: false,
        };
        let params = init_params(&cfg, 5).unwrap();
        let s = SamplingConfig::default();
        let a = generate_thoughts(&params, &vocab, &[6, 7], 4, 6, &s, 99).unwrap();
        let b = generate_thoughts(&params, &vocab, &[6, 7], 4, 6, &s, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_thoughts(&params, &vocab, &[6, 7], 4, 6, &s, 100).unwrap();
        assert_ne!(a, c, "different seeds should usually differ");
    }

    #[test]
    fn overfit_model_reproduces_memorized_thought_greedily() {
        let vocab = build_vocab(["query-word alpha beta gamma doc-word filler"], 1).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 24,
            max_seq_len: 16,
            seed: 1,
            tied_output: false,
        };
        let mut params = init_params(&cfg, 1).unwrap();
        let lim = SequenceLimits::default();
        let q = encode("query-word", &vocab);
        let t = encode("alpha beta gamma", &vocab);
        let d = encode("doc-word", &vocab);
        let batch = TrainingBatch::new(
            vec![render_training_sequence(&q, &t, true, &vocab, &lim).unwrap()],
            vec![render_query_only_sequence(&q, &vocab, &lim).unwrap()],
            vec![render_document_sequence(&d, &vocab, &lim).unwrap()],
            vec![vec![render_document_sequence(&encode("filler", &vocab), &vocab, &lim).unwrap()]],
        )
        .unwrap();
        // Generation-dominated training to memorize the single thought.
        let tc = TrainConfig { lambda: 0.9, lr: 0.01, ..TrainConfig::default() };
        let mut state = OptimizerState::new(Optimizer::Adam, &params);
        for step in 0..300 {
            train_step(&mut params, &batch, &tc, &mut state, step).unwrap();
        }
        let sampling = SamplingConfig { greedy: true, temperature: 1.0 };
        let out = generate_thoughts(&params, &vocab, &q, 1, 8, &sampling, 0).unwrap();
        assert_eq!(out[0], t, "greedy decode should reproduce the memorized thought");
    }
}
