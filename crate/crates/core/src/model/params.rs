//! Parameter container and initialization.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::model::tensor::Matrix;

/// Initialization scale for all weight matrices and embeddings.
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNormParams {
    fn ones(d: usize) -> Self {
        LayerNormParams { gain: vec![1.0; d], bias: vec![0.0; d] }
    }

    fn zeros(d: usize) -> Self {
        LayerNormParams { gain: vec![0.0; d], bias: vec![0.0; d] }
    }
}

/// Pre-LN block: `x + attn(ln1(x))` then `x + ffn(ln2(x))`.
/// Linear weights are stored `[out x in]`, applied as `x @ W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1: LayerNormParams,
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub ln2: LayerNormParams,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tok_emb: Matrix,
    pub pos_emb: Matrix,
    pub layers: Vec<LayerParams>,
    pub final_norm: LayerNormParams,
    /// `None` when the output projection is tied to `tok_emb`.
    pub out_proj: Option<Matrix>,
}

/// Draws weights from a zero-mean normal (std 0.02, Box-Muller over the
/// seeded stream); biases start at zero and layer-norm gains at one.
/// Deterministic for a given (config, seed).
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d_model;

    let mut normal_matrix = |rows: usize, cols: usize| -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data.iter_mut() {
            *v = sample_normal(&mut rng) * INIT_STD;
        }
        m
    };

    let tok_emb = normal_matrix(config.vocab_size, d);
    let pos_emb = normal_matrix(config.max_seq_len, d);
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        layers.push(LayerParams {
            ln1: LayerNormParams::ones(d),
            wq: normal_matrix(d, d),
            bq: vec![0.0; d],
            wk: normal_matrix(d, d),
            bk: vec![0.0; d],
            wv: normal_matrix(d, d),
            bv: vec![0.0; d],
            wo: normal_matrix(d, d),
            bo: vec![0.0; d],
            ln2: LayerNormParams::ones(d),
            w1: normal_matrix(config.d_ff, d),
            b1: vec![0.0; config.d_ff],
            w2: normal_matrix(d, config.d_ff),
            b2: vec![0.0; d],
        });
    }
    let final_norm = LayerNormParams::ones(d);
    let out_proj = if config.tied_output {
        None
    } else {
        Some(normal_matrix(config.vocab_size, d))
    };

    Ok(ModelParams { config: config.clone(), tok_emb, pos_emb, layers, final_norm, out_proj })
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; both uniforms drawn even though one output is used, to keep
    // the stream layout obvious.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

impl ModelParams {
    /// A same-shaped parameter set with every value zero; used as the
    /// gradient container and for optimizer moments.
    pub fn zeros_like(&self) -> ModelParams {
        let d = self.config.d_model;
        ModelParams {
            config: self.config.clone(),
            tok_emb: Matrix::zeros(self.config.vocab_size, d),
            pos_emb: Matrix::zeros(self.config.max_seq_len, d),
            layers: self
                .layers
                .iter()
                .map(|_| LayerParams {
                    ln1: LayerNormParams::zeros(d),
                    wq: Matrix::zeros(d, d),
                    bq: vec![0.0; d],
                    wk: Matrix::zeros(d, d),
                    bk: vec![0.0; d],
                    wv: Matrix::zeros(d, d),
                    bv: vec![0.0; d],
                    wo: Matrix::zeros(d, d),
                    bo: vec![0.0; d],
                    ln2: LayerNormParams::zeros(d),
                    w1: Matrix::zeros(self.config.d_ff, d),
                    b1: vec![0.0; self.config.d_ff],
                    w2: Matrix::zeros(d, self.config.d_ff),
                    b2: vec![0.0; d],
                })
                .collect(),
            final_norm: LayerNormParams::zeros(d),
            out_proj: self.out_proj.as_ref().map(|m| Matrix::zeros(m.rows, m.cols)),
        }
    }

    /// The weight matrix used for output logits.
    pub fn output_weight(&self) -> &Matrix {
        self.out_proj.as_ref().unwrap_or(&self.tok_emb)
    }

    /// All tensors in checkpoint-declared order, with names.
    pub fn tensors(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out: Vec<(String, &Vec<f64>)> = vec![
            ("tok_emb".into(), &self.tok_emb.data),
            ("pos_emb".into(), &self.pos_emb.data),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.ln1.gain"), &l.ln1.gain));
            out.push((format!("layer{i}.ln1.bias"), &l.ln1.bias));
            out.push((format!("layer{i}.wq"), &l.wq.data));
            out.push((format!("layer{i}.bq"), &l.bq));
            out.push((format!("layer{i}.wk"), &l.wk.data));
            out.push((format!("layer{i}.bk"), &l.bk));
            out.push((format!("layer{i}.wv"), &l.wv.data));
            out.push((format!("layer{i}.bv"), &l.bv));
            out.push((format!("layer{i}.wo"), &l.wo.data));
            out.push((format!("layer{i}.bo"), &l.bo));
            out.push((format!("layer{i}.ln2.gain"), &l.ln2.gain));
            out.push((format!("layer{i}.ln2.bias"), &l.ln2.bias));
            out.push((format!("layer{i}.w1"), &l.w1.data));
            out.push((format!("layer{i}.b1"), &l.b1));
            out.push((format!("layer{i}.w2"), &l.w2.data));
            out.push((format!("layer{i}.b2"), &l.b2));
        }
        out.push(("final_norm.gain".into(), &self.final_norm.gain));
        out.push(("final_norm.bias".into(), &self.final_norm.bias));
        if let Some(w) = &self.out_proj {
            out.push(("out_proj".into(), &w.data));
        }
        out
    }

    /// Mutable view of all tensors, in the same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = vec![&mut self.tok_emb.data, &mut self.pos_emb.data];
        for l in &mut self.layers {
            out.push(&mut l.ln1.gain);
            out.push(&mut l.ln1.bias);
            out.push(&mut l.wq.data);
            out.push(&mut l.bq);
            out.push(&mut l.wk.data);
            out.push(&mut l.bk);
            out.push(&mut l.wv.data);
            out.push(&mut l.bv);
            out.push(&mut l.wo.data);
            out.push(&mut l.bo);
            out.push(&mut l.ln2.gain);
            out.push(&mut l.ln2.bias);
            out.push(&mut l.w1.data);
            out.push(&mut l.b1);
            out.push(&mut l.w2.data);
            out.push(&mut l.b2);
        }
        out.push(&mut self.final_norm.gain);
        out.push(&mut self.final_norm.bias);
        if let Some(w) = &mut self.out_proj {
            out.push(&mut w.data);
        }
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Accumulates `other` into `self` element-wise.
    pub fn accumulate(&mut self, other: &ModelParams) {
        let mine = self.tensors_mut();
        let theirs = other.tensors();
        debug_assert_eq!(mine.len(), theirs.len());
        for (a, (_, b)) in mine.into_iter().zip(theirs) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }
}
