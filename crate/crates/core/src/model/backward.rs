//! Reverse-mode gradients through the cached forward pass.
//!
//! `backward` consumes the gradient of a scalar loss with respect to the
//! final hidden states and accumulates parameter gradients into a
//! `ModelParams`-shaped container. Output-projection gradients are handled by
//! the loss heads, not here.

use crate::model::forward::{gelu_deriv, ForwardCache, LnCache};
use crate::model::params::{LayerNormParams, ModelParams};
use crate::model::tensor::Matrix;

fn layer_norm_backward(
    cache: &LnCache,
    ln: &LayerNormParams,
    d_out: &Matrix,
    d_gain: &mut [f64],
    d_bias: &mut [f64],
) -> Matrix {
    let d = d_out.cols;
    let mut dx = Matrix::zeros(d_out.rows, d);
    for r in 0..d_out.rows {
        let dy = d_out.row(r);
        let xh = cache.x_hat.row(r);
        let rstd = cache.rstd[r];
        // t = gain .* dy
        let mut mean_t = 0.0;
        let mut mean_txh = 0.0;
        for i in 0..d {
            let t = ln.gain[i] * dy[i];
            mean_t += t;
            mean_txh += t * xh[i];
            d_gain[i] += dy[i] * xh[i];
            d_bias[i] += dy[i];
        }
        mean_t /= d as f64;
        mean_txh /= d as f64;
        let out = dx.row_mut(r);
        for i in 0..d {
            let t = ln.gain[i] * dy[i];
            out[i] = (t - mean_t - xh[i] * mean_txh) * rstd;
        }
    }
    dx
}

fn linear_backward_params(
    d_out: &Matrix,
    input: &Matrix,
    d_w: &mut Matrix,
    d_b: &mut [f64],
) {
    // y = input @ w^T + b  =>  dw = d_out^T @ input, db = colsum(d_out)
    d_out.matmul_tn_into(input, d_w);
    for r in 0..d_out.rows {
        for (bi, &v) in d_b.iter_mut().zip(d_out.row(r)) {
            *bi += v;
        }
    }
}

/// Backpropagates `d_hidden` (gradient w.r.t. the post-final-layer-norm
/// hidden states) through the whole stack, accumulating into `grads`.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    d_hidden: &Matrix,
    grads: &mut ModelParams,
) {
    let cfg = &params.config;
    let d = cfg.d_model;
    let n_heads = cfg.n_heads;
    let d_head = cfg.d_head();
    let scale = 1.0 / (d_head as f64).sqrt();
    let len = cache.ids.len();

    let mut dx = layer_norm_backward(
        &cache.final_ln,
        &params.final_norm,
        d_hidden,
        &mut grads.final_norm.gain,
        &mut grads.final_norm.bias,
    );

    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let lc = &cache.layers[li];
        let gl = &mut grads.layers[li];

        // Feed-forward path: x_out = x_mid + w2(gelu(w1(ln2(x_mid)))).
        let d_ff_out = &dx;
        let mut d_ff_act = d_ff_out.matmul_nn(&layer.w2);
        linear_backward_params(d_ff_out, &lc.ff_act, &mut gl.w2, &mut gl.b2);
        for (da, &pre) in d_ff_act.data.iter_mut().zip(&lc.ff_pre.data) {
            *da *= gelu_deriv(pre);
        }
        let d_ff_pre = d_ff_act;
        let d_ln2_out = d_ff_pre.matmul_nn(&layer.w1);
        linear_backward_params(&d_ff_pre, &lc.ln2.out, &mut gl.w1, &mut gl.b1);

        let mut d_x_mid = layer_norm_backward(
            &lc.ln2,
            &layer.ln2,
            &d_ln2_out,
            &mut gl.ln2.gain,
            &mut gl.ln2.bias,
        );
        d_x_mid.add_assign(&dx); // residual branch

        // Attention path: x_mid = x + wo(ctx).
        let d_attn_out = &d_x_mid;
        let d_ctx = d_attn_out.matmul_nn(&layer.wo);
        linear_backward_params(d_attn_out, &lc.ctx, &mut gl.wo, &mut gl.bo);

        let mut dq = Matrix::zeros(len, d);
        let mut dk = Matrix::zeros(len, d);
        let mut dv = Matrix::zeros(len, d);
        for h in 0..n_heads {
            let hs = h * d_head;
            let probs = &lc.attn_probs[h];
            for i in 0..len {
                let d_ctx_i = &d_ctx.row(i)[hs..hs + d_head];
                // dP[i][j] = <d_ctx_i, v_j>, then softmax backward on row i.
                let mut dp = vec![0.0; i + 1];
                let mut dot_pp = 0.0;
                for (j, dpj) in dp.iter_mut().enumerate() {
                    let vj = &lc.v.row(j)[hs..hs + d_head];
                    *dpj = d_ctx_i.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
                    dot_pp += *dpj * probs.at(i, j);
                }
                for (j, &dpj) in dp.iter().enumerate() {
                    let p = probs.at(i, j);
                    let ds = p * (dpj - dot_pp);
                    if ds != 0.0 {
                        let kj = &lc.k.row(j)[hs..hs + d_head];
                        let qi = &lc.q.row(i)[hs..hs + d_head];
                        let dq_i = &mut dq.row_mut(i)[hs..hs + d_head];
                        for (dqv, &kv) in dq_i.iter_mut().zip(kj) {
                            *dqv += ds * kv * scale;
                        }
                        let dk_j = &mut dk.row_mut(j)[hs..hs + d_head];
                        for (dkv, &qv) in dk_j.iter_mut().zip(qi) {
                            *dkv += ds * qv * scale;
                        }
                    }
                    // dV accumulation: dv_j += P[i][j] * d_ctx_i
                    if p != 0.0 {
                        let dv_j = &mut dv.row_mut(j)[hs..hs + d_head];
                        for (dvv, &dc) in dv_j.iter_mut().zip(d_ctx_i) {
                            *dvv += p * dc;
                        }
                    }
                }
            }
        }

        let mut d_ln1_out = dq.matmul_nn(&layer.wq);
        d_ln1_out.add_assign(&dk.matmul_nn(&layer.wk));
        d_ln1_out.add_assign(&dv.matmul_nn(&layer.wv));
        linear_backward_params(&dq, &lc.ln1.out, &mut gl.wq, &mut gl.bq);
        linear_backward_params(&dk, &lc.ln1.out, &mut gl.wk, &mut gl.bk);
        linear_backward_params(&dv, &lc.ln1.out, &mut gl.wv, &mut gl.bv);

        let mut d_x = layer_norm_backward(
            &lc.ln1,
            &layer.ln1,
            &d_ln1_out,
            &mut gl.ln1.gain,
            &mut gl.ln1.bias,
        );
        d_x.add_assign(&d_x_mid); // residual branch
        dx = d_x;
    }

    for (p, &id) in cache.ids.iter().enumerate() {
        let src = dx.row(p);
        let te = grads.tok_emb.row_mut(id);
        for (g, &v) in te.iter_mut().zip(src) {
            *g += v;
        }
        let pe = grads.pos_emb.row_mut(p);
        for (g, &v) in pe.iter_mut().zip(src) {
            *g += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::model::forward::encode_with_cache;
    use crate::model::params::init_params;
    use crate::textproc::TokenSequence;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            max_seq_len: 8,
            seed: 0,
            tied_output: false,
        }
    }

    fn seq(ids: Vec<usize>) -> TokenSequence {
        TokenSequence { ids, query_span: 0..0, thought_span: 0..0, emb_pos: None }
    }

    /// Scalar probe loss: sum of hidden states weighted by a fixed pattern.
    fn probe_loss(params: &ModelParams, s: &TokenSequence, w: &Matrix) -> f64 {
        let (h, _) = encode_with_cache(params, s).unwrap();
        h.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn matches_finite_differences_on_a_probe_loss() {
        let params = init_params(&cfg(), 11).unwrap();
        let s = seq(vec![1, 4, 7, 2]);
        let mut w = Matrix::zeros(4, 8);
        for (i, v) in w.data.iter_mut().enumerate() {
            *v = ((i * 37 % 23) as f64 - 11.0) / 17.0;
        }

        let (_, cache) = encode_with_cache(&params, &s).unwrap();
        let mut grads = params.zeros_like();
        backward(&params, &cache, &w, &mut grads);

        let h = 1e-5;
        let n_tensors = params.tensors().len();
        for ti in 0..n_tensors {
            let len = params.tensors()[ti].1.len();
            // Probe a few entries per tensor to keep the test quick.
            for ei in [0, len / 2, len - 1] {
                let mut plus = params.clone();
                plus.tensors_mut()[ti][ei] += h;
                let mut minus = params.clone();
                minus.tensors_mut()[ti][ei] -= h;
                let fd = (probe_loss(&plus, &s, &w) - probe_loss(&minus, &s, &w)) / (2.0 * h);
                let got = grads.tensors()[ti].1[ei];
                let denom = fd.abs().max(got.abs());
                if denom < 1e-6 {
                    assert!((fd - got).abs() < 1e-6);
                } else {
                    assert!(
                        ((fd - got) / denom).abs() < 1e-4,
                        "tensor {} entry {}: fd={} grad={}",
                        params.tensors()[ti].0,
                        ei,
                        fd,
                        got
                    );
                }
            }
        }
    }
}
