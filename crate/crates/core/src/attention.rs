//! Transformer stages: per-feature token embedding, sinusoidal positional
//! encoding, scaled dot-product and multi-head attention, post-norm encoder layer.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Per-feature affine lift: feature `i` becomes token `x_i·W[i] + b[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    /// `[N×d]`
    pub weight: Tensor,
    /// `[N×d]`
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub n_heads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub mha: MhaParams,
    /// `[d×d_ff]`
    pub w1: Tensor,
    pub b1: Tensor,
    /// `[d_ff×d]`
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub eps: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Tape handles for one encoder layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
    pub n_heads: usize,
    pub eps: f64,
}

impl EncoderLayerParams {
    /// Registers every parameter on `tape` as a constant.
    pub fn constants(&self, tape: &mut Tape) -> EncoderVars {
        let mut c = |t: &Tensor| tape.constant(t.clone());
        EncoderVars {
            w_q: c(&self.mha.w_q),
            w_k: c(&self.mha.w_k),
            w_v: c(&self.mha.w_v),
            w_o: c(&self.mha.w_o),
            w1: c(&self.w1),
            b1: c(&self.b1),
            w2: c(&self.w2),
            b2: c(&self.b2),
            ln1_gamma: c(&self.ln1_gamma),
            ln1_beta: c(&self.ln1_beta),
            ln2_gamma: c(&self.ln2_gamma),
            ln2_beta: c(&self.ln2_beta),
            n_heads: self.mha.n_heads,
            eps: self.eps,
        }
    }
}

fn eval(f: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<Tensor> {
    let mut tape = Tape::inference();
    let out = f(&mut tape)?;
    Ok(tape.value(out).clone())
}

pub fn embed_on(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let scaled = tape.scale_rows(weight, x)?;
    tape.add(scaled, bias)
}

/// One token per scalar feature.
pub fn embed_features(x: &[f64], p: &EmbeddingParams) -> Result<Tensor> {
    let n = p.weight.shape()[0];
    if x.len() != n {
        return shape_err(format!("expected {n} features, got {}", x.len()));
    }
    eval(|tape| {
        let xv = tape.constant(Tensor::vector(x.to_vec())?);
        let w = tape.constant(p.weight.clone());
        let b = tape.constant(p.bias.clone());
        embed_on(tape, xv, w, b)
    })
}

/// Fixed sinusoidal positional encoding `[n_tokens×d]`; `d` must be even.
pub fn positional_encoding(n_tokens: usize, d: usize) -> Result<Tensor> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Config(format!("positional encoding needs an even width, got {d}")));
    }
    let mut data = Vec::with_capacity(n_tokens * d);
    for pos in 0..n_tokens {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Tensor::new(vec![n_tokens, d], data)
}

/// Attention output and the row-stochastic weight matrix.
pub fn sdpa_on(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (tape.value(q).shape(), tape.value(k).shape(), tape.value(v).shape());
    let d_h = match (qs, ks, vs) {
        ([_, dq], [nk, dk], [nv, _]) if dq == dk && nk == nv => *dq,
        _ => return shape_err(format!("attention shapes Q{qs:?} K{ks:?} V{vs:?} disagree")),
    };
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d_h as f64).sqrt())?;
    let weights = tape.softmax(scaled, 1)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// `softmax(Q·Kᵀ/√d_h)·V`
pub fn scaled_dot_product_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    eval(|tape| {
        let (q, k, v) = (tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()));
        sdpa_on(tape, q, k, v).map(|(out, _)| out)
    })
}

/// Row-stochastic attention weights `softmax(Q·Kᵀ/√d_h)`.
pub fn attention_weights(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    eval(|tape| {
        let (q, k) = (tape.constant(q.clone()), tape.constant(k.clone()));
        let v = tape.constant(Tensor::zeros(&[tape.value(k).shape()[0], 1]));
        sdpa_on(tape, q, k, v).map(|(_, w)| w)
    })
}

#[allow(clippy::too_many_arguments)]
pub fn mha_on(tape: &mut Tape, x: Var, w_q: Var, w_k: Var, w_v: Var, w_o: Var, n_heads: usize) -> Result<Var> {
    let d = match tape.value(x).shape() {
        [_, d] => *d,
        s => return shape_err(format!("multi-head attention input must be n×d, got {s:?}")),
    };
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Config(format!("model width {d} is not divisible by {n_heads} heads")));
    }
    let d_h = d / n_heads;
    let q = tape.matmul(x, w_q)?;
    let k = tape.matmul(x, w_k)?;
    let v = tape.matmul(x, w_v)?;
    let heads = if n_heads == 1 {
        vec![sdpa_on(tape, q, k, v)?.0]
    } else {
        let mut heads = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let (a, b) = (h * d_h, (h + 1) * d_h);
            let qh = tape.slice_last(q, a, b)?;
            let kh = tape.slice_last(k, a, b)?;
            let vh = tape.slice_last(v, a, b)?;
            heads.push(sdpa_on(tape, qh, kh, vh)?.0);
        }
        heads
    };
    let joined = if heads.len() == 1 { heads[0] } else { tape.concat_last(&heads)? };
    tape.matmul(joined, w_o)
}

pub fn multi_head_attention(x: &Tensor, p: &MhaParams) -> Result<Tensor> {
    eval(|tape| {
        let xv = tape.constant(x.clone());
        let w: Vec<Var> = [&p.w_q, &p.w_k, &p.w_v, &p.w_o].iter().map(|t| tape.constant((*t).clone())).collect();
        mha_on(tape, xv, w[0], w[1], w[2], w[3], p.n_heads)
    })
}

/// `Y = LN(X + MHA(X)); Z = LN(Y + FFN(Y))` with a ReLU feed-forward block.
pub fn encoder_layer_on(tape: &mut Tape, x: Var, p: &EncoderVars) -> Result<Var> {
    let attn = mha_on(tape, x, p.w_q, p.w_k, p.w_v, p.w_o, p.n_heads)?;
    let res1 = tape.add(x, attn)?;
    let y = tape.layer_norm(res1, p.ln1_gamma, p.ln1_beta, p.eps)?;
    let h = tape.matmul(y, p.w1)?;
    let h = tape.add_bias(h, p.b1, 1)?;
    let h = tape.relu(h)?;
    let f = tape.matmul(h, p.w2)?;
    let f = tape.add_bias(f, p.b2, 1)?;
    let res2 = tape.add(y, f)?;
    tape.layer_norm(res2, p.ln2_gamma, p.ln2_beta, p.eps)
}

pub fn transformer_encoder_layer(x: &Tensor, p: &EncoderLayerParams) -> Result<Tensor> {
    eval(|tape| {
        let xv = tape.constant(x.clone());
        let vars = p.constants(tape);
        encoder_layer_on(tape, xv, &vars)
    })
}
