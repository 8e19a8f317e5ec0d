//! Spiking stages: leaky integrate-and-fire dynamics, spiking self-attention,
//! the convolutional encoder, the linear decoder and rate readout.
//!
//! Every stage exists twice: as a tape function (`*_on`) used for training and
//! model evaluation, and as a value-level function that validates binary
//! inputs and evaluates the same tape code on an inference tape.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Backward, Tape, Tensor, Var};

/// Leaky integrate-and-fire neuron parameters. Reset is always hard-to-zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    /// Membrane decay per timestep, in `[0, 1)`.
    pub beta: f64,
    pub threshold: f64,
    /// Sharpness of the arctan surrogate.
    pub alpha: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self { beta: 0.9, threshold: 1.0, alpha: 2.0 }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("LIF beta must be in [0,1), got {}", self.beta)));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!("LIF threshold must be positive, got {}", self.threshold)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("surrogate alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// How the spike nonlinearity is evaluated on the forward pass.
///
/// `Smooth` replaces the step with the arctan curve whose derivative is the
/// surrogate, so the forward function is differentiable and finite
/// differences can check the backward sweep end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeMode {
    #[default]
    Heaviside,
    Smooth,
}

/// Arctan surrogate derivative of the spike function at membrane value `v`.
pub fn surrogate_gradient(v: f64, p: &LifParams) -> f64 {
    let z = FRAC_PI_2 * p.alpha * (v - p.threshold);
    p.alpha / (2.0 * (1.0 + z * z))
}

fn spike(u: f64, p: &LifParams, mode: SpikeMode) -> f64 {
    match mode {
        SpikeMode::Heaviside => {
            if u >= p.threshold {
                1.0
            } else {
                0.0
            }
        }
        SpikeMode::Smooth => 0.5 + (FRAC_PI_2 * p.alpha * (u - p.threshold)).atan() / PI,
    }
}

/// Binary tensor with timesteps on the leading axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain(Tensor);

pub fn is_binary(t: &Tensor) -> bool {
    t.data().iter().all(|&v| v == 0.0 || v == 1.0)
}

impl SpikeTrain {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.ndim() < 1 {
            return shape_err("spike train needs a leading time axis");
        }
        if !is_binary(&t) {
            return Err(Error::Contract("spike train contains values other than 0 and 1".into()));
        }
        Ok(Self(t))
    }

    pub fn timesteps(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// One explicit LIF update: returns `(V', S)`.
pub fn lif_step(v: &Tensor, input: &Tensor, p: &LifParams) -> Result<(Tensor, Tensor)> {
    if v.shape() != input.shape() {
        return shape_err(format!("lif_step membrane {:?} vs input {:?}", v.shape(), input.shape()));
    }
    let mut next = Vec::with_capacity(v.len());
    let mut spikes = Vec::with_capacity(v.len());
    for (&vm, &i) in v.data().iter().zip(input.data()) {
        let u = p.beta * vm + i;
        let s = spike(u, p, SpikeMode::Heaviside);
        next.push(u * (1.0 - s));
        spikes.push(s);
    }
    Ok((
        Tensor::new(v.shape().to_vec(), next)?,
        Tensor::new(v.shape().to_vec(), spikes)?,
    ))
}

/// Per-timestep membrane history of a LIF run.
#[derive(Debug, Clone)]
pub struct LifTrace {
    /// Membrane before threshold/reset, `β·V + I`.
    pub pre_reset: Tensor,
    /// Membrane after reset.
    pub post_reset: Tensor,
    pub spikes: Tensor,
}

fn lif_forward(input: &Tensor, p: &LifParams, mode: SpikeMode) -> Result<LifTrace> {
    let Some((&t, _)) = input.shape().split_first() else {
        return shape_err("LIF input needs a leading time axis");
    };
    if t == 0 {
        return Err(Error::Usage("LIF run over zero timesteps".into()));
    }
    let width = input.len() / t;
    let mut membrane = vec![0.0; width];
    let mut pre = Vec::with_capacity(input.len());
    let mut post = Vec::with_capacity(input.len());
    let mut spikes = Vec::with_capacity(input.len());
    for step in input.data().chunks_exact(width) {
        for (v, &i) in membrane.iter_mut().zip(step) {
            let u = p.beta * *v + i;
            let s = spike(u, p, mode);
            *v = u * (1.0 - s);
            pre.push(u);
            post.push(*v);
            spikes.push(s);
        }
    }
    let shape = input.shape().to_vec();
    Ok(LifTrace {
        pre_reset: Tensor::new(shape.clone(), pre)?,
        post_reset: Tensor::new(shape.clone(), post)?,
        spikes: Tensor::new(shape, spikes)?,
    })
}

/// LIF dynamics over the leading time axis from a zero membrane.
pub fn lif_run(inputs: &Tensor, p: &LifParams) -> Result<SpikeTrain> {
    p.validate()?;
    Ok(SpikeTrain(lif_forward(inputs, p, SpikeMode::Heaviside)?.spikes))
}

/// Same as [`lif_run`] but keeps the membrane history.
pub fn lif_trace(inputs: &Tensor, p: &LifParams) -> Result<LifTrace> {
    p.validate()?;
    lif_forward(inputs, p, SpikeMode::Heaviside)
}

/// Backpropagation through time for a LIF layer.
struct LifBackward {
    params: LifParams,
    pre_reset: Vec<f64>,
    width: usize,
}

impl Backward for LifBackward {
    fn name(&self) -> &'static str {
        "lif"
    }

    fn backward(&self, grad: &Tensor, parents: &[&Tensor], output: &Tensor) -> Vec<Option<Tensor>> {
        let w = self.width;
        let steps = self.pre_reset.len() / w;
        let mut g_in = vec![0.0; self.pre_reset.len()];
        let mut g_membrane = vec![0.0; w];
        for t in (0..steps).rev() {
            let range = t * w..(t + 1) * w;
            let u = &self.pre_reset[range.clone()];
            let s = &output.data()[range.clone()];
            let gs = &grad.data()[range.clone()];
            let gi = &mut g_in[range];
            for j in 0..w {
                let sg = surrogate_gradient(u[j], &self.params);
                let du = gs[j] * sg + g_membrane[j] * ((1.0 - s[j]) - u[j] * sg);
                gi[j] = du;
                g_membrane[j] = self.params.beta * du;
            }
        }
        vec![Some(Tensor::new(parents[0].shape().to_vec(), g_in).expect("LIF grad shape"))]
    }
}

/// LIF layer on a tape; input `[T×…]`, output spikes of the same shape.
pub fn lif_on(tape: &mut Tape, x: Var, p: &LifParams, mode: SpikeMode) -> Result<Var> {
    let input = tape.value(x);
    let trace = lif_forward(input, p, mode)?;
    let width = input.len() / input.shape()[0];
    let op = LifBackward { params: *p, pre_reset: trace.pre_reset.into_data(), width };
    tape.custom(&[x], trace.spikes, op)
}

/// Direct encoding: the analog tensor is presented at each of `timesteps`
/// steps to a LIF layer.
pub fn direct_encode_on(tape: &mut Tape, x: Var, timesteps: usize, p: &LifParams, mode: SpikeMode) -> Result<Var> {
    let repeated = tape.repeat_leading(x, timesteps)?;
    lif_on(tape, repeated, p, mode)
}

pub fn direct_encode(x: &Tensor, timesteps: usize, p: &LifParams) -> Result<SpikeTrain> {
    p.validate()?;
    let mut tape = Tape::inference();
    let xv = tape.constant(x.clone());
    let out = direct_encode_on(&mut tape, xv, timesteps, p, SpikeMode::Heaviside)?;
    Ok(SpikeTrain(tape.value(out).clone()))
}

/// Spiking self-attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SsaParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    /// Multiplier applied to the integer score map before re-spiking.
    pub scale: f64,
    pub lif: LifParams,
}

/// Tape variables produced by spiking self-attention.
#[derive(Debug, Clone, Copy)]
pub struct SsaVars {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    /// `Q·Kᵀ·V` before scaling.
    pub scores: Var,
    pub output: Var,
}

/// Softmax-free attention over spikes `[T×n×d]`.
#[allow(clippy::too_many_arguments)]
pub fn spiking_self_attention_on(
    tape: &mut Tape,
    x: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    scale: f64,
    lif: &LifParams,
    mode: SpikeMode,
) -> Result<SsaVars> {
    let [t, n, d] = tape.value(x).shape()[..] else {
        return shape_err(format!("spiking self-attention input must be T×n×d, got {:?}", tape.value(x).shape()));
    };
    let flat = tape.reshape(x, &[t * n, d])?;
    let project = |tape: &mut Tape, w: Var| -> Result<Var> {
        let p = tape.matmul(flat, w)?;
        let width = tape.value(p).shape()[1];
        let p = tape.reshape(p, &[t, n, width])?;
        lif_on(tape, p, lif, mode)
    };
    let q = project(tape, w_q)?;
    let k = project(tape, w_k)?;
    let v = project(tape, w_v)?;
    let kt = tape.transpose(k)?;
    let qk = tape.bmm(q, kt)?;
    let scores = tape.bmm(qk, v)?;
    let scaled = tape.scale(scores, scale)?;
    let output = lif_on(tape, scaled, lif, mode)?;
    Ok(SsaVars { q, k, v, scores, output })
}

/// Intermediate maps of one spiking self-attention evaluation.
#[derive(Debug, Clone)]
pub struct SsaTrace {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub scores: Tensor,
    pub output: SpikeTrain,
}

pub fn spiking_self_attention_traced(x: &SpikeTrain, p: &SsaParams) -> Result<SsaTrace> {
    if p.scale.is_nan() || p.scale <= 0.0 {
        return Err(Error::Config(format!("attention scale must be positive, got {}", p.scale)));
    }
    p.lif.validate()?;
    let mut tape = Tape::inference();
    let xv = tape.constant(x.tensor().clone());
    let wq = tape.constant(p.w_q.clone());
    let wk = tape.constant(p.w_k.clone());
    let wv = tape.constant(p.w_v.clone());
    let vars = spiking_self_attention_on(&mut tape, xv, wq, wk, wv, p.scale, &p.lif, SpikeMode::Heaviside)?;
    Ok(SsaTrace {
        q: tape.value(vars.q).clone(),
        k: tape.value(vars.k).clone(),
        v: tape.value(vars.v).clone(),
        scores: tape.value(vars.scores).clone(),
        output: SpikeTrain(tape.value(vars.output).clone()),
    })
}

pub fn spiking_self_attention(x: &SpikeTrain, p: &SsaParams) -> Result<SpikeTrain> {
    spiking_self_attention_traced(x, p).map(|t| t.output)
}

/// Convolutional encoder weights; padding is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncodeParams {
    /// `[C_out×C_in×K]`
    pub weight: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
    pub stride: usize,
}

/// Per-timestep conv1d plus channel bias, then LIF with state carried over time.
pub fn snn_encode_on(tape: &mut Tape, x: Var, weight: Var, bias: Var, stride: usize, lif: &LifParams, mode: SpikeMode) -> Result<Var> {
    if tape.value(x).ndim() != 3 {
        return shape_err(format!("snn_encode input must be T×C×L, got {:?}", tape.value(x).shape()));
    }
    let conv = tape.conv1d(x, weight, stride, 0)?;
    let biased = tape.add_bias(conv, bias, 1)?;
    lif_on(tape, biased, lif, mode)
}

pub fn snn_encode(spikes: &SpikeTrain, conv: &ConvEncodeParams, lif: &LifParams) -> Result<SpikeTrain> {
    lif.validate()?;
    let mut tape = Tape::inference();
    let x = tape.constant(spikes.tensor().clone());
    let w = tape.constant(conv.weight.clone());
    let b = tape.constant(conv.bias.clone());
    let out = snn_encode_on(&mut tape, x, w, b, conv.stride, lif, SpikeMode::Heaviside)?;
    Ok(SpikeTrain(tape.value(out).clone()))
}

/// Per-timestep affine map `[T×m]·[m×k] + b`, then LIF.
pub fn snn_decode_on(tape: &mut Tape, x: Var, weight: Var, bias: Var, lif: &LifParams, mode: SpikeMode) -> Result<Var> {
    let affine = tape.matmul(x, weight)?;
    let biased = tape.add_bias(affine, bias, 1)?;
    lif_on(tape, biased, lif, mode)
}

pub fn snn_decode(spikes: &SpikeTrain, weight: &Tensor, bias: &Tensor, lif: &LifParams) -> Result<SpikeTrain> {
    lif.validate()?;
    let mut tape = Tape::inference();
    let x = tape.constant(spikes.tensor().clone());
    let w = tape.constant(weight.clone());
    let b = tape.constant(bias.clone());
    let out = snn_decode_on(&mut tape, x, w, b, lif, SpikeMode::Heaviside)?;
    Ok(SpikeTrain(tape.value(out).clone()))
}

/// Spike rate per unit: the mean over the time axis.
pub fn rate_decode(spikes: &SpikeTrain) -> Result<Tensor> {
    let mut tape = Tape::inference();
    let x = tape.constant(spikes.tensor().clone());
    let out = tape.mean_leading(x)?;
    Ok(tape.value(out).clone())
}
