//! Full hybrid pipeline and the reference MLP baseline.
//!
//! Pipeline order: per-feature embedding plus positional encoding, a stack of
//! post-norm transformer encoder layers, direct spike encoding followed by
//! spiking self-attention, a convolutional spiking encoder, a linear spiking
//! decoder, and a rate-decoded linear output head.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::attention::{self, EncoderVars, LAYER_NORM_EPS};
use crate::container::{Blob, Container};
use crate::dataset::FeatureStats;
use crate::error::{shape_err, Error, Result};
use crate::snn::{self, LifParams, SpikeMode};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl Task {
    pub fn label(self) -> &'static str {
        match self {
            Task::Classification => "Classification",
            Task::Regression => "Regression",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HpcNeuroNetConfig {
    pub n_features: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub d_ff: usize,
    pub timesteps: usize,
    pub conv: ConvSpec,
    pub decode_width: usize,
    pub output_dim: usize,
    pub task: Task,
    pub lif: LifParams,
    pub ssa_scale: f64,
    /// Multiplier on the `±1/√fan_in` init bound for weights feeding LIF neurons.
    pub spike_init_gain: f64,
    pub seed: u64,
}

impl Default for HpcNeuroNetConfig {
    fn default() -> Self {
        Self {
            n_features: 6,
            d_model: 32,
            n_heads: 4,
            n_encoder_layers: 2,
            d_ff: 128,
            timesteps: 4,
            conv: ConvSpec { in_channels: 1, out_channels: 8, kernel: 3, stride: 1 },
            decode_width: 64,
            output_dim: 4,
            task: Task::Classification,
            lif: LifParams::default(),
            ssa_scale: 0.125,
            spike_init_gain: 3.0,
            seed: 42,
        }
    }
}

impl HpcNeuroNetConfig {
    /// Smallest configuration that still exercises every stage.
    pub fn tiny(n_features: usize, output_dim: usize) -> Self {
        Self {
            n_features,
            d_model: 4,
            n_heads: 2,
            n_encoder_layers: 1,
            d_ff: 8,
            timesteps: 2,
            conv: ConvSpec { in_channels: 1, out_channels: 4, kernel: 3, stride: 1 },
            decode_width: 6,
            output_dim,
            // Spike products over d = 4 are small integers; a unit scale keeps them above threshold.
            ssa_scale: 1.0,
            // Sparse inputs over small fan-ins need a wider init to reach threshold at all.
            spike_init_gain: 5.0,
            ..Self::default()
        }
    }

    /// Narrower single-encoder variant sized for regression on four-vector inputs.
    pub fn regression(n_features: usize) -> Self {
        Self {
            n_features,
            d_model: 16,
            n_heads: 2,
            n_encoder_layers: 1,
            d_ff: 64,
            conv: ConvSpec { in_channels: 1, out_channels: 4, kernel: 3, stride: 2 },
            decode_width: 32,
            output_dim: 1,
            task: Task::Regression,
            ..Self::default()
        }
    }

    /// Length of the flattened token sequence seen by the conv encoder.
    pub fn conv_input_len(&self) -> usize {
        self.n_features * self.d_model
    }

    pub fn conv_output_len(&self) -> usize {
        (self.conv_input_len() - self.conv.kernel) / self.conv.stride + 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_features == 0 {
            return fail("n_features must be at least 1".into());
        }
        if self.d_model < 2 || self.d_model % 2 != 0 {
            return fail(format!("d_model must be even and at least 2, got {}", self.d_model));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.d_ff < self.d_model {
            return fail(format!("d_ff {} must be at least d_model {}", self.d_ff, self.d_model));
        }
        if self.timesteps == 0 {
            return fail("timesteps must be at least 1".into());
        }
        if self.output_dim == 0 || self.decode_width == 0 {
            return fail("output_dim and decode_width must be at least 1".into());
        }
        if self.task == Task::Regression && self.output_dim != 1 {
            return fail(format!("regression head must have output_dim 1, got {}", self.output_dim));
        }
        let c = &self.conv;
        if c.in_channels != 1 {
            return fail(format!("conv encoder reads the token matrix as one channel, got {}", c.in_channels));
        }
        if c.out_channels == 0 || c.stride == 0 || c.kernel == 0 {
            return fail("conv channels, kernel and stride must be positive".into());
        }
        if c.kernel > self.conv_input_len() {
            return fail(format!("conv kernel {} exceeds flattened length {}", c.kernel, self.conv_input_len()));
        }
        if !(self.ssa_scale > 0.0 && self.ssa_scale.is_finite()) {
            return fail(format!("ssa_scale must be positive, got {}", self.ssa_scale));
        }
        if !(self.spike_init_gain > 0.0 && self.spike_init_gain.is_finite()) {
            return fail(format!("spike_init_gain must be positive, got {}", self.spike_init_gain));
        }
        self.lif.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub n_features: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub task: Task,
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.output_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "MLP widths must be at least 1: features {}, hidden {:?}, output {}",
                self.n_features, self.hidden, self.output_dim
            )));
        }
        if self.task == Task::Regression && self.output_dim != 1 {
            return Err(Error::Config("regression head must have output_dim 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum Architecture {
    HpcNeuroNet(HpcNeuroNetConfig),
    Mlp(MlpConfig),
}

impl Architecture {
    pub fn task(&self) -> Task {
        match self {
            Architecture::HpcNeuroNet(c) => c.task,
            Architecture::Mlp(c) => c.task,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Architecture::HpcNeuroNet(c) => c.n_features,
            Architecture::Mlp(c) => c.n_features,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Architecture::HpcNeuroNet(c) => c.output_dim,
            Architecture::Mlp(c) => c.output_dim,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::HpcNeuroNet(_) => "hpcneuronet",
            Architecture::Mlp(_) => "mlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Embedding,
    Encoder,
    SpikingSelfAttention,
    SnnEncode,
    SnnDecode,
    OutputHead,
    Dense,
    DenseRelu,
}

impl LayerKind {
    pub fn is_spiking(self) -> bool {
        matches!(self, LayerKind::SpikingSelfAttention | LayerKind::SnnEncode | LayerKind::SnnDecode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub params: Vec<Param>,
}

impl Layer {
    pub fn param(&self, name: &str) -> &Tensor {
        &self
            .params
            .iter()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("layer `{}` has no parameter `{name}`", self.name))
            .value
    }
}

/// Affine map applied to the raw regression head output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub scale: f64,
    pub shift: f64,
}

impl Default for OutputScaling {
    fn default() -> Self {
        Self { scale: 1.0, shift: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
    /// Z-score statistics applied to raw features before the first layer.
    pub input_norm: Option<FeatureStats>,
    pub output_scaling: OutputScaling,
}

/// Model output: class logits, or a single regression value.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub task: Task,
    pub values: Vec<f64>,
}

impl Prediction {
    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    }

    pub fn value(&self) -> f64 {
        self.values[0]
    }
}

/// Tape handles for every model parameter, indexed `[layer][param]`.
pub type ParamVars = Vec<Vec<Var>>;

/// Optional per-layer output transform; used to quantize activations.
pub type LayerHook<'a> = &'a dyn Fn(usize, &Tensor) -> Tensor;

#[derive(Clone, Copy, Default)]
pub struct ForwardOptions<'a> {
    pub mode: SpikeMode,
    pub post_layer: Option<LayerHook<'a>>,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        self.scaled(shape, fan_in, 1.0)
    }

    fn scaled(&mut self, shape: &[usize], fan_in: usize, gain: f64) -> Tensor {
        let bound = gain / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("init shape")
    }
}

fn param(name: &str, value: Tensor) -> Param {
    Param { name: name.into(), value }
}

/// Builds the hybrid pipeline with deterministic uniform `±1/√fan_in` weights.
pub fn build_model(cfg: &HpcNeuroNetConfig) -> Result<Model> {
    cfg.validate()?;
    let mut init = Init { rng: ChaCha8Rng::seed_from_u64(cfg.seed) };
    let (n, d, ff, g) = (cfg.n_features, cfg.d_model, cfg.d_ff, cfg.spike_init_gain);
    let mut layers = Vec::with_capacity(cfg.n_encoder_layers + 5);
    layers.push(Layer {
        name: "embed".into(),
        kind: LayerKind::Embedding,
        params: vec![param("weight", init.uniform(&[n, d], 1)), param("bias", init.uniform(&[n, d], 1))],
    });
    for i in 0..cfg.n_encoder_layers {
        layers.push(Layer {
            name: format!("encoder_{i}"),
            kind: LayerKind::Encoder,
            params: vec![
                param("w_q", init.uniform(&[d, d], d)),
                param("w_k", init.uniform(&[d, d], d)),
                param("w_v", init.uniform(&[d, d], d)),
                param("w_o", init.uniform(&[d, d], d)),
                param("w1", init.uniform(&[d, ff], d)),
                param("b1", init.uniform(&[ff], d)),
                param("w2", init.uniform(&[ff, d], ff)),
                param("b2", init.uniform(&[d], ff)),
                param("ln1_gamma", Tensor::ones(&[d])),
                param("ln1_beta", Tensor::zeros(&[d])),
                param("ln2_gamma", Tensor::ones(&[d])),
                param("ln2_beta", Tensor::zeros(&[d])),
            ],
        });
    }
    layers.push(Layer {
        name: "ssa".into(),
        kind: LayerKind::SpikingSelfAttention,
        params: vec![
            param("w_q", init.scaled(&[d, d], d, g)),
            param("w_k", init.scaled(&[d, d], d, g)),
            param("w_v", init.scaled(&[d, d], d, g)),
        ],
    });
    let c = &cfg.conv;
    let conv_fan = c.in_channels * c.kernel;
    layers.push(Layer {
        name: "snn_encode".into(),
        kind: LayerKind::SnnEncode,
        params: vec![
            param("weight", init.scaled(&[c.out_channels, c.in_channels, c.kernel], conv_fan, g)),
            param("bias", init.uniform(&[c.out_channels], conv_fan)),
        ],
    });
    let flat = c.out_channels * cfg.conv_output_len();
    layers.push(Layer {
        name: "snn_decode".into(),
        kind: LayerKind::SnnDecode,
        params: vec![
            param("weight", init.scaled(&[flat, cfg.decode_width], flat, g)),
            param("bias", init.uniform(&[cfg.decode_width], flat)),
        ],
    });
    layers.push(Layer {
        name: "head".into(),
        kind: LayerKind::OutputHead,
        params: vec![
            param("weight", init.uniform(&[cfg.decode_width, cfg.output_dim], cfg.decode_width)),
            param("bias", init.uniform(&[cfg.output_dim], cfg.decode_width)),
        ],
    });
    Ok(Model {
        arch: Architecture::HpcNeuroNet(cfg.clone()),
        layers,
        input_norm: None,
        output_scaling: OutputScaling::default(),
    })
}

/// Plain affine + ReLU stack; the last layer is affine only.
pub fn build_baseline_mlp(cfg: &MlpConfig) -> Result<Model> {
    cfg.validate()?;
    let mut init = Init { rng: ChaCha8Rng::seed_from_u64(cfg.seed) };
    let mut widths = vec![cfg.n_features];
    widths.extend(&cfg.hidden);
    widths.push(cfg.output_dim);
    let last = widths.len() - 2;
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| Layer {
            name: format!("dense_{i}"),
            kind: if i == last { LayerKind::Dense } else { LayerKind::DenseRelu },
            params: vec![param("weight", init.uniform(&[w[0], w[1]], w[0])), param("bias", init.uniform(&[w[1]], w[0]))],
        })
        .collect();
    Ok(Model {
        arch: Architecture::Mlp(cfg.clone()),
        layers,
        input_norm: None,
        output_scaling: OutputScaling::default(),
    })
}

fn affine_vector(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let n = tape.value(x).len();
    let row = tape.reshape(x, &[1, n])?;
    let y = tape.matmul(row, w)?;
    let y = tape.add_bias(y, b, 1)?;
    let width = tape.value(y).shape()[1];
    tape.reshape(y, &[width])
}

impl Model {
    pub fn task(&self) -> Task {
        self.arch.task()
    }

    pub fn n_features(&self) -> usize {
        self.arch.n_features()
    }

    pub fn name(&self) -> &'static str {
        self.arch.name()
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(|p| p.value.len()).sum()
    }

    /// Puts every parameter on `tape`, as trainable leaves or constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        self.layers
            .iter()
            .map(|l| l.params.iter().map(|p| tape.leaf(p.value.clone(), trainable)).collect())
            .collect()
    }

    pub fn normalize_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_features() {
            return shape_err(format!("model expects {} features, got {}", self.n_features(), x.len()));
        }
        Ok(match &self.input_norm {
            Some(stats) => stats.apply(x),
            None => x.to_vec(),
        })
    }

    /// Raw head output on `tape` (logits, or the unscaled regression value).
    pub fn forward_on(&self, tape: &mut Tape, vars: &ParamVars, x: &[f64], opts: &ForwardOptions) -> Result<Var> {
        let features = self.normalize_input(x)?;
        let mut state = tape.constant(Tensor::vector(features)?);
        for (li, (layer, v)) in self.layers.iter().zip(vars).enumerate() {
            state = self.layer_on(tape, layer, v, state, opts.mode)?;
            if let Some(hook) = opts.post_layer {
                let hooked = hook(li, tape.value(state));
                state = tape.constant(hooked);
            }
        }
        Ok(state)
    }

    fn layer_on(&self, tape: &mut Tape, layer: &Layer, v: &[Var], x: Var, mode: SpikeMode) -> Result<Var> {
        match (&self.arch, layer.kind) {
            (Architecture::HpcNeuroNet(cfg), kind) => match kind {
                LayerKind::Embedding => {
                    let tokens = attention::embed_on(tape, x, v[0], v[1])?;
                    let pe = tape.constant(attention::positional_encoding(cfg.n_features, cfg.d_model)?);
                    tape.add(tokens, pe)
                }
                LayerKind::Encoder => {
                    let vars = EncoderVars {
                        w_q: v[0],
                        w_k: v[1],
                        w_v: v[2],
                        w_o: v[3],
                        w1: v[4],
                        b1: v[5],
                        w2: v[6],
                        b2: v[7],
                        ln1_gamma: v[8],
                        ln1_beta: v[9],
                        ln2_gamma: v[10],
                        ln2_beta: v[11],
                        n_heads: cfg.n_heads,
                        eps: LAYER_NORM_EPS,
                    };
                    attention::encoder_layer_on(tape, x, &vars)
                }
                LayerKind::SpikingSelfAttention => {
                    let spikes = snn::direct_encode_on(tape, x, cfg.timesteps, &cfg.lif, mode)?;
                    let ssa = snn::spiking_self_attention_on(tape, spikes, v[0], v[1], v[2], cfg.ssa_scale, &cfg.lif, mode)?;
                    Ok(ssa.output)
                }
                LayerKind::SnnEncode => {
                    let flat = tape.reshape(x, &[cfg.timesteps, 1, cfg.conv_input_len()])?;
                    snn::snn_encode_on(tape, flat, v[0], v[1], cfg.conv.stride, &cfg.lif, mode)
                }
                LayerKind::SnnDecode => {
                    let width = cfg.conv.out_channels * cfg.conv_output_len();
                    let flat = tape.reshape(x, &[cfg.timesteps, width])?;
                    snn::snn_decode_on(tape, flat, v[0], v[1], &cfg.lif, mode)
                }
                LayerKind::OutputHead => {
                    let rates = tape.mean_leading(x)?;
                    affine_vector(tape, rates, v[0], v[1])
                }
                other => Err(Error::Config(format!("layer kind {other:?} in hybrid model"))),
            },
            (Architecture::Mlp(_), LayerKind::Dense) => affine_vector(tape, x, v[0], v[1]),
            (Architecture::Mlp(_), LayerKind::DenseRelu) => {
                let y = affine_vector(tape, x, v[0], v[1])?;
                tape.relu(y)
            }
            (Architecture::Mlp(_), other) => Err(Error::Config(format!("layer kind {other:?} in MLP"))),
        }
    }

    /// Applies output scaling to a raw head output.
    pub fn finish(&self, raw: &Tensor) -> Prediction {
        let task = self.task();
        let values = match task {
            Task::Classification => raw.data().to_vec(),
            Task::Regression => raw
                .data()
                .iter()
                .map(|v| v * self.output_scaling.scale + self.output_scaling.shift)
                .collect(),
        };
        Prediction { task, values }
    }

    pub fn forward_with(&self, x: &[f64], opts: &ForwardOptions) -> Result<Prediction> {
        let mut tape = Tape::inference();
        let vars = self.register(&mut tape, false);
        let out = self.forward_on(&mut tape, &vars, x, opts)?;
        Ok(self.finish(tape.value(out)))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Prediction> {
        self.forward_with(x, &ForwardOptions::default())
    }

    /// Input and output shapes of every layer, in order.
    pub fn layer_shapes(&self) -> Vec<(Vec<usize>, Vec<usize>)> {
        match &self.arch {
            Architecture::HpcNeuroNet(cfg) => {
                let (n, d, t) = (cfg.n_features, cfg.d_model, cfg.timesteps);
                let conv_out = vec![t, cfg.conv.out_channels, cfg.conv_output_len()];
                self.layers
                    .iter()
                    .map(|l| match l.kind {
                        LayerKind::Embedding => (vec![n], vec![n, d]),
                        LayerKind::Encoder => (vec![n, d], vec![n, d]),
                        LayerKind::SpikingSelfAttention => (vec![n, d], vec![t, n, d]),
                        LayerKind::SnnEncode => (vec![t, 1, cfg.conv_input_len()], conv_out.clone()),
                        LayerKind::SnnDecode => (
                            vec![t, cfg.conv.out_channels * cfg.conv_output_len()],
                            vec![t, cfg.decode_width],
                        ),
                        _ => (vec![t, cfg.decode_width], vec![cfg.output_dim]),
                    })
                    .collect()
            }
            Architecture::Mlp(_) => self
                .layers
                .iter()
                .map(|l| {
                    let s = l.param("weight").shape();
                    (vec![s[0]], vec![s[1]])
                })
                .collect(),
        }
    }

    pub fn to_container(&self, kind: &str, extra: serde_json::Value) -> Container {
        let layers: Vec<_> = self
            .layers
            .iter()
            .map(|l| json!({"name": l.name, "kind": l.kind, "params": l.params.iter().map(|p| &p.name).collect::<Vec<_>>()}))
            .collect();
        let header = json!({
            "kind": kind,
            "architecture": self.arch,
            "layers": layers,
            "input_norm": self.input_norm,
            "output_scaling": self.output_scaling,
            "extra": extra,
        });
        let mut c = Container::new(header);
        for l in &self.layers {
            for p in &l.params {
                c.blobs.push(Blob::from_f64(format!("{}/{}", l.name, p.name), p.value.shape(), p.value.data()));
            }
        }
        c
    }

    /// Rebuilds a model from a container; returns the `extra` header field too.
    pub fn from_container(c: &Container, expected_kind: &str) -> Result<(Self, serde_json::Value)> {
        let h = &c.header;
        if h["kind"] != expected_kind {
            return Err(Error::Format(format!("expected a `{expected_kind}` container, found {}", h["kind"])));
        }
        let arch: Architecture = serde_json::from_value(h["architecture"].clone())?;
        let mut model = match &arch {
            Architecture::HpcNeuroNet(cfg) => build_model(cfg)?,
            Architecture::Mlp(cfg) => build_baseline_mlp(cfg)?,
        };
        for layer in &mut model.layers {
            for p in &mut layer.params {
                let blob = c.blob(&format!("{}/{}", layer.name, p.name))?;
                if blob.shape != p.value.shape() {
                    return Err(Error::Format(format!("blob `{}` has shape {:?}, expected {:?}", blob.name, blob.shape, p.value.shape())));
                }
                p.value = Tensor::new(blob.shape.clone(), blob.to_f64())?;
            }
        }
        model.input_norm = serde_json::from_value(h["input_norm"].clone())?;
        model.output_scaling = serde_json::from_value(h["output_scaling"].clone())?;
        Ok((model, h["extra"].clone()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container("model", serde_json::Value::Null).save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_container(&Container::load(path)?, "model")?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_are_deterministic() {
        let cfg = HpcNeuroNetConfig::tiny(3, 2);
        assert_eq!(build_model(&cfg).unwrap(), build_model(&cfg).unwrap());
        let other = HpcNeuroNetConfig { seed: 7, ..cfg.clone() };
        assert_ne!(build_model(&cfg).unwrap(), build_model(&other).unwrap());
    }

    #[test]
    fn layer_count_follows_depth() {
        for depth in 0..4 {
            let cfg = HpcNeuroNetConfig { n_encoder_layers: depth, ..HpcNeuroNetConfig::tiny(3, 2) };
            assert_eq!(build_model(&cfg).unwrap().layers.len(), 1 + depth + 4);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = HpcNeuroNetConfig::default();
        let bad = [
            HpcNeuroNetConfig { d_model: 31, ..base.clone() },
            HpcNeuroNetConfig { n_heads: 5, ..base.clone() },
            HpcNeuroNetConfig { timesteps: 0, ..base.clone() },
            HpcNeuroNetConfig { output_dim: 0, ..base.clone() },
            HpcNeuroNetConfig { task: Task::Regression, ..base.clone() },
        ];
        for cfg in bad {
            assert!(matches!(build_model(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn tiny_model_forward_shapes() {
        let m = build_model(&HpcNeuroNetConfig::tiny(3, 2)).unwrap();
        let p = m.forward(&[0.1, -0.4, 2.0]).unwrap();
        assert_eq!(p.values.len(), 2);
        assert_eq!(p, m.forward(&[0.1, -0.4, 2.0]).unwrap());
        assert!(matches!(m.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn default_model_layer_shapes_chain() {
        let m = build_model(&HpcNeuroNetConfig::default()).unwrap();
        let shapes = m.layer_shapes();
        assert_eq!(shapes[0], (vec![6], vec![6, 32]));
        assert_eq!(shapes[4].1, vec![4, 8, 190]);
        assert_eq!(shapes.last().unwrap().1, vec![4]);
    }

    #[test]
    fn mlp_without_hidden_layers_is_affine() {
        let cfg = MlpConfig { n_features: 3, hidden: vec![], output_dim: 2, task: Task::Classification, seed: 1 };
        let m = build_baseline_mlp(&cfg).unwrap();
        assert_eq!(m.layers.len(), 1);
        let w = m.layers[0].param("weight");
        let b = m.layers[0].param("bias");
        let x = [0.5, -1.0, 2.0];
        let p = m.forward(&x).unwrap();
        for j in 0..2 {
            let expected: f64 = (0..3).map(|i| x[i] * w.get(&[i, j])).sum::<f64>() + b.data()[j];
            assert!((p.values[j] - expected).abs() < 1e-12);
        }
        assert!(build_baseline_mlp(&MlpConfig { hidden: vec![4, 0], ..cfg }).is_err());
    }
}
