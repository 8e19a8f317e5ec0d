//! Signed fixed-point emulation (`ap_fixed<W,I>` semantics, sign bit counted in
//! `I`), per-layer precision configs, post-training model quantization and the
//! hardware descriptor handed to a downstream HLS flow.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::model::{ForwardOptions, LayerKind, Model, Prediction};
use crate::profiler::count_macs;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    /// Round to nearest, ties to the even grid point.
    #[default]
    NearestEven,
    /// Round toward negative infinity (drop the low bits).
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overflow {
    #[default]
    Saturate,
    /// Two's-complement wrap-around.
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "FormatRepr", into = "FormatRepr")]
pub struct FixedPointFormat {
    total_bits: u32,
    int_bits: u32,
    rounding: Rounding,
    overflow: Overflow,
}

#[derive(Serialize, Deserialize)]
struct FormatRepr {
    total_bits: u32,
    int_bits: u32,
    #[serde(default)]
    rounding: Rounding,
    #[serde(default)]
    overflow: Overflow,
}

impl TryFrom<FormatRepr> for FixedPointFormat {
    type Error = Error;

    fn try_from(r: FormatRepr) -> Result<Self> {
        Self::with_modes(r.total_bits, r.int_bits, r.rounding, r.overflow)
    }
}

impl From<FixedPointFormat> for FormatRepr {
    fn from(f: FixedPointFormat) -> Self {
        Self { total_bits: f.total_bits, int_bits: f.int_bits, rounding: f.rounding, overflow: f.overflow }
    }
}

impl FixedPointFormat {
    pub const MAX_BITS: u32 = 64;

    /// Nearest-even, saturating `<W, I>`.
    pub fn new(total_bits: u32, int_bits: u32) -> Result<Self> {
        Self::with_modes(total_bits, int_bits, Rounding::NearestEven, Overflow::Saturate)
    }

    pub fn with_modes(total_bits: u32, int_bits: u32, rounding: Rounding, overflow: Overflow) -> Result<Self> {
        if !(1 <= int_bits && int_bits <= total_bits && total_bits <= Self::MAX_BITS) {
            return Err(Error::Config(format!(
                "fixed-point format needs 1 <= I <= W <= {}, got W={total_bits}, I={int_bits}",
                Self::MAX_BITS
            )));
        }
        Ok(Self { total_bits, int_bits, rounding, overflow })
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn int_bits(&self) -> u32 {
        self.int_bits
    }

    pub fn rounding(&self) -> Rounding {
        self.rounding
    }

    pub fn overflow(&self) -> Overflow {
        self.overflow
    }

    fn frac_bits(&self) -> i32 {
        self.total_bits as i32 - self.int_bits as i32
    }

    /// Grid spacing `2^(I−W)`.
    pub fn step(&self) -> f64 {
        2f64.powi(-self.frac_bits())
    }

    pub fn min_value(&self) -> f64 {
        -(2f64.powi(self.int_bits as i32 - 1))
    }

    /// `2^(I−1) − 2^(I−W)`; rounded to `f64` when `W > 53`.
    pub fn max_value(&self) -> f64 {
        2f64.powi(self.int_bits as i32 - 1) - self.step()
    }

    /// Every representable value in ascending order (only sensible for small `W`).
    pub fn grid(&self) -> impl Iterator<Item = f64> + '_ {
        let half = 1i128 << (self.total_bits - 1);
        let step = self.step();
        (-half..half).map(move |k| k as f64 * step)
    }

    pub fn render(&self) -> String {
        format!("fixed<{},{}>", self.total_bits, self.int_bits)
    }
}

impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for FixedPointFormat {
    type Err = Error;

    /// Accepts `W,I` or `fixed<W,I>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let body = s.strip_prefix("fixed<").and_then(|r| r.strip_suffix('>')).unwrap_or(s);
        let bad = || Error::Config(format!("cannot parse fixed-point format `{s}` (expected W,I)"));
        let (w, i) = body.split_once(',').ok_or_else(bad)?;
        let w = w.trim().parse().map_err(|_| bad())?;
        let i = i.trim().parse().map_err(|_| bad())?;
        Self::new(w, i)
    }
}

/// Maps `x` onto the grid of `f`.
///
/// NaN passes through unchanged so upstream finiteness checks still fire;
/// infinities clamp to the range ends in either overflow mode.
pub fn quantize_value(x: f64, f: &FixedPointFormat) -> f64 {
    if x.is_nan() {
        return x;
    }
    if x.is_infinite() {
        return if x > 0.0 { f.max_value() } else { f.min_value() };
    }
    // Scaling by a power of two is exact, so `k` is an exact integer multiple of the step.
    let scaled = x * 2f64.powi(f.frac_bits());
    let k = match f.rounding {
        Rounding::NearestEven => scaled.round_ties_even(),
        Rounding::Truncate => scaled.floor(),
    };
    let half = 2f64.powi(f.total_bits as i32 - 1);
    let k = match f.overflow {
        Overflow::Saturate => k.clamp(-half, half - 1.0),
        Overflow::Wrap => {
            let r = k.rem_euclid(2.0 * half);
            if r >= half {
                r - 2.0 * half
            } else {
                r
            }
        }
    };
    k * f.step() + 0.0
}

pub fn quantize_tensor(t: &Tensor, f: &FixedPointFormat) -> Tensor {
    t.map(|v| quantize_value(v, f))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerPrecision {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<FixedPointFormat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation: Option<FixedPointFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionConfig {
    pub default: FixedPointFormat,
    #[serde(default)]
    pub overrides: BTreeMap<String, LayerPrecision>,
}

impl Default for PrecisionConfig {
    /// `<16,6>` everywhere.
    fn default() -> Self {
        Self::uniform(FixedPointFormat::new(16, 6).expect("valid default"))
    }
}

impl PrecisionConfig {
    pub fn uniform(f: FixedPointFormat) -> Self {
        Self { default: f, overrides: BTreeMap::new() }
    }

    /// Weight and activation formats for `layer`.
    pub fn resolve(&self, layer: &str) -> (FixedPointFormat, FixedPointFormat) {
        let o = self.overrides.get(layer).copied().unwrap_or_default();
        (o.weight.unwrap_or(self.default), o.activation.unwrap_or(self.default))
    }

    /// Parses `"16,6 encoder_0=18,8 head.weight=12,4"`: a default format, then
    /// per-layer overrides (`name=` sets both, `name.weight=` / `name.activation=` one).
    pub fn parse(spec: &str) -> Result<Self> {
        let mut tokens = spec.split(|c: char| c.is_whitespace() || c == ';').filter(|t| !t.is_empty());
        let first = tokens.next().ok_or_else(|| Error::Config("empty precision string".into()))?;
        if first.contains('=') {
            return Err(Error::Config(format!("precision string must start with a default W,I, got `{first}`")));
        }
        let mut pc = Self::uniform(first.parse()?);
        for tok in tokens {
            let (target, fmt) =
                tok.split_once('=').ok_or_else(|| Error::Config(format!("expected name=W,I, got `{tok}`")))?;
            let fmt: FixedPointFormat = fmt.parse()?;
            let (layer, part) = match target.rsplit_once('.') {
                Some((l, p @ ("weight" | "activation"))) => (l, Some(p)),
                _ => (target, None),
            };
            let entry = pc.overrides.entry(layer.to_string()).or_default();
            match part {
                Some("weight") => entry.weight = Some(fmt),
                Some(_) => entry.activation = Some(fmt),
                None => *entry = LayerPrecision { weight: Some(fmt), activation: Some(fmt) },
            }
        }
        Ok(pc)
    }

    /// Fails with every override that names no layer of `m`.
    pub fn check_layers(&self, m: &Model) -> Result<()> {
        let unknown: Vec<&str> =
            self.overrides.keys().filter(|k| m.layer(k).is_none()).map(String::as_str).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("precision overrides name unknown layers: {}", unknown.join(", "))))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    /// Float model the quantized weights were derived from.
    pub source: Model,
    /// Same structure as `source`, every parameter on its layer's weight grid.
    pub model: Model,
    pub precision: PrecisionConfig,
    pub weight_formats: Vec<FixedPointFormat>,
    pub activation_formats: Vec<FixedPointFormat>,
}

pub fn quantize_model(m: &Model, pc: &PrecisionConfig) -> Result<QuantizedModel> {
    pc.check_layers(m)?;
    let mut q = m.clone();
    let mut weight_formats = Vec::with_capacity(m.layers.len());
    let mut activation_formats = Vec::with_capacity(m.layers.len());
    for layer in &mut q.layers {
        let (wf, af) = pc.resolve(&layer.name);
        for p in &mut layer.params {
            p.value = quantize_tensor(&p.value, &wf);
        }
        weight_formats.push(wf);
        activation_formats.push(af);
    }
    Ok(QuantizedModel { source: m.clone(), model: q, precision: pc.clone(), weight_formats, activation_formats })
}

impl QuantizedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.source.to_container("quantized-model", serde_json::to_value(&self.precision)?).save(path)
    }

    /// Reloads the float source and re-applies the stored precision config.
    pub fn load(path: &Path) -> Result<Self> {
        let (source, extra) = Model::from_container(&Container::load(path)?, "quantized-model")?;
        let pc: PrecisionConfig = serde_json::from_value(extra)?;
        quantize_model(&source, &pc)
    }
}

/// Quantized weights, and every layer output passed through that layer's
/// activation format before the next layer sees it.
pub fn forward_quantized(qm: &QuantizedModel, x: &[f64]) -> Result<Prediction> {
    let hook = |li: usize, t: &Tensor| quantize_tensor(t, &qm.activation_formats[li]);
    qm.model.forward_with(x, &ForwardOptions { post_layer: Some(&hook), ..Default::default() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwLayer {
    pub name: String,
    pub kind: LayerKind,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub weight_precision: String,
    pub activation_precision: String,
    pub macs: u64,
    pub parameters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwTotals {
    pub parameters: usize,
    pub macs: u64,
    pub mac_gop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwDescriptor {
    pub model: String,
    pub layers: Vec<HwLayer>,
    pub totals: HwTotals,
}

impl HwDescriptor {
    /// Pretty JSON; field order follows the struct definitions.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn export_hw_descriptor(qm: &QuantizedModel) -> HwDescriptor {
    let macs = count_macs(&qm.model);
    let shapes = qm.model.layer_shapes();
    let layers: Vec<HwLayer> = qm
        .model
        .layers
        .iter()
        .zip(&shapes)
        .zip(&macs.layers)
        .enumerate()
        .map(|(i, ((layer, (input, output)), lm))| HwLayer {
            name: layer.name.clone(),
            kind: layer.kind,
            input_shape: input.clone(),
            output_shape: output.clone(),
            weight_precision: qm.weight_formats[i].render(),
            activation_precision: qm.activation_formats[i].render(),
            macs: lm.macs,
            parameters: layer.params.iter().map(|p| p.value.len()).sum(),
        })
        .collect();
    let total_macs: u64 = layers.iter().map(|l| l.macs).sum();
    HwDescriptor {
        model: qm.model.name().to_string(),
        totals: HwTotals {
            parameters: layers.iter().map(|l| l.parameters).sum(),
            macs: total_macs,
            mac_gop: total_macs as f64 / 1e9,
        },
        layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmt(w: u32, i: u32) -> FixedPointFormat {
        FixedPointFormat::new(w, i).unwrap()
    }

    #[test]
    fn worked_values() {
        assert_eq!(quantize_value(0.3, &fmt(8, 3)), 0.3125);
        assert_eq!(quantize_value(100.0, &fmt(8, 3)), 3.96875);
        assert_eq!(quantize_value(-100.0, &fmt(8, 3)), -4.0);
        assert_eq!(quantize_value(0.0, &fmt(1, 1)), 0.0);
        assert_eq!(quantize_value(-0.0, &fmt(8, 3)).to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn truncation_floors() {
        let f = FixedPointFormat::with_modes(8, 3, Rounding::Truncate, Overflow::Saturate).unwrap();
        assert_eq!(quantize_value(0.33, &f), 0.3125);
        assert_eq!(quantize_value(-0.01, &f), -0.03125);
    }

    #[test]
    fn wrap_is_twos_complement() {
        let f = FixedPointFormat::with_modes(4, 4, Rounding::NearestEven, Overflow::Wrap).unwrap();
        assert_eq!(quantize_value(8.0, &f), -8.0);
        assert_eq!(quantize_value(9.0, &f), -7.0);
        assert_eq!(quantize_value(-9.0, &f), 7.0);
    }

    #[test]
    fn invalid_formats() {
        for (w, i) in [(0, 0), (8, 0), (8, 9), (65, 4)] {
            assert!(matches!(FixedPointFormat::new(w, i), Err(Error::Config(_))), "{w},{i}");
        }
        assert_eq!("fixed<16,6>".parse::<FixedPointFormat>().unwrap(), fmt(16, 6));
        assert!("16;6".parse::<FixedPointFormat>().is_err());
    }

    #[test]
    fn precision_strings() {
        let pc = PrecisionConfig::parse("16,6 head=12,4 ssa.activation=8,3").unwrap();
        assert_eq!(pc.default, fmt(16, 6));
        assert_eq!(pc.resolve("head"), (fmt(12, 4), fmt(12, 4)));
        assert_eq!(pc.resolve("ssa"), (fmt(16, 6), fmt(8, 3)));
        assert_eq!(pc.resolve("embed"), (fmt(16, 6), fmt(16, 6)));
        assert!(PrecisionConfig::parse("head=12,4").is_err());
        assert!(PrecisionConfig::parse("").is_err());
    }
}
