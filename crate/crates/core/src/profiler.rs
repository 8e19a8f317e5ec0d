//! Analytic MAC counting, host latency benchmarking, power efficiency and
//! report emission.
//!
//! MAC convention: one multiply-accumulate per term of every dense product
//! (projections, attention score and mixing products, convolutions, affine
//! maps, the per-feature embedding lift). Spiking stages count the synaptic
//! products of every timestep, so they scale with `T`. Normalization,
//! softmax, bias adds and membrane updates are not counted.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Architecture, LayerKind, Model, Prediction};
use crate::training::Metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMacs {
    pub name: String,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacCount {
    pub layers: Vec<LayerMacs>,
    pub total: u64,
}

impl MacCount {
    pub fn gop(&self) -> f64 {
        self.total as f64 / 1e9
    }
}

/// MACs of an affine map `in → out` applied to `tokens` rows.
pub fn affine_macs(tokens: u64, d_in: u64, d_out: u64) -> u64 {
    tokens * d_in * d_out
}

/// MACs of a 1-D convolution with the given geometry (0 if the kernel does not fit).
pub fn conv1d_macs(c_in: u64, c_out: u64, kernel: u64, len: u64, stride: u64, padding: u64) -> u64 {
    let padded = len + 2 * padding;
    if kernel > padded || stride == 0 {
        return 0;
    }
    let l_out = (padded - kernel) / stride + 1;
    l_out * c_out * c_in * kernel
}

/// `h·(2·n²·d_h) + 4·n·d²`: Q/K/V/output projections plus score and mixing products.
pub fn attention_macs(n: u64, d: u64) -> u64 {
    4 * n * d * d + 2 * n * n * d
}

pub fn count_macs(m: &Model) -> MacCount {
    let layers: Vec<LayerMacs> = m
        .layers
        .iter()
        .map(|l| LayerMacs { name: l.name.clone(), macs: layer_macs(m, l.kind, l) })
        .collect();
    let total = layers.iter().map(|l| l.macs).sum();
    MacCount { layers, total }
}

fn layer_macs(m: &Model, kind: LayerKind, layer: &crate::model::Layer) -> u64 {
    match &m.arch {
        Architecture::HpcNeuroNet(cfg) => {
            let (n, d, ff, t) = (cfg.n_features as u64, cfg.d_model as u64, cfg.d_ff as u64, cfg.timesteps as u64);
            let c = &cfg.conv;
            let (c_out, l_out) = (c.out_channels as u64, cfg.conv_output_len() as u64);
            match kind {
                LayerKind::Embedding => n * d,
                LayerKind::Encoder => attention_macs(n, d) + affine_macs(n, d, ff) + affine_macs(n, ff, d),
                // Three projections and two spike products; no output projection.
                LayerKind::SpikingSelfAttention => t * (3 * n * d * d + 2 * n * n * d),
                LayerKind::SnnEncode => {
                    t * conv1d_macs(c.in_channels as u64, c_out, c.kernel as u64, cfg.conv_input_len() as u64, c.stride as u64, 0)
                }
                LayerKind::SnnDecode => t * affine_macs(1, c_out * l_out, cfg.decode_width as u64),
                _ => affine_macs(1, cfg.decode_width as u64, cfg.output_dim as u64),
            }
        }
        Architecture::Mlp(_) => {
            let s = layer.param("weight").shape();
            affine_macs(1, s[0] as u64, s[1] as u64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyStats {
    pub fn from_samples_ms(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Usage("no latency samples".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            samples: samples.len(),
            mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
            p50_ms: percentile(&sorted, 50.0),
            p99_ms: percentile(&sorted, 99.0),
            min_ms: sorted[0],
            max_ms: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub latency: LatencyStats,
    /// Events per second over the measured iterations.
    pub throughput: f64,
    pub total_s: f64,
}

/// Times `iters` calls of `infer` on rows of `inputs` (cycled), after `warmup`
/// untimed calls. Single-threaded, monotonic clock.
pub fn benchmark_with(
    inputs: &[Vec<f64>],
    iters: usize,
    warmup: usize,
    mut infer: impl FnMut(&[f64]) -> Result<Prediction>,
) -> Result<Benchmark> {
    if inputs.is_empty() {
        return Err(Error::Usage("benchmark needs a non-empty dataset".into()));
    }
    if iters == 0 {
        return Err(Error::Usage("benchmark needs at least one iteration".into()));
    }
    for i in 0..warmup {
        std::hint::black_box(infer(&inputs[i % inputs.len()])?);
    }
    let mut samples = Vec::with_capacity(iters);
    let start = Instant::now();
    for i in 0..iters {
        let t0 = Instant::now();
        std::hint::black_box(infer(&inputs[i % inputs.len()])?);
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let total_s = start.elapsed().as_secs_f64();
    Ok(Benchmark { latency: LatencyStats::from_samples_ms(&samples)?, throughput: iters as f64 / total_s, total_s })
}

pub fn benchmark_latency(m: &Model, d: &Dataset, iters: usize, warmup: usize) -> Result<Benchmark> {
    benchmark_with(&d.features, iters, warmup, |x| m.forward(x))
}

/// `mac_gop · throughput / power_w`, in GOP/s/W.
pub fn power_efficiency(mac_gop_per_inference: f64, throughput: f64, power_w: f64) -> Result<f64> {
    if !(power_w > 0.0) {
        return Err(Error::Usage(format!("power must be positive, got {power_w} W")));
    }
    Ok(mac_gop_per_inference * throughput / power_w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub model: String,
    pub macs: u64,
    pub mac_gop: f64,
    pub latency: LatencyStats,
    pub throughput: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_eff: Option<f64>,
    pub layers: Vec<LayerMacs>,
}

impl ProfileReport {
    pub fn new(model: &str, macs: &MacCount, bench: &Benchmark, power_w: Option<f64>) -> Result<Self> {
        let power_eff = power_w.map(|w| power_efficiency(macs.gop(), bench.throughput, w)).transpose()?;
        Ok(Self {
            model: model.to_string(),
            macs: macs.total,
            mac_gop: macs.gop(),
            latency: bench.latency.clone(),
            throughput: bench.throughput,
            power_w,
            power_eff,
            layers: macs.layers.clone(),
        })
    }
}

pub fn profile(m: &Model, d: &Dataset, iters: usize, warmup: usize, power_w: Option<f64>) -> Result<ProfileReport> {
    let bench = benchmark_latency(m, d, iters, warmup)?;
    ProfileReport::new(m.name(), &count_macs(m), &bench, power_w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReference {
    pub dataset: String,
    pub accuracy_pct: f64,
    pub mac_gop: f64,
    pub task: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReference {
    pub model: String,
    pub accuracy_pct: f64,
    pub mac_gop: f64,
    pub latency_ms: f64,
    pub power_eff_gops_per_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedReference {
    pub label: String,
    pub datasets: Vec<DatasetReference>,
    pub models: Vec<ModelReference>,
    pub notes: Vec<String>,
}

pub const REFERENCE_LABEL: &str = "published reference, not measured";

/// Published FPGA results for the hybrid network, carried verbatim.
pub fn published_reference() -> PublishedReference {
    let ds = |dataset: &str, accuracy_pct, mac_gop, task: &str, latency_ms| DatasetReference {
        dataset: dataset.into(),
        accuracy_pct,
        mac_gop,
        task: task.into(),
        latency_ms,
    };
    let md = |model: &str, accuracy_pct, mac_gop, latency_ms, power_eff_gops_per_w| ModelReference {
        model: model.into(),
        accuracy_pct,
        mac_gop,
        latency_ms,
        power_eff_gops_per_w,
    };
    PublishedReference {
        label: REFERENCE_LABEL.into(),
        datasets: vec![
            ds("CMS-Electron", 94.48, 0.49, "Regression", 11.5),
            ds("Geant4 PID", 78.05, 1.09, "Classification", 13.1),
            ds("CMS-Proton", 88.73, 1.29, "Classification", 13.5),
        ],
        models: vec![
            md("DNN", 85.1, 1.32, 24.2, 10.4),
            md("GNN", 78.3, 2.12, 32.9, 3.5),
            md("1-D CNN", 85.8, 0.77, 18.3, 12.2),
            md("HPCNeuroNet", 88.73, 1.29, 11.5, 22.7),
        ],
        notes: vec![
            "Model comparison rows were all run on the CMS-Electron collision dataset; power efficiency is GOP/s/W.".into(),
            "The published figures list 0.49 GOP for CMS-Electron in the per-dataset table but 1.29 GOP for the same network on the same dataset in the model comparison; both are reproduced unchanged.".into(),
            "Likewise the comparison row pairs 88.73% (the CMS-Proton accuracy) and 11.5 ms (the CMS-Electron latency) for that same run.".into(),
            "Published numbers come from FPGA hardware with unpublished hyperparameters and are not comparable to host measurements above.".into(),
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
}

pub const TABLE_HEADER: &str = "Accuracy | MAC (GOP) | Task | Latency (ms)";

pub const MAC_CONVENTION: &str = "MACs count every multiply-accumulate of dense products; spiking-stage synaptic accumulates are counted per timestep (scaled by T).";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metrics: Metrics,
    pub profile: ProfileReport,
    pub mac_convention: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PublishedReference>,
}

fn task_label(m: &Metrics) -> &'static str {
    m.task.label()
}

pub fn emit_report(metrics: &Metrics, profile: &ProfileReport, format: ReportFormat, include_reference: bool) -> Result<String> {
    let report = Report {
        metrics: metrics.clone(),
        profile: profile.clone(),
        mac_convention: MAC_CONVENTION.into(),
        reference: include_reference.then(published_reference),
    };
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&report)? + "\n"),
        ReportFormat::Markdown => Ok(markdown(&report)),
    }
}

fn markdown(r: &Report) -> String {
    let (m, p) = (&r.metrics, &r.profile);
    let mut s = String::new();
    let _ = writeln!(s, "# Evaluation: {}\n", p.model);
    let _ = writeln!(s, "{TABLE_HEADER}");
    let _ = writeln!(s, "--- | --- | --- | ---");
    let _ = writeln!(s, "{:.2}% | {:.6} | {} | {:.4}", 100.0 * m.headline(), p.mac_gop, task_label(m), p.latency.mean_ms);
    let _ = writeln!(s);
    if let (Some(tol), Some(rmse)) = (m.tolerance, m.rmse) {
        let _ = writeln!(s, "Regression accuracy is the fraction of events within {:.1}% relative error; RMSE {rmse:.6}.\n", tol * 100.0);
    }
    let _ = writeln!(s, "## Host profile\n");
    let _ = writeln!(s, "Metric | Value\n--- | ---");
    let _ = writeln!(s, "Events | {}", m.n);
    let _ = writeln!(s, "Loss | {:.6}", m.loss);
    let _ = writeln!(s, "MACs per inference | {}", p.macs);
    let _ = writeln!(s, "Latency mean / p50 / p99 (ms) | {:.4} / {:.4} / {:.4}", p.latency.mean_ms, p.latency.p50_ms, p.latency.p99_ms);
    let _ = writeln!(s, "Throughput (events/s) | {:.1}", p.throughput);
    match (p.power_w, p.power_eff) {
        (Some(w), Some(e)) => {
            let _ = writeln!(s, "Power (W, supplied) | {w:.3}");
            let _ = writeln!(s, "Power efficiency (GOP/s/W) | {e:.6}");
        }
        _ => {
            let _ = writeln!(s, "Power efficiency (GOP/s/W) | n/a (no power figure supplied)");
        }
    }
    let _ = writeln!(s, "\n## MAC breakdown\n");
    let _ = writeln!(s, "Layer | MACs\n--- | ---");
    for l in &p.layers {
        let _ = writeln!(s, "{} | {}", l.name, l.macs);
    }
    let _ = writeln!(s, "Total | {}\n", p.macs);
    let _ = writeln!(s, "{}", r.mac_convention);
    if let Some(reference) = &r.reference {
        let _ = writeln!(s, "\n## Published results ({})\n", reference.label);
        let _ = writeln!(s, "Dataset | {TABLE_HEADER}");
        let _ = writeln!(s, "--- | --- | --- | --- | ---");
        for d in &reference.datasets {
            let _ = writeln!(s, "{} | {:.2}% | {:.2} | {} | {:.1}", d.dataset, d.accuracy_pct, d.mac_gop, d.task, d.latency_ms);
        }
        let _ = writeln!(s, "\nModel | Accuracy | MAC (GOP) | Latency (ms) | Power Efficiency (GOP/s/W)");
        let _ = writeln!(s, "--- | --- | --- | --- | ---");
        for md in &reference.models {
            let _ = writeln!(
                s,
                "{} | {}% | {:.2} | {:.1} | {:.1}",
                md.model, md.accuracy_pct, md.mac_gop, md.latency_ms, md.power_eff_gops_per_w
            );
        }
        let _ = writeln!(s);
        for note in &reference.notes {
            let _ = writeln!(s, "- {note}");
        }
    }
    s
}
