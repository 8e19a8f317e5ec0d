//! Shared helpers: seeded random tensors, naive reference implementations and
//! a central finite-difference gradient checker.
#![allow(dead_code)]

pub mod grad_cases;

use hpcneuronet::model::{ConvSpec, HpcNeuroNetConfig, Task};
use hpcneuronet::quant::FixedPointFormat;
use hpcneuronet::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn rand_binary(rng: &mut impl Rng, shape: &[usize], p: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect()).unwrap()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = *t.shape().last().unwrap();
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

pub fn from_rows(r: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(r).unwrap()
}

pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    let mut c = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    c
}

pub fn naive_transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn naive_softmax_row(r: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = r.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Scores, softmax and weighted sum computed as three explicit loops.
pub fn sdpa_oracle(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let dh = q[0].len() as f64;
    let mut out = Vec::new();
    for qi in q {
        let scores: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dh.sqrt()).collect();
        let w = naive_softmax_row(&scores);
        let mut row = vec![0.0; v[0].len()];
        for (wj, vj) in w.iter().zip(v) {
            for (r, x) in row.iter_mut().zip(vj) {
                *r += wj * x;
            }
        }
        out.push(row);
    }
    out
}

/// Per-head slicing and concatenation done by hand.
pub fn mha_oracle(x: &[Vec<f64>], wq: &[Vec<f64>], wk: &[Vec<f64>], wv: &[Vec<f64>], wo: &[Vec<f64>], h: usize) -> Vec<Vec<f64>> {
    let (q, k, v) = (naive_matmul(x, wq), naive_matmul(x, wk), naive_matmul(x, wv));
    let d = q[0].len();
    let dh = d / h;
    let slice = |m: &[Vec<f64>], i: usize| -> Vec<Vec<f64>> { m.iter().map(|r| r[i * dh..(i + 1) * dh].to_vec()).collect() };
    let mut concat = vec![Vec::new(); x.len()];
    for head in 0..h {
        let o = sdpa_oracle(&slice(&q, head), &slice(&k, head), &slice(&v, head));
        for (c, r) in concat.iter_mut().zip(o) {
            c.extend(r);
        }
    }
    naive_matmul(&concat, wo)
}

pub fn layer_norm_oracle(x: &[Vec<f64>], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mu = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            r.iter().enumerate().map(|(j, v)| (v - mu) / (var + eps).sqrt() * gamma[j] + beta[j]).collect()
        })
        .collect()
}

/// Sliding-window cross-correlation, `x[C_in][L]`, `w[C_out][C_in][K]`.
pub fn conv_oracle(x: &[Vec<f64>], w: &[Vec<Vec<f64>>], stride: usize, padding: usize) -> Vec<Vec<f64>> {
    let len = x[0].len();
    let k = w[0][0].len();
    let l_out = (len + 2 * padding - k) / stride + 1;
    let at = |c: usize, pos: isize| -> f64 {
        if pos < 0 || pos as usize >= len {
            0.0
        } else {
            x[c][pos as usize]
        }
    };
    w.iter()
        .map(|wo| {
            (0..l_out)
                .map(|o| {
                    let mut acc = 0.0;
                    for (c, wc) in wo.iter().enumerate() {
                        for (j, wv) in wc.iter().enumerate() {
                            acc += wv * at(c, (o * stride + j) as isize - padding as isize);
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn lif_oracle(inputs: &[Vec<f64>], beta: f64, theta: f64) -> Vec<Vec<f64>> {
    let mut v = vec![0.0; inputs[0].len()];
    inputs
        .iter()
        .map(|i| {
            i.iter()
                .zip(v.iter_mut())
                .map(|(&x, vm)| {
                    let u = beta * *vm + x;
                    let s = if u >= theta { 1.0 } else { 0.0 };
                    *vm = u * (1.0 - s);
                    s
                })
                .collect()
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Builds a scalar loss from `inputs` (registered as trainable leaves) and
/// compares tape gradients with central differences. Returns the worst
/// relative error over every input element.
pub fn grad_check(inputs: &[Tensor], h: f64, f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let eval = |xs: &[Tensor]| -> f64 {
        let mut t = Tape::inference();
        let v: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let l = f(&mut t, &v);
        t.value(l).item().unwrap()
    };
    let mut worst: f64 = 0.0;
    for (idx, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[idx]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[idx].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[idx].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// `Σ out ⊙ r` for a fixed random `r`, turning any output into a scalar loss.
pub fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let r = rand_tensor(&mut rng(seed ^ 0x5eed), &shape, -1.0, 1.0);
    let rv = tape.constant(r);
    let prod = tape.mul(out, rv).unwrap();
    tape.sum(prod).unwrap()
}

/// Runs the CLI with `args` (program name prepended).
pub fn cli(args: &[&str]) -> i32 {
    hpcneuronet::cli::run(std::iter::once("hpcneuronet").chain(args.iter().copied()))
}

/// synth → train → eval → quantize → export-hw → profile → report inside `dir`;
/// returns each step's name and exit code.
pub fn cli_pipeline(dir: &std::path::Path) -> Vec<(&'static str, i32)> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let steps: Vec<(&'static str, Vec<String>)> = vec![
        ("synth", vec!["synth".into(), "--kind".into(), "blobs".into(), "--n".into(), "300".into(), "--seed".into(), "7".into(), "--output".into(), p("train.bin"), "--test-output".into(), p("test.bin"), "--test-fraction".into(), "0.3".into()]),
        ("train", vec!["train".into(), "--data".into(), p("train.bin"), "--preset".into(), "tiny".into(), "--epochs".into(), "3".into(), "--seed".into(), "7".into(), "--output".into(), p("model.bin"), "--history".into(), p("history.json")]),
        ("eval", vec!["eval".into(), "--model".into(), p("model.bin"), "--data".into(), p("test.bin"), "--output".into(), p("metrics.json")]),
        ("quantize", vec!["quantize".into(), "--model".into(), p("model.bin"), "--precision".into(), "16,6".into(), "--output".into(), p("model_q.bin")]),
        ("export-hw", vec!["export-hw".into(), "--model".into(), p("model_q.bin"), "--output".into(), p("hw.json")]),
        ("profile", vec!["profile".into(), "--model".into(), p("model_q.bin"), "--data".into(), p("test.bin"), "--iters".into(), "50".into(), "--warmup".into(), "5".into(), "--power-watts".into(), "2.5".into(), "--output".into(), p("profile.json")]),
        ("report", vec!["report".into(), "--metrics".into(), p("metrics.json"), "--profile".into(), p("profile.json"), "--output".into(), p("report.md")]),
    ];
    steps
        .into_iter()
        .map(|(name, args)| {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            (name, cli(&refs))
        })
        .collect()
}

/// Every format with W ≤ 8.
pub fn all_small_formats() -> impl Iterator<Item = FixedPointFormat> {
    (1..=8u32).flat_map(|w| (1..=w).map(move |i| FixedPointFormat::new(w, i).unwrap()))
}

/// Enumerates the integer grid `k·step` and picks the closest point, ties to even `k`.
pub fn nearest_even_oracle(x: f64, f: &FixedPointFormat) -> f64 {
    let half = 1i64 << (f.total_bits() - 1);
    let step = f.step();
    let mut best = (-half, f64::INFINITY);
    for k in -half..half {
        let dist = (k as f64 * step - x).abs();
        if dist < best.1 || (dist == best.1 && k % 2 == 0) {
            best = (k, dist);
        }
    }
    best.0 as f64 * step
}

/// A valid hybrid-network config with every dimension drawn small.
pub fn random_small_config(r: &mut impl Rng, i: usize) -> HpcNeuroNetConfig {
    let n_heads = [1, 2, 4][r.random_range(0..3)];
    let d_model = n_heads.max(2) * r.random_range(1..4);
    let n_features = r.random_range(2..7);
    let len = n_features * d_model;
    let task = if i % 2 == 0 { Task::Classification } else { Task::Regression };
    HpcNeuroNetConfig {
        n_features,
        d_model,
        n_heads,
        n_encoder_layers: r.random_range(0..3),
        d_ff: d_model + r.random_range(0..8),
        timesteps: r.random_range(1..5),
        conv: ConvSpec { in_channels: 1, out_channels: r.random_range(1..6), kernel: r.random_range(1..len.min(5) + 1), stride: r.random_range(1..4) },
        decode_width: r.random_range(1..10),
        output_dim: if task == Task::Regression { 1 } else { r.random_range(1..5) },
        task,
        seed: i as u64,
        ..HpcNeuroNetConfig::tiny(2, 2)
    }
}
