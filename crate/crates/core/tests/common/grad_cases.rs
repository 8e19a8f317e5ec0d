//! Finite-difference gradient cases; each returns the worst relative error for one seed.

use super::*;
use hpcneuronet::attention::{embed_on, encoder_layer_on, mha_on, sdpa_on, EncoderVars, LAYER_NORM_EPS};
use hpcneuronet::model::{build_baseline_mlp, build_model, ForwardOptions, HpcNeuroNetConfig, MlpConfig, Model, Task};
use hpcneuronet::snn::{direct_encode_on, lif_on, snn_decode_on, snn_encode_on, spiking_self_attention_on, LifParams, SpikeMode};
use hpcneuronet::training::{cross_entropy_on, mse_on};
use hpcneuronet::{Tape, Tensor, Var};

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-3;
pub const SEEDS: u64 = 20;

/// Worst relative error of `case` over all seeds.
pub fn worst(case: fn(u64) -> f64) -> f64 {
    (0..SEEDS).map(case).fold(0.0, f64::max)
}

fn smooth_lif() -> LifParams {
    LifParams { beta: 0.8, threshold: 1.0, alpha: 2.0 }
}

pub fn matmul_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let (m, k, n) = (1 + s as usize % 4, 2 + s as usize % 3, 1 + s as usize % 5);
    let ins = [rand_tensor(&mut r, &[m, k], -1.0, 1.0), rand_tensor(&mut r, &[k, n], -1.0, 1.0)];
    grad_check(&ins, H, |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn bmm_and_transpose_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let ins = [rand_tensor(&mut r, &[2, 3, 4], -1.0, 1.0), rand_tensor(&mut r, &[2, 5, 4], -1.0, 1.0)];
    grad_check(&ins, H, |t, v| {
        let bt = t.transpose(v[1]).unwrap();
        let y = t.bmm(v[0], bt).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn elementwise_grads(s: u64) -> f64 {
    let mut r = rng(s);
    let ins = [rand_tensor(&mut r, &[3, 4], -1.0, 1.0), rand_tensor(&mut r, &[3, 4], -1.0, 1.0)];
    grad_check(&ins, H, |t, v| {
        let a = t.add(v[0], v[1]).unwrap();
        let m = t.mul(a, v[0]).unwrap();
        let y = t.scale(m, -1.7).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn relu_grad(s: u64) -> f64 {
    let mut r = rng(s);
    // keep inputs away from the kink so central differences are valid
    let x = rand_tensor(&mut r, &[4, 5], 0.1, 1.0).map(|v| if (v * 1e4) as u64 % 2 == 0 { v } else { -v });
    grad_check(&[x], H, |t, v| {
        let y = t.relu(v[0]).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn add_bias_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let axis = s as usize % 3;
    let shape = [2, 3, 4];
    let ins = [rand_tensor(&mut r, &shape, -1.0, 1.0), rand_tensor(&mut r, &[shape[axis]], -1.0, 1.0)];
    grad_check(&ins, H, |t, v| {
        let y = t.add_bias(v[0], v[1], axis).unwrap();
        let y = t.mul(y, y).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn scale_rows_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let ins = [rand_tensor(&mut r, &[4, 3], -1.0, 1.0), rand_tensor(&mut r, &[4], -2.0, 2.0)];
    grad_check(&ins, H, |t, v| {
        let y = t.scale_rows(v[0], v[1]).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn softmax_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let axis = s as usize % 2;
    let x = rand_tensor(&mut r, &[3, 5], -3.0, 3.0);
    grad_check(&[x], H, |t, v| {
        let y = t.softmax(v[0], axis).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn layer_norm_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let ins = [
        rand_tensor(&mut r, &[3, 6], -2.0, 2.0),
        rand_tensor(&mut r, &[6], 0.5, 1.5),
        rand_tensor(&mut r, &[6], -0.5, 0.5),
    ];
    grad_check(&ins, H, |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn conv1d_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let stride = 1 + s as usize % 3;
    let pad = s as usize % 2;
    let batched = s % 2 == 0;
    let x_shape: Vec<usize> = if batched { vec![2, 2, 9] } else { vec![2, 9] };
    let ins = [rand_tensor(&mut r, &x_shape, -1.0, 1.0), rand_tensor(&mut r, &[3, 2, 3], -1.0, 1.0)];
    grad_check(&ins, H, |t, v| {
        let y = t.conv1d(v[0], v[1], stride, pad).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn shape_op_grads(s: u64) -> f64 {
    let mut r = rng(s);
    let ins = [rand_tensor(&mut r, &[2, 6], -1.0, 1.0), rand_tensor(&mut r, &[3, 4], -1.0, 1.0)];
    grad_check(&ins, H, |t, v| {
        let a = t.reshape(v[0], &[3, 4]).unwrap();
        let left = t.slice_last(a, 0, 3).unwrap();
        let right = t.slice_last(v[1], 1, 4).unwrap();
        let c = t.concat_last(&[left, right, v[1]]).unwrap();
        let rep = t.repeat_leading(c, 3).unwrap();
        let sq = t.mul(rep, rep).unwrap();
        let m = t.mean_leading(sq).unwrap();
        weighted_sum(t, m, s)
    })
}

pub fn lif_grad_in_smooth_mode(s: u64) -> f64 {
    let mut r = rng(s);
    let x = rand_tensor(&mut r, &[6, 5], -0.5, 2.0);
    grad_check(&[x], H, |t, v| {
        let y = lif_on(t, v[0], &smooth_lif(), SpikeMode::Smooth).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn direct_encode_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let x = rand_tensor(&mut r, &[3, 4], -1.0, 2.0);
    grad_check(&[x], H, |t, v| {
        let y = direct_encode_on(t, v[0], 4, &smooth_lif(), SpikeMode::Smooth).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn ssa_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let ins = [
        rand_tensor(&mut r, &[2, 3, 4], 0.0, 1.0),
        rand_tensor(&mut r, &[4, 4], -1.0, 1.5),
        rand_tensor(&mut r, &[4, 4], -1.0, 1.5),
        rand_tensor(&mut r, &[4, 4], -1.0, 1.5),
    ];
    grad_check(&ins, H, |t, v| {
        let out = spiking_self_attention_on(t, v[0], v[1], v[2], v[3], 0.5, &smooth_lif(), SpikeMode::Smooth).unwrap();
        weighted_sum(t, out.output, s)
    })
}

pub fn snn_encode_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let ins = [
        rand_tensor(&mut r, &[3, 1, 10], 0.0, 1.0),
        rand_tensor(&mut r, &[2, 1, 3], -1.0, 2.0),
        rand_tensor(&mut r, &[2], -0.5, 0.5),
    ];
    grad_check(&ins, H, |t, v| {
        let y = snn_encode_on(t, v[0], v[1], v[2], 1 + s as usize % 2, &smooth_lif(), SpikeMode::Smooth).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn snn_decode_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let ins = [
        rand_tensor(&mut r, &[3, 6], 0.0, 1.0),
        rand_tensor(&mut r, &[6, 4], -1.0, 1.5),
        rand_tensor(&mut r, &[4], -0.5, 0.5),
    ];
    grad_check(&ins, H, |t, v| {
        let y = snn_decode_on(t, v[0], v[1], v[2], &smooth_lif(), SpikeMode::Smooth).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn embedding_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let ins = [
        rand_tensor(&mut r, &[5], -2.0, 2.0),
        rand_tensor(&mut r, &[5, 4], -1.0, 1.0),
        rand_tensor(&mut r, &[5, 4], -1.0, 1.0),
    ];
    grad_check(&ins, H, |t, v| {
        let y = embed_on(t, v[0], v[1], v[2]).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn sdpa_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let n = 1 + s as usize % 4;
    let ins = [
        rand_tensor(&mut r, &[n, 3], -1.0, 1.0),
        rand_tensor(&mut r, &[n, 3], -1.0, 1.0),
        rand_tensor(&mut r, &[n, 3], -1.0, 1.0),
    ];
    grad_check(&ins, H, |t, v| {
        let (out, _) = sdpa_on(t, v[0], v[1], v[2]).unwrap();
        weighted_sum(t, out, s)
    })
}

pub fn mha_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let h = [1, 2, 4][s as usize % 3];
    let mut ins = vec![rand_tensor(&mut r, &[3, 4], -1.0, 1.0)];
    ins.extend((0..4).map(|_| rand_tensor(&mut r, &[4, 4], -0.8, 0.8)));
    grad_check(&ins, H, |t, v| {
        let y = mha_on(t, v[0], v[1], v[2], v[3], v[4], h).unwrap();
        weighted_sum(t, y, s)
    })
}

fn encoder_inputs(s: u64) -> Vec<Tensor> {
    let mut r = rng(s);
    let (n, d, ff) = (3, 4, 8);
    let mut ins = vec![rand_tensor(&mut r, &[n, d], -1.0, 1.0)];
    ins.extend((0..4).map(|_| rand_tensor(&mut r, &[d, d], -0.8, 0.8)));
    ins.push(rand_tensor(&mut r, &[d, ff], -0.8, 0.8));
    ins.push(rand_tensor(&mut r, &[ff], -0.5, 0.5));
    ins.push(rand_tensor(&mut r, &[ff, d], -0.8, 0.8));
    ins.push(rand_tensor(&mut r, &[d], -0.5, 0.5));
    for _ in 0..2 {
        ins.push(rand_tensor(&mut r, &[d], 0.5, 1.5));
        ins.push(rand_tensor(&mut r, &[d], -0.5, 0.5));
    }
    ins
}

fn encoder_vars(v: &[Var]) -> EncoderVars {
    EncoderVars {
        w_q: v[1],
        w_k: v[2],
        w_v: v[3],
        w_o: v[4],
        w1: v[5],
        b1: v[6],
        w2: v[7],
        b2: v[8],
        ln1_gamma: v[9],
        ln1_beta: v[10],
        ln2_gamma: v[11],
        ln2_beta: v[12],
        n_heads: 2,
        eps: LAYER_NORM_EPS,
    }
}

pub fn encoder_layer_grad(s: u64) -> f64 {
    grad_check(&encoder_inputs(s), H, |t, v| {
        let y = encoder_layer_on(t, v[0], &encoder_vars(v)).unwrap();
        weighted_sum(t, y, s)
    })
}

pub fn cross_entropy_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let logits = rand_tensor(&mut r, &[5], -3.0, 3.0);
    grad_check(&[logits], H, |t, v| cross_entropy_on(t, v[0], s as usize % 5).unwrap())
}

pub fn mse_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let pred = rand_tensor(&mut r, &[1], -3.0, 3.0);
    grad_check(&[pred], H, |t, v| mse_on(t, v[0], 0.25).unwrap())
}

fn model_grad_check(model: &Model, x: &[f64], loss: impl Fn(&mut Tape, Var) -> Var) -> f64 {
    let shapes: Vec<usize> = model.layers.iter().map(|l| l.params.len()).collect();
    let flat: Vec<Tensor> = model.layers.iter().flat_map(|l| l.params.iter().map(|p| p.value.clone())).collect();
    grad_check(&flat, H, |t, v| {
        let mut it = v.iter().copied();
        let vars = shapes.iter().map(|&n| it.by_ref().take(n).collect()).collect();
        let opts = ForwardOptions { mode: SpikeMode::Smooth, post_layer: None };
        let out = model.forward_on(t, &vars, x, &opts).unwrap();
        loss(t, out)
    })
}

pub fn full_tiny_model_grad_classification(s: u64) -> f64 {
    let cfg = HpcNeuroNetConfig { seed: s, ..HpcNeuroNetConfig::tiny(3, 3) };
    let model = build_model(&cfg).unwrap();
    let mut r = rng(1000 + s);
    let x = rand_tensor(&mut r, &[3], -1.5, 1.5);
    model_grad_check(&model, x.data(), |t, out| cross_entropy_on(t, out, s as usize % 3).unwrap())
}

pub fn full_tiny_model_grad_regression(s: u64) -> f64 {
    let cfg = HpcNeuroNetConfig { seed: s, task: Task::Regression, ..HpcNeuroNetConfig::tiny(3, 1) };
    let model = build_model(&cfg).unwrap();
    let mut r = rng(2000 + s);
    let x = rand_tensor(&mut r, &[3], -1.5, 1.5);
    model_grad_check(&model, x.data(), |t, out| mse_on(t, out, 0.3).unwrap())
}

pub fn baseline_mlp_grad(s: u64) -> f64 {
    let cfg = MlpConfig { n_features: 4, hidden: vec![6, 5], output_dim: 3, task: Task::Classification, seed: s };
    let model = build_baseline_mlp(&cfg).unwrap();
    let mut r = rng(3000 + s);
    let x = rand_tensor(&mut r, &[4], -1.5, 1.5);
    model_grad_check(&model, x.data(), |t, out| cross_entropy_on(t, out, 1).unwrap())
}

pub fn three_layer_composite_grad(s: u64) -> f64 {
    let mut r = rng(s);
    let ins = [
        rand_tensor(&mut r, &[4, 5], -1.0, 1.0),
        rand_tensor(&mut r, &[5, 6], -1.0, 1.0),
        rand_tensor(&mut r, &[6, 3], -1.0, 1.0),
    ];
    grad_check(&ins, H, |t, v| {
        let a = t.matmul(v[0], v[1]).unwrap();
        let a = t.softmax(a, 1).unwrap();
        let b = t.matmul(a, v[2]).unwrap();
        let b = t.mul(b, b).unwrap();
        weighted_sum(t, b, s)
    })
}

/// Every case with a display name.
pub fn all() -> Vec<(&'static str, fn(u64) -> f64)> {
    vec![
        ("matmul", matmul_grad),
        ("bmm", bmm_and_transpose_grad),
        ("add/mul/scale", elementwise_grads),
        ("relu", relu_grad),
        ("add_bias", add_bias_grad),
        ("scale_rows", scale_rows_grad),
        ("softmax", softmax_grad),
        ("layer_norm", layer_norm_grad),
        ("conv1d", conv1d_grad),
        ("reshape/slice/concat/repeat/mean", shape_op_grads),
        ("lif", lif_grad_in_smooth_mode),
        ("direct_encode", direct_encode_grad),
        ("ssa", ssa_grad),
        ("snn_encode", snn_encode_grad),
        ("snn_decode", snn_decode_grad),
        ("embed", embedding_grad),
        ("sdpa", sdpa_grad),
        ("mha", mha_grad),
        ("encoder", encoder_layer_grad),
        ("cross_entropy", cross_entropy_grad),
        ("mse", mse_grad),
        ("tiny model", full_tiny_model_grad_classification),
        ("tiny regression model", full_tiny_model_grad_regression),
        ("mlp", baseline_mlp_grad),
        ("composite", three_layer_composite_grad),
    ]
}
