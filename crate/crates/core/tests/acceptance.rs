//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use hpcneuronet::attention::{multi_head_attention, scaled_dot_product_attention, MhaParams};
use hpcneuronet::dataset::{
    ingest_csv, invariant_mass, recompute_invariant_mass, split, synth_dataset, Events, SynthSpec,
};
use hpcneuronet::model::{build_model, HpcNeuroNetConfig, Model};
use hpcneuronet::profiler::{
    affine_macs, benchmark_latency, conv1d_macs, count_macs, emit_report, published_reference, ReportFormat, REFERENCE_LABEL,
    TABLE_HEADER,
};
use hpcneuronet::quant::{forward_quantized, quantize_model, quantize_value, FixedPointFormat, HwDescriptor, Overflow, PrecisionConfig, Rounding};
use hpcneuronet::snn::{is_binary, lif_run, spiking_self_attention_traced, LifParams, SpikeTrain, SsaParams};
use hpcneuronet::tensor::{conv1d, mac_counter, matmul};
use hpcneuronet::training::{evaluate, evaluate_tol, train, TrainConfig};
use hpcneuronet::Tensor;
use rand::Rng;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> std::result::Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
}

fn max_rel(a: &Tensor, b: &[Vec<f64>]) -> f64 {
    a.data().iter().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn attention_oracle() -> Check {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (n, dh) = (r.random_range(1..=8), r.random_range(1..=8));
        let q = rand_tensor(&mut r, &[n, dh], -2.0, 2.0);
        let k = rand_tensor(&mut r, &[n, dh], -2.0, 2.0);
        let v = rand_tensor(&mut r, &[n, dh], -2.0, 2.0);
        let got = scaled_dot_product_attention(&q, &k, &v).map_err(|e| e.to_string())?;
        let err = max_rel(&got, &sdpa_oracle(&rows(&q), &rows(&k), &rows(&v)));
        ensure(err <= 1e-6, format!("sdpa case {case}: rel err {err:e}"))?;
        worst = worst.max(err);
    }
    for case in 0..100 {
        let h = [1, 2, 4][case % 3];
        let d = h * r.random_range(1..=8 / h.min(8));
        let n = r.random_range(1..=8);
        let x = rand_tensor(&mut r, &[n, d], -1.5, 1.5);
        let ws: Vec<Tensor> = (0..4).map(|_| rand_tensor(&mut r, &[d, d], -1.0, 1.0)).collect();
        let p = MhaParams { w_q: ws[0].clone(), w_k: ws[1].clone(), w_v: ws[2].clone(), w_o: ws[3].clone(), n_heads: h };
        let got = multi_head_attention(&x, &p).map_err(|e| e.to_string())?;
        let err = max_rel(&got, &mha_oracle(&rows(&x), &rows(&ws[0]), &rows(&ws[1]), &rows(&ws[2]), &rows(&ws[3]), h));
        ensure(err <= 1e-6, format!("mha case {case}: rel err {err:e}"))?;
        worst = worst.max(err);
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("200 cases, worst rel err {worst:.1e}, {:.2} s", start.elapsed().as_secs_f64()))
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let cases = grad_cases::all();
    let mut worst = (0.0, "");
    for (name, case) in &cases {
        let err = grad_cases::worst(*case);
        ensure(err <= grad_cases::TOL, format!("{name}: max rel err {err:e}"))?;
        if err > worst.0 {
            worst = (err, name);
        }
    }
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "{} cases x {} seeds, worst {:.1e} ({}), {:.1} s",
        cases.len(),
        grad_cases::SEEDS,
        worst.0,
        worst.1,
        start.elapsed().as_secs_f64()
    ))
}

fn lif_exactness() -> Check {
    let mut r = rng(103);
    for case in 0..100 {
        let p = LifParams { beta: r.random_range(0.0..1.0), threshold: r.random_range(0.1..2.0), alpha: 2.0 };
        let width = r.random_range(1..9);
        let x = rand_tensor(&mut r, &[32, width], -1.0, 2.5);
        let got = lif_run(&x, &p).map_err(|e| e.to_string())?;
        ensure(got.tensor() == &from_rows(&lif_oracle(&rows(&x), p.beta, p.threshold)), format!("config {case} differs"))?;
    }
    Ok("100 configs, T=32, bit-exact".into())
}

fn ssa_properties() -> Check {
    let mut r = rng(104);
    for trial in 0..500 {
        let (t, n, d) = (r.random_range(1..5), r.random_range(1..7), r.random_range(2..9));
        let p = SsaParams {
            w_q: rand_tensor(&mut r, &[d, d], -1.0, 2.0),
            w_k: rand_tensor(&mut r, &[d, d], -1.0, 2.0),
            w_v: rand_tensor(&mut r, &[d, d], -1.0, 2.0),
            scale: r.random_range(0.05..1.0),
            lif: LifParams { beta: r.random_range(0.0..0.99), threshold: r.random_range(0.5..1.5), alpha: 2.0 },
        };
        let x = SpikeTrain::new(rand_binary(&mut r, &[t, n, d], 0.5)).map_err(|e| e.to_string())?;
        let tr = spiking_self_attention_traced(&x, &p).map_err(|e| e.to_string())?;
        for (name, m) in [("Q", &tr.q), ("K", &tr.k), ("V", &tr.v), ("output", tr.output.tensor())] {
            ensure(is_binary(m), format!("trial {trial}: {name} not binary"))?;
        }
        ensure(tr.scores.data().iter().all(|&s| s >= 0.0 && s.fract() == 0.0), format!("trial {trial}: non-integer score"))?;
    }
    Ok("500 random binary inputs".into())
}

fn quant_exactness() -> Check {
    let mut formats = 0;
    for f in all_small_formats() {
        formats += 1;
        let step = f.step();
        let grid: Vec<f64> = f.grid().collect();
        for rounding in [Rounding::NearestEven, Rounding::Truncate] {
            for overflow in [Overflow::Saturate, Overflow::Wrap] {
                let g = FixedPointFormat::with_modes(f.total_bits(), f.int_bits(), rounding, overflow).map_err(|e| e.to_string())?;
                for &v in &grid {
                    ensure(quantize_value(v, &g) == v, format!("{g} {rounding:?} {overflow:?} moves grid point {v}"))?;
                }
            }
        }
        for &v in &grid {
            for x in [v + step / 2.0, v - step / 2.0, v + step / 4.0] {
                ensure(quantize_value(x, &f) == nearest_even_oracle(x, &f), format!("{f} rounds {x} wrong"))?;
            }
        }
        for x in [f.max_value() + step / 2.0, 1e9, f64::INFINITY] {
            ensure(quantize_value(x, &f) == f.max_value(), format!("{f} does not saturate {x} to max"))?;
        }
        for x in [f.min_value() - step, -1e9, f64::NEG_INFINITY] {
            ensure(quantize_value(x, &f) == f.min_value(), format!("{f} does not saturate {x} to min"))?;
        }
    }
    Ok(format!("{formats} formats with W <= 8, all rounding and overflow modes"))
}

fn mac_oracle() -> Check {
    let mut r = rng(106);
    ensure(affine_macs(10, 64, 32) == 20_480, "affine formula")?;
    ensure(conv1d_macs(1, 4, 3, 8, 1, 0) == 72, "conv formula")?;
    let a = rand_tensor(&mut r, &[10, 64], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[64, 32], -1.0, 1.0);
    let (_, n) = mac_counter::measure(|| matmul(&a, &b));
    ensure(n == 20_480, format!("instrumented affine counted {n}"))?;
    let (x, w) = (rand_tensor(&mut r, &[1, 8], -1.0, 1.0), rand_tensor(&mut r, &[4, 1, 3], -1.0, 1.0));
    let (_, n) = mac_counter::measure(|| conv1d(&x, &w, 1, 0));
    ensure(n == 72, format!("instrumented conv counted {n}"))?;
    for i in 0..10 {
        let cfg = random_small_config(&mut r, i);
        let m = build_model(&cfg).map_err(|e| e.to_string())?;
        let x = rand_tensor(&mut r, &[cfg.n_features], -2.0, 2.0).into_data();
        let (out, executed) = mac_counter::measure(|| m.forward(&x));
        out.map_err(|e| e.to_string())?;
        let analytic = count_macs(&m).total;
        ensure(executed == analytic, format!("config {i}: analytic {analytic} vs executed {executed}"))?;
    }
    Ok("examples 20480 and 72; 10 random configs exact".into())
}

struct Classifier {
    model: Model,
    test: hpcneuronet::dataset::Dataset,
}

fn train_classifier() -> std::result::Result<(Classifier, String), String> {
    let start = Instant::now();
    let data = synth_dataset(&SynthSpec::Blobs { n_features: 6, n_classes: 4, separation: 5.0, sigma: 1.0 }, 2000, 42)
        .map_err(|e| e.to_string())?;
    let (trainset, test) = split(&data, 0.5, 42).map_err(|e| e.to_string())?;
    let cfg = HpcNeuroNetConfig { n_features: 6, output_dim: 4, ..HpcNeuroNetConfig::default() };
    let m = build_model(&cfg).map_err(|e| e.to_string())?;
    let out = train(&m, &trainset, &TrainConfig { epochs: 50, seed: 42, ..TrainConfig::default() }).map_err(|e| e.to_string())?;
    let acc = evaluate(&out.model, &test).map_err(|e| e.to_string())?.accuracy.unwrap_or(0.0);
    ensure(acc >= 0.90, format!("test accuracy {:.2}%", 100.0 * acc))?;
    within(start.elapsed(), 300.0)?;
    let detail = format!(
        "test accuracy {:.2}% after {} epochs, {:.1} s",
        100.0 * acc,
        out.history.len(),
        start.elapsed().as_secs_f64()
    );
    Ok((Classifier { model: out.model, test }, detail))
}

fn regression_smoke() -> Check {
    let start = Instant::now();
    let data = synth_dataset(&SynthSpec::dielectron(), 5000, 42).map_err(|e| e.to_string())?;
    let (trainset, test) = split(&data, 0.2, 42).map_err(|e| e.to_string())?;
    let m = build_model(&HpcNeuroNetConfig::regression(8)).map_err(|e| e.to_string())?;
    let out = train(&m, &trainset, &TrainConfig { epochs: 100, seed: 42, ..TrainConfig::default() }).map_err(|e| e.to_string())?;
    let metrics = evaluate_tol(&out.model, &test, 0.10).map_err(|e| e.to_string())?;
    let acc = metrics.regression_accuracy.unwrap_or(0.0);
    ensure(acc >= 0.70, format!("regression accuracy {acc:.3} at tol 0.10"))?;
    within(start.elapsed(), 600.0)?;
    Ok(format!(
        "regression accuracy {acc:.3} (tol 0.10, RMSE {:.2} GeV) after {} epochs, {:.1} s",
        metrics.rmse.unwrap_or(f64::NAN),
        out.history.len(),
        start.elapsed().as_secs_f64()
    ))
}

fn quantized_agreement(c: &Classifier) -> Check {
    let fmt = FixedPointFormat::new(16, 6).map_err(|e| e.to_string())?;
    let qm = quantize_model(&c.model, &PrecisionConfig::uniform(fmt)).map_err(|e| e.to_string())?;
    let mut agree = 0;
    for x in &c.test.features {
        let a = c.model.forward(x).map_err(|e| e.to_string())?.argmax();
        let b = forward_quantized(&qm, x).map_err(|e| e.to_string())?.argmax();
        agree += (a == b) as usize;
    }
    let n = c.test.len();
    ensure(n >= 1000, format!("only {n} held-out events"))?;
    let frac = agree as f64 / n as f64;
    ensure(frac >= 0.99, format!("agreement {agree}/{n}"))?;
    Ok(format!("{fmt} agrees on {agree}/{n} held-out events"))
}

fn physics_validation() -> Check {
    let mut r = rng(110);
    let four = |r: &mut rand_chacha::ChaCha8Rng| {
        let m: f64 = r.random_range(0.0005..5.0);
        let p: [f64; 3] = std::array::from_fn(|_| r.random_range(-60.0..60.0));
        [(m * m + p.iter().map(|v| v * v).sum::<f64>()).sqrt(), p[0], p[1], p[2]]
    };
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (p1, p2) = (four(&mut r), four(&mut r));
        let mass2 = |p: [f64; 4]| p[0] * p[0] - p[1] * p[1] - p[2] * p[2] - p[3] * p[3];
        let dot = p1[0] * p2[0] - p1[1] * p2[1] - p1[2] * p2[2] - p1[3] * p2[3];
        let oracle = (mass2(p1) + mass2(p2) + 2.0 * dot).max(0.0).sqrt();
        let got = invariant_mass(p1, p2);
        worst = worst.max(rel(got, oracle));
        // random rotation from a unit quaternion
        let mut q: [f64; 4] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        q.iter_mut().for_each(|v| *v /= qn);
        let [w, x, y, z] = q;
        let rot = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
        let rotate = |p: [f64; 4]| {
            let c = |i: usize| rot[i][0] * p[1] + rot[i][1] * p[2] + rot[i][2] * p[3];
            [p[0], c(0), c(1), c(2)]
        };
        let turned = invariant_mass(rotate(p1), rotate(p2));
        ensure(rel(turned, got) <= 1e-9, format!("rotation changed mass {got} -> {turned}"))?;
    }
    ensure(worst <= 1e-9, format!("oracle rel err {worst:e}"))?;
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/dielectron_3rows.csv");
    let ingested = ingest_csv(&path, hpcneuronet::dataset::Schema::Dielectron).map_err(|e| e.to_string())?;
    let Events::Dielectron(events) = ingested.events else { return Err("wrong event kind".into()) };
    let mut fixture_worst: f64 = 0.0;
    for e in &events {
        let d = (e.m - recompute_invariant_mass(e)).abs() / e.m;
        ensure(d <= 0.01, format!("fixture row off by {:.3}%", 100.0 * d))?;
        fixture_worst = fixture_worst.max(d);
    }
    Ok(format!(
        "10000 events, worst oracle rel err {worst:.1e}; fixture worst |M-M'|/M {:.2e} over {} rows",
        fixture_worst,
        events.len()
    ))
}

fn report_fidelity() -> Check {
    let m = build_model(&HpcNeuroNetConfig::tiny(6, 4)).map_err(|e| e.to_string())?;
    let d = synth_dataset(&SynthSpec::blobs(), 20, 1).map_err(|e| e.to_string())?;
    let metrics = evaluate(&m, &d).map_err(|e| e.to_string())?;
    let profile = hpcneuronet::profiler::profile(&m, &d, 20, 2, Some(1.0)).map_err(|e| e.to_string())?;
    let md = emit_report(&metrics, &profile, ReportFormat::Markdown, true).map_err(|e| e.to_string())?;
    ensure(md.lines().any(|l| l == "Accuracy | MAC (GOP) | Task | Latency (ms)"), "table header missing")?;
    ensure(TABLE_HEADER == "Accuracy | MAC (GOP) | Task | Latency (ms)", "header constant differs")?;
    ensure(md.contains(REFERENCE_LABEL), "reference label missing")?;
    let r = published_reference();
    let got = |f: fn(&hpcneuronet::profiler::DatasetReference) -> f64| r.datasets.iter().map(f).collect::<Vec<_>>();
    ensure(got(|d| d.accuracy_pct) == [94.48, 78.05, 88.73], "accuracies")?;
    ensure(got(|d| d.mac_gop) == [0.49, 1.09, 1.29], "GOP figures")?;
    ensure(got(|d| d.latency_ms) == [11.5, 13.1, 13.5], "latencies")?;
    ensure(r.models.iter().any(|m| m.model == "HPCNeuroNet" && m.power_eff_gops_per_w == 22.7), "power efficiency")?;
    for s in ["94.48", "78.05", "88.73", "0.49", "1.09", "1.29", "11.5", "13.1", "13.5", "22.7"] {
        ensure(md.contains(s), format!("markdown lacks {s}"))?;
    }
    Ok("header exact; reference constants present and labeled".into())
}

fn profiler_consistency() -> Check {
    let m = build_model(&HpcNeuroNetConfig::tiny(6, 4)).map_err(|e| e.to_string())?;
    let d = synth_dataset(&SynthSpec::blobs(), 100, 3).map_err(|e| e.to_string())?;
    let b = benchmark_latency(&m, &d, 1000, 100).map_err(|e| e.to_string())?;
    let product = b.throughput * b.latency.mean_ms / 1e3;
    ensure(b.latency.samples == 1000, format!("{} samples", b.latency.samples))?;
    ensure((0.8..=1.25).contains(&product), format!("throughput x mean latency = {product:.3}"))?;
    Ok(format!("throughput x mean latency = {product:.3} over 1000 iterations"))
}

fn end_to_end() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (step, code) in cli_pipeline(dir.path()) {
        ensure(code == 0, format!("{step} exited {code}"))?;
    }
    ensure(dir.path().join("report.md").exists(), "no report file")?;
    let text = std::fs::read_to_string(dir.path().join("hw.json")).map_err(|e| e.to_string())?;
    let hw = HwDescriptor::from_json(&text).map_err(|e| e.to_string())?;
    let model = Model::load(&dir.path().join("model.bin")).map_err(|e| e.to_string())?;
    let macs = count_macs(&model);
    ensure(hw.layers.len() == macs.layers.len(), "layer count differs")?;
    for (h, m) in hw.layers.iter().zip(&macs.layers) {
        ensure(h.name == m.name && h.macs == m.macs, format!("{}: descriptor {} vs count {}", h.name, h.macs, m.macs))?;
    }
    ensure(hw.totals.macs == macs.total, "total MACs differ")?;
    Ok(format!("7 steps exit 0; descriptor {} layers, {} MACs", hw.layers.len(), hw.totals.macs))
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(detail) => {
            println!("PASS  {id:>2} {name}: {detail} [{secs:.1} s]");
            true
        }
        Err(why) => {
            println!("FAIL  {id:>2} {name}: {why} [{secs:.1} s]");
            false
        }
    }
}

fn main() {
    let mut results = vec![
        run(1, "attention oracle", attention_oracle),
        run(2, "gradient suite", gradient_suite),
        run(3, "LIF exactness", lif_exactness),
        run(4, "SSA properties", ssa_properties),
        run(5, "quantization exactness", quant_exactness),
        run(6, "MAC-count oracle", mac_oracle),
    ];
    let mut classifier = None;
    results.push(run(7, "training smoke (classification)", || {
        let (c, detail) = train_classifier()?;
        classifier = Some(c);
        Ok(detail)
    }));
    results.push(run(8, "training smoke (regression)", regression_smoke));
    results.push(run(9, "quantized agreement", || match &classifier {
        Some(c) => quantized_agreement(c),
        None => Err("criterion 7 produced no trained model".into()),
    }));
    results.push(run(10, "physics validation", physics_validation));
    results.push(run(11, "report fidelity", report_fidelity));
    results.push(run(12, "profiler self-consistency", profiler_consistency));
    results.push(run(13, "end-to-end smoke", end_to_end));
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
