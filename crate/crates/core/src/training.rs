//! Losses, Adam, metrics and the mini-batch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_indices, Dataset, FeatureStats};
use crate::error::{Error, Result};
use crate::model::{ForwardOptions, Model, OutputScaling, Prediction, Task};
use crate::tensor::{Backward, Tape, Tensor, Var};

pub const DEFAULT_REGRESSION_TOL: f64 = 0.05;

fn log_softmax_parts(z: &[f64]) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    (max + total.ln(), exps.into_iter().map(|e| e / total).collect())
}

fn check_label(k: usize, label: usize) -> Result<()> {
    if label >= k {
        return Err(Error::Usage(format!("label {label} out of range for {k} classes")));
    }
    Ok(())
}

/// `−log softmax(logits)[label]`, via a max-shifted log-sum-exp.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    check_label(logits.len(), label)?;
    let (lse, _) = log_softmax_parts(logits.data());
    Ok(lse - logits.data()[label])
}

struct CrossEntropyBackward {
    label: usize,
}

impl Backward for CrossEntropyBackward {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, grad: &Tensor, parents: &[&Tensor], _output: &Tensor) -> Vec<Option<Tensor>> {
        let g = grad.data()[0];
        let (_, mut p) = log_softmax_parts(parents[0].data());
        p[self.label] -= 1.0;
        let dz = Tensor::new(parents[0].shape().to_vec(), p.into_iter().map(|v| v * g).collect()).expect("same shape");
        vec![Some(dz)]
    }
}

pub fn cross_entropy_on(tape: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    let loss = cross_entropy(tape.value(logits), label)?;
    tape.custom(&[logits], Tensor::scalar(loss), CrossEntropyBackward { label })
}

pub fn mse(pred: f64, target: f64) -> f64 {
    (pred - target).powi(2)
}

pub fn mse_batch(preds: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(preds.len(), targets.len())?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| mse(*p, *t)).sum::<f64>() / preds.len() as f64)
}

pub fn mse_on(tape: &mut Tape, pred: Var, target: f64) -> Result<Var> {
    let n = tape.value(pred).len();
    let t = tape.constant(Tensor::new(tape.value(pred).shape().to_vec(), vec![-target; n])?);
    let diff = tape.add(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    tape.sum(sq)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Usage(format!("length mismatch: {a} predictions vs {b} targets")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like(params: &[&Tensor]) -> Self {
        let z: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { m: z.clone(), v: z, step: 0 }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState, h: &AdamHyper) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Usage(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Usage(format!("adam: shape mismatch at slot {i}: {:?} vs {:?}", p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * gj;
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * gj * gj;
            *w -= h.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + h.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamHyper,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Share of the training rows held out for model selection.
    pub val_fraction: f64,
    /// Fit input z-scoring and regression target scaling when the model has none.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            seed: 42,
            adam: AdamHyper::default(),
            patience: 10,
            val_fraction: 0.1,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let h = &self.adam;
        if !(h.lr > 0.0 && h.lr.is_finite()) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "need lr > 0, epochs >= 1, batch >= 1 (got {}, {}, {})",
                h.lr, self.epochs, self.batch_size
            )));
        }
        if !((0.0..1.0).contains(&h.beta1) && (0.0..1.0).contains(&h.beta2) && h.eps > 0.0) {
            return Err(Error::Config("Adam betas must be in [0,1) and eps positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must be in [0,1), got {}", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Accuracy, or regression accuracy at the default tolerance.
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub optimizer_steps: u64,
}

pub fn check_compatible(m: &Model, d: &Dataset) -> Result<()> {
    if d.n_features() != m.n_features() {
        return Err(Error::Usage(format!("model expects {} features, dataset has {}", m.n_features(), d.n_features())));
    }
    if d.task() != m.task() {
        return Err(Error::Usage(format!("{:?} model cannot use a {:?} dataset", m.task(), d.task())));
    }
    let k = m.arch.output_dim();
    if d.task() == Task::Classification && d.n_classes() > k {
        return Err(Error::Usage(format!("dataset has {} classes but the model head has {k}", d.n_classes())));
    }
    Ok(())
}

fn sample_loss(tape: &mut Tape, m: &Model, out: Var, d: &Dataset, i: usize) -> Result<Var> {
    match m.task() {
        Task::Classification => cross_entropy_on(tape, out, d.labels().expect("classification")[i]),
        Task::Regression => {
            let s = m.output_scaling;
            let target = (d.values().expect("regression")[i] - s.shift) / s.scale;
            mse_on(tape, out, target)
        }
    }
}

/// Mean training-objective loss over `rows` (float forward, no tape recording).
fn objective_loss(m: &Model, d: &Dataset, rows: &[usize]) -> Result<(f64, Vec<Prediction>)> {
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(rows.len());
    for &i in rows {
        let mut tape = Tape::inference();
        let vars = m.register(&mut tape, false);
        let out = m.forward_on(&mut tape, &vars, &d.features[i], &ForwardOptions::default())?;
        let loss = sample_loss(&mut tape, m, out, d, i)?;
        total += tape.value(loss).data()[0];
        preds.push(m.finish(tape.value(out)));
    }
    Ok((total / rows.len().max(1) as f64, preds))
}

pub fn train(model: &Model, d: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compatible(model, d)?;
    if d.len() < 2 {
        return Err(Error::Data(format!("training needs at least 2 rows, got {}", d.len())));
    }
    let (mut train_rows, mut val_rows) = if cfg.val_fraction > 0.0 && d.len() >= 10 {
        split_indices(d.len(), cfg.val_fraction, cfg.seed)
    } else {
        let all: Vec<usize> = (0..d.len()).collect();
        (all.clone(), all)
    };
    train_rows.sort_unstable();
    val_rows.sort_unstable();

    let mut m = model.clone();
    if cfg.standardize && m.input_norm.is_none() {
        let rows: Vec<Vec<f64>> = train_rows.iter().map(|&i| d.features[i].clone()).collect();
        m.input_norm = Some(FeatureStats::fit(&rows)?);
        if let Some(values) = d.values() {
            let t: Vec<Vec<f64>> = train_rows.iter().map(|&i| vec![values[i]]).collect();
            let s = FeatureStats::fit(&t)?;
            m.output_scaling = OutputScaling { scale: s.std[0], shift: s.mean[0] };
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shapes: Vec<&Tensor> = m.layers.iter().flat_map(|l| &l.params).map(|p| &p.value).collect();
    let mut state = AdamState::zeros_like(&shapes);
    let mut history = Vec::new();
    let mut best: Option<(f64, Model, usize)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        train_rows.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in train_rows.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let vars = m.register(&mut tape, true);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let out = m.forward_on(&mut tape, &vars, &d.features[i], &ForwardOptions::default())?;
                losses.push(sample_loss(&mut tape, &m, out, d, i)?);
            }
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = tape.add(total, l)?;
            }
            epoch_loss += tape.value(total).data()[0];
            let mean = tape.scale(total, 1.0 / batch.len() as f64)?;
            let mut grads = tape.backward(mean)?;
            let grads: Vec<Tensor> = vars
                .iter()
                .flatten()
                .zip(&shapes_of(&m))
                .map(|(&v, shape)| grads.take(v).unwrap_or_else(|| Tensor::zeros(shape)))
                .collect();
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut params: Vec<&mut Tensor> = m.layers.iter_mut().flat_map(|l| &mut l.params).map(|p| &mut p.value).collect();
            adam_step(&mut params, &grad_refs, &mut state, &cfg.adam)?;
        }
        let train_loss = epoch_loss / train_rows.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
        }
        let (val_loss, preds) = objective_loss(&m, d, &val_rows)?;
        let val = d.subset(&val_rows);
        let val_metric = metrics_from_predictions(&preds, &val, DEFAULT_REGRESSION_TOL)?.headline();
        history.push(EpochRecord { epoch, train_loss, val_loss, val_metric });
        match &best {
            Some((b, _, _)) if val_loss >= *b => since_best += 1,
            _ => {
                best = Some((val_loss, m.clone(), epoch));
                since_best = 0;
            }
        }
        if cfg.patience > 0 && since_best >= cfg.patience {
            break;
        }
    }
    let (_, model, best_epoch) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, history, best_epoch, optimizer_steps: state.step })
}

fn shapes_of(m: &Model) -> Vec<Vec<usize>> {
    m.layers.iter().flat_map(|l| &l.params).map(|p| p.value.shape().to_vec()).collect()
}

/// Fraction of `i` with `|pred − target| / max(|target|, 1e-8) ≤ tol`.
pub fn regression_accuracy(preds: &[f64], targets: &[f64], tol: f64) -> Result<f64> {
    check_lengths(preds.len(), targets.len())?;
    if !(tol >= 0.0) {
        return Err(Error::Usage(format!("tolerance must be non-negative, got {tol}")));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(targets).filter(|(p, t)| (*p - *t).abs() / t.abs().max(1e-8) <= tol).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub task: Task,
    pub n: usize,
    /// Mean cross-entropy, or mean squared error in target units.
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
}

impl Metrics {
    /// The single "accuracy" figure reported in tables.
    pub fn headline(&self) -> f64 {
        self.accuracy.or(self.regression_accuracy).unwrap_or(0.0)
    }
}

pub fn metrics_from_predictions(preds: &[Prediction], d: &Dataset, tol: f64) -> Result<Metrics> {
    check_lengths(preds.len(), d.len())?;
    let n = d.len();
    match &d.targets {
        crate::dataset::Targets::Classification { labels, .. } => {
            let k = preds.first().map_or(d.n_classes(), |p| p.values.len()).max(d.n_classes());
            let mut confusion = vec![vec![0usize; k]; k];
            let mut loss = 0.0;
            for (p, &l) in preds.iter().zip(labels) {
                confusion[l][p.argmax()] += 1;
                loss += cross_entropy(&Tensor::vector(p.values.clone())?, l)?;
            }
            let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
            Ok(Metrics {
                task: Task::Classification,
                n,
                loss: loss / n.max(1) as f64,
                accuracy: Some(if n == 0 { 0.0 } else { correct as f64 / n as f64 }),
                confusion: Some(confusion),
                regression_accuracy: None,
                tolerance: None,
                rmse: None,
            })
        }
        crate::dataset::Targets::Regression { values } => {
            let p: Vec<f64> = preds.iter().map(Prediction::value).collect();
            let loss = mse_batch(&p, values)?;
            Ok(Metrics {
                task: Task::Regression,
                n,
                loss,
                accuracy: None,
                confusion: None,
                regression_accuracy: Some(regression_accuracy(&p, values, tol)?),
                tolerance: Some(tol),
                rmse: Some(loss.sqrt()),
            })
        }
    }
}

/// Scores `predict` over every row of `d`.
pub fn evaluate_with(d: &Dataset, tol: f64, mut predict: impl FnMut(&[f64]) -> Result<Prediction>) -> Result<Metrics> {
    let preds = d.features.iter().map(|x| predict(x)).collect::<Result<Vec<_>>>()?;
    metrics_from_predictions(&preds, d, tol)
}

pub fn evaluate(m: &Model, d: &Dataset) -> Result<Metrics> {
    evaluate_tol(m, d, DEFAULT_REGRESSION_TOL)
}

pub fn evaluate_tol(m: &Model, d: &Dataset, tol: f64) -> Result<Metrics> {
    check_compatible(m, d)?;
    evaluate_with(d, tol, |x| m.forward(x))
}
