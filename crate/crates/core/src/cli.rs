//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or invalid input, failed validation under `--strict`),
//! 3 numeric failure (NaN or divergence).

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::dataset::{self, Dataset, Schema, SynthSpec};
use crate::error::{Error, Result};
use crate::model::{build_baseline_mlp, build_model, Architecture, HpcNeuroNetConfig, MlpConfig, Model, Prediction, Task};
use crate::profiler::{self, emit_report, ProfileReport, ReportFormat};
use crate::quant::{export_hw_descriptor, forward_quantized, quantize_model, PrecisionConfig, QuantizedModel};
use crate::training::{self, Metrics, TrainConfig};

/// Relative input paths that do not exist are looked up under this directory.
pub const DATA_DIR_ENV: &str = "HPCNN_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "hpcneuronet", version, about = "Hybrid transformer / spiking network pipeline for detector event data")]
pub struct Cli {
    /// Experiment config (JSON) with `model`, `train`, `precision`, `power_watts` and `seed`; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a CSV file into a dataset cache and validate its physics ranges.
    Ingest(IngestArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Score a float or quantized model on a dataset.
    Eval(EvalArgs),
    /// Quantize a trained model to fixed point.
    Quantize(QuantizeArgs),
    /// Write the hardware deployment descriptor of a quantized model.
    ExportHw(ExportArgs),
    /// Count MACs and benchmark host latency.
    Profile(ProfileArgs),
    /// Combine metrics and a profile into a table report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub schema: Schema,
    /// Dataset cache to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Column remapping, `schema_name=file_name`, repeatable or comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub rename: Vec<String>,
    /// Ingest and validation report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Optional held-out split written here; the remainder goes to `--output`.
    #[arg(long, requires = "test_fraction")]
    pub test_output: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exit with code 2 when any validation rule is violated.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Blobs,
    Dielectron,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, requires = "test_fraction")]
    pub test_output: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long, default_value_t = 6)]
    pub features: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    /// Blob separation in standard deviations.
    #[arg(long, default_value_t = 5.0)]
    pub separation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Desk-scale default hybrid network.
    Default,
    /// Smallest hybrid network exercising every stage.
    Tiny,
    /// Narrow hybrid network sized for regression.
    Regression,
    /// Reference MLP baseline.
    Mlp,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset cache, or a CSV file together with `--schema`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: Option<Schema>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub output: PathBuf,
    /// Architecture preset, used when the config file has no `model` section.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-epoch history (JSON rows).
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Float or quantized model file.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Relative tolerance for regression accuracy.
    #[arg(long, default_value_t = training::DEFAULT_REGRESSION_TOL)]
    pub tolerance: f64,
    /// Metrics (JSON).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Default format then per-layer overrides, e.g. "16,6 head=18,8".
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Quantized model file (a float model is quantized with the configured precision).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[arg(long, default_value_t = 100)]
    pub warmup: usize,
    /// Board power in watts, for GOP/s/W.
    #[arg(long)]
    pub power_watts: Option<f64>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub profile: PathBuf,
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: CliFormat,
    /// Leave out the published reference tables.
    #[arg(long)]
    pub no_reference: bool,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CliFormat {
    Json,
    Markdown,
}

impl clap::ValueEnum for Schema {
    fn value_variants<'a>() -> &'a [Self] {
        &Schema::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: Option<Architecture>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub precision: Option<String>,
    #[serde(default)]
    pub power_watts: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Shape(_) | Error::Contract(_) => 1,
        Error::Numeric(_) => 3,
        Error::MissingColumn { .. } | Error::Data(_) | Error::Format(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
    }
}

/// Parses `argv` (program name first), runs the subcommand, returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve_input(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

fn load_dataset(args: &DataArgs) -> Result<Dataset> {
    let path = resolve_input(&args.data);
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    match (is_csv, args.schema) {
        (true, Some(schema)) => Ok(dataset::ingest_csv(&path, schema)?.dataset),
        (true, None) => Err(Error::Usage("reading a CSV file needs --schema".into())),
        (false, _) => Dataset::load(&path),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_split(d: &Dataset, output: &Path, test: Option<(&Path, f64)>, seed: u64) -> Result<(usize, usize)> {
    match test {
        Some((test_path, fraction)) => {
            let (train, test) = dataset::split(d, fraction, seed)?;
            train.save(output)?;
            test.save(test_path)?;
            Ok((train.len(), test.len()))
        }
        None => {
            d.save(output)?;
            Ok((d.len(), 0))
        }
    }
}

enum AnyModel {
    Float(Model),
    Quantized(Box<QuantizedModel>),
}

impl AnyModel {
    fn load(path: &Path) -> Result<Self> {
        let c = Container::load(path)?;
        match c.header["kind"].as_str() {
            Some("quantized-model") => {
                let (source, extra) = Model::from_container(&c, "quantized-model")?;
                let pc: PrecisionConfig = serde_json::from_value(extra)?;
                Ok(AnyModel::Quantized(Box::new(quantize_model(&source, &pc)?)))
            }
            _ => Ok(AnyModel::Float(Model::from_container(&c, "model")?.0)),
        }
    }

    fn model(&self) -> &Model {
        match self {
            AnyModel::Float(m) => m,
            AnyModel::Quantized(q) => &q.model,
        }
    }

    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        match self {
            AnyModel::Float(m) => m.forward(x),
            AnyModel::Quantized(q) => forward_quantized(q, x),
        }
    }
}

fn precision_from(flag: Option<&String>, exp: &ExperimentConfig) -> Result<PrecisionConfig> {
    match flag.or(exp.precision.as_ref()) {
        Some(s) => PrecisionConfig::parse(s),
        None => Ok(PrecisionConfig::default()),
    }
}

fn architecture_for(d: &Dataset, preset: Option<Preset>, exp: &ExperimentConfig, seed: u64) -> Architecture {
    let task = d.task();
    let out = match task {
        Task::Classification => d.n_classes(),
        Task::Regression => 1,
    };
    let f = d.n_features();
    match (&exp.model, preset) {
        (Some(Architecture::HpcNeuroNet(cfg)), None) => {
            Architecture::HpcNeuroNet(HpcNeuroNetConfig { n_features: f, output_dim: out, task, seed, ..cfg.clone() })
        }
        (Some(Architecture::Mlp(cfg)), None) => {
            Architecture::Mlp(MlpConfig { n_features: f, output_dim: out, task, seed, ..cfg.clone() })
        }
        (_, Some(Preset::Mlp)) => {
            Architecture::Mlp(MlpConfig { n_features: f, hidden: vec![64, 64], output_dim: out, task, seed })
        }
        (_, p) => {
            let base = match p {
                Some(Preset::Tiny) => HpcNeuroNetConfig::tiny(f, out),
                Some(Preset::Regression) => HpcNeuroNetConfig::regression(f),
                _ => HpcNeuroNetConfig::default(),
            };
            Architecture::HpcNeuroNet(HpcNeuroNetConfig { n_features: f, output_dim: out, task, seed, ..base })
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let exp = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let default_seed = exp.seed.unwrap_or(42);
    match cli.command {
        Command::Ingest(a) => {
            let mut renames = HashMap::new();
            for pair in &a.rename {
                let (k, v) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::Usage(format!("--rename expects schema_name=file_name, got `{pair}`")))?;
                renames.insert(k.trim().to_string(), v.trim().to_string());
            }
            let ingested = dataset::ingest_csv_with(&resolve_input(&a.input), a.schema, &renames)?;
            let validation = dataset::validate_physics(&ingested.dataset, a.schema)?;
            let test = a.test_output.as_deref().zip(a.test_fraction);
            let (n_train, n_test) = write_split(&ingested.dataset, &a.output, test, a.seed.unwrap_or(default_seed))?;
            if let Some(p) = &a.report {
                write_json(p, &serde_json::json!({"ingest": ingested.report, "validation": validation}))?;
            }
            println!(
                "ingested {} events ({} skipped); {} violations; wrote {n_train} train / {n_test} test rows",
                ingested.report.events,
                ingested.report.skipped,
                validation.total()
            );
            if a.strict && validation.total() > 0 {
                return Err(Error::Data(format!("physics validation failed: {:?}", validation.violations)));
            }
            Ok(())
        }
        Command::Synth(a) => {
            let spec = match a.kind {
                SynthKind::Blobs => SynthSpec::Blobs {
                    n_features: a.features,
                    n_classes: a.classes,
                    separation: a.separation,
                    sigma: 1.0,
                },
                SynthKind::Dielectron => SynthSpec::dielectron(),
            };
            let seed = a.seed.unwrap_or(default_seed);
            let d = dataset::synth_dataset(&spec, a.n, seed)?;
            let test = a.test_output.as_deref().zip(a.test_fraction);
            let (n_train, n_test) = write_split(&d, &a.output, test, seed)?;
            println!("synthesized {} events; wrote {n_train} train / {n_test} test rows", d.len());
            Ok(())
        }
        Command::Train(a) => {
            let d = load_dataset(&a.data)?;
            let mut tc = exp.train.clone().unwrap_or_default();
            let seed = a.seed.unwrap_or(default_seed);
            tc.seed = seed;
            if let Some(v) = a.epochs {
                tc.epochs = v;
            }
            if let Some(v) = a.lr {
                tc.adam.lr = v;
            }
            if let Some(v) = a.batch_size {
                tc.batch_size = v;
            }
            if let Some(v) = a.patience {
                tc.patience = v;
            }
            let model = match architecture_for(&d, a.preset, &exp, seed) {
                Architecture::HpcNeuroNet(cfg) => build_model(&cfg)?,
                Architecture::Mlp(cfg) => build_baseline_mlp(&cfg)?,
            };
            let outcome = training::train(&model, &d, &tc)?;
            outcome.model.save(&a.output)?;
            if let Some(p) = &a.history {
                write_json(p, &outcome.history)?;
            }
            let last = outcome.history.last().expect("non-empty history");
            println!(
                "trained {} epochs ({} steps); best epoch {}; final train loss {:.6}, val metric {:.4}",
                outcome.history.len(),
                outcome.optimizer_steps,
                outcome.best_epoch,
                last.train_loss,
                last.val_metric
            );
            Ok(())
        }
        Command::Eval(a) => {
            let m = AnyModel::load(&resolve_input(&a.model))?;
            let d = load_dataset(&a.data)?;
            training::check_compatible(m.model(), &d)?;
            let metrics = training::evaluate_with(&d, a.tolerance, |x| m.predict(x))?;
            if let Some(p) = &a.output {
                write_json(p, &metrics)?;
            }
            println!("{}: {:.4} over {} events (loss {:.6})", metrics.task.label(), metrics.headline(), metrics.n, metrics.loss);
            Ok(())
        }
        Command::Quantize(a) => {
            let m = Model::load(&resolve_input(&a.model))?;
            let pc = precision_from(a.precision.as_ref(), &exp)?;
            let qm = quantize_model(&m, &pc)?;
            qm.save(&a.output)?;
            println!("quantized {} layers, default {}", qm.model.layers.len(), pc.default);
            Ok(())
        }
        Command::ExportHw(a) => {
            let qm = match AnyModel::load(&resolve_input(&a.model))? {
                AnyModel::Quantized(q) if a.precision.is_none() => *q,
                AnyModel::Quantized(q) => quantize_model(&q.source, &precision_from(a.precision.as_ref(), &exp)?)?,
                AnyModel::Float(m) => quantize_model(&m, &precision_from(a.precision.as_ref(), &exp)?)?,
            };
            let hw = export_hw_descriptor(&qm);
            std::fs::write(&a.output, hw.to_json()? + "\n")?;
            println!("descriptor: {} layers, {} MACs, {} parameters", hw.layers.len(), hw.totals.macs, hw.totals.parameters);
            Ok(())
        }
        Command::Profile(a) => {
            let m = AnyModel::load(&resolve_input(&a.model))?;
            let d = load_dataset(&a.data)?;
            training::check_compatible(m.model(), &d)?;
            let bench = profiler::benchmark_with(&d.features, a.iters, a.warmup, |x| m.predict(x))?;
            let power = a.power_watts.or(exp.power_watts);
            let report = ProfileReport::new(m.model().name(), &profiler::count_macs(m.model()), &bench, power)?;
            write_json(&a.output, &report)?;
            println!(
                "{} MACs ({:.6} GOP); mean latency {:.4} ms; throughput {:.1}/s",
                report.macs, report.mac_gop, report.latency.mean_ms, report.throughput
            );
            Ok(())
        }
        Command::Report(a) => {
            let metrics: Metrics = serde_json::from_str(&std::fs::read_to_string(&a.metrics)?)?;
            let profile: ProfileReport = serde_json::from_str(&std::fs::read_to_string(&a.profile)?)?;
            let format = match a.format {
                CliFormat::Json => ReportFormat::Json,
                CliFormat::Markdown => ReportFormat::Markdown,
            };
            std::fs::write(&a.output, emit_report(&metrics, &profile, format, !a.no_reference)?)?;
            println!("wrote {}", a.output.display());
            Ok(())
        }
    }
}
