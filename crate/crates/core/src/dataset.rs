//! CSV ingestion for the three detector datasets, physics validation,
//! normalization, splitting, synthetic stand-ins and the on-disk cache.
//!
//! Column schemas (names follow the public open-data releases; any column can
//! be remapped at ingestion time):
//!
//! | schema       | required columns                                                         | target            |
//! |--------------|--------------------------------------------------------------------------|-------------------|
//! | `dielectron` | E1 px1 py1 pz1 pt1 eta1 phi1 Q1 E2 px2 py2 pz2 pt2 eta2 phi2 Q2 M          | M (regression)    |
//! | `dune-pid`   | id p theta beta nphe ein eout                                            | id → 4 classes    |
//! | `proton`     | Run Lumi Event MR Rsq E1 Px1 Py1 Pz1 E2 Px2 Py2 Pz2 nJets                 | nJets bucket      |

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{Blob, Container};
use crate::error::{Error, Result};
use crate::model::Task;

pub const STD_FLOOR: f64 = 1e-8;

pub const DIELECTRON_MASS_RANGE: (f64, f64) = (2.0, 110.0);
pub const MASS_CONSISTENCY_TOL: f64 = 0.01;
pub const DUNE_MOMENTUM_RANGE: (f64, f64) = (0.21, 5.29);
pub const DUNE_BETA_PEAK: (f64, f64) = (0.99, 1.01);
const BETA_BIN_WIDTH: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    Dielectron,
    DunePid,
    Proton,
}

impl Schema {
    pub const ALL: [Schema; 3] = [Schema::Dielectron, Schema::DunePid, Schema::Proton];

    pub fn name(self) -> &'static str {
        match self {
            Schema::Dielectron => "dielectron",
            Schema::DunePid => "dune-pid",
            Schema::Proton => "proton",
        }
    }

    pub fn required_columns(self) -> &'static [&'static str] {
        match self {
            Schema::Dielectron => &[
                "E1", "px1", "py1", "pz1", "pt1", "eta1", "phi1", "Q1", "E2", "px2", "py2", "pz2", "pt2", "eta2",
                "phi2", "Q2", "M",
            ],
            Schema::DunePid => &["id", "p", "theta", "beta", "nphe", "ein", "eout"],
            Schema::Proton => &[
                "Run", "Lumi", "Event", "MR", "Rsq", "E1", "Px1", "Py1", "Pz1", "E2", "Px2", "Py2", "Pz2", "nJets",
            ],
        }
    }

    pub fn task(self) -> Task {
        match self {
            Schema::Dielectron => Task::Regression,
            _ => Task::Classification,
        }
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Schema::ALL
            .into_iter()
            .find(|schema| schema.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown schema `{s}` (expected dielectron, dune-pid or proton)")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DielectronEvent {
    pub e1: f64,
    pub px1: f64,
    pub py1: f64,
    pub pz1: f64,
    pub pt1: f64,
    pub eta1: f64,
    pub phi1: f64,
    pub q1: f64,
    pub e2: f64,
    pub px2: f64,
    pub py2: f64,
    pub pz2: f64,
    pub pt2: f64,
    pub eta2: f64,
    pub phi2: f64,
    pub q2: f64,
    pub m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Particle {
    Positron,
    Pion,
    Kaon,
    Proton,
}

impl Particle {
    pub const ALL: [Particle; 4] = [Particle::Positron, Particle::Pion, Particle::Kaon, Particle::Proton];

    /// Maps a PDG code (sign ignored) to a particle class.
    pub fn from_pdg(id: i64) -> Option<Self> {
        match id.abs() {
            11 => Some(Particle::Positron),
            211 => Some(Particle::Pion),
            321 => Some(Particle::Kaon),
            2212 => Some(Particle::Proton),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Particle::Positron => "positron",
            Particle::Pion => "pion",
            Particle::Kaon => "kaon",
            Particle::Proton => "proton",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DunePidEvent {
    pub momentum: f64,
    pub theta: f64,
    pub beta: f64,
    pub n_photoelectrons: f64,
    pub energy_inner: f64,
    pub energy_outer: f64,
    pub label: Particle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtonCollisionEvent {
    pub run: u64,
    pub lumi: u64,
    pub event: u64,
    pub mr: f64,
    pub rsq: f64,
    pub jet1: [f64; 4],
    pub jet2: [f64; 4],
    pub n_jets_pt40: u32,
}

/// Jet-multiplicity classes used as the proton-collision label.
pub const JET_BUCKETS: [&str; 4] = ["<=2", "3", "4", ">=5"];

pub fn jet_bucket(n_jets: u32) -> usize {
    match n_jets {
        0..=2 => 0,
        3 => 1,
        4 => 2,
        _ => 3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Population mean and standard deviation per column, std floored.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Usage(format!("normalization needs at least 2 rows, got {}", rows.len())));
        }
        let f = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..f).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..f)
            .map(|j| {
                let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                var.sqrt().max(STD_FLOOR)
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Targets {
    Classification { labels: Vec<usize>, class_names: Vec<String> },
    Regression { values: Vec<f64> },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classification { labels, .. } => labels.len(),
            Targets::Regression { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn subset(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Classification { labels, class_names } => Targets::Classification {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                class_names: class_names.clone(),
            },
            Targets::Regression { values } => Targets::Regression { values: idx.iter().map(|&i| values[i]).collect() },
        }
    }

    fn as_f64(&self) -> Vec<f64> {
        match self {
            Targets::Classification { labels, .. } => labels.iter().map(|&l| l as f64).collect(),
            Targets::Regression { values } => values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub target_name: String,
    pub targets: Targets,
    /// Present when `features` hold z-scores.
    pub stats: Option<FeatureStats>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, features: Vec<Vec<f64>>, target_name: impl Into<String>, targets: Targets) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::Data(format!("{} feature rows but {} targets", features.len(), targets.len())));
        }
        if let Some(i) = features.iter().position(|r| r.len() != feature_names.len()) {
            return Err(Error::Data(format!("row {i} has {} values, expected {}", features[i].len(), feature_names.len())));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        match &targets {
            Targets::Classification { labels, class_names } => {
                if let Some(l) = labels.iter().find(|&&l| l >= class_names.len()) {
                    return Err(Error::Data(format!("label {l} out of range for {} classes", class_names.len())));
                }
            }
            Targets::Regression { values } => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data("non-finite regression target".into()));
                }
            }
        }
        Ok(Self { feature_names, features, target_name: target_name.into(), targets, stats: None })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn task(&self) -> Task {
        match self.targets {
            Targets::Classification { .. } => Task::Classification,
            Targets::Regression { .. } => Task::Regression,
        }
    }

    pub fn n_classes(&self) -> usize {
        match &self.targets {
            Targets::Classification { class_names, .. } => class_names.len(),
            Targets::Regression { .. } => 0,
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classification { labels, .. } => Some(labels),
            Targets::Regression { .. } => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match &self.targets {
            Targets::Regression { values } => Some(values),
            Targets::Classification { .. } => None,
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            target_name: self.target_name.clone(),
            targets: self.targets.subset(idx),
            stats: self.stats.clone(),
        }
    }

    /// Feature rows in original units.
    pub fn raw_features(&self) -> Vec<Vec<f64>> {
        match &self.stats {
            Some(s) => self.features.iter().map(|r| s.invert(r)).collect(),
            None => self.features.clone(),
        }
    }

    pub fn to_container(&self) -> Container {
        let header = json!({
            "kind": "dataset",
            "feature_names": self.feature_names,
            "target_name": self.target_name,
            "targets": match &self.targets {
                Targets::Classification { class_names, .. } => json!({"task": "classification", "class_names": class_names}),
                Targets::Regression { .. } => json!({"task": "regression"}),
            },
            "stats": self.stats,
        });
        let mut c = Container::new(header);
        let flat: Vec<f64> = self.features.iter().flatten().copied().collect();
        c.blobs.push(Blob::from_f64("features", &[self.len(), self.n_features()], &flat));
        c.blobs.push(Blob::from_f64("targets", &[self.len()], &self.targets.as_f64()));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let h = &c.header;
        if h["kind"] != "dataset" {
            return Err(Error::Format(format!("expected a dataset container, found {}", h["kind"])));
        }
        let names: Vec<String> = serde_json::from_value(h["feature_names"].clone())?;
        let feats = c.blob("features")?;
        let f = names.len();
        if feats.shape.len() != 2 || feats.shape[1] != f {
            return Err(Error::Format(format!("features blob shape {:?} does not match {f} names", feats.shape)));
        }
        let rows: Vec<Vec<f64>> = feats.to_f64().chunks(f.max(1)).map(<[f64]>::to_vec).collect();
        let rows = if f == 0 { vec![Vec::new(); feats.shape[0]] } else { rows };
        let raw_targets = c.blob("targets")?.to_f64();
        let targets = match h["targets"]["task"].as_str() {
            Some("classification") => Targets::Classification {
                labels: raw_targets.iter().map(|&v| v as usize).collect(),
                class_names: serde_json::from_value(h["targets"]["class_names"].clone())?,
            },
            Some("regression") => Targets::Regression { values: raw_targets },
            other => return Err(Error::Format(format!("unknown target kind {other:?}"))),
        };
        let target_name = h["target_name"].as_str().unwrap_or("target").to_string();
        let mut d = Dataset::new(names, rows, target_name, targets)?;
        d.stats = serde_json::from_value(h["stats"].clone())?;
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub schema: Schema,
    pub rows_read: usize,
    pub events: usize,
    pub skipped: usize,
    pub skipped_rows: Vec<SkippedRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Events {
    Dielectron(Vec<DielectronEvent>),
    DunePid(Vec<DunePidEvent>),
    Proton(Vec<ProtonCollisionEvent>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub events: Events,
    pub dataset: Dataset,
    pub report: IngestReport,
}

struct Row<'a> {
    record: &'a csv::StringRecord,
    index: &'a [usize],
}

impl Row<'_> {
    fn num(&self, k: usize, name: &str) -> std::result::Result<f64, String> {
        let raw = self.record.get(self.index[k]).map(str::trim).unwrap_or("");
        if raw.is_empty() {
            return Err(format!("missing value for `{name}`"));
        }
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) => Err(format!("non-finite value for `{name}`")),
            Err(_) => Err(format!("non-numeric value `{raw}` for `{name}`")),
        }
    }

    fn count(&self, k: usize, name: &str) -> std::result::Result<u64, String> {
        let v = self.num(k, name)?;
        if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
            return Err(format!("`{name}` must be a non-negative integer, got {v}"));
        }
        Ok(v as u64)
    }
}

fn parse_dielectron(row: &Row) -> std::result::Result<DielectronEvent, String> {
    let cols = Schema::Dielectron.required_columns();
    let v = cols.iter().enumerate().map(|(k, c)| row.num(k, c)).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(DielectronEvent {
        e1: v[0],
        px1: v[1],
        py1: v[2],
        pz1: v[3],
        pt1: v[4],
        eta1: v[5],
        phi1: v[6],
        q1: v[7],
        e2: v[8],
        px2: v[9],
        py2: v[10],
        pz2: v[11],
        pt2: v[12],
        eta2: v[13],
        phi2: v[14],
        q2: v[15],
        m: v[16],
    })
}

fn parse_dune(row: &Row) -> std::result::Result<DunePidEvent, String> {
    let id = row.num(0, "id")?;
    let label = (id.fract() == 0.0)
        .then(|| Particle::from_pdg(id as i64))
        .flatten()
        .ok_or_else(|| format!("unknown particle id {id}"))?;
    Ok(DunePidEvent {
        momentum: row.num(1, "p")?,
        theta: row.num(2, "theta")?,
        beta: row.num(3, "beta")?,
        n_photoelectrons: row.num(4, "nphe")?,
        energy_inner: row.num(5, "ein")?,
        energy_outer: row.num(6, "eout")?,
        label,
    })
}

fn parse_proton(row: &Row) -> std::result::Result<ProtonCollisionEvent, String> {
    let cols = Schema::Proton.required_columns();
    let f = |k: usize| row.num(k, cols[k]);
    let n_jets = row.count(13, "nJets")?;
    Ok(ProtonCollisionEvent {
        run: row.count(0, "Run")?,
        lumi: row.count(1, "Lumi")?,
        event: row.count(2, "Event")?,
        mr: f(3)?,
        rsq: f(4)?,
        jet1: [f(5)?, f(6)?, f(7)?, f(8)?],
        jet2: [f(9)?, f(10)?, f(11)?, f(12)?],
        n_jets_pt40: u32::try_from(n_jets).map_err(|_| format!("nJets {n_jets} too large"))?,
    })
}

fn names(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

fn class_names(names: impl IntoIterator<Item = &'static str>) -> Vec<String> {
    names.into_iter().map(String::from).collect()
}

impl Events {
    pub fn len(&self) -> usize {
        match self {
            Events::Dielectron(e) => e.len(),
            Events::DunePid(e) => e.len(),
            Events::Proton(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Model-facing view: feature matrix plus targets.
    pub fn to_dataset(&self) -> Result<Dataset> {
        match self {
            Events::Dielectron(events) => {
                let cols = &Schema::Dielectron.required_columns()[..16];
                let rows = events
                    .iter()
                    .map(|e| {
                        vec![
                            e.e1, e.px1, e.py1, e.pz1, e.pt1, e.eta1, e.phi1, e.q1, e.e2, e.px2, e.py2, e.pz2, e.pt2, e.eta2,
                            e.phi2, e.q2,
                        ]
                    })
                    .collect();
                let values = events.iter().map(|e| e.m).collect();
                Dataset::new(names(cols), rows, "M", Targets::Regression { values })
            }
            Events::DunePid(events) => {
                let rows = events
                    .iter()
                    .map(|e| vec![e.momentum, e.theta, e.beta, e.n_photoelectrons, e.energy_inner, e.energy_outer])
                    .collect();
                let labels = events.iter().map(|e| e.label as usize).collect();
                Dataset::new(
                    names(&Schema::DunePid.required_columns()[1..]),
                    rows,
                    "id",
                    Targets::Classification { labels, class_names: class_names(Particle::ALL.map(Particle::name)) },
                )
            }
            Events::Proton(events) => {
                let rows = events
                    .iter()
                    .map(|e| {
                        let mut r = vec![e.mr, e.rsq];
                        r.extend(e.jet1);
                        r.extend(e.jet2);
                        r
                    })
                    .collect();
                let labels = events.iter().map(|e| jet_bucket(e.n_jets_pt40)).collect();
                Dataset::new(
                    names(&Schema::Proton.required_columns()[3..13]),
                    rows,
                    "nJets",
                    Targets::Classification { labels, class_names: class_names(JET_BUCKETS) },
                )
            }
        }
    }
}

pub fn ingest_csv(path: &Path, schema: Schema) -> Result<Ingested> {
    ingest_csv_with(path, schema, &HashMap::new())
}

/// Like [`ingest_csv`], with `renames` mapping schema column names to the
/// names used in the file.
pub fn ingest_csv_with(path: &Path, schema: Schema, renames: &HashMap<String, String>) -> Result<Ingested> {
    if let Some(unknown) = renames.keys().find(|k| !schema.required_columns().contains(&k.as_str())) {
        return Err(Error::Usage(format!("rename target `{unknown}` is not a {schema} column")));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    let index = schema
        .required_columns()
        .iter()
        .map(|&col| {
            let wanted = renames.get(col).map(String::as_str).unwrap_or(col);
            header.iter().position(|h| h == wanted).ok_or_else(|| Error::MissingColumn { column: wanted.to_string() })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = IngestReport { schema, rows_read: 0, events: 0, skipped: 0, skipped_rows: Vec::new() };
    let mut events = match schema {
        Schema::Dielectron => Events::Dielectron(Vec::new()),
        Schema::DunePid => Events::DunePid(Vec::new()),
        Schema::Proton => Events::Proton(Vec::new()),
    };
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        let parsed = match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                if record.len() == 1 && record.get(0) == Some("") {
                    continue;
                }
                let row = Row { record: &record, index: &index };
                match &mut events {
                    Events::Dielectron(v) => parse_dielectron(&row).map(|e| v.push(e)),
                    Events::DunePid(v) => parse_dune(&row).map(|e| v.push(e)),
                    Events::Proton(v) => parse_proton(&row).map(|e| v.push(e)),
                }
            }
            // Undecodable bytes and similar per-record faults skip the row.
            Err(e) if !matches!(e.kind(), csv::ErrorKind::Io(_)) => Err(e.to_string()),
            Err(e) => return Err(e.into()),
        };
        report.rows_read += 1;
        if let Err(reason) = parsed {
            report.skipped += 1;
            report.skipped_rows.push(SkippedRow { line, reason });
        }
    }
    report.events = events.len();
    let dataset = events.to_dataset()?;
    Ok(Ingested { events, dataset, report })
}

/// `sqrt(max(0, (E1+E2)² − |p1+p2|²))` for four-vectors `[E, px, py, pz]`.
pub fn invariant_mass(p1: [f64; 4], p2: [f64; 4]) -> f64 {
    mass_squared(p1, p2).max(0.0).sqrt()
}

fn mass_squared(p1: [f64; 4], p2: [f64; 4]) -> f64 {
    let s = [p1[0] + p2[0], p1[1] + p2[1], p1[2] + p2[2], p1[3] + p2[3]];
    s[0] * s[0] - s[1] * s[1] - s[2] * s[2] - s[3] * s[3]
}

impl DielectronEvent {
    pub fn p1(&self) -> [f64; 4] {
        [self.e1, self.px1, self.py1, self.pz1]
    }

    pub fn p2(&self) -> [f64; 4] {
        [self.e2, self.px2, self.py2, self.pz2]
    }
}

pub fn recompute_invariant_mass(e: &DielectronEvent) -> f64 {
    invariant_mass(e.p1(), e.p2())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema: Schema,
    pub n_events: usize,
    /// Rule name → number of violating events.
    pub violations: BTreeMap<String, usize>,
    /// Most populated beta bin, for the particle-ID schema.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_mode_bin: Option<(f64, f64)>,
}

impl ValidationReport {
    pub fn total(&self) -> usize {
        self.violations.values().sum()
    }

    pub fn count(&self, rule: &str) -> usize {
        self.violations.get(rule).copied().unwrap_or(0)
    }
}

fn columns<'a>(d: &Dataset, wanted: &[&'a str]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|&w| d.column(w).ok_or_else(|| Error::MissingColumn { column: w.to_string() }))
        .collect()
}

/// Counts violations of the published kinematic ranges. Nothing is filtered.
pub fn validate_physics(d: &Dataset, schema: Schema) -> Result<ValidationReport> {
    let rows = d.raw_features();
    let mut violations = BTreeMap::new();
    let mut beta_mode_bin = None;
    let mut bump = |rule: &str, hit: bool| {
        let slot = violations.entry(rule.to_string()).or_insert(0);
        *slot += hit as usize;
    };
    match schema {
        Schema::Dielectron => {
            let ix = columns(d, &["E1", "px1", "py1", "pz1", "E2", "px2", "py2", "pz2"])?;
            let masses = d.values().ok_or_else(|| Error::Data("dielectron dataset needs regression targets".into()))?;
            for (r, &m) in rows.iter().zip(masses) {
                let g = |k: usize| r[ix[k]];
                let (p1, p2) = ([g(0), g(1), g(2), g(3)], [g(4), g(5), g(6), g(7)]);
                let m2 = mass_squared(p1, p2);
                let recomputed = m2.max(0.0).sqrt();
                bump("mass_out_of_range", !(DIELECTRON_MASS_RANGE.0..=DIELECTRON_MASS_RANGE.1).contains(&m));
                bump("mass_inconsistent", (m - recomputed).abs() / m.abs().max(1e-12) > MASS_CONSISTENCY_TOL);
                bump("negative_radicand", m2 < 0.0);
                bump("nonpositive_energy", p1[0] <= 0.0 || p2[0] <= 0.0);
            }
        }
        Schema::DunePid => {
            let ix = columns(d, &["p", "theta", "beta"])?;
            let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
            for r in &rows {
                let (p, theta, beta) = (r[ix[0]], r[ix[1]], r[ix[2]]);
                bump("momentum_out_of_range", !(DUNE_MOMENTUM_RANGE.0..=DUNE_MOMENTUM_RANGE.1).contains(&p));
                bump("negative_theta", theta < 0.0);
                bump("nonpositive_beta", beta <= 0.0);
                // Bins are centred on multiples of the width, so one bin is [0.99, 1.01).
                *bins.entry((beta / BETA_BIN_WIDTH + 0.5).floor() as i64).or_insert(0) += 1;
            }
            let mode = bins.iter().fold(None, |best: Option<(i64, usize)>, (&b, &n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((b, n)),
            });
            if let Some((b, _)) = mode {
                let lo = (b as f64 - 0.5) * BETA_BIN_WIDTH;
                let bin = (lo, lo + BETA_BIN_WIDTH);
                beta_mode_bin = Some(bin);
                let peak = (bin.0 - DUNE_BETA_PEAK.0).abs() < 1e-9 && (bin.1 - DUNE_BETA_PEAK.1).abs() < 1e-9;
                bump("beta_mode_off_peak", !peak);
            } else {
                bump("beta_mode_off_peak", false);
            }
        }
        Schema::Proton => {
            let ix = columns(d, &["MR", "Rsq", "E1", "E2"])?;
            for r in &rows {
                bump("negative_field", ix.iter().any(|&k| r[k] < 0.0));
            }
        }
    }
    Ok(ValidationReport { schema, n_events: d.len(), violations, beta_mode_bin })
}

/// Z-scores every feature; statistics are kept for [`denormalize`].
pub fn normalize(d: &Dataset) -> Result<Dataset> {
    let raw = d.raw_features();
    let stats = FeatureStats::fit(&raw)?;
    let mut out = d.clone();
    out.features = raw.iter().map(|r| stats.apply(r)).collect();
    out.stats = Some(stats);
    Ok(out)
}

pub fn denormalize(d: &Dataset) -> Dataset {
    let mut out = d.clone();
    out.features = d.raw_features();
    out.stats = None;
    out
}

/// Seeded shuffle, then the first `floor(n·test_fraction)` rows form the test set.
pub fn split(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Usage(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let (train, test) = split_indices(d.len(), test_fraction, seed);
    Ok((d.subset(&train), d.subset(&test)))
}

pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (n as f64 * test_fraction).floor() as usize;
    let train = idx.split_off(n_test);
    (train, idx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SynthSpec {
    /// Isotropic Gaussian clusters; the closest pair of centres sits
    /// `separation` standard deviations apart.
    Blobs { n_features: usize, n_classes: usize, separation: f64, sigma: f64 },
    /// Two-body decays of a parent with mass uniform in `mass_range` (GeV),
    /// exponential transverse momentum and Gaussian longitudinal momentum.
    DielectronKinematics { mass_range: (f64, f64), mean_pt: f64, pz_sigma: f64 },
}

impl SynthSpec {
    pub fn blobs() -> Self {
        SynthSpec::Blobs { n_features: 6, n_classes: 4, separation: 5.0, sigma: 1.0 }
    }

    pub fn dielectron() -> Self {
        SynthSpec::DielectronKinematics { mass_range: (20.0, 110.0), mean_pt: 15.0, pz_sigma: 40.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match *self {
            SynthSpec::Blobs { n_features, n_classes, separation, sigma } => {
                if n_features == 0 || n_classes < 2 {
                    return bad(format!("blobs need ≥1 feature and ≥2 classes, got {n_features}/{n_classes}"));
                }
                if n_classes > 2 * n_features {
                    return bad(format!("at most {} well-separated blobs fit in {n_features} dimensions", 2 * n_features));
                }
                if !(separation > 0.0 && separation.is_finite() && sigma > 0.0 && sigma.is_finite()) {
                    return bad("blob separation and sigma must be positive".into());
                }
            }
            SynthSpec::DielectronKinematics { mass_range: (lo, hi), mean_pt, pz_sigma } => {
                if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                    return bad(format!("invalid mass range ({lo}, {hi})"));
                }
                if !(mean_pt > 0.0 && mean_pt.is_finite() && pz_sigma >= 0.0 && pz_sigma.is_finite()) {
                    return bad("mean_pt must be positive and pz_sigma non-negative".into());
                }
            }
        }
        Ok(())
    }
}

/// Centre of blob `c`: a signed axis direction scaled so neighbours are `sep` apart.
pub fn blob_centers(n_features: usize, n_classes: usize, separation: f64, sigma: f64) -> Vec<Vec<f64>> {
    let radius = separation * sigma / std::f64::consts::SQRT_2;
    (0..n_classes)
        .map(|c| {
            let mut center = vec![0.0; n_features];
            center[c % n_features] = if c < n_features { radius } else { -radius };
            center
        })
        .collect()
}

pub fn synth_dataset(spec: &SynthSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Config("synthetic dataset size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *spec {
        SynthSpec::Blobs { n_features, n_classes, separation, sigma } => {
            let centers = blob_centers(n_features, n_classes, separation, sigma);
            let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
            let mut rows = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % n_classes;
                rows.push(centers[c].iter().map(|m| m + noise.sample(&mut rng)).collect());
                labels.push(c);
            }
            let names = (0..n_features).map(|j| format!("x{j}")).collect();
            let class_names = (0..n_classes).map(|c| format!("blob{c}")).collect();
            let mut d = Dataset::new(names, rows, "cluster", Targets::Classification { labels, class_names })?;
            // Interleaved labels are shuffled so prefixes stay class-balanced but unordered.
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            d = d.subset(&idx);
            Ok(d)
        }
        SynthSpec::DielectronKinematics { mass_range, mean_pt, pz_sigma } => {
            let pt_dist = Exp::new(1.0 / mean_pt).map_err(|e| Error::Config(e.to_string()))?;
            let pz_dist = Normal::new(0.0, pz_sigma).map_err(|e| Error::Config(e.to_string()))?;
            let mut rows = Vec::with_capacity(n);
            let mut masses = Vec::with_capacity(n);
            for _ in 0..n {
                let m = if mass_range.1 > mass_range.0 { rng.random_range(mass_range.0..mass_range.1) } else { mass_range.0 };
                let pt: f64 = pt_dist.sample(&mut rng);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let parent = [pt * phi.cos(), pt * phi.sin(), pz_dist.sample(&mut rng)];
                let (p1, p2) = two_body_decay(m, parent, &mut rng);
                masses.push(invariant_mass(p1, p2));
                rows.push(p1.iter().chain(&p2).copied().collect());
            }
            let names = names(&["E1", "px1", "py1", "pz1", "E2", "px2", "py2", "pz2"]);
            Dataset::new(names, rows, "M", Targets::Regression { values: masses })
        }
    }
}

/// Massless two-body decay, isotropic in the rest frame, boosted to the lab.
fn two_body_decay(m: f64, parent_p: [f64; 3], rng: &mut impl Rng) -> ([f64; 4], [f64; 4]) {
    let cos_t: f64 = rng.random_range(-1.0..1.0);
    let sin_t = (1.0 - cos_t * cos_t).sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let k = m / 2.0;
    let d = [k * sin_t * phi.cos(), k * sin_t * phi.sin(), k * cos_t];
    let e_parent = (m * m + parent_p.iter().map(|p| p * p).sum::<f64>()).sqrt();
    let beta = parent_p.map(|p| p / e_parent);
    let boost = |e: f64, p: [f64; 3]| -> [f64; 4] {
        let b2: f64 = beta.iter().map(|b| b * b).sum();
        if b2 == 0.0 {
            return [e, p[0], p[1], p[2]];
        }
        let gamma = 1.0 / (1.0 - b2).sqrt();
        let bp: f64 = beta.iter().zip(&p).map(|(b, q)| b * q).sum();
        let coef = (gamma - 1.0) * bp / b2 + gamma * e;
        [gamma * (e + bp), p[0] + coef * beta[0], p[1] + coef * beta[1], p[2] + coef * beta[2]]
    };
    (boost(k, d), boost(k, d.map(|x| -x)))
}
