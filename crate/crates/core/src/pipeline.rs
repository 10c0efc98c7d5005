//! Configuration, data ingestion, experiment orchestration and report emission.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::distributions::{seeded_rng, EmpiricalDistribution, Gaussian, GaussianJoint};
use crate::error::{Error, Result};
use crate::finetune::{
    self, minimize_output_risk, OfficeConfig, OutputFamily, SyntheticDomain, TrainConfig,
};
use crate::gaussian_lab::{self, GaussianTask, RandomTaskParams, RiskDecomposition, TaskRole};
use crate::risk::{input_risk, AffineModel, Divergence, Law, OutputMode, RiskCombiner, RiskSpec, TransportMap};
use crate::stats;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Empirical,
    GaussianLab,
    SyntheticOffice,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Csv,
    Json,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(Self::Csv),
            Some("json") => Ok(Self::Json),
            _ => Err(Error::Config(format!(
                "cannot infer dataset format of {}; set \"format\" to csv or json",
                path.display()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    /// Column holding the label or regression target.
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<DatasetFormat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalSpec {
    /// Every ordered pair of distinct datasets is evaluated.
    pub datasets: Vec<DatasetSpec>,
    /// Pretrained model applied to every source; fitted by least squares per source when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_model: Option<AffineModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianLabSpec {
    /// Explicit pair; when absent, `instances` random pairs are drawn.
    pub source: Option<GaussianJoint>,
    pub target: Option<GaussianJoint>,
    pub instances: usize,
    pub random: RandomTaskParams,
}

impl Default for GaussianLabSpec {
    fn default() -> Self {
        Self {
            source: None,
            target: None,
            instances: 10,
            random: RandomTaskParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticOfficeSpec {
    pub domains: Vec<SyntheticDomain>,
    pub samples_per_class: usize,
    pub radius: f64,
    pub noise: f64,
}

impl Default for SyntheticOfficeSpec {
    fn default() -> Self {
        let base = OfficeConfig::default();
        Self {
            domains: SyntheticDomain::office_analog(),
            samples_per_class: base.samples_per_class,
            radius: base.radius,
            noise: base.noise,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitForm {
    /// `c_i E^I + c_o E^O`.
    Linear,
    /// `c_i E^I + c_o (E^O)^2`.
    Polynomial2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitGrid {
    /// Points per axis, evenly spaced over `[0, max]`.
    pub steps: usize,
    pub max: f64,
}

impl Default for FitGrid {
    fn default() -> Self {
        Self { steps: 50, max: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    #[serde(default = "office_combiner")]
    pub combiner: RiskCombiner,
    #[serde(default)]
    pub risk: RiskSpec,
    /// Output-risk training budget.
    #[serde(default)]
    pub train: TrainConfig,
    /// Training used for accuracy measurements.
    #[serde(default = "TrainConfig::accuracy_mode")]
    pub accuracy_train: TrainConfig,
    /// Multiplies every input risk before combining.
    #[serde(default = "one")]
    pub input_risk_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// CSV of precomputed `source,target,input_risk,output_risk[,accuracy]` rows that replaces
    /// the risk computation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub override_risks: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<EmpiricalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_lab: Option<GaussianLabSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic_office: Option<SyntheticOfficeSpec>,
    #[serde(default)]
    pub fit: FitGrid,
}

fn office_combiner() -> RiskCombiner {
    RiskCombiner::OFFICE
}

fn one() -> f64 {
    1.0
}

impl PipelineConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            combiner: office_combiner(),
            risk: RiskSpec::default(),
            train: TrainConfig::risk_mode(),
            accuracy_train: TrainConfig::accuracy_mode(),
            input_risk_scale: 1.0,
            seed: 0,
            output_dir: None,
            override_risks: None,
            empirical: None,
            gaussian_lab: None,
            synthetic_office: None,
            fit: FitGrid::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate_values()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    /// Makes relative dataset, override and output paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(e) = &mut self.empirical {
            e.datasets.iter_mut().for_each(|d| fix(&mut d.path));
        }
        if let Some(p) = &mut self.override_risks {
            fix(p);
        }
        if let Some(p) = &mut self.output_dir {
            fix(p);
        }
    }

    /// Numeric ranges only; sections required by the mode are checked by [`Self::validate`].
    pub fn validate_values(&self) -> Result<()> {
        self.combiner.validate()?;
        self.risk.ot.validate()?;
        self.train.validate()?;
        self.accuracy_train.validate()?;
        if !(self.input_risk_scale > 0.0) || !self.input_risk_scale.is_finite() {
            return Err(Error::Config(format!(
                "input_risk_scale must be positive, got {}",
                self.input_risk_scale
            )));
        }
        if !(self.risk.smoothing >= 0.0) {
            return Err(Error::Config("smoothing must be nonnegative".into()));
        }
        if self.fit.steps < 2 || !(self.fit.max > 0.0) {
            return Err(Error::Config("fit grid needs at least 2 steps and a positive max".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        if self.override_risks.is_some() {
            return Ok(());
        }
        match self.mode {
            Mode::Empirical => {
                let spec = self
                    .empirical
                    .as_ref()
                    .ok_or_else(|| Error::Config("mode empirical needs an \"empirical\" section".into()))?;
                if spec.datasets.len() < 2 {
                    return Err(Error::Config("empirical mode needs at least two datasets".into()));
                }
            }
            Mode::GaussianLab => {
                if let Some(g) = &self.gaussian_lab {
                    if g.source.is_some() != g.target.is_some() {
                        return Err(Error::Config("gaussian_lab needs both source and target, or neither".into()));
                    }
                    if g.source.is_none() && g.instances == 0 {
                        return Err(Error::Config("gaussian_lab.instances must be at least 1".into()));
                    }
                }
            }
            Mode::SyntheticOffice => {
                let spec = self.synthetic_office.clone().unwrap_or_default();
                if spec.domains.len() < 2 {
                    return Err(Error::Config("synthetic_office needs at least two domains".into()));
                }
            }
        }
        Ok(())
    }
}

/// A table of feature rows with one designated label column.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub label_name: String,
    pub features: EmpiricalDistribution,
    pub labels: Vec<f64>,
}

impl Dataset {
    /// Labels as class indices; fails on non-integral or negative values.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|&y| {
                if y >= 0.0 && y.fract() == 0.0 {
                    Ok(y as usize)
                } else {
                    Err(Error::InvalidArgument(format!("label {y} is not a class index")))
                }
            })
            .collect()
    }

    pub fn label_law(&self) -> Result<EmpiricalDistribution> {
        EmpiricalDistribution::from_weighted_scalars(&self.labels, self.features.weights())
    }
}

fn data_error(path: &Path, line: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.display().to_string(),
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

fn parse_cell(path: &Path, line: usize, column: &str, raw: &str) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() {
        return Err(data_error(path, line, column, "missing value"));
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(data_error(path, line, column, format!("not a finite number: '{s}'"))),
    }
}

fn split_label(header: &[String], label: &str, path: &Path) -> Result<usize> {
    let idx = header
        .iter()
        .position(|h| h == label)
        .ok_or_else(|| data_error(path, 1, label, "label column not found in header"))?;
    if header.len() < 2 {
        return Err(data_error(path, 1, label, "no feature columns besides the label"));
    }
    Ok(idx)
}

/// Reads a CSV (header row required) or JSON table into features and labels.
pub fn ingest_dataset(path: &Path, format: DatasetFormat, label: &str) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        DatasetFormat::Csv => ingest_csv(path, &text, label),
        DatasetFormat::Json => ingest_json(path, &text, label),
    }
}

fn ingest_csv(path: &Path, text: &str, label: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(data_error(path, 1, "", "empty file"));
    }
    let label_idx = split_label(&header, label, path)?;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(data_error(
                path,
                line,
                "",
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let mut row = Vec::with_capacity(header.len() - 1);
        for (i, (name, raw)) in header.iter().zip(record.iter()).enumerate() {
            let v = parse_cell(path, line, name, raw)?;
            if i == label_idx {
                labels.push(v);
            } else {
                row.push(v);
            }
        }
        points.push(row);
    }
    if points.is_empty() {
        return Err(data_error(path, 2, "", "no data rows"));
    }
    let feature_names = header.iter().enumerate().filter(|(i, _)| *i != label_idx).map(|(_, h)| h.clone()).collect();
    Ok(Dataset {
        feature_names,
        label_name: label.to_string(),
        features: EmpiricalDistribution::uniform(points)?,
        labels,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonTable {
    columns: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

fn ingest_json(path: &Path, text: &str, label: &str) -> Result<Dataset> {
    let table: JsonTable = serde_json::from_str(text).map_err(|e| data_error(path, e.line(), "", e.to_string()))?;
    let label_idx = split_label(&table.columns, label, path)?;
    if table.rows.is_empty() {
        return Err(data_error(path, 0, "", "no data rows"));
    }
    let mut points = Vec::with_capacity(table.rows.len());
    let mut labels = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        // Rows are reported 1-based.
        let line = r + 1;
        if row.len() != table.columns.len() {
            return Err(data_error(
                path,
                line,
                "",
                format!("expected {} values, found {}", table.columns.len(), row.len()),
            ));
        }
        let mut point = Vec::with_capacity(row.len() - 1);
        for (i, (name, v)) in table.columns.iter().zip(row).enumerate() {
            let v = v.ok_or_else(|| data_error(path, line, name, "missing value"))?;
            if i == label_idx {
                labels.push(v);
            } else {
                point.push(v);
            }
        }
        points.push(point);
    }
    let features = match table.weights {
        Some(w) => {
            if w.len() != points.len() {
                return Err(data_error(path, 0, "weights", format!("{} weights for {} rows", w.len(), points.len())));
            }
            EmpiricalDistribution::new(points, w).map_err(|e| data_error(path, 0, "weights", e.to_string()))?
        }
        None => EmpiricalDistribution::uniform(points)?,
    };
    let feature_names = table
        .columns
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    Ok(Dataset {
        feature_names,
        label_name: label.to_string(),
        features,
        labels,
    })
}

pub fn ingest_spec(spec: &DatasetSpec) -> Result<Dataset> {
    let format = match spec.format {
        Some(f) => f,
        None => DatasetFormat::from_path(&spec.path)?,
    };
    ingest_dataset(&spec.path, format, &spec.label)
}

/// One row of the pair table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub source: String,
    pub target: String,
    pub accuracy: Option<f64>,
    pub input_risk: f64,
    pub output_risk: f64,
    pub transfer_risk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub spearman: f64,
    pub pearson: f64,
}

/// Risk-versus-accuracy scatter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub x_transfer_risk: Vec<f64>,
    pub y_accuracy: Vec<f64>,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLabRow {
    pub kl: Option<RiskDecomposition>,
    pub w: RiskDecomposition,
    pub regret: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub rows: Vec<ReportRow>,
    pub correlation: Option<Correlation>,
    pub plot: PlotSeries,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gaussian_lab: Vec<GaussianLabRow>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl ReportDocument {
    /// Largest gap between a stored combined risk and the combiner re-applied to its row.
    pub fn recompute_error(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for r in &self.rows {
            let c = self.config.combiner.combine(r.input_risk, r.output_risk)?;
            worst = worst.max((c - r.transfer_risk).abs());
        }
        Ok(worst)
    }
}

fn row(source: &str, target: &str, accuracy: Option<f64>, e_i: f64, e_o: f64, combiner: &RiskCombiner) -> Result<ReportRow> {
    Ok(ReportRow {
        source: source.to_string(),
        target: target.to_string(),
        accuracy,
        input_risk: e_i,
        output_risk: e_o,
        transfer_risk: combiner.combine(e_i, e_o)?,
    })
}

/// Reads the override stub: `source,target,input_risk,output_risk[,accuracy]`.
pub fn read_override_rows(path: &Path, combiner: &RiskCombiner, input_scale: f64) -> Result<Vec<ReportRow>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (src, tgt, ei, eo) = match (col("source"), col("target"), col("input_risk"), col("output_risk")) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => {
            return Err(data_error(
                path,
                1,
                "",
                "override CSV needs source, target, input_risk and output_risk columns",
            ))
        }
    };
    let acc = col("accuracy");
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize| record.get(i).unwrap_or("");
        let e_i = parse_cell(path, line, "input_risk", get(ei))? * input_scale;
        let e_o = parse_cell(path, line, "output_risk", get(eo))?;
        let accuracy = match acc {
            Some(i) if !get(i).trim().is_empty() => Some(parse_cell(path, line, "accuracy", get(i))?),
            _ => None,
        };
        rows.push(row(get(src), get(tgt), accuracy, e_i, e_o, combiner)?);
    }
    if rows.is_empty() {
        return Err(data_error(path, 2, "", "no rows"));
    }
    Ok(rows)
}

fn least_squares_model(data: &Dataset) -> Result<AffineModel> {
    let n = data.features.len();
    let joined: Vec<Vec<f64>> = data
        .features
        .points()
        .iter()
        .zip(&data.labels)
        .map(|(p, y)| p.iter().copied().chain(std::iter::once(*y)).collect())
        .collect();
    let joint = EmpiricalDistribution::new(joined, data.features.weights().to_vec())?;
    let g = Gaussian::new(joint.mean(), joint.covariance()).map_err(|e| {
        Error::Degenerate(format!("cannot fit a least-squares source model on {n} rows: {e}"))
    })?;
    let task = GaussianTask::source(GaussianJoint::from_full(&g, data.features.dim())?)?;
    gaussian_lab::optimal_linear_model(&task)
}

fn run_empirical(cfg: &PipelineConfig, timings: &mut BTreeMap<String, f64>) -> Result<Vec<ReportRow>> {
    let spec = cfg.empirical.as_ref().ok_or_else(|| Error::Config("missing empirical section".into()))?;
    let t = Instant::now();
    let data = spec.datasets.iter().map(ingest_spec).collect::<Result<Vec<_>>>()?;
    timings.insert("ingest".into(), t.elapsed().as_secs_f64());
    let p = match cfg.risk.output_divergence {
        Divergence::Wasserstein { p } => p,
        Divergence::Kl => {
            return Err(Error::Unsupported(
                "empirical mode estimates output risk from samples; use a wasserstein output divergence".into(),
            ))
        }
    };
    let t = Instant::now();
    let mut rows = Vec::new();
    for (si, s) in data.iter().enumerate() {
        let model = match &spec.source_model {
            Some(m) => m.clone(),
            None => least_squares_model(s)?,
        };
        let source_model = TransportMap::Affine(model);
        for (ti, tg) in data.iter().enumerate() {
            if si == ti {
                continue;
            }
            let identity = TransportMap::Identity { dim: tg.features.dim() };
            let e_i = input_risk(
                &identity,
                &Law::Empirical(tg.features.clone()),
                &Law::Empirical(s.features.clone()),
                cfg.risk.input_metric,
                &cfg.risk.ot,
            )? * cfg.input_risk_scale;
            let family = OutputFamily {
                init: AffineModel::identity(source_model.output_dim()),
                mode: OutputMode::YOnly,
                softmax: false,
            };
            let e_o = minimize_output_risk(&family, &source_model, &tg.features, &tg.label_law()?, p, &cfg.train, &cfg.risk.ot)?
                .risk;
            rows.push(row(&spec.datasets[si].name, &spec.datasets[ti].name, None, e_i, e_o, &cfg.combiner)?);
        }
    }
    timings.insert("risks".into(), t.elapsed().as_secs_f64());
    Ok(rows)
}

fn run_gaussian_lab(cfg: &PipelineConfig, timings: &mut BTreeMap<String, f64>) -> Result<(Vec<ReportRow>, Vec<GaussianLabRow>)> {
    let spec = cfg.gaussian_lab.clone().unwrap_or_default();
    let t = Instant::now();
    let pairs: Vec<(GaussianTask, GaussianTask)> = match (&spec.source, &spec.target) {
        (Some(s), Some(tg)) => vec![(GaussianTask::new(s.clone(), TaskRole::Source)?, GaussianTask::new(tg.clone(), TaskRole::Target)?)],
        _ => {
            let mut rng = seeded_rng(cfg.seed);
            (0..spec.instances)
                .map(|_| {
                    Ok((
                        gaussian_lab::random_task(&spec.random, TaskRole::Source, &mut rng)?,
                        gaussian_lab::random_task(&spec.random, TaskRole::Target, &mut rng)?,
                    ))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut rows = Vec::with_capacity(pairs.len());
    let mut lab = Vec::with_capacity(pairs.len());
    for (i, (s, tg)) in pairs.iter().enumerate() {
        // Closed-form W2 distance between the input laws.
        let e_i = input_risk(
            &TransportMap::Identity { dim: tg.dim_x() },
            &Law::Gaussian(tg.joint.x_marginal()),
            &Law::Gaussian(s.joint.x_marginal()),
            Divergence::Wasserstein { p: 2.0 },
            &cfg.risk.ot,
        )? * cfg.input_risk_scale;
        let w = gaussian_lab::basic_case_w(s, tg)?;
        let kl = gaussian_lab::basic_case_kl(s, tg).ok();
        let e_o = match cfg.risk.output_divergence {
            Divergence::Wasserstein { .. } => w.total,
            Divergence::Kl => gaussian_lab::basic_case_kl(s, tg)?.total,
        };
        let rr = gaussian_lab::risk_regret_residual(s, tg)?;
        rows.push(row(&format!("S{i}"), &format!("T{i}"), None, e_i, e_o, &cfg.combiner)?);
        lab.push(GaussianLabRow {
            kl,
            w,
            regret: rr.regret,
            residual: rr.residual,
        });
    }
    timings.insert("gaussian_lab".into(), t.elapsed().as_secs_f64());
    Ok((rows, lab))
}

fn office_config(cfg: &PipelineConfig, spec: &SyntheticOfficeSpec) -> OfficeConfig {
    OfficeConfig {
        samples_per_class: spec.samples_per_class,
        radius: spec.radius,
        noise: spec.noise,
        accuracy_train: cfg.accuracy_train.clone(),
        risk_train: cfg.train.clone(),
        input_risk_scale: cfg.input_risk_scale,
        ot: cfg.risk.ot.clone(),
        seed: cfg.seed,
    }
}

fn run_synthetic_office(cfg: &PipelineConfig, timings: &mut BTreeMap<String, f64>) -> Result<Vec<ReportRow>> {
    let spec = cfg.synthetic_office.clone().unwrap_or_default();
    let t = Instant::now();
    let table = finetune::evaluate_risk_accuracy_pairs(&spec.domains, &cfg.combiner, &office_config(cfg, &spec))?;
    timings.insert("synthetic_office".into(), t.elapsed().as_secs_f64());
    Ok(table
        .rows
        .into_iter()
        .map(|r| ReportRow {
            source: r.source,
            target: r.target,
            accuracy: Some(r.accuracy),
            input_risk: r.input_risk,
            output_risk: r.output_risk,
            transfer_risk: r.transfer_risk,
        })
        .collect())
}

fn correlation(rows: &[ReportRow]) -> Option<Correlation> {
    let acc: Option<Vec<f64>> = rows.iter().map(|r| r.accuracy).collect();
    let acc = acc?;
    let risk: Vec<f64> = rows.iter().map(|r| r.transfer_risk).collect();
    Some(Correlation {
        spearman: stats::spearman(&acc, &risk).ok()?,
        pearson: stats::pearson(&acc, &risk).ok()?,
    })
}

/// Runs the configured experiment without touching the file system beyond reading inputs.
pub fn run(cfg: &PipelineConfig) -> Result<ReportDocument> {
    cfg.validate()?;
    let start = Instant::now();
    let mut timings = BTreeMap::new();
    let mut lab = Vec::new();
    let rows = if let Some(path) = &cfg.override_risks {
        read_override_rows(path, &cfg.combiner, cfg.input_risk_scale)?
    } else {
        match cfg.mode {
            Mode::Empirical => run_empirical(cfg, &mut timings)?,
            Mode::GaussianLab => {
                let (rows, l) = run_gaussian_lab(cfg, &mut timings)?;
                lab = l;
                rows
            }
            Mode::SyntheticOffice => run_synthetic_office(cfg, &mut timings)?,
        }
    };
    let mut plot = PlotSeries::default();
    for r in &rows {
        if let Some(a) = r.accuracy {
            plot.x_transfer_risk.push(r.transfer_risk);
            plot.y_accuracy.push(a);
            plot.labels.push(format!("{}-{}", r.source, r.target));
        }
    }
    timings.insert("total".into(), start.elapsed().as_secs_f64());
    Ok(ReportDocument {
        tool_version: TOOL_VERSION.to_string(),
        config: cfg.clone(),
        correlation: correlation(&rows),
        rows,
        plot,
        gaussian_lab: lab,
        timings,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// The flat pair table as CSV text.
pub fn pairs_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source", "target", "accuracy", "input_risk", "output_risk", "transfer_risk"])?;
    for r in rows {
        w.write_record([
            r.source.clone(),
            r.target.clone(),
            fmt_opt(r.accuracy),
            r.input_risk.to_string(),
            r.output_risk.to_string(),
            r.transfer_risk.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv writer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `report.json` and `pairs.csv` into `dir`, creating it if needed.
pub fn write_report(report: &ReportDocument, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |source| Error::Io { path: p, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let json_path = dir.join("report.json");
    let csv_path = dir.join("pairs.csv");
    let json = serde_json::to_string_pretty(report)?;
    fs::write(&json_path, json + "\n").map_err(io(&json_path))?;
    fs::write(&csv_path, pairs_csv(&report.rows)?).map_err(io(&csv_path))?;
    Ok((json_path, csv_path))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub input_risk: f64,
    pub output_risk: f64,
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedCombiner {
    pub combiner: RiskCombiner,
    /// Pearson correlation between combined risk and accuracy at the chosen coefficients.
    pub correlation: f64,
}

fn grid(g: &FitGrid) -> Vec<f64> {
    (0..g.steps).map(|i| g.max * i as f64 / (g.steps - 1) as f64).collect()
}

/// Grid search for the combiner coefficients maximizing `|corr(C, accuracy)|`. Both forms
/// are returned as `Polynomial` (power 1 for the linear form). Ties keep the first grid
/// point, scanning `c_i` in the outer loop.
pub fn fit_combiner(rows: &[FitRow], form: FitForm, g: &FitGrid) -> Result<FittedCombiner> {
    if rows.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 rows to fit, got {}", rows.len())));
    }
    if g.steps < 2 || !(g.max > 0.0) {
        return Err(Error::InvalidArgument("fit grid needs at least 2 steps and a positive max".into()));
    }
    if rows.iter().any(|r| !(r.input_risk >= 0.0) || !(r.output_risk >= 0.0) || !r.accuracy.is_finite()) {
        return Err(Error::InvalidArgument("rows need nonnegative risks and finite accuracies".into()));
    }
    let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    if acc.iter().all(|a| *a == acc[0]) {
        return Err(Error::Degenerate("all accuracies are equal".into()));
    }
    let power = match form {
        FitForm::Linear => 1.0,
        FitForm::Polynomial2 => 2.0,
    };
    let axis = grid(g);
    let mut best: Option<FittedCombiner> = None;
    let mut combined = vec![0.0; rows.len()];
    for &c_i in &axis {
        for &c_o in &axis {
            let combiner = RiskCombiner::Polynomial { c_i, c_o, power };
            for (c, r) in combined.iter_mut().zip(rows) {
                *c = combiner.combine(r.input_risk, r.output_risk)?;
            }
            // Constant combined risk carries no information.
            let Ok(corr) = stats::pearson(&combined, &acc) else { continue };
            if best.map_or(true, |b| corr.abs() > b.correlation.abs()) {
                best = Some(FittedCombiner { combiner, correlation: corr });
            }
        }
    }
    best.ok_or_else(|| Error::Degenerate("every grid point gives a constant combined risk".into()))
}

/// Reads `input_risk,output_risk,accuracy` rows from a CSV (extra columns ignored).
pub fn read_fit_rows(path: &Path) -> Result<Vec<FitRow>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_error(path, 1, name, "column missing"))
    };
    let (ei, eo, acc) = (col("input_risk")?, col("output_risk")?, col("accuracy")?);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize, name: &str| parse_cell(path, line, name, record.get(i).unwrap_or(""));
        rows.push(FitRow {
            input_risk: get(ei, "input_risk")?,
            output_risk: get(eo, "output_risk")?,
            accuracy: get(acc, "accuracy")?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_recovers_perfect_relation() {
        let rows: Vec<FitRow> = [(0.1, 0.5), (0.4, 0.2), (0.7, 0.9), (0.2, 0.1)]
            .iter()
            .map(|&(e_i, e_o)| FitRow {
                input_risk: e_i,
                output_risk: e_o,
                accuracy: 1.0 - e_i,
            })
            .collect();
        let fit = fit_combiner(&rows, FitForm::Linear, &FitGrid::default()).unwrap();
        assert!(fit.correlation.abs() >= 0.999);
    }

    #[test]
    fn fit_rejects_degenerate_rows() {
        let rows = vec![
            FitRow { input_risk: 0.1, output_risk: 0.2, accuracy: 0.5 };
            3
        ];
        assert!(fit_combiner(&rows, FitForm::Polynomial2, &FitGrid::default()).is_err());
        assert!(fit_combiner(&rows[..2], FitForm::Polynomial2, &FitGrid::default()).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(PipelineConfig::from_json(r#"{"mode": "gaussian_lab", "bogus": 1}"#).is_err());
        let cfg = PipelineConfig::from_json(r#"{"mode": "gaussian_lab"}"#).unwrap();
        assert_eq!(cfg.combiner, RiskCombiner::OFFICE);
        let empty = PipelineConfig::from_json(r#"{"mode": "empirical"}"#).unwrap();
        assert!(empty.validate().is_err());
    }
}
