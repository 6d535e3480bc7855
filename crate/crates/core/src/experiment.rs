//! End-to-end experiment runner behind the `fewnet` binary.
//!
//! An experiment is described by a TOML file:
//!
//! ```toml
//! config_version = 1
//! seed = 42
//!
//! [data]
//! cpi_index = "cpi.csv"        # or cpi_inflation = "..."
//! epu = "epu.csv"
//! gprc = "gprc.csv"
//!
//! [split]
//! train_end = "2019-12"
//! horizon = 12
//!
//! [[models]]
//! kind = "rw"
//!
//! [[models]]
//! kind = "fewnet"
//! [models.settings]
//! p_grid = [8, 10, 12]
//!
//! [evaluation]
//! mcb_alpha = 0.05
//! ```
//!
//! Relative data paths are resolved against the directory of the config
//! file. Every model draws its randomness from
//! `derive_seed(seed, "model", index)`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arnnx::ArnnxConfig;
use crate::baselines;
use crate::conformal::{self, IntervalSeries, ScaleModel};
use crate::error::{Error, Result};
use crate::evaluation::{self, ErrorMatrix, FluctuationResult, McbResult, MetricReport, MetricRow};
use crate::fewnet::{self, CandidateScore, Drivers, FewnetConfig};
use crate::filters::{build_exogenous, FilterSettings};
use crate::seed::derive_seed;
use crate::series::{self, TimeSeries, YearMonth};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub config_version: u32,
    /// Required; optional here so that a missing seed is reported by
    /// validation rather than as a parse failure.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub split: SplitConfig,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Monthly CPI index, turned into year-on-year inflation.
    pub cpi_index: Option<PathBuf>,
    /// Monthly inflation used as is.
    pub cpi_inflation: Option<PathBuf>,
    pub epu: Option<PathBuf>,
    pub gprc: Option<PathBuf>,
    #[serde(default = "default_date_column")]
    pub date_column: String,
    #[serde(default = "default_value_column")]
    pub value_column: String,
    /// Take base-10 logs of EPU.
    #[serde(default = "yes")]
    pub log_epu: bool,
}

fn default_date_column() -> String {
    "date".into()
}

fn default_value_column() -> String {
    "value".into()
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_end: YearMonth,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Rw {
        name: Option<String>,
    },
    Rwd {
        name: Option<String>,
    },
    Ar {
        name: Option<String>,
        #[serde(default = "default_ar_order")]
        max_order: usize,
    },
    Arnnx {
        name: Option<String>,
        #[serde(default)]
        settings: RawArnnxSettings,
    },
    Fewnet {
        name: Option<String>,
        #[serde(default)]
        settings: FewnetConfig,
    },
}

fn default_ar_order() -> usize {
    baselines::AR_MAX_ORDER_MONTHLY
}

/// ARNNx on the undecomposed target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RawArnnxSettings {
    pub p: usize,
    /// Feed the six filtered exogenous features.
    pub use_econ_filters: bool,
    pub filter_settings: FilterSettings,
    pub epochs: usize,
    pub learning_rate: f64,
    pub restarts: usize,
}

impl Default for RawArnnxSettings {
    fn default() -> Self {
        Self {
            p: 12,
            use_econ_filters: true,
            filter_settings: FilterSettings::default(),
            epochs: ArnnxConfig::DEFAULT_EPOCHS,
            learning_rate: ArnnxConfig::DEFAULT_LEARNING_RATE,
            restarts: ArnnxConfig::DEFAULT_RESTARTS,
        }
    }
}

impl RawArnnxSettings {
    fn n_exog(&self) -> usize {
        if self.use_econ_filters {
            6
        } else {
            0
        }
    }
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Rw { .. } => "rw",
            ModelSpec::Rwd { .. } => "rwd",
            ModelSpec::Ar { .. } => "ar",
            ModelSpec::Arnnx { .. } => "arnnx",
            ModelSpec::Fewnet { .. } => "fewnet",
        }
    }

    /// Explicit name, or the kind.
    pub fn name(&self) -> String {
        let explicit = match self {
            ModelSpec::Rw { name }
            | ModelSpec::Rwd { name }
            | ModelSpec::Ar { name, .. }
            | ModelSpec::Arnnx { name, .. }
            | ModelSpec::Fewnet { name, .. } => name.clone(),
        };
        explicit.unwrap_or_else(|| self.kind().to_string())
    }

    fn needs_drivers(&self) -> bool {
        match self {
            ModelSpec::Arnnx { settings, .. } => settings.use_econ_filters,
            ModelSpec::Fewnet { settings, .. } => settings.use_econ_filters,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_seasonal_lag")]
    pub seasonal_lag: usize,
    /// Run MCB across models with forecast steps as the datasets.
    pub mcb_alpha: Option<f64>,
    #[serde(default)]
    pub fluctuation: Vec<FluctuationSpec>,
    pub conformal: Option<ConformalSpec>,
    /// CSV with columns `model_name,step,value`.
    pub external_forecasts: Option<PathBuf>,
}

fn default_seasonal_lag() -> usize {
    evaluation::DEFAULT_SEASONAL_LAG
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            seasonal_lag: default_seasonal_lag(),
            mcb_alpha: None,
            fluctuation: Vec::new(),
            conformal: None,
            external_forecasts: None,
        }
    }
}

/// Fluctuation test on squared forecast errors of two models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctuationSpec {
    pub model_a: String,
    pub model_b: String,
    pub mu: f64,
    #[serde(default = "default_gr_alpha")]
    pub alpha: f64,
}

fn default_gr_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformalSpec {
    /// Models to wrap; each is refitted without the last `calibration`
    /// training months to produce calibration residuals.
    pub models: Vec<String>,
    pub alpha: f64,
    pub window: usize,
    pub calibration: usize,
    #[serde(default)]
    pub scale: ScaleModel,
}

/// One validation finding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn issue(field: impl Into<String>, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or_default()
    }

    /// Every cross-field problem, not just the first.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        if self.config_version != CONFIG_VERSION {
            out.push(issue(
                "config_version",
                format!("unsupported version {}, expected {CONFIG_VERSION}", self.config_version),
            ));
        }
        if self.seed.is_none() {
            out.push(issue("seed", "required"));
        }
        let d = &self.data;
        match (&d.cpi_index, &d.cpi_inflation) {
            (None, None) => out.push(issue("data.cpi_index", "one of cpi_index or cpi_inflation is required")),
            (Some(_), Some(_)) => out.push(issue("data.cpi_inflation", "give either cpi_index or cpi_inflation, not both")),
            _ => {}
        }
        if self.split.horizon == 0 {
            out.push(issue("split.horizon", "must be at least 1"));
        }
        if self.models.is_empty() {
            out.push(issue("models", "at least one model is required"));
        }
        let mut seen = BTreeMap::new();
        for (i, m) in self.models.iter().enumerate() {
            let path = format!("models[{i}]");
            if let Some(j) = seen.insert(m.name(), i) {
                out.push(issue(format!("{path}.name"), format!("duplicate model name `{}` (also models[{j}])", m.name())));
            }
            if m.needs_drivers() {
                if d.epu.is_none() {
                    out.push(issue("data.epu", format!("required by {path} (econ filters enabled)")));
                }
                if d.gprc.is_none() {
                    out.push(issue("data.gprc", format!("required by {path} (econ filters enabled)")));
                }
            }
            match m {
                ModelSpec::Ar { max_order, .. } if *max_order == 0 => {
                    out.push(issue(format!("{path}.max_order"), "must be at least 1"));
                }
                ModelSpec::Arnnx { settings: s, .. } => {
                    let cfg = ArnnxConfig {
                        p: s.p,
                        q: fewnet::hidden_size(s.p),
                        n_exog: s.n_exog(),
                        epochs: s.epochs,
                        learning_rate: s.learning_rate,
                        restarts: s.restarts,
                        seed: 0,
                    };
                    if let Err(e) = cfg.validate() {
                        out.push(issue(format!("{path}.settings"), e.to_string()));
                    }
                }
                ModelSpec::Fewnet { settings, .. } => {
                    if settings.seed != 0 {
                        out.push(issue(
                            format!("{path}.settings.seed"),
                            "model seeds derive from the top-level seed; remove this key",
                        ));
                    }
                    for (field, msg) in settings.problems() {
                        out.push(issue(format!("{path}.settings.{field}"), msg));
                    }
                }
                _ => {}
            }
        }
        let e = &self.evaluation;
        if e.seasonal_lag == 0 {
            out.push(issue("evaluation.seasonal_lag", "must be at least 1"));
        }
        if let Some(a) = e.mcb_alpha {
            if ![0.01, 0.05, 0.10].iter().any(|t| (t - a).abs() < 1e-12) {
                out.push(issue("evaluation.mcb_alpha", "must be 0.01, 0.05 or 0.10"));
            }
        }
        let known = |name: &str| seen.contains_key(name) || e.external_forecasts.is_some();
        for (i, f) in e.fluctuation.iter().enumerate() {
            let path = format!("evaluation.fluctuation[{i}]");
            for (field, name) in [("model_a", &f.model_a), ("model_b", &f.model_b)] {
                if !known(name) {
                    out.push(issue(format!("{path}.{field}"), format!("unknown model `{name}`")));
                }
            }
            if !(f.mu > 0.0 && f.mu < 1.0) {
                out.push(issue(format!("{path}.mu"), "must lie in (0, 1)"));
            }
            if ![0.05, 0.10].iter().any(|t| (t - f.alpha).abs() < 1e-12) {
                out.push(issue(format!("{path}.alpha"), "must be 0.05 or 0.10"));
            }
        }
        if let Some(c) = &e.conformal {
            if c.models.is_empty() {
                out.push(issue("evaluation.conformal.models", "name at least one model"));
            }
            for (i, name) in c.models.iter().enumerate() {
                if !seen.contains_key(name) {
                    out.push(issue(format!("evaluation.conformal.models[{i}]"), format!("unknown model `{name}`")));
                }
            }
            if !(c.alpha > 0.0 && c.alpha < 1.0) {
                out.push(issue("evaluation.conformal.alpha", "must lie in (0, 1)"));
            }
            if c.window == 0 {
                out.push(issue("evaluation.conformal.window", "must be at least 1"));
            }
            if c.calibration < 2 {
                out.push(issue("evaluation.conformal.calibration", "must be at least 2"));
            }
        }
        out
    }
}

/// Parses and checks a config file, reporting every problem found.
pub fn validate_config(path: impl AsRef<Path>) -> std::result::Result<ExperimentConfig, Vec<ConfigIssue>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| vec![issue(path.display().to_string(), e.to_string())])?;
    let config = ExperimentConfig::from_toml(&text).map_err(|e| vec![issue("<parse>", e.to_string())])?;
    let issues = config.issues();
    if issues.is_empty() {
        Ok(config)
    } else {
        Err(issues)
    }
}

/// Pipeline stage of a failure; decides the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Data,
    Training,
    Evaluation,
    Output,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Data => 3,
            Stage::Training => 4,
            Stage::Evaluation => 5,
            Stage::Output => 1,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Training => "training",
            Stage::Evaluation => "evaluation",
            Stage::Output => "output",
        }
    }
}

#[derive(Debug)]
pub struct RunError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage: {}", self.stage.as_str(), self.error)
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, RunError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, RunError> {
        self.map_err(|error| RunError { stage, error })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    /// SHA-256 of the effective config as canonical JSON.
    pub config_sha256: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowInfo {
    pub start: YearMonth,
    pub end: YearMonth,
    pub len: usize,
}

impl From<&TimeSeries> for WindowInfo {
    fn from(s: &TimeSeries) -> Self {
        Self {
            start: s.start(),
            end: s.end(),
            len: s.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelResult {
    pub name: String,
    pub kind: String,
    pub forecast: Vec<f64>,
    pub metrics: MetricReport,
    /// In-sample mean squared residual, for the network models.
    pub empirical_risk: Option<f64>,
    /// Chosen input width, for the network models.
    pub p: Option<usize>,
    /// Decomposition depth, for FEWNet.
    pub levels: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub selection: Vec<CandidateScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluctuationReport {
    pub model_a: String,
    pub model_b: String,
    #[serde(flatten)]
    pub result: FluctuationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalReport {
    pub model: String,
    pub alpha: f64,
    pub window: usize,
    pub intervals: IntervalSeries,
    pub coverage: f64,
    pub mean_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub effective_config: ExperimentConfig,
    pub train: WindowInfo,
    pub test: WindowInfo,
    pub actual: Vec<f64>,
    pub models: Vec<ModelResult>,
    pub mcb: Option<McbResult>,
    pub fluctuation: Vec<FluctuationReport>,
    pub intervals: Vec<IntervalReport>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn model(&self, name: &str) -> Option<&ModelResult> {
        self.models.iter().find(|m| m.name == name)
    }
}

/// Loaded, transformed and split inputs.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub target: TimeSeries,
    pub train: TimeSeries,
    pub test: TimeSeries,
    /// Log-EPU and GPRC over the training window.
    pub drivers: Option<(Vec<f64>, Vec<f64>)>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads the inputs, applies the transforms and splits the target.
pub fn prepare_data(config: &ExperimentConfig, base_dir: &Path) -> Result<PreparedData> {
    let d = &config.data;
    let load = |p: &Path| series::load_csv(resolve(base_dir, p), &d.date_column, &d.value_column);
    let target = match (&d.cpi_index, &d.cpi_inflation) {
        (Some(p), _) => series::yoy_inflation(&load(p)?)?,
        (None, Some(p)) => load(p)?,
        (None, None) => return Err(Error::Domain("no CPI input configured".into())),
    }
    .renamed("inflation");
    let (train, test) = series::split(
        &target,
        series::SplitSpec {
            train_end: config.split.train_end,
            horizon: config.split.horizon,
        },
    )?;
    let drivers = match (&d.epu, &d.gprc) {
        (Some(e), Some(g)) => {
            let epu = load(e)?;
            let epu = if d.log_epu { series::log_transform(&epu)? } else { epu };
            let gprc = load(g)?;
            let window = |s: &TimeSeries| -> Result<Vec<f64>> {
                let from = s.index_of(train.start());
                let to = s.index_of(train.end());
                match (from, to) {
                    (Some(a), Some(b)) => Ok(s.values()[a..=b].to_vec()),
                    _ => Err(Error::Bounds(format!(
                        "{} covers {}..{}, training window needs {}..{}",
                        s.name(),
                        s.start(),
                        s.end(),
                        train.start(),
                        train.end()
                    ))),
                }
            };
            Some((window(&epu)?, window(&gprc)?))
        }
        _ => None,
    };
    Ok(PreparedData {
        target,
        train,
        test,
        drivers,
    })
}

struct Fitted {
    forecast: Vec<f64>,
    risk: Option<f64>,
    p: Option<usize>,
    levels: Option<usize>,
    selection: Vec<CandidateScore>,
}

fn drivers_of(d: &Option<(Vec<f64>, Vec<f64>)>, n: usize) -> Option<Drivers<'_>> {
    d.as_ref().map(|(e, g)| Drivers {
        log_epu: &e[..n],
        gprc: &g[..n],
    })
}

/// Fits one model on `train` (drivers truncated to the same length) and
/// forecasts `m` steps.
fn fit_model(
    spec: &ModelSpec,
    train: &[f64],
    drivers: Option<Drivers<'_>>,
    seed: u64,
    m: usize,
) -> Result<Fitted> {
    let plain = |forecast| Fitted {
        forecast,
        risk: None,
        p: None,
        levels: None,
        selection: Vec::new(),
    };
    match spec {
        ModelSpec::Rw { .. } => Ok(plain(baselines::rw_forecast(train, m)?)),
        ModelSpec::Rwd { .. } => Ok(plain(baselines::rwd_forecast(train, m)?)),
        ModelSpec::Ar { max_order, .. } => {
            let model = baselines::ar_fit(train, *max_order)?;
            Ok(plain(baselines::ar_forecast(&model, train, m)?))
        }
        ModelSpec::Arnnx { settings: s, .. } => {
            let cfg = ArnnxConfig {
                p: s.p,
                q: fewnet::hidden_size(s.p),
                n_exog: s.n_exog(),
                epochs: s.epochs,
                learning_rate: s.learning_rate,
                restarts: s.restarts,
                seed,
            };
            let exog = if s.use_econ_filters {
                let d = drivers.ok_or_else(|| Error::Domain("ARNNx with econ filters needs EPU and GPRC".into()))?;
                Some(build_exogenous(train, d.log_epu, d.gprc, s.filter_settings)?.columns().to_vec())
            } else {
                None
            };
            let model = baselines::fit_arnnx_raw(train, exog.as_deref(), &cfg)?;
            let last: Vec<f64> = exog.iter().flatten().map(|c| c[c.len() - 1]).collect();
            let forecast = model.forecast_recursive(train, &vec![last; m], m)?;
            let risk = baselines::arnnx_raw_risk(&model, train, exog.as_deref())?;
            Ok(Fitted {
                forecast,
                risk: Some(risk),
                p: Some(s.p),
                levels: None,
                selection: Vec::new(),
            })
        }
        ModelSpec::Fewnet { settings, .. } => {
            let mut cfg = settings.clone();
            cfg.seed = seed;
            let model = fewnet::fit(train, drivers, &cfg)?;
            Ok(Fitted {
                forecast: model.forecast(m)?.ensemble,
                risk: Some(model.empirical_risk_w()?),
                p: Some(model.p()),
                levels: Some(model.levels()),
                selection: model.selection().to_vec(),
            })
        }
    }
}

/// Reads forecasts in the `model_name,step,value` layout. Steps are
/// 1-based and must cover `1..=horizon` for every model.
pub fn read_external_forecasts(path: &Path, horizon: usize) -> Result<Vec<(String, Vec<f64>)>> {
    #[derive(Deserialize)]
    struct Row {
        model_name: String,
        step: usize,
        value: f64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{other:?}")),
    })?;
    let mut by_model: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    let mut order = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Format {
            row: i + 2,
            message: e.to_string(),
        })?;
        if row.step == 0 || row.step > horizon {
            return Err(Error::Format {
                row: i + 2,
                message: format!("step {} outside 1..={horizon}", row.step),
            });
        }
        let slots = by_model.entry(row.model_name.clone()).or_insert_with(|| {
            order.push(row.model_name.clone());
            vec![None; horizon]
        });
        if slots[row.step - 1].replace(row.value).is_some() {
            return Err(Error::Format {
                row: i + 2,
                message: format!("duplicate step {} for `{}`", row.step, row.model_name),
            });
        }
    }
    order
        .into_iter()
        .map(|name| {
            let values = by_model.remove(&name).unwrap_or_default();
            let filled: Option<Vec<f64>> = values.into_iter().collect();
            filled
                .map(|v| (name.clone(), v))
                .ok_or_else(|| Error::Shape(format!("external model `{name}` does not cover every step")))
        })
        .collect()
}

fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let canonical = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

/// Runs the whole pipeline in memory. `base_dir` anchors relative data
/// paths.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path) -> std::result::Result<RunReport, RunError> {
    let issues = config.issues();
    if !issues.is_empty() {
        let text: Vec<String> = issues.iter().map(ToString::to_string).collect();
        return Err(RunError {
            stage: Stage::Config,
            error: Error::Domain(text.join("; ")),
        });
    }
    let seed = config.seed();
    let data = prepare_data(config, base_dir).at(Stage::Data)?;
    let m = config.split.horizon;
    let train = data.train.values();
    let actual = data.test.values().to_vec();
    let n = train.len();
    if config.models.iter().any(ModelSpec::needs_drivers) && data.drivers.is_none() {
        return Err(RunError {
            stage: Stage::Data,
            error: Error::Domain("EPU and GPRC inputs are required".into()),
        });
    }

    let fitted: Vec<Fitted> = config
        .models
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let s = derive_seed(seed, "model", i as u64);
            fit_model(spec, train, drivers_of(&data.drivers, n), s, m)
                .map_err(|e| Error::Fit(format!("model `{}`: {e}", spec.name())))
        })
        .collect::<Result<_>>()
        .at(Stage::Training)?;

    let mut named: Vec<(String, String, Fitted)> = config
        .models
        .iter()
        .zip(fitted)
        .map(|(spec, f)| (spec.name(), spec.kind().to_string(), f))
        .collect();
    if let Some(p) = &config.evaluation.external_forecasts {
        let external = read_external_forecasts(&resolve(base_dir, p), m).at(Stage::Data)?;
        for (name, forecast) in external {
            if named.iter().any(|(n, _, _)| *n == name) {
                return Err(RunError {
                    stage: Stage::Data,
                    error: Error::Domain(format!("external model `{name}` clashes with a configured model")),
                });
            }
            named.push((
                name,
                "external".into(),
                Fitted {
                    forecast,
                    risk: None,
                    p: None,
                    levels: None,
                    selection: Vec::new(),
                },
            ));
        }
    }

    let eval = &config.evaluation;
    let naive = baselines::rw_forecast(train, m).at(Stage::Evaluation)?;
    let models: Vec<ModelResult> = named
        .into_iter()
        .map(|(name, kind, f)| {
            let metrics = evaluation::compute_metrics(&actual, &f.forecast, train, eval.seasonal_lag, &naive)?;
            Ok(ModelResult {
                name,
                kind,
                forecast: f.forecast,
                metrics,
                empirical_risk: f.risk,
                p: f.p,
                levels: f.levels,
                selection: f.selection,
            })
        })
        .collect::<Result<_>>()
        .at(Stage::Evaluation)?;

    let abs_errors = |r: &ModelResult| -> Vec<f64> { r.forecast.iter().zip(&actual).map(|(f, y)| (f - y).abs()).collect() };

    let mcb = match eval.mcb_alpha {
        Some(alpha) if models.len() >= 2 && m >= 2 => {
            let matrix = ErrorMatrix::new(
                models.iter().map(|r| r.name.clone()).collect(),
                (1..=m).map(|h| format!("step_{h}")).collect(),
                models.iter().map(abs_errors).collect(),
            )
            .at(Stage::Evaluation)?;
            Some(evaluation::mcb_test(&matrix, alpha).at(Stage::Evaluation)?)
        }
        Some(_) => {
            log::warn!("MCB skipped: needs at least two models and a horizon of at least 2");
            None
        }
        None => None,
    };

    let lookup = |name: &str| -> Result<&ModelResult> {
        models
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Domain(format!("unknown model `{name}`")))
    };
    let fluctuation = eval
        .fluctuation
        .iter()
        .map(|spec| {
            let sq = |r: &ModelResult| -> Vec<f64> { abs_errors(r).iter().map(|e| e * e).collect() };
            let a = sq(lookup(&spec.model_a)?);
            let b = sq(lookup(&spec.model_b)?);
            Ok(FluctuationReport {
                model_a: spec.model_a.clone(),
                model_b: spec.model_b.clone(),
                result: evaluation::gr_fluctuation_test(&a, &b, spec.mu, spec.alpha)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .at(Stage::Evaluation)?;

    let intervals = match &eval.conformal {
        None => Vec::new(),
        Some(c) => c
            .models
            .iter()
            .map(|name| {
                let (i, spec) = config
                    .models
                    .iter()
                    .enumerate()
                    .find(|(_, s)| s.name() == *name)
                    .ok_or_else(|| Error::Domain(format!("unknown model `{name}`")))?;
                if c.calibration >= n {
                    return Err(Error::Bounds(format!(
                        "calibration slice of {} months leaves no training data",
                        c.calibration
                    )));
                }
                let cut = n - c.calibration;
                let s = derive_seed(seed, "calibration", i as u64);
                let cal = fit_model(spec, &train[..cut], drivers_of(&data.drivers, cut), s, c.calibration)?;
                let cfg = conformal::ConformalConfig {
                    window: c.window,
                    alpha: c.alpha,
                    scale: c.scale,
                };
                let point = &lookup(name)?.forecast;
                let series = conformal::calibrated_intervals(&train[cut..], &cal.forecast, point, &cfg)?;
                Ok(IntervalReport {
                    model: name.clone(),
                    alpha: c.alpha,
                    window: c.window,
                    coverage: series.coverage(&actual),
                    mean_width: series.mean_width(),
                    intervals: series,
                })
            })
            .collect::<Result<Vec<_>>>()
            .at(Stage::Evaluation)?,
    };

    Ok(RunReport {
        provenance: Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: config_hash(config).at(Stage::Output)?,
            seed,
        },
        effective_config: config.clone(),
        train: WindowInfo::from(&data.train),
        test: WindowInfo::from(&data.test),
        actual,
        models,
        mcb,
        fluctuation,
        intervals,
    })
}

/// Rendered output files, name and contents, in write order.
pub fn render_outputs(report: &RunReport, test_start: YearMonth) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut files = vec![("report.json", report.to_json()?.into_bytes())];

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "step", "month", "value"])?;
    for r in &report.models {
        for (h, v) in r.forecast.iter().enumerate() {
            w.write_record([
                r.name.clone(),
                (h + 1).to_string(),
                test_start.add_months(h as i64).to_string(),
                format!("{v:?}"),
            ])?;
        }
    }
    files.push(("forecasts.csv", into_bytes(w)?));

    let rows: Vec<MetricRow> = report
        .models
        .iter()
        .map(|r| MetricRow {
            model: r.name.clone(),
            horizon: r.forecast.len(),
            metrics: r.metrics,
        })
        .collect();
    let mut buf = Vec::new();
    evaluation::write_metrics_csv(&rows, &mut buf)?;
    files.push(("metrics.csv", buf));

    if !report.intervals.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["model", "step", "lower", "center", "upper"])?;
        for ir in &report.intervals {
            for (h, i) in ir.intervals.steps.iter().enumerate() {
                w.write_record([
                    ir.model.clone(),
                    (h + 1).to_string(),
                    format!("{:?}", i.lower),
                    format!("{:?}", i.center),
                    format!("{:?}", i.upper),
                ])?;
            }
        }
        files.push(("intervals.csv", into_bytes(w)?));
    }
    if let Some(mcb) = &report.mcb {
        files.push(("mcb.json", json_bytes(mcb)?));
    }
    if !report.fluctuation.is_empty() {
        files.push(("fluctuation.json", json_bytes(&report.fluctuation)?));
    }
    Ok(files)
}

fn into_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner()
        .map_err(|e| Error::Parse(format!("csv buffer: {}", e.error())))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Writes rendered files into `dir`. Files already written are removed
/// if a later write fails.
pub fn write_outputs(dir: &Path, files: &[(&'static str, Vec<u8>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(Error::io(path, e));
        }
        written.push(path);
    }
    Ok(())
}

/// Loads, runs and writes outputs. Returns the report.
pub fn run_from_file(
    config_path: &Path,
    output_dir: &Path,
    seed_override: Option<u64>,
) -> std::result::Result<RunReport, RunError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| Error::io(config_path, e))
        .at(Stage::Config)?;
    let mut config = ExperimentConfig::from_toml(&text).at(Stage::Config)?;
    if seed_override.is_some() {
        config.seed = seed_override;
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let report = run_experiment(&config, base)?;
    let test_start = report.test.start;
    let files = render_outputs(&report, test_start).at(Stage::Output)?;
    write_outputs(output_dir, &files).at(Stage::Output)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
config_version = 1
seed = 7

[data]
cpi_inflation = "inflation.csv"

[split]
train_end = "2005-06"
horizon = 6

[[models]]
kind = "rw"

[[models]]
kind = "ar"
name = "ar13"
"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let expected = ExperimentConfig {
            config_version: 1,
            seed: Some(7),
            data: DataConfig {
                cpi_index: None,
                cpi_inflation: Some("inflation.csv".into()),
                epu: None,
                gprc: None,
                date_column: "date".into(),
                value_column: "value".into(),
                log_epu: true,
            },
            split: SplitConfig {
                train_end: YearMonth::new(2005, 6).unwrap(),
                horizon: 6,
            },
            models: vec![
                ModelSpec::Rw { name: None },
                ModelSpec::Ar {
                    name: Some("ar13".into()),
                    max_order: 13,
                },
            ],
            evaluation: EvaluationConfig::default(),
        };
        assert_eq!(c, expected);
        assert!(c.issues().is_empty());
    }

    #[test]
    fn missing_seed_is_one_issue() {
        let text = MINIMAL.replace("seed = 7\n", "");
        let issues = ExperimentConfig::from_toml(&text).unwrap().issues();
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].field, "seed");
    }

    #[test]
    fn issues_are_aggregated() {
        let text = MINIMAL.replace("horizon = 6", "horizon = 0").replace("seed = 7\n", "")
            + "\n[[models]]\nkind = \"fewnet\"\n[models.settings]\np_grid = [6, 8]\n";
        let issues = ExperimentConfig::from_toml(&text).unwrap().issues();
        let fields: Vec<&str> = issues.iter().map(|i| i.field.as_str()).collect();
        assert!(fields.contains(&"seed"));
        assert!(fields.contains(&"split.horizon"));
        assert!(fields.contains(&"data.epu"));
        assert!(fields.contains(&"models[2].settings.p_grid[0]"));
        let p = issues.iter().find(|i| i.field == "models[2].settings.p_grid[0]").unwrap();
        assert!(p.message.contains("6 exogenous"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("horizon = 6", "horizon = 6\nhorzion = 3");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn external_forecast_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ext.csv");
        fs::write(&p, "model_name,step,value\nets,1,1.5\nets,2,1.7\narima,2,0.2\narima,1,0.1\n").unwrap();
        let ext = read_external_forecasts(&p, 2).unwrap();
        assert_eq!(ext, vec![("ets".into(), vec![1.5, 1.7]), ("arima".into(), vec![0.1, 0.2])]);
        fs::write(&p, "model_name,step,value\nets,1,1.5\n").unwrap();
        assert!(matches!(read_external_forecasts(&p, 2), Err(Error::Shape(_))));
        fs::write(&p, "model_name,step,value\nets,3,1.5\n").unwrap();
        assert!(matches!(read_external_forecasts(&p, 2), Err(Error::Format { row: 2, .. })));
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes: Vec<i32> = [Stage::Config, Stage::Data, Stage::Training, Stage::Evaluation]
            .iter()
            .map(|s| s.exit_code())
            .collect();
        assert_eq!(codes, vec![2, 3, 4, 5]);
    }
}
