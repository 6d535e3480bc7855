//! Wavelet-decomposed ensemble of ARNNx models.
//!
//! The target is split by MODWT multiresolution analysis into `K` detail
//! series and one smooth. One ARNNx is trained per component, all sharing
//! the lag order and hidden width, and optionally fed the six filtered
//! exogenous features. Forecasts of the components are summed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arnnx::{self, ArnnxConfig, ArnnxModel};
use crate::error::{Error, Result};
use crate::evaluation::smape_percent;
use crate::filters::{build_exogenous, ExogenousFeatures, FilterSettings, EXOGENOUS_COLUMNS};
use crate::modwt::{self, FilterName, MraDecomposition};
use crate::seed::derive_seed;
use crate::series::{rolling_origin_folds, FoldSet};

/// Hidden width `[(p + 1) / 2]`, rounding halves to even, at least 1.
pub fn hidden_size(p: usize) -> usize {
    ((p as f64 + 1.0) / 2.0).round_ties_even().max(1.0) as usize
}

/// The two uncertainty indices fed through the exogenous filters alongside
/// the target itself. Both must be aligned with the target.
#[derive(Debug, Clone, Copy)]
pub struct Drivers<'a> {
    pub log_epu: &'a [f64],
    pub gprc: &'a [f64],
}

impl<'a> Drivers<'a> {
    fn slice(&self, range: std::ops::Range<usize>) -> Drivers<'a> {
        Drivers {
            log_epu: &self.log_epu[range.clone()],
            gprc: &self.gprc[range],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FewnetConfig {
    pub filter: FilterName,
    /// Decomposition depth; `None` uses `floor(ln N)`.
    pub levels: Option<usize>,
    pub p_grid: Vec<usize>,
    /// Feed HP trends and CF cycles as exogenous inputs. Off gives the
    /// pure-lag variant.
    pub use_econ_filters: bool,
    pub filter_settings: FilterSettings,
    pub epochs: usize,
    pub learning_rate: f64,
    pub restarts: usize,
    /// Rolling-origin folds used to choose `p`.
    pub cv_folds: usize,
    /// Validation length of each fold.
    pub cv_horizon: usize,
    /// Detail levels whose forecasts are replaced by zeros.
    pub zero_levels: Vec<usize>,
    pub seed: u64,
}

impl Default for FewnetConfig {
    fn default() -> Self {
        Self {
            filter: FilterName::Haar,
            levels: None,
            p_grid: (7..=24).collect(),
            use_econ_filters: true,
            filter_settings: FilterSettings::default(),
            epochs: ArnnxConfig::DEFAULT_EPOCHS,
            learning_rate: ArnnxConfig::DEFAULT_LEARNING_RATE,
            restarts: ArnnxConfig::DEFAULT_RESTARTS,
            cv_folds: 3,
            cv_horizon: 12,
            zero_levels: Vec::new(),
            seed: 0,
        }
    }
}

impl FewnetConfig {
    /// Defaults for the variant without exogenous features: `p` searched
    /// over `1..=24`.
    pub fn without_econ_filters() -> Self {
        Self {
            use_econ_filters: false,
            p_grid: (1..=24).collect(),
            ..Self::default()
        }
    }

    pub fn n_exog(&self) -> usize {
        if self.use_econ_filters {
            EXOGENOUS_COLUMNS.len()
        } else {
            0
        }
    }

    /// Every violated constraint, as `(field, message)` pairs.
    pub fn problems(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let n_exog = self.n_exog();
        if self.p_grid.is_empty() {
            out.push(("p_grid".into(), "must not be empty".into()));
        }
        for (i, p) in self.p_grid.iter().enumerate() {
            if *p <= n_exog {
                out.push((
                    format!("p_grid[{i}]"),
                    format!("p = {p} must exceed the {n_exog} exogenous inputs"),
                ));
            }
        }
        if self.levels == Some(0) {
            out.push(("levels".into(), "must be at least 1".into()));
        }
        if self.epochs == 0 {
            out.push(("epochs".into(), "must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(("learning_rate".into(), "must be positive".into()));
        }
        if self.restarts == 0 {
            out.push(("restarts".into(), "must be at least 1".into()));
        }
        if self.p_grid.len() > 1 && (self.cv_folds == 0 || self.cv_horizon == 0) {
            out.push((
                "cv_folds".into(),
                "folds and cv_horizon must be positive when p is searched".into(),
            ));
        }
        if self.zero_levels.contains(&0) {
            out.push(("zero_levels".into(), "levels are numbered from 1".into()));
        }
        let s = &self.filter_settings;
        if !(s.hp_lambda >= 0.0 && s.hp_lambda.is_finite()) {
            out.push(("filter_settings.hp_lambda".into(), "must be finite and non-negative".into()));
        }
        if !(s.cf_lower >= 2.0 && s.cf_lower < s.cf_upper) {
            out.push((
                "filter_settings.cf_lower".into(),
                "band needs 2 <= cf_lower < cf_upper".into(),
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().first() {
            None => Ok(()),
            Some((field, msg)) => Err(Error::Domain(format!("{field}: {msg}"))),
        }
    }

    fn arnnx(&self, p: usize, seed: u64) -> ArnnxConfig {
        ArnnxConfig {
            p,
            q: hidden_size(p),
            n_exog: self.n_exog(),
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            restarts: self.restarts,
            seed,
        }
    }
}

/// How exogenous inputs are filled in beyond the training window.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ExogPolicy {
    /// Every step uses the last training row.
    #[default]
    Frozen,
    /// Row `h` is used at step `h + 1`. Must cover the horizon.
    Supplied(Vec<Vec<f64>>),
}

/// Mean validation SMAPE of one grid candidate; `None` when it failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub p: usize,
    pub mean_smape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewnetModel {
    config: FewnetConfig,
    p: usize,
    mra: MraDecomposition,
    exog: Option<ExogenousFeatures>,
    /// Details `1..=K`, then the smooth.
    components: Vec<ArnnxModel>,
    selection: Vec<CandidateScore>,
}

/// Component forecasts and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewnetForecast {
    /// Details `1..=K`, then the smooth.
    pub components: Vec<Vec<f64>>,
    pub ensemble: Vec<f64>,
}

fn levels_for(config: &FewnetConfig, n: usize) -> Result<usize> {
    match config.levels {
        Some(k) => Ok(k),
        None => modwt::default_level(n),
    }
}

fn features(target: &[f64], drivers: Option<Drivers<'_>>, config: &FewnetConfig) -> Result<Option<ExogenousFeatures>> {
    if !config.use_econ_filters {
        return Ok(None);
    }
    let d = drivers.ok_or_else(|| {
        Error::Domain("exogenous filters are enabled but no driver series were given".into())
    })?;
    build_exogenous(target, d.log_epu, d.gprc, config.filter_settings).map(Some)
}

/// Fits every component for a fixed `p`.
pub fn fit_with_p(target: &[f64], drivers: Option<Drivers<'_>>, config: &FewnetConfig, p: usize) -> Result<FewnetModel> {
    config.validate()?;
    if p <= config.n_exog() {
        return Err(Error::Domain(format!(
            "p = {p} must exceed the {} exogenous inputs",
            config.n_exog()
        )));
    }
    if let Some(d) = drivers {
        if d.log_epu.len() != target.len() || d.gprc.len() != target.len() {
            return Err(Error::Shape(format!(
                "drivers of lengths {} and {} do not match target length {}",
                d.log_epu.len(),
                d.gprc.len(),
                target.len()
            )));
        }
    }
    let levels = levels_for(config, target.len())?;
    let filter = modwt::filter_coefficients(config.filter);
    let mra = modwt::decompose(target, &filter, levels)?;
    let exog = features(target, drivers, config)?;
    let columns = exog.as_ref().map(|e| e.columns());
    let comps: Vec<&[f64]> = mra.components().collect();
    let components = comps
        .par_iter()
        .enumerate()
        .map(|(k, series)| {
            let cfg = config.arnnx(p, derive_seed(config.seed, "component", k as u64));
            let design = arnnx::make_design(series, cfg.lags(), columns)?;
            arnnx::train(&design, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FewnetModel {
        config: config.clone(),
        p,
        mra,
        exog,
        components,
        selection: Vec::new(),
    })
}

/// Mean validation SMAPE of `p` over the folds. Each fold refits the whole
/// pipeline, filters included, on its training slice only.
pub fn cv_smape(
    target: &[f64],
    drivers: Option<Drivers<'_>>,
    config: &FewnetConfig,
    p: usize,
    folds: &FoldSet,
) -> Result<f64> {
    let mut total = 0.0;
    for (f, fold) in folds.folds().iter().enumerate() {
        let mut cfg = config.clone();
        cfg.seed = derive_seed(config.seed, "fold", f as u64);
        let train = &target[fold.train.clone()];
        let model = fit_with_p(train, drivers.map(|d| d.slice(fold.train.clone())), &cfg, p)?;
        let horizon = fold.validation.len();
        let forecast = model.forecast(horizon)?;
        total += smape_percent(&target[fold.validation.clone()], &forecast.ensemble)?;
    }
    Ok(total / folds.len() as f64)
}

/// Grid search over `config.p_grid` by mean fold SMAPE; ties go to the
/// smaller `p`. Candidates that fail to fit are skipped.
pub fn select_p(
    target: &[f64],
    drivers: Option<Drivers<'_>>,
    config: &FewnetConfig,
    folds: &FoldSet,
) -> Result<(usize, Vec<CandidateScore>)> {
    config.validate()?;
    let scores: Vec<CandidateScore> = config
        .p_grid
        .par_iter()
        .map(|&p| {
            let mean_smape = match cv_smape(target, drivers, config, p, folds) {
                Ok(s) if s.is_finite() => Some(s),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("candidate p = {p} failed: {e}");
                    None
                }
            };
            CandidateScore { p, mean_smape }
        })
        .collect();
    let best = best_candidate(&scores)
        .ok_or_else(|| Error::Selection("every candidate p failed to fit".into()))?;
    Ok((best, scores))
}

/// Smallest mean SMAPE, ties to the smaller `p`.
pub fn best_candidate(scores: &[CandidateScore]) -> Option<usize> {
    scores
        .iter()
        .filter_map(|c| c.mean_smape.map(|s| (c.p, s)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(p, _)| p)
}

/// Chooses `p` (when the grid has more than one entry) and fits the final
/// model on the whole target.
pub fn fit(target: &[f64], drivers: Option<Drivers<'_>>, config: &FewnetConfig) -> Result<FewnetModel> {
    config.validate()?;
    let (p, selection) = if config.p_grid.len() == 1 {
        (config.p_grid[0], Vec::new())
    } else {
        let folds = rolling_origin_folds(target.len(), config.cv_folds, config.cv_horizon)?;
        select_p(target, drivers, config, &folds)?
    };
    let mut model = fit_with_p(target, drivers, config, p)?;
    model.selection = selection;
    Ok(model)
}

impl FewnetModel {
    pub fn config(&self) -> &FewnetConfig {
        &self.config
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        hidden_size(self.p)
    }

    pub fn levels(&self) -> usize {
        self.mra.levels()
    }

    /// Lags per component model, `p - n_exog`.
    pub fn lags(&self) -> usize {
        self.p - self.config.n_exog()
    }

    pub fn mra(&self) -> &MraDecomposition {
        &self.mra
    }

    pub fn exogenous(&self) -> Option<&ExogenousFeatures> {
        self.exog.as_ref()
    }

    pub fn components(&self) -> &[ArnnxModel] {
        &self.components
    }

    /// Grid-search results, empty when `p` was fixed.
    pub fn selection(&self) -> &[CandidateScore] {
        &self.selection
    }

    fn exog_rows(&self, m: usize, policy: &ExogPolicy) -> Result<Vec<Vec<f64>>> {
        let Some(exog) = &self.exog else {
            return Ok(Vec::new());
        };
        match policy {
            ExogPolicy::Frozen => Ok(vec![exog.row(exog.len() - 1); m]),
            ExogPolicy::Supplied(rows) => {
                if rows.len() < m || rows.iter().any(|r| r.len() != exog.width()) {
                    return Err(Error::Shape(format!(
                        "supplied exogenous path needs {m} rows of width {}",
                        exog.width()
                    )));
                }
                Ok(rows[..m].to_vec())
            }
        }
    }

    /// `m`-step forecast with exogenous inputs frozen at the last training
    /// row.
    pub fn forecast(&self, m: usize) -> Result<FewnetForecast> {
        self.forecast_with(m, &ExogPolicy::Frozen)
    }

    pub fn forecast_with(&self, m: usize, policy: &ExogPolicy) -> Result<FewnetForecast> {
        let rows = self.exog_rows(m, policy)?;
        let k = self.levels();
        let mut components = Vec::with_capacity(k + 1);
        for (i, (model, series)) in self.components.iter().zip(self.mra.components()).enumerate() {
            if i < k && self.config.zero_levels.contains(&(i + 1)) {
                components.push(vec![0.0; m]);
            } else {
                components.push(model.forecast_recursive(series, &rows, m)?);
            }
        }
        let mut ensemble = vec![0.0; m];
        for c in &components {
            for (e, v) in ensemble.iter_mut().zip(c) {
                *e += v;
            }
        }
        Ok(FewnetForecast {
            components,
            ensemble,
        })
    }

    /// In-sample component predictions over the shared design rows
    /// `t = lags..N`.
    pub fn in_sample_components(&self) -> Result<Vec<Vec<f64>>> {
        let columns = self.exog.as_ref().map(|e| e.columns());
        self.components
            .iter()
            .zip(self.mra.components())
            .map(|(model, series)| {
                let design = arnnx::make_design(series, self.lags(), columns)?;
                model.predict_design(&design)
            })
            .collect()
    }

    /// Sum of the in-sample component predictions.
    pub fn in_sample_ensemble(&self) -> Result<Vec<f64>> {
        let comps = self.in_sample_components()?;
        let mut out = vec![0.0; comps[0].len()];
        for c in &comps {
            for (o, v) in out.iter_mut().zip(c) {
                *o += v;
            }
        }
        Ok(out)
    }

    /// Mean over the shared rows of the squared sum of component residuals.
    pub fn empirical_risk_w(&self) -> Result<f64> {
        let preds = self.in_sample_components()?;
        let lags = self.lags();
        let rows = self.mra.len() - lags;
        let mut total = 0.0;
        for r in 0..rows {
            let resid: f64 = preds
                .iter()
                .zip(self.mra.components())
                .map(|(pred, series)| series[lags + r] - pred[r])
                .sum();
            total += resid * resid;
        }
        Ok(total / rows as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.components.len() != model.mra.levels() + 1 {
            return Err(Error::Shape(format!(
                "bundle has {} component models for {} levels",
                model.components.len(),
                model.mra.levels()
            )));
        }
        Ok(model)
    }
}
