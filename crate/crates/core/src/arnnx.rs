//! Autoregressive neural network with exogenous inputs.
//!
//! One hidden layer of logistic units and a linear output:
//!
//! ```text
//! ŷ_t = α_0 + Σ_i β_i σ(α_i + β'_i · (y_{t-1}, .., y_{t-r}) + γ'_i · X_{t-1})
//! ```
//!
//! Inputs and target are standardised with statistics of the design before
//! training. Each restart starts from its own seeded uniform initialisation
//! and is trained by full-batch gradient descent on the mean squared error;
//! predictions average the restarts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

const SCALE_FLOOR: f64 = 1e-8;

/// Network shape and training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArnnxConfig {
    /// Input width: target lags plus exogenous columns.
    pub p: usize,
    /// Hidden units.
    pub q: usize,
    pub n_exog: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl ArnnxConfig {
    pub const DEFAULT_EPOCHS: usize = 500;
    pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
    pub const DEFAULT_RESTARTS: usize = 20;

    /// Default training hyperparameters for the given shape.
    pub fn new(p: usize, q: usize, n_exog: usize, seed: u64) -> Self {
        Self {
            p,
            q,
            n_exog,
            epochs: Self::DEFAULT_EPOCHS,
            learning_rate: Self::DEFAULT_LEARNING_RATE,
            restarts: Self::DEFAULT_RESTARTS,
            seed,
        }
    }

    /// Number of target lags, `p - n_exog`.
    pub fn lags(&self) -> usize {
        self.p - self.n_exog
    }

    pub fn validate(&self) -> Result<()> {
        let problem = if self.p <= self.n_exog {
            Some(format!("p = {} must exceed n_exog = {}", self.p, self.n_exog))
        } else if self.q == 0 {
            Some("q must be at least 1".into())
        } else if self.epochs == 0 {
            Some("epochs must be at least 1".into())
        } else if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            Some(format!("learning rate must be positive, got {}", self.learning_rate))
        } else if self.restarts == 0 {
            Some("restarts must be at least 1".into())
        } else {
            None
        };
        problem.map_or(Ok(()), |p| Err(Error::Domain(p)))
    }
}

/// One supervised example.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    /// `y_{t-1}, .., y_{t-r}`, most recent first.
    pub lags: Vec<f64>,
    /// Exogenous values at `t - 1`.
    pub exog: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSet {
    rows: Vec<DesignRow>,
    lags: usize,
    n_exog: usize,
}

impl DesignSet {
    pub fn rows(&self) -> &[DesignRow] {
        &self.rows
    }

    pub fn lags(&self) -> usize {
        self.lags
    }

    pub fn n_exog(&self) -> usize {
        self.n_exog
    }

    /// Full input width `lags + n_exog`.
    pub fn width(&self) -> usize {
        self.lags + self.n_exog
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target).collect()
    }
}

/// Builds one row per label `y_t`, `t = lags..N`, carrying the previous
/// `lags` target values and the exogenous row `t - 1`.
///
/// `exog` is column-major: one slice per exogenous variable, each aligned
/// with `target`.
pub fn make_design(target: &[f64], lags: usize, exog: Option<&[Vec<f64>]>) -> Result<DesignSet> {
    let n = target.len();
    if lags == 0 || lags >= n {
        return Err(Error::Bounds(format!(
            "lag order {lags} needs 1 <= lags < {n} (series length)"
        )));
    }
    let exog = exog.unwrap_or(&[]);
    if let Some(bad) = exog.iter().find(|c| c.len() != n) {
        return Err(Error::Shape(format!(
            "exogenous column of length {} does not match target length {n}",
            bad.len()
        )));
    }
    let width = lags + exog.len();
    if n - lags < width {
        return Err(Error::Bounds(format!(
            "{} rows cannot support {width} inputs",
            n - lags
        )));
    }
    let rows = (lags..n)
        .map(|t| DesignRow {
            lags: (1..=lags).map(|k| target[t - k]).collect(),
            exog: exog.iter().map(|c| c[t - 1]).collect(),
            target: target[t],
        })
        .collect();
    Ok(DesignSet {
        rows,
        lags,
        n_exog: exog.len(),
    })
}

/// Parameters of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    /// `α_i`, one per hidden unit.
    pub hidden_bias: Vec<f64>,
    /// Input-to-hidden weights, row-major `q × p`; within a row the lag
    /// weights `β'_i` come first, then the exogenous weights `γ'_i`.
    pub input: Vec<f64>,
    /// `β_i`, hidden-to-output weights.
    pub output: Vec<f64>,
    /// `α_0`.
    pub output_bias: f64,
}

impl Weights {
    pub fn zeros(p: usize, q: usize) -> Self {
        Self {
            hidden_bias: vec![0.0; q],
            input: vec![0.0; q * p],
            output: vec![0.0; q],
            output_bias: 0.0,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    /// Parameter count for a `p`-input, `q`-hidden network.
    pub fn parameter_count(p: usize, q: usize) -> usize {
        q * (p + 2) + 1
    }

    /// `[α_1..α_q, W (row-major), β_1..β_q, α_0]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.input.len() + 2 * self.hidden() + 1);
        v.extend(&self.hidden_bias);
        v.extend(&self.input);
        v.extend(&self.output);
        v.push(self.output_bias);
        v
    }

    pub fn from_flat(p: usize, q: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != Self::parameter_count(p, q) {
            return Err(Error::Shape(format!(
                "expected {} parameters for p = {p}, q = {q}, got {}",
                Self::parameter_count(p, q),
                flat.len()
            )));
        }
        Ok(Self {
            hidden_bias: flat[..q].to_vec(),
            input: flat[q..q + q * p].to_vec(),
            output: flat[q + q * p..2 * q + q * p].to_vec(),
            output_bias: flat[flat.len() - 1],
        })
    }

    fn random(p: usize, q: usize, seed: u64) -> Self {
        use rand::Rng;
        let mut r = rng(seed);
        let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| r.random_range(-0.5..=0.5)).collect() };
        let hidden_bias = draw(q);
        let input = draw(q * p);
        let output = draw(q);
        let output_bias = draw(1)[0];
        Self {
            hidden_bias,
            input,
            output,
            output_bias,
        }
    }

    /// Network output for one standardised input vector.
    pub fn forward(&self, x: &[f64]) -> f64 {
        let p = x.len();
        let mut out = self.output_bias;
        for i in 0..self.hidden() {
            let row = &self.input[i * p..(i + 1) * p];
            let a = self.hidden_bias[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            out += self.output[i] * sigmoid(a);
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean squared error of `weights` over standardised inputs (row-major,
/// `targets.len()` rows of `width` values) and its gradient.
pub fn mse_loss_and_gradient(
    weights: &Weights,
    inputs: &[f64],
    targets: &[f64],
    width: usize,
) -> (f64, Weights) {
    let q = weights.hidden();
    let n = targets.len() as f64;
    let mut grad = Weights::zeros(width, q);
    let mut loss = 0.0;
    let mut hidden = vec![0.0; q];
    for (x, &y) in inputs.chunks_exact(width).zip(targets) {
        let mut out = weights.output_bias;
        for i in 0..q {
            let row = &weights.input[i * width..(i + 1) * width];
            let a = weights.hidden_bias[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            hidden[i] = sigmoid(a);
            out += weights.output[i] * hidden[i];
        }
        let err = out - y;
        loss += err * err;
        let d_out = 2.0 * err / n;
        grad.output_bias += d_out;
        for i in 0..q {
            grad.output[i] += d_out * hidden[i];
            let d_a = d_out * weights.output[i] * hidden[i] * (1.0 - hidden[i]);
            grad.hidden_bias[i] += d_a;
            for (g, v) in grad.input[i * width..(i + 1) * width].iter_mut().zip(x) {
                *g += d_a * v;
            }
        }
    }
    (loss / n, grad)
}

/// Mean squared error only.
pub fn mse_loss(weights: &Weights, inputs: &[f64], targets: &[f64], width: usize) -> f64 {
    inputs
        .chunks_exact(width)
        .zip(targets)
        .map(|(x, y)| (weights.forward(x) - y).powi(2))
        .sum::<f64>()
        / targets.len() as f64
}

/// Affine standardisation of inputs and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub input_center: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_center: f64,
    pub target_scale: f64,
}

impl Scaling {
    /// No-op scaling for `p` inputs.
    pub fn identity(p: usize) -> Self {
        Self {
            input_center: vec![0.0; p],
            input_scale: vec![1.0; p],
            target_center: 0.0,
            target_scale: 1.0,
        }
    }

    fn fit(design: &DesignSet) -> Self {
        let width = design.width();
        let mut input_center = Vec::with_capacity(width);
        let mut input_scale = Vec::with_capacity(width);
        for k in 0..width {
            let col: Vec<f64> = design.rows.iter().map(|r| input_value(r, k)).collect();
            let (c, s) = mean_sd(&col);
            input_center.push(c);
            input_scale.push(s);
        }
        let (target_center, target_scale) = mean_sd(&design.targets());
        Self {
            input_center,
            input_scale,
            target_center,
            target_scale,
        }
    }

    fn standardize_into(&self, raw: impl Iterator<Item = f64>, out: &mut Vec<f64>) {
        out.extend(
            raw.zip(self.input_center.iter().zip(&self.input_scale))
                .map(|(x, (c, s))| (x - c) / s),
        );
    }
}

fn input_value(row: &DesignRow, k: usize) -> f64 {
    if k < row.lags.len() {
        row.lags[k]
    } else {
        row.exog[k - row.lags.len()]
    }
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt().max(SCALE_FLOOR))
}

/// A trained (or hand-built) network with one weight set per restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArnnxModel {
    config: ArnnxConfig,
    scaling: Scaling,
    restarts: Vec<Weights>,
}

impl ArnnxModel {
    pub fn from_parts(config: ArnnxConfig, scaling: Scaling, restarts: Vec<Weights>) -> Result<Self> {
        if config.p <= config.n_exog {
            return Err(Error::Domain(format!(
                "p = {} must exceed n_exog = {}",
                config.p, config.n_exog
            )));
        }
        if restarts.is_empty() {
            return Err(Error::Shape("model needs at least one weight set".into()));
        }
        if scaling.input_center.len() != config.p || scaling.input_scale.len() != config.p {
            return Err(Error::Shape(format!(
                "scaling has {} inputs, config has p = {}",
                scaling.input_center.len(),
                config.p
            )));
        }
        if scaling.input_scale.iter().chain([&scaling.target_scale]).any(|s| !(*s > 0.0)) {
            return Err(Error::Domain("scale parameters must be positive".into()));
        }
        for w in &restarts {
            if w.hidden() != config.q
                || w.output.len() != config.q
                || w.input.len() != config.p * config.q
            {
                return Err(Error::Shape(format!(
                    "weight set does not match p = {}, q = {}",
                    config.p, config.q
                )));
            }
        }
        Ok(Self {
            config,
            scaling,
            restarts,
        })
    }

    pub fn config(&self) -> &ArnnxConfig {
        &self.config
    }

    pub fn scaling(&self) -> &Scaling {
        &self.scaling
    }

    pub fn restarts(&self) -> &[Weights] {
        &self.restarts
    }

    fn check_widths(&self, lags: &[f64], exog: &[f64]) -> Result<()> {
        if lags.len() != self.config.lags() || exog.len() != self.config.n_exog {
            return Err(Error::Shape(format!(
                "model takes {} lags and {} exogenous values, got {} and {}",
                self.config.lags(),
                self.config.n_exog,
                lags.len(),
                exog.len()
            )));
        }
        Ok(())
    }

    fn standardized(&self, lags: &[f64], exog: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.config.p);
        self.scaling
            .standardize_into(lags.iter().chain(exog).copied(), &mut x);
        x
    }

    /// Prediction of a single restart, in original units.
    pub fn predict_restart(&self, restart: usize, lags: &[f64], exog: &[f64]) -> Result<f64> {
        self.check_widths(lags, exog)?;
        let x = self.standardized(lags, exog);
        let out = self.restarts[restart].forward(&x);
        Ok(self.scaling.target_center + self.scaling.target_scale * out)
    }

    /// Restart-averaged one-step prediction.
    pub fn predict_one(&self, lags: &[f64], exog: &[f64]) -> Result<f64> {
        self.check_widths(lags, exog)?;
        let x = self.standardized(lags, exog);
        let mean = self.restarts.iter().map(|w| w.forward(&x)).sum::<f64>()
            / self.restarts.len() as f64;
        Ok(self.scaling.target_center + self.scaling.target_scale * mean)
    }

    /// Predictions for every row of a design.
    pub fn predict_design(&self, design: &DesignSet) -> Result<Vec<f64>> {
        design
            .rows
            .iter()
            .map(|r| self.predict_one(&r.lags, &r.exog))
            .collect()
    }

    /// Recursive `m`-step forecast. Step `h` uses lags from `history`
    /// extended with the forecasts of steps before `h`, and exogenous row
    /// `exog_rows[h]` (ignored when the model has no exogenous inputs).
    pub fn forecast_recursive(&self, history: &[f64], exog_rows: &[Vec<f64>], m: usize) -> Result<Vec<f64>> {
        let lags = self.config.lags();
        if history.len() < lags {
            return Err(Error::Bounds(format!(
                "history of {} values is shorter than the lag order {lags}",
                history.len()
            )));
        }
        if m == 0 {
            return Err(Error::Bounds("forecast horizon must be at least 1".into()));
        }
        if self.config.n_exog > 0 && exog_rows.len() < m {
            return Err(Error::Shape(format!(
                "{m} steps need {m} exogenous rows, got {}",
                exog_rows.len()
            )));
        }
        let mut path: Vec<f64> = history[history.len() - lags..].to_vec();
        let mut out = Vec::with_capacity(m);
        for h in 0..m {
            let recent: Vec<f64> = path.iter().rev().take(lags).copied().collect();
            let exog: &[f64] = if self.config.n_exog > 0 { &exog_rows[h] } else { &[] };
            let y = self.predict_one(&recent, exog)?;
            out.push(y);
            path.push(y);
        }
        Ok(out)
    }

    /// Plain-text dump: header, scaling, then one line of weights per
    /// restart. Floats use shortest round-trip formatting, so
    /// [`ArnnxModel::from_flat_text`] restores the model bit for bit.
    pub fn to_flat_text(&self) -> String {
        fn line(tag: &str, values: impl IntoIterator<Item = f64>) -> String {
            let mut s = tag.to_string();
            for v in values {
                s.push(' ');
                s.push_str(&format!("{v:?}"));
            }
            s.push('\n');
            s
        }
        let c = &self.config;
        let mut out = format!(
            "arnnx 1\nconfig {} {} {} {} {:?} {} {}\n",
            c.p, c.q, c.n_exog, c.epochs, c.learning_rate, c.restarts, c.seed
        );
        out += &line("center", self.scaling.input_center.iter().copied());
        out += &line("scale", self.scaling.input_scale.iter().copied());
        out += &line("target", [self.scaling.target_center, self.scaling.target_scale]);
        for w in &self.restarts {
            out += &line("weights", w.to_flat());
        }
        out
    }

    pub fn from_flat_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(msg.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("arnnx 1") {
            return Err(bad("missing `arnnx 1` header"));
        }
        let mut fields = |tag: &str| -> Result<Vec<String>> {
            let l = lines.next().ok_or_else(|| bad(&format!("missing `{tag}` line")))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(tag) {
                return Err(bad(&format!("expected `{tag}` line")));
            }
            Ok(it.map(str::to_string).collect())
        };
        fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Parse(format!("bad number `{s}`")))
        }
        let cfg = fields("config")?;
        if cfg.len() != 7 {
            return Err(bad("config line needs 7 fields"));
        }
        let config = ArnnxConfig {
            p: num(&cfg[0])?,
            q: num(&cfg[1])?,
            n_exog: num(&cfg[2])?,
            epochs: num(&cfg[3])?,
            learning_rate: num(&cfg[4])?,
            restarts: num(&cfg[5])?,
            seed: num(&cfg[6])?,
        };
        let floats = |v: Vec<String>| -> Result<Vec<f64>> { v.iter().map(|s| num(s)).collect() };
        let input_center = floats(fields("center")?)?;
        let input_scale = floats(fields("scale")?)?;
        let target = floats(fields("target")?)?;
        if target.len() != 2 {
            return Err(bad("target line needs centre and scale"));
        }
        let mut restarts = Vec::new();
        for l in lines {
            let mut it = l.split_whitespace();
            if it.next() != Some("weights") {
                return Err(bad("expected `weights` line"));
            }
            let flat: Vec<f64> = it.map(num).collect::<Result<_>>()?;
            restarts.push(Weights::from_flat(config.p, config.q, &flat)?);
        }
        let scaling = Scaling {
            input_center,
            input_scale,
            target_center: target[0],
            target_scale: target[1],
        };
        Self::from_parts(config, scaling, restarts)
    }
}

/// Per-restart loss trajectories recorded during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    /// `losses[r][e]` is the standardised MSE of restart `r` before update `e`.
    pub losses: Vec<Vec<f64>>,
}

/// Trains a model on a design set.
pub fn train(design: &DesignSet, config: &ArnnxConfig) -> Result<ArnnxModel> {
    train_traced(design, config).map(|(m, _)| m)
}

/// Like [`train`], also returning the loss trajectory of every restart.
pub fn train_traced(design: &DesignSet, config: &ArnnxConfig) -> Result<(ArnnxModel, TrainingTrace)> {
    config.validate()?;
    if design.is_empty() {
        return Err(Error::Bounds("cannot train on an empty design".into()));
    }
    if design.width() != config.p || design.n_exog() != config.n_exog {
        return Err(Error::Shape(format!(
            "design has {} lags + {} exogenous inputs, config expects p = {} with n_exog = {}",
            design.lags(),
            design.n_exog(),
            config.p,
            config.n_exog
        )));
    }
    let scaling = Scaling::fit(design);
    let width = config.p;
    let mut inputs = Vec::with_capacity(design.len() * width);
    for r in &design.rows {
        scaling.standardize_into(r.lags.iter().chain(&r.exog).copied(), &mut inputs);
    }
    let targets: Vec<f64> = design
        .rows
        .iter()
        .map(|r| (r.target - scaling.target_center) / scaling.target_scale)
        .collect();

    let runs: Vec<(Weights, Vec<f64>)> = (0..config.restarts)
        .into_par_iter()
        .map(|r| train_restart(r, &inputs, &targets, config))
        .collect::<Result<_>>()?;
    let (restarts, losses) = runs.into_iter().unzip();
    let model = ArnnxModel::from_parts(*config, scaling, restarts)?;
    Ok((model, TrainingTrace { losses }))
}

fn train_restart(
    restart: usize,
    inputs: &[f64],
    targets: &[f64],
    config: &ArnnxConfig,
) -> Result<(Weights, Vec<f64>)> {
    let seed = derive_seed(config.seed, "restart", restart as u64);
    let mut w = Weights::random(config.p, config.q, seed);
    let mut history = Vec::with_capacity(config.epochs);
    let lr = config.learning_rate;
    for epoch in 0..config.epochs {
        let (loss, g) = mse_loss_and_gradient(&w, inputs, targets, config.p);
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence { restart, epoch });
        }
        history.push(loss);
        for (p, d) in w.hidden_bias.iter_mut().zip(&g.hidden_bias) {
            *p -= lr * d;
        }
        for (p, d) in w.input.iter_mut().zip(&g.input) {
            *p -= lr * d;
        }
        for (p, d) in w.output.iter_mut().zip(&g.output) {
            *p -= lr * d;
        }
        w.output_bias -= lr * g.output_bias;
    }
    let final_loss = mse_loss(&w, inputs, targets, config.p);
    if !final_loss.is_finite() || w.to_flat().iter().any(|x| !x.is_finite()) {
        return Err(Error::TrainingDivergence {
            restart,
            epoch: config.epochs,
        });
    }
    Ok((w, history))
}
