//! Reference forecasters: random walk, random walk with drift, AR(p) by
//! least squares, and ARNNx on the undecomposed series.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arnnx::{self, ArnnxConfig, ArnnxModel};
use crate::error::{Error, Result};

/// Repeats the last training value.
pub fn rw_forecast(train: &[f64], m: usize) -> Result<Vec<f64>> {
    let last = *train
        .last()
        .ok_or_else(|| Error::Domain("random walk needs a non-empty series".into()))?;
    Ok(vec![last; m])
}

/// Last value plus `h` times the mean first difference.
pub fn rwd_forecast(train: &[f64], m: usize) -> Result<Vec<f64>> {
    let n = train.len();
    if n < 2 {
        return Err(Error::Domain(format!(
            "random walk with drift needs at least 2 points, got {n}"
        )));
    }
    let drift = (train[n - 1] - train[0]) / (n - 1) as f64;
    Ok((1..=m).map(|h| train[n - 1] + h as f64 * drift).collect())
}

pub const AR_MAX_ORDER_MONTHLY: usize = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub intercept: f64,
    /// `φ_1 .. φ_p`
    pub coefficients: Vec<f64>,
    /// AIC of each candidate order `1..=max_order` on the common sample.
    pub aic: Vec<f64>,
}

impl ArModel {
    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    /// `c / (1 - Σ φ)`; infinite for a unit root.
    pub fn unconditional_mean(&self) -> f64 {
        self.intercept / (1.0 - self.coefficients.iter().sum::<f64>())
    }

    /// Largest modulus among the companion-matrix eigenvalues.
    pub fn spectral_radius(&self) -> f64 {
        let p = self.order();
        let mut c = DMatrix::<f64>::zeros(p, p);
        for (j, phi) in self.coefficients.iter().enumerate() {
            c[(0, j)] = *phi;
        }
        for i in 1..p {
            c[(i, i - 1)] = 1.0;
        }
        c.complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_stationary(&self) -> bool {
        self.spectral_radius() < 1.0
    }
}

/// Least squares with an intercept on rows `t ∈ start..n` regressing
/// `y_t` on `y_{t-1} .. y_{t-p}`. Returns `(coefficients, rss)` with the
/// intercept first.
fn ols_lags(y: &[f64], p: usize, start: usize) -> Result<(Vec<f64>, f64)> {
    let rows = y.len() - start;
    let x = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { y[start + r - c] });
    let target = DVector::from_iterator(rows, y[start..].iter().copied());
    let svd = x.clone().svd(true, true);
    let s = &svd.singular_values;
    let max = s.max();
    if !(max > 0.0) || s.min() <= max * 1e-12 {
        return Err(Error::Fit(format!("lag design for order {p} is singular")));
    }
    let beta = svd
        .solve(&target, 0.0)
        .map_err(|e| Error::Fit(format!("least squares failed: {e}")))?;
    let resid = &target - &x * &beta;
    Ok((beta.iter().copied().collect(), resid.norm_squared()))
}

/// Chooses the order in `1..=max_order` by AIC on the rows available at
/// `max_order`, then refits that order on every row it allows.
pub fn ar_fit(train: &[f64], max_order: usize) -> Result<ArModel> {
    let n = train.len();
    if max_order == 0 {
        return Err(Error::Domain("maximum AR order must be at least 1".into()));
    }
    if n <= 2 * max_order + 1 {
        return Err(Error::Bounds(format!(
            "AR order search up to {max_order} needs more than {} points, got {n}",
            2 * max_order + 1
        )));
    }
    let n_eff = (n - max_order) as f64;
    let mut aic = Vec::with_capacity(max_order);
    for p in 1..=max_order {
        let (_, rss) = ols_lags(train, p, max_order)?;
        aic.push(n_eff * (rss.max(f64::MIN_POSITIVE) / n_eff).ln() + 2.0 * (p as f64 + 1.0));
    }
    let best = (0..max_order)
        .min_by(|&a, &b| aic[a].total_cmp(&aic[b]))
        .unwrap_or(0)
        + 1;
    let (beta, _) = ols_lags(train, best, best)?;
    Ok(ArModel {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        aic,
    })
}

/// Recursive forecast from the end of `train`.
pub fn ar_forecast(model: &ArModel, train: &[f64], m: usize) -> Result<Vec<f64>> {
    let p = model.order();
    if train.len() < p {
        return Err(Error::Bounds(format!(
            "AR({p}) forecast needs {p} past values, got {}",
            train.len()
        )));
    }
    let mut path = train[train.len() - p..].to_vec();
    for _ in 0..m {
        let next = model.intercept
            + model
                .coefficients
                .iter()
                .enumerate()
                .map(|(k, phi)| phi * path[path.len() - 1 - k])
                .sum::<f64>();
        path.push(next);
    }
    Ok(path.split_off(p))
}

/// ARNNx trained directly on `train`. `exog` is column-major and aligned
/// with `train`.
pub fn fit_arnnx_raw(train: &[f64], exog: Option<&[Vec<f64>]>, config: &ArnnxConfig) -> Result<ArnnxModel> {
    let design = arnnx::make_design(train, config.lags(), exog)?;
    arnnx::train(&design, config)
}

/// In-sample mean squared residual of a raw ARNNx over its design rows.
pub fn arnnx_raw_risk(model: &ArnnxModel, train: &[f64], exog: Option<&[Vec<f64>]>) -> Result<f64> {
    let design = arnnx::make_design(train, model.config().lags(), exog)?;
    let pred = model.predict_design(&design)?;
    crate::evaluation::empirical_risk(&pred, &design.targets())
}

/// `m`-step forecast of a raw ARNNx. The exogenous row is frozen at its
/// last training value.
pub fn arnnx_raw(train: &[f64], exog: Option<&[Vec<f64>]>, config: &ArnnxConfig, m: usize) -> Result<Vec<f64>> {
    let model = fit_arnnx_raw(train, exog, config)?;
    let last: Vec<f64> = exog
        .unwrap_or(&[])
        .iter()
        .map(|c| c[c.len() - 1])
        .collect();
    model.forecast_recursive(train, &vec![last; m], m)
}
