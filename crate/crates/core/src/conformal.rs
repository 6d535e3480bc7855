//! Windowed conformal prediction intervals.
//!
//! Scores are scaled absolute residuals `S_t = |y_t - ŷ_t| / Ξ_t`. The
//! quantile at time `t` looks only at the `κ` most recent past scores and
//! counts the test point itself in the denominator, so small windows can
//! make the requested coverage unattainable; that case is reported as an
//! infinite quantile rather than clipped.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::median;

const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleModel {
    /// `Ξ = 1`: plain absolute residuals.
    #[default]
    Unit,
    /// Median absolute deviation of the last `κ` residuals.
    RollingMad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalConfig {
    pub window: usize,
    pub alpha: f64,
    #[serde(default)]
    pub scale: ScaleModel,
}

impl ConformalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Domain("conformal window must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!(
                "miscoverage must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

pub fn conformal_scores(actual: &[f64], predicted: &[f64], scale: &[f64]) -> Result<Vec<f64>> {
    if actual.len() != predicted.len() || actual.len() != scale.len() {
        return Err(Error::Shape(format!(
            "scores need aligned inputs, got {}, {}, {}",
            actual.len(),
            predicted.len(),
            scale.len()
        )));
    }
    if let Some(s) = scale.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Domain(format!("scale must be positive, got {s}")));
    }
    Ok(actual
        .iter()
        .zip(predicted)
        .zip(scale)
        .map(|((y, p), s)| (y - p).abs() / s)
        .collect())
}

/// Quantile for time `t` (1-based) from the scores `S_{t-κ} .. S_{t-1}`:
/// the smallest windowed score `q` with
/// `#{S ≤ q} / (min(κ, t - 1) + 1) ≥ 1 - α`, or `+∞` when none qualifies.
pub fn windowed_quantile(scores: &[f64], t: usize, kappa: usize, alpha: f64) -> Result<f64> {
    if t < 2 {
        return Err(Error::Index(format!("quantile index must be at least 2, got {t}")));
    }
    if t - 1 > scores.len() {
        return Err(Error::Index(format!(
            "time {t} needs {} past scores, only {} available",
            t - 1,
            scores.len()
        )));
    }
    if kappa == 0 {
        return Err(Error::Domain("window must be at least 1".into()));
    }
    let count = kappa.min(t - 1);
    let mut window = scores[t - 1 - count..t - 1].to_vec();
    window.sort_by(f64::total_cmp);
    let denom = (count + 1) as f64;
    let target = 1.0 - alpha;
    for (i, q) in window.iter().enumerate() {
        // ties: count every score equal to q
        let mut k = i + 1;
        while k < window.len() && window[k] == *q {
            k += 1;
        }
        if k as f64 / denom >= target {
            return Ok(*q);
        }
    }
    Ok(f64::INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub center: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSeries {
    pub steps: Vec<Interval>,
}

impl IntervalSeries {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn mean_width(&self) -> f64 {
        self.steps.iter().map(|i| i.upper - i.lower).sum::<f64>() / self.steps.len() as f64
    }

    /// Fraction of `actual` values inside their interval.
    pub fn coverage(&self, actual: &[f64]) -> f64 {
        let hits = self
            .steps
            .iter()
            .zip(actual)
            .filter(|(i, y)| i.lower <= **y && **y <= i.upper)
            .count();
        hits as f64 / self.steps.len().min(actual.len()) as f64
    }

    /// CSV with columns `step,lower,center,upper`, steps counted from 1.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "lower", "center", "upper"])?;
        for (h, i) in self.steps.iter().enumerate() {
            w.write_record([
                (h + 1).to_string(),
                format!("{:?}", i.lower),
                format!("{:?}", i.center),
                format!("{:?}", i.upper),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<intervals>", e))?;
        Ok(())
    }
}

/// `center ± Q · Ξ` per step.
pub fn intervals(point_forecast: &[f64], quantiles: &[f64], scale: &[f64]) -> Result<IntervalSeries> {
    if point_forecast.len() != quantiles.len() || point_forecast.len() != scale.len() {
        return Err(Error::Shape("interval inputs must be aligned".into()));
    }
    if let Some(q) = quantiles.iter().find(|q| !(**q >= 0.0)) {
        return Err(Error::Domain(format!("quantile must be non-negative, got {q}")));
    }
    let steps = point_forecast
        .iter()
        .zip(quantiles)
        .zip(scale)
        .map(|((c, q), s)| {
            let half = if *q == 0.0 { 0.0 } else { q * s };
            Interval {
                lower: c - half,
                center: *c,
                upper: c + half,
            }
        })
        .collect();
    Ok(IntervalSeries { steps })
}

fn mad(x: &[f64]) -> f64 {
    let m = median(x);
    let dev: Vec<f64> = x.iter().map(|v| (v - m).abs()).collect();
    median(&dev).max(SCALE_FLOOR)
}

/// Scale for each residual, computed from the (at most `κ`) residuals
/// strictly before it. Positions with fewer than two past residuals use
/// the first `κ` residuals instead.
pub fn rolling_mad_scale(residuals: &[f64], kappa: usize) -> Vec<f64> {
    let n = residuals.len();
    let fallback = if n == 0 {
        1.0
    } else {
        mad(&residuals[..kappa.clamp(1, n)])
    };
    (0..n)
        .map(|t| {
            let from = t.saturating_sub(kappa);
            if t - from < 2 {
                fallback
            } else {
                mad(&residuals[from..t])
            }
        })
        .collect()
}

/// Intervals around an `m`-step forecast from a calibration slice of
/// actuals and predictions. Every step uses the quantile of the last `κ`
/// calibration scores; with the rolling-MAD model the forecast scale is the
/// MAD of the last `κ` calibration residuals.
pub fn calibrated_intervals(
    calibration_actual: &[f64],
    calibration_pred: &[f64],
    forecast: &[f64],
    config: &ConformalConfig,
) -> Result<IntervalSeries> {
    config.validate()?;
    if calibration_actual.is_empty() || calibration_actual.len() != calibration_pred.len() {
        return Err(Error::Shape(
            "calibration slice must be non-empty and aligned".into(),
        ));
    }
    let residuals: Vec<f64> = calibration_actual
        .iter()
        .zip(calibration_pred)
        .map(|(y, p)| y - p)
        .collect();
    let n = residuals.len();
    let (cal_scale, forecast_scale) = match config.scale {
        ScaleModel::Unit => (vec![1.0; n], 1.0),
        ScaleModel::RollingMad => {
            let last = mad(&residuals[n.saturating_sub(config.window)..]);
            (rolling_mad_scale(&residuals, config.window), last)
        }
    };
    let scores = conformal_scores(calibration_actual, calibration_pred, &cal_scale)?;
    let q = windowed_quantile(&scores, n + 1, config.window, config.alpha)?;
    intervals(forecast, &vec![q; forecast.len()], &vec![forecast_scale; forecast.len()])
}
