//! Forecast accuracy metrics, empirical risk, the MCB rank test and the
//! Giacomini-Rossi fluctuation test.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_aligned(actual: &[f64], forecast: &[f64]) -> Result<()> {
    if actual.is_empty() {
        return Err(Error::Shape("metrics need at least one forecast".into()));
    }
    if actual.len() != forecast.len() {
        return Err(Error::Shape(format!(
            "{} actuals against {} forecasts",
            actual.len(),
            forecast.len()
        )));
    }
    Ok(())
}

fn mean(x: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = x.len() as f64;
    x.sum::<f64>() / n
}

/// Median of finite values, averaging the two middle elements for even
/// lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn rmse(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_aligned(actual, forecast)?;
    Ok(mean(actual.iter().zip(forecast).map(|(y, f)| (y - f).powi(2))).sqrt())
}

/// Mean absolute error scaled by the in-sample mean absolute seasonal
/// difference at lag `season` of `train`.
pub fn mase(actual: &[f64], forecast: &[f64], train: &[f64], season: usize) -> Result<f64> {
    check_aligned(actual, forecast)?;
    if season == 0 || train.len() <= season {
        return Err(Error::Domain(format!(
            "seasonal lag {season} needs a training series longer than {season}, got {}",
            train.len()
        )));
    }
    let scale = mean((season..train.len()).map(|t| (train[t] - train[t - season]).abs()));
    if scale == 0.0 {
        return Err(Error::MetricUndefined("mase"));
    }
    Ok(mean(actual.iter().zip(forecast).map(|(y, f)| (y - f).abs())) / scale)
}

/// Symmetric MAPE in percent, `100/m Σ |y - ŷ| / ((|y| + |ŷ|)/2)`. A term
/// with `y = ŷ = 0` counts as zero.
pub fn smape_percent(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_aligned(actual, forecast)?;
    Ok(100.0
        * mean(actual.iter().zip(forecast).map(|(y, f)| {
            let denom = (y.abs() + f.abs()) / 2.0;
            if denom == 0.0 {
                0.0
            } else {
                (y - f).abs() / denom
            }
        })))
}

/// Theil's U1 with the normalisation
/// `RMSE / (sqrt(mean y²) · sqrt(mean ŷ²))`.
pub fn theils_u1(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    let num = rmse(actual, forecast)?;
    if num == 0.0 {
        return Ok(0.0);
    }
    let ya = mean(actual.iter().map(|y| y * y)).sqrt();
    let yf = mean(forecast.iter().map(|f| f * f)).sqrt();
    let denom = ya * yf;
    if denom == 0.0 {
        return Err(Error::MetricUndefined("theils_u1"));
    }
    Ok(num / denom)
}

/// Median of `|y - ŷ| / |y - ŷ_naive|`.
pub fn mdrae(actual: &[f64], forecast: &[f64], naive: &[f64]) -> Result<f64> {
    check_aligned(actual, forecast)?;
    check_aligned(actual, naive)?;
    let ratios: Vec<f64> = actual
        .iter()
        .zip(forecast)
        .zip(naive)
        .map(|((y, f), r)| {
            let num = (y - f).abs();
            let den = (y - r).abs();
            if num == 0.0 {
                0.0
            } else {
                num / den
            }
        })
        .collect();
    let m = median(&ratios);
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::MetricUndefined("mdrae"))
    }
}

/// Median of `100 · |y - ŷ| / y`.
pub fn mdape(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_aligned(actual, forecast)?;
    if actual.iter().any(|y| *y == 0.0) {
        return Err(Error::MetricUndefined("mdape"));
    }
    let terms: Vec<f64> = actual
        .iter()
        .zip(forecast)
        .map(|(y, f)| 100.0 * (y - f).abs() / y)
        .collect();
    Ok(median(&terms))
}

/// The six accuracy metrics. Metrics that are undefined for the inputs
/// (see [`Error::MetricUndefined`]) are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mase: Option<f64>,
    pub smape_percent: f64,
    pub theils_u1: Option<f64>,
    pub mdrae: Option<f64>,
    pub mdape: Option<f64>,
}

pub const DEFAULT_SEASONAL_LAG: usize = 1;

/// All six metrics. `naive` is the reference forecast for MDRAE,
/// conventionally the random walk.
pub fn compute_metrics(
    actual: &[f64],
    forecast: &[f64],
    train: &[f64],
    season: usize,
    naive: &[f64],
) -> Result<MetricReport> {
    fn optional(r: Result<f64>) -> Result<Option<f64>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::MetricUndefined(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
    Ok(MetricReport {
        rmse: rmse(actual, forecast)?,
        mase: optional(mase(actual, forecast, train, season))?,
        smape_percent: smape_percent(actual, forecast)?,
        theils_u1: optional(theils_u1(actual, forecast))?,
        mdrae: optional(mdrae(actual, forecast, naive))?,
        mdape: optional(mdape(actual, forecast))?,
    })
}

/// Mean squared in-sample residual.
pub fn empirical_risk(in_sample_pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_aligned(actual, in_sample_pred)?;
    Ok(mean(actual.iter().zip(in_sample_pred).map(|(y, p)| (y - p).powi(2))))
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub horizon: usize,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

pub const METRIC_CSV_HEADER: [&str; 8] = [
    "model",
    "horizon",
    "rmse",
    "mase",
    "smape_percent",
    "theils_u1",
    "mdrae",
    "mdape",
];

/// Writes metric rows as CSV; undefined metrics are empty cells.
pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRIC_CSV_HEADER)?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.model.clone(),
            r.horizon.to_string(),
            cell(Some(m.rmse)),
            cell(m.mase),
            cell(Some(m.smape_percent)),
            cell(m.theils_u1),
            cell(m.mdrae),
            cell(m.mdape),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}

/// Losses of `M` models on `D` datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMatrix {
    models: Vec<String>,
    datasets: Vec<String>,
    /// `losses[model][dataset]`
    losses: Vec<Vec<f64>>,
}

impl ErrorMatrix {
    pub fn new(models: Vec<String>, datasets: Vec<String>, losses: Vec<Vec<f64>>) -> Result<Self> {
        if losses.len() != models.len() || losses.iter().any(|row| row.len() != datasets.len()) {
            return Err(Error::Shape(format!(
                "error matrix must be {} models × {} datasets",
                models.len(),
                datasets.len()
            )));
        }
        if losses.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("error matrix cells must be finite".into()));
        }
        Ok(Self {
            models,
            datasets,
            losses,
        })
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn losses(&self) -> &[Vec<f64>] {
        &self.losses
    }
}

/// Upper quantiles of the studentized range with infinitely many degrees of
/// freedom, for 2..=20 groups.
const STUDENTIZED_RANGE_01: [f64; 19] = [
    3.6428, 4.1203, 4.4028, 4.6028, 4.7570, 4.8822, 4.9872, 5.0775, 5.1566, 5.2270, 5.2902,
    5.3476, 5.4001, 5.4485, 5.4933, 5.5350, 5.5740, 5.6107, 5.6452,
];
const STUDENTIZED_RANGE_05: [f64; 19] = [
    2.7718, 3.3145, 3.6332, 3.8577, 4.0301, 4.1696, 4.2863, 4.3865, 4.4741, 4.5519, 4.6217,
    4.6849, 4.7427, 4.7959, 4.8452, 4.8910, 4.9337, 4.9739, 5.0117,
];
const STUDENTIZED_RANGE_10: [f64; 19] = [
    2.3262, 2.9024, 3.2404, 3.4783, 3.6607, 3.8081, 3.9313, 4.0370, 4.1293, 4.2112, 4.2846,
    4.3512, 4.4119, 4.4678, 4.5195, 4.5675, 4.6124, 4.6545, 4.6941,
];

fn alpha_key(alpha: f64) -> Option<usize> {
    [0.01, 0.05, 0.10]
        .iter()
        .position(|a| (a - alpha).abs() < 1e-12)
}

/// `Θ_α` for `models` groups; `alpha` must be 0.01, 0.05 or 0.10.
pub fn studentized_range_quantile(models: usize, alpha: f64) -> Result<f64> {
    if !(2..=20).contains(&models) {
        return Err(Error::Domain(format!(
            "studentized range table covers 2..=20 models, got {models}"
        )));
    }
    let table = match alpha_key(alpha) {
        Some(0) => &STUDENTIZED_RANGE_01,
        Some(1) => &STUDENTIZED_RANGE_05,
        Some(2) => &STUDENTIZED_RANGE_10,
        _ => {
            return Err(Error::Domain(format!(
                "alpha must be 0.01, 0.05 or 0.10, got {alpha}"
            )))
        }
    };
    Ok(table[models - 2])
}

/// `CD = Θ_α · sqrt(M (M + 1) / (6 D))`.
pub fn critical_distance(models: usize, datasets: usize, alpha: f64) -> Result<f64> {
    if datasets == 0 {
        return Err(Error::Domain("critical distance needs at least one dataset".into()));
    }
    let m = models as f64;
    Ok(studentized_range_quantile(models, alpha)? * (m * (m + 1.0) / (6.0 * datasets as f64)).sqrt())
}

/// Ranks `1..=n` with ties sharing their average rank; smaller is better.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McbResult {
    pub models: Vec<String>,
    pub mean_ranks: Vec<f64>,
    /// `(mean rank - CD/2, mean rank + CD/2)` per model.
    pub intervals: Vec<(f64, f64)>,
    pub critical_distance: f64,
    pub best: usize,
    /// Upper end of the best model's interval.
    pub reference_upper: f64,
    /// Models whose whole interval lies above `reference_upper`.
    pub significantly_worse: Vec<bool>,
    pub alpha: f64,
}

/// Multiple comparisons with the best, on within-dataset ranks.
pub fn mcb_test(errors: &ErrorMatrix, alpha: f64) -> Result<McbResult> {
    let m = errors.models.len();
    let d = errors.datasets.len();
    if m < 2 || d < 2 {
        return Err(Error::Domain(format!(
            "MCB needs at least 2 models and 2 datasets, got {m} and {d}"
        )));
    }
    let cd = critical_distance(m, d, alpha)?;
    let mut mean_ranks = vec![0.0; m];
    for j in 0..d {
        let column: Vec<f64> = errors.losses.iter().map(|row| row[j]).collect();
        for (acc, r) in mean_ranks.iter_mut().zip(average_ranks(&column)) {
            *acc += r;
        }
    }
    for r in &mut mean_ranks {
        *r /= d as f64;
    }
    let best = (0..m)
        .min_by(|&a, &b| mean_ranks[a].total_cmp(&mean_ranks[b]))
        .unwrap_or(0);
    let reference_upper = mean_ranks[best] + cd / 2.0;
    let intervals: Vec<(f64, f64)> = mean_ranks.iter().map(|r| (r - cd / 2.0, r + cd / 2.0)).collect();
    let significantly_worse = intervals.iter().map(|(lo, _)| *lo > reference_upper).collect();
    Ok(McbResult {
        models: errors.models.clone(),
        mean_ranks,
        intervals,
        critical_distance: cd,
        best,
        reference_upper,
        significantly_worse,
        alpha,
    })
}

/// Window fractions covered by the critical value table.
pub const FLUCTUATION_MU_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
const FLUCTUATION_CV_05: [f64; 9] = [3.393, 3.179, 3.012, 2.890, 2.779, 2.634, 2.560, 2.433, 2.248];
const FLUCTUATION_CV_10: [f64; 9] = [3.170, 2.948, 2.766, 2.626, 2.500, 2.356, 2.252, 2.130, 1.950];

/// Two-sided fluctuation-test critical value at the tabulated `μ` nearest
/// to `mu`; `alpha` must be 0.05 or 0.10.
pub fn fluctuation_critical_value(mu: f64, alpha: f64) -> Result<f64> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Domain(format!("window fraction must lie in (0, 1), got {mu}")));
    }
    let table = match alpha_key(alpha) {
        Some(1) => &FLUCTUATION_CV_05,
        Some(2) => &FLUCTUATION_CV_10,
        _ => {
            return Err(Error::Domain(format!(
                "fluctuation test alpha must be 0.05 or 0.10, got {alpha}"
            )))
        }
    };
    let (idx, dist) = FLUCTUATION_MU_GRID
        .iter()
        .enumerate()
        .map(|(i, g)| (i, (g - mu).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    if dist > 1e-9 {
        log::warn!(
            "window fraction {mu} is not tabulated; using critical value for {}",
            FLUCTUATION_MU_GRID[idx]
        );
    }
    Ok(table[idx])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationResult {
    /// Index (0-based) of the last observation of each window.
    pub window_end: Vec<usize>,
    /// Statistic per window; `None` when the loss differential has zero
    /// variance and non-zero mean within the window.
    pub statistic: Vec<Option<f64>>,
    pub window: usize,
    pub critical_value: f64,
    pub mu: f64,
    pub alpha: f64,
}

impl FluctuationResult {
    /// Whether `|statistic|` exceeds the critical value anywhere.
    pub fn rejects(&self) -> bool {
        self.statistic
            .iter()
            .flatten()
            .any(|s| s.abs() > self.critical_value)
    }
}

/// Bartlett-kernel long-run variance with truncation lag `lag`.
pub fn bartlett_variance(x: &[f64], lag: usize) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let autocov = |k: usize| -> f64 {
        x[k..]
            .iter()
            .zip(x)
            .map(|(a, b)| (a - m) * (b - m))
            .sum::<f64>()
            / n
    };
    let mut v = autocov(0);
    for k in 1..=lag.min(x.len().saturating_sub(1)) {
        v += 2.0 * (1.0 - k as f64 / (lag as f64 + 1.0)) * autocov(k);
    }
    v
}

/// Rolling test of equal local predictive accuracy on the loss
/// differential `loss_a - loss_b`. Positive values favour model `b`.
pub fn gr_fluctuation_test(loss_a: &[f64], loss_b: &[f64], mu: f64, alpha: f64) -> Result<FluctuationResult> {
    if loss_a.len() != loss_b.len() {
        return Err(Error::Shape(format!(
            "loss series of lengths {} and {}",
            loss_a.len(),
            loss_b.len()
        )));
    }
    let critical_value = fluctuation_critical_value(mu, alpha)?;
    let n = loss_a.len();
    let window = (mu * n as f64).round() as usize;
    if window < 2 || window > n {
        return Err(Error::Window(format!(
            "window round({mu} · {n}) = {window} must lie in 2..={n}"
        )));
    }
    let lag = (window as f64).cbrt().floor() as usize;
    let d: Vec<f64> = loss_a.iter().zip(loss_b).map(|(a, b)| a - b).collect();
    let mut window_end = Vec::with_capacity(n - window + 1);
    let mut statistic = Vec::with_capacity(n - window + 1);
    for end in window - 1..n {
        let slice = &d[end + 1 - window..=end];
        let mean = slice.iter().sum::<f64>() / window as f64;
        let var = bartlett_variance(slice, lag);
        let scale = slice.iter().map(|v| v * v).sum::<f64>() / window as f64;
        let stat = if var <= 1e-24 * scale {
            if mean == 0.0 {
                Some(0.0)
            } else {
                None
            }
        } else {
            Some((window as f64).sqrt() * mean / var.sqrt())
        };
        window_end.push(end);
        statistic.push(stat);
    }
    Ok(FluctuationResult {
        window_end,
        statistic,
        window,
        critical_value,
        mu,
        alpha,
    })
}
