//! Hodrick-Prescott trend extraction, Christiano-Fitzgerald band-pass
//! cycles, and assembly of the six exogenous feature columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Conventional smoothing parameter for monthly data.
pub const HP_LAMBDA_MONTHLY: f64 = 129_600.0;
/// Shortest cycle period kept by the default band, in months.
pub const CF_LOWER_DEFAULT: f64 = 18.0;
/// Longest cycle period kept by the default band, in months.
pub const CF_UPPER_DEFAULT: f64 = 96.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HpResult {
    pub trend: Vec<f64>,
    pub cycle: Vec<f64>,
    pub lambda: f64,
}

/// Hodrick-Prescott filter.
///
/// The trend minimises `Σ (y - τ)² + λ Σ (Δ²τ)²`, i.e. solves
/// `(I + λ DᵀD) τ = y` with `D` the second-difference operator. Linear
/// sequences are fixed points of that system, so the solve runs on the
/// deviation from the least-squares line; this keeps the answer accurate
/// for very large `λ`, where the matrix is badly conditioned.
pub fn hp_filter(series: &[f64], lambda: f64) -> Result<HpResult> {
    let n = series.len();
    if n < 4 {
        return Err(Error::Domain(format!(
            "HP filter needs at least 4 observations, got {n}"
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "HP smoothing parameter must be finite and non-negative, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(HpResult {
            trend: series.to_vec(),
            cycle: vec![0.0; n],
            lambda,
        });
    }

    let line = least_squares_line(series);
    let deviation: Vec<f64> = series.iter().zip(&line).map(|(y, l)| y - l).collect();
    let band = hp_matrix(n, lambda);
    let smooth_dev = solve_pentadiagonal(band, &deviation);

    let trend: Vec<f64> = line.iter().zip(&smooth_dev).map(|(l, d)| l + d).collect();
    let cycle = series.iter().zip(&trend).map(|(y, t)| y - t).collect();
    Ok(HpResult { trend, cycle, lambda })
}

fn least_squares_line(y: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in y.iter().enumerate() {
        let dt = t as f64 - t_mean;
        sxy += dt * (v - y_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    (0..y.len())
        .map(|t| y_mean + slope * (t as f64 - t_mean))
        .collect()
}

/// The three non-redundant diagonals of `I + λ DᵀD`.
struct SymmetricPentadiagonal {
    main: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
}

fn hp_matrix(n: usize, lambda: f64) -> SymmetricPentadiagonal {
    // DᵀD has rows (1,-2,1), (-2,5,-4,1), (1,-4,6,-4,1) ... mirrored at the end.
    let mut main = vec![6.0; n];
    let mut first = vec![-4.0; n - 1];
    let second = vec![lambda; n - 2];
    main[0] = 1.0;
    main[n - 1] = 1.0;
    main[1] = 5.0;
    main[n - 2] = 5.0;
    first[0] = -2.0;
    first[n - 2] = -2.0;
    for m in &mut main {
        *m = 1.0 + lambda * *m;
    }
    for f in &mut first {
        *f *= lambda;
    }
    SymmetricPentadiagonal { main, first, second }
}

/// Solves a symmetric positive-definite pentadiagonal system by banded
/// LDLᵀ factorisation.
fn solve_pentadiagonal(a: SymmetricPentadiagonal, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let SymmetricPentadiagonal { main, first, second } = a;
    // L has unit diagonal and two sub-diagonals l1, l2.
    let mut d = vec![0.0; n];
    let mut l1 = vec![0.0; n];
    let mut l2 = vec![0.0; n];
    for i in 0..n {
        let mut di = main[i];
        if i >= 1 {
            di -= l1[i] * l1[i] * d[i - 1];
        }
        if i >= 2 {
            di -= l2[i] * l2[i] * d[i - 2];
        }
        d[i] = di;
        if i + 1 < n {
            let mut v = first[i];
            if i >= 1 {
                v -= l2[i + 1] * l1[i] * d[i - 1];
            }
            l1[i + 1] = v / di;
        }
        if i + 2 < n {
            l2[i + 2] = second[i] / di;
        }
    }

    // Forward substitution L z = b, diagonal scaling, back substitution Lᵀ x = z / d.
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut v = rhs[i];
        if i >= 1 {
            v -= l1[i] * z[i - 1];
        }
        if i >= 2 {
            v -= l2[i] * z[i - 2];
        }
        z[i] = v;
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = z[i] / d[i];
        if i + 1 < n {
            v -= l1[i + 1] * x[i + 1];
        }
        if i + 2 < n {
            v -= l2[i + 2] * x[i + 2];
        }
        x[i] = v;
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfResult {
    pub cycle: Vec<f64>,
    pub lower_period: f64,
    pub upper_period: f64,
}

fn check_band(lower: f64, upper: f64) -> Result<()> {
    if !(lower >= 2.0 && lower < upper && upper.is_finite()) {
        return Err(Error::Domain(format!(
            "band-pass periods need 2 <= lower < upper, got ({lower}, {upper})"
        )));
    }
    Ok(())
}

/// Ideal band-pass weights `φ_0..φ_{max_lag}` for periods in `(lower, upper)`.
pub fn cf_ideal_weights(lower: f64, upper: f64, max_lag: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let a = 2.0 * PI / upper;
    let b = 2.0 * PI / lower;
    let mut w = Vec::with_capacity(max_lag + 1);
    w.push((b - a) / PI);
    for j in 1..=max_lag {
        let j = j as f64;
        w.push(((j * b).sin() - (j * a).sin()) / (PI * j));
    }
    w
}

/// Weight applied to each observation when computing the cycle at
/// position `t` (0-based) of a series of length `n`.
///
/// Interior neighbours get `φ_|s-t|`; the first and last observations get
/// the endpoint weight `φ̃_k = -φ_0/2 - Σ_{j<k} φ_j`, which makes every row
/// sum to zero.
pub fn cf_row_weights(t: usize, n: usize, ideal: &[f64]) -> Vec<f64> {
    let tail = |k: usize| -0.5 * ideal[0] - ideal[1..k.max(1)].iter().sum::<f64>();
    let mut w = vec![0.0; n];
    w[t] += ideal[0];
    let last = n - 1;
    for (s, slot) in w.iter_mut().enumerate().skip(t + 1) {
        *slot += if s == last { tail(last - t) } else { ideal[s - t] };
    }
    for s in 0..t {
        w[s] += if s == 0 { tail(t) } else { ideal[t - s] };
    }
    if t == 0 {
        w[0] += tail(0);
    }
    if t == last {
        w[last] += tail(0);
    }
    w
}

/// Christiano-Fitzgerald full-sample asymmetric band-pass filter keeping
/// cycles with periods between `lower` and `upper` months.
pub fn cf_filter(series: &[f64], lower: f64, upper: f64) -> Result<CfResult> {
    let n = series.len();
    if n < 8 {
        return Err(Error::Domain(format!(
            "CF filter needs at least 8 observations, got {n}"
        )));
    }
    check_band(lower, upper)?;
    let ideal = cf_ideal_weights(lower, upper, n);
    let cycle = (0..n)
        .map(|t| {
            cf_row_weights(t, n, &ideal)
                .iter()
                .zip(series)
                .map(|(w, y)| w * y)
                .sum()
        })
        .collect();
    Ok(CfResult {
        cycle,
        lower_period: lower,
        upper_period: upper,
    })
}

/// Settings for the exogenous feature filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSettings {
    pub hp_lambda: f64,
    pub cf_lower: f64,
    pub cf_upper: f64,
}

impl Default for FilterSettings {
    fn default() -> Self {
        Self {
            hp_lambda: HP_LAMBDA_MONTHLY,
            cf_lower: CF_LOWER_DEFAULT,
            cf_upper: CF_UPPER_DEFAULT,
        }
    }
}

/// Column labels, in order.
pub const EXOGENOUS_COLUMNS: [&str; 6] = [
    "hp_trend_cpi",
    "hp_trend_log_epu",
    "hp_trend_gprc",
    "cf_cycle_cpi",
    "cf_cycle_log_epu",
    "cf_cycle_gprc",
];

/// Six aligned feature columns: HP trends of inflation, log-EPU and GPRC,
/// then CF cycles of the same three series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousFeatures {
    columns: Vec<Vec<f64>>,
}

impl ExogenousFeatures {
    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cross-section at time `t`.
    pub fn row(&self, t: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[t]).collect()
    }
}

/// Filters the three input series into the six exogenous columns.
pub fn build_exogenous(
    cpi_inflation: &[f64],
    log_epu: &[f64],
    gprc: &[f64],
    settings: FilterSettings,
) -> Result<ExogenousFeatures> {
    let n = cpi_inflation.len();
    if log_epu.len() != n || gprc.len() != n {
        return Err(Error::Shape(format!(
            "exogenous inputs must be aligned, got lengths {n}, {}, {}",
            log_epu.len(),
            gprc.len()
        )));
    }
    let inputs = [cpi_inflation, log_epu, gprc];
    let mut columns = Vec::with_capacity(6);
    for x in inputs {
        columns.push(hp_filter(x, settings.hp_lambda)?.trend);
    }
    for x in inputs {
        columns.push(cf_filter(x, settings.cf_lower, settings.cf_upper)?.cycle);
    }
    Ok(ExogenousFeatures { columns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_hp_matrix(n: usize, lambda: f64) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(n - 2, n);
        for i in 0..n - 2 {
            d[(i, i)] = 1.0;
            d[(i, i + 1)] = -2.0;
            d[(i, i + 2)] = 1.0;
        }
        DMatrix::identity(n, n) + d.transpose() * d * lambda
    }

    /// Plain Gaussian elimination with partial pivoting.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn hp_lambda_zero_is_identity() {
        let y = [1.0, 4.0, 2.0, 8.0, 5.0];
        let r = hp_filter(&y, 0.0).unwrap();
        assert_eq!(r.trend, y.to_vec());
        assert!(r.cycle.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn hp_linear_input_has_no_cycle() {
        let y: Vec<f64> = (0..50).map(|t| 3.0 - 0.25 * t as f64).collect();
        for lambda in [1.0, 1600.0, HP_LAMBDA_MONTHLY, 1e12] {
            let r = hp_filter(&y, lambda).unwrap();
            assert!(r.cycle.iter().all(|c| c.abs() < 1e-10), "lambda {lambda}");
        }
    }

    #[test]
    fn hp_matches_dense_elimination() {
        let y = [1.0, 3.0, 2.0, 5.0, 4.0];
        let a = dense_hp_matrix(5, 10.0);
        let rows: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| a[(i, j)]).collect()).collect();
        let expected = gauss_solve(rows, y.to_vec());
        let r = hp_filter(&y, 10.0).unwrap();
        for (t, e) in r.trend.iter().zip(&expected) {
            assert!((t - e).abs() < 1e-10);
        }
    }

    #[test]
    fn hp_normal_equations_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..120).map(|t| 0.05 * t as f64 + rng.random_range(-1.0..1.0)).collect();
        for lambda in [10.0, 1600.0, HP_LAMBDA_MONTHLY] {
            let r = hp_filter(&y, lambda).unwrap();
            let a = dense_hp_matrix(y.len(), lambda);
            let res = &a * DVector::from_vec(r.trend.clone()) - DVector::from_vec(y.clone());
            assert!(res.amax() < 1e-8, "lambda {lambda}: {}", res.amax());
            for ((t, c), v) in r.trend.iter().zip(&r.cycle).zip(&y) {
                assert!((t + c - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn hp_huge_lambda_approaches_ols_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<f64> = (0..200)
            .map(|t| 2.0 + 0.1 * t as f64 + rng.random_range(-1.0..1.0))
            .collect();
        let r = hp_filter(&y, 1e12).unwrap();
        let line = least_squares_line(&y);
        let worst = r.trend.iter().zip(&line).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn hp_rejects_bad_input() {
        assert!(hp_filter(&[1.0, 2.0, 3.0], 1.0).is_err());
        assert!(hp_filter(&[1.0, 2.0, 3.0, 4.0], -1.0).is_err());
        assert!(hp_filter(&[1.0, 2.0, 3.0, 4.0], f64::NAN).is_err());
    }

    #[test]
    fn cf_rows_sum_to_zero() {
        let ideal = cf_ideal_weights(18.0, 96.0, 40);
        for t in 0..40 {
            let s: f64 = cf_row_weights(t, 40, &ideal).iter().sum();
            assert!(s.abs() < 1e-12, "row {t}: {s}");
        }
        let r = cf_filter(&[7.5; 60], 18.0, 96.0).unwrap();
        assert!(r.cycle.iter().all(|c| c.abs() < 1e-8));
    }

    #[test]
    fn cf_first_row_by_hand() {
        let ideal = cf_ideal_weights(6.0, 32.0, 10);
        let w = cf_row_weights(0, 10, &ideal);
        assert!((w[0] - ideal[0] / 2.0).abs() < 1e-15);
        for s in 1..9 {
            assert_eq!(w[s], ideal[s]);
        }
        let tail = -0.5 * ideal[0] - ideal[1..9].iter().sum::<f64>();
        assert!((w[9] - tail).abs() < 1e-15);
    }

    fn sinusoid(period: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / period).sin())
            .collect()
    }

    /// Gain of the weight row at `t` for a sinusoid of the given period.
    fn frequency_response(t: usize, n: usize, period: f64) -> f64 {
        let ideal = cf_ideal_weights(18.0, 96.0, n);
        let w = cf_row_weights(t, n, &ideal);
        let omega = 2.0 * std::f64::consts::PI / period;
        let (mut re, mut im) = (0.0, 0.0);
        for (s, x) in w.iter().enumerate() {
            let lag = s as f64 - t as f64;
            re += x * (omega * lag).cos();
            im += x * (omega * lag).sin();
        }
        re.hypot(im)
    }

    fn mid_amplitude(cycle: &[f64]) -> f64 {
        let n = cycle.len();
        cycle[n / 2 - 48..n / 2 + 48].iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn cf_keeps_business_cycle_periods() {
        let gain = frequency_response(240, 480, 24.0);
        assert!((gain - 1.0).abs() < 0.05, "gain {gain}");
        let r = cf_filter(&sinusoid(24.0, 480), 18.0, 96.0).unwrap();
        let amp = mid_amplitude(&r.cycle);
        assert!((amp - 1.0).abs() < 0.05, "amplitude {amp}");
    }

    #[test]
    fn cf_removes_short_cycles() {
        let gain = frequency_response(240, 480, 4.0);
        assert!(gain < 0.1, "gain {gain}");
        let r = cf_filter(&sinusoid(4.0, 480), 18.0, 96.0).unwrap();
        assert!(mid_amplitude(&r.cycle) < 0.1);
    }

    #[test]
    fn cf_rejects_bad_band() {
        let y = [0.0; 16];
        assert!(cf_filter(&y, 1.5, 10.0).is_err());
        assert!(cf_filter(&y, 10.0, 10.0).is_err());
        assert!(cf_filter(&y[..7], 2.0, 10.0).is_err());
    }

    #[test]
    fn exogenous_columns_reproduce_standalone_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut noise = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (a, b, c) = (noise(60), noise(60), noise(60));
        let s = FilterSettings::default();
        let x = build_exogenous(&a, &b, &c, s).unwrap();
        assert_eq!(x.width(), 6);
        assert_eq!(x.len(), 60);
        for (i, input) in [&a, &b, &c].into_iter().enumerate() {
            assert_eq!(x.columns()[i], hp_filter(input, s.hp_lambda).unwrap().trend);
            assert_eq!(x.columns()[i + 3], cf_filter(input, s.cf_lower, s.cf_upper).unwrap().cycle);
        }
    }

    #[test]
    fn exogenous_constants() {
        let x = build_exogenous(&[2.0; 30], &[1.5; 30], &[90.0; 30], FilterSettings::default()).unwrap();
        for (col, level) in x.columns()[..3].iter().zip([2.0, 1.5, 90.0]) {
            assert!(col.iter().all(|v| (v - level).abs() < 1e-8));
        }
        assert!(x.columns()[3..].iter().flatten().all(|v| v.abs() < 1e-8));
        assert!(build_exogenous(&[1.0; 30], &[1.0; 29], &[1.0; 30], FilterSettings::default()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cf_is_linear(
                x in prop::collection::vec(-10.0f64..10.0, 24),
                y in prop::collection::vec(-10.0f64..10.0, 24),
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
            ) {
                let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
                let fx = cf_filter(&x, 6.0, 20.0).unwrap().cycle;
                let fy = cf_filter(&y, 6.0, 20.0).unwrap().cycle;
                let fm = cf_filter(&mix, 6.0, 20.0).unwrap().cycle;
                for i in 0..24 {
                    prop_assert!((fm[i] - (a * fx[i] + b * fy[i])).abs() < 1e-10);
                }
            }

            #[test]
            fn hp_trend_plus_cycle_is_input(
                y in prop::collection::vec(-100.0f64..100.0, 4..60),
                lambda in 0.0f64..1e6,
            ) {
                let r = hp_filter(&y, lambda).unwrap();
                for ((t, c), v) in r.trend.iter().zip(&r.cycle).zip(&y) {
                    prop_assert!((t + c - v).abs() <= 1e-12 * v.abs().max(1.0));
                }
            }
        }
    }
}
