//! Monthly time series, CSV ingestion, the inflation and EPU transforms,
//! train/test splitting and rolling-origin folds.

use std::fmt;
use std::io::Read;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A calendar month. Ordering is chronological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    year: i32,
    month: u32,
}

impl YearMonth {
    /// Returns `None` unless `1 <= month <= 12`.
    pub fn new(year: i32, month: u32) -> Option<Self> {
        (1..=12).contains(&month).then_some(Self { year, month })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn month(self) -> u32 {
        self.month
    }

    /// Months since year 0, January.
    fn ordinal(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }

    fn from_ordinal(ordinal: i64) -> Self {
        Self {
            year: ordinal.div_euclid(12) as i32,
            month: ordinal.rem_euclid(12) as u32 + 1,
        }
    }

    pub fn add_months(self, months: i64) -> Self {
        Self::from_ordinal(self.ordinal() + months)
    }

    /// Signed number of months from `self` to `later`.
    pub fn months_until(self, later: YearMonth) -> i64 {
        later.ordinal() - self.ordinal()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = String;

    /// Accepts `YYYY-MM` and `YYYY-MM-DD`; the day is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let mut parts = s.split('-');
        let (Some(y), Some(m)) = (parts.next(), parts.next()) else {
            return Err(format!("cannot parse date `{s}` (expected YYYY-MM)"));
        };
        if let Some(day) = parts.next() {
            if day.len() != 2 || day.parse::<u32>().map_or(true, |d| d == 0 || d > 31) {
                return Err(format!("cannot parse day in `{s}`"));
            }
        }
        if parts.next().is_some() || y.len() != 4 || m.len() != 2 {
            return Err(format!("cannot parse date `{s}` (expected YYYY-MM)"));
        }
        let year: i32 = y.parse().map_err(|_| format!("bad year in `{s}`"))?;
        let month: u32 = m.parse().map_err(|_| format!("bad month in `{s}`"))?;
        YearMonth::new(year, month).ok_or_else(|| format!("month out of range in `{s}`"))
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A dense, equally spaced monthly series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    name: String,
    start: YearMonth,
    values: Vec<f64>,
}

impl TimeSeries {
    /// Values must be non-empty and finite.
    pub fn new(name: impl Into<String>, start: YearMonth, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("time series must not be empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value at position {i} ({})",
                start.add_months(i as i64)
            )));
        }
        Ok(Self {
            name: name.into(),
            start,
            values,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn start(&self) -> YearMonth {
        self.start
    }

    /// Last month covered.
    pub fn end(&self) -> YearMonth {
        self.month_at(self.values.len() - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn month_at(&self, index: usize) -> YearMonth {
        self.start.add_months(index as i64)
    }

    pub fn index_of(&self, month: YearMonth) -> Option<usize> {
        let offset = self.start.months_until(month);
        (0..self.values.len() as i64)
            .contains(&offset)
            .then_some(offset as usize)
    }

    /// Sub-series over an index range.
    pub fn slice(&self, range: Range<usize>) -> Result<TimeSeries> {
        if range.start >= range.end || range.end > self.values.len() {
            return Err(Error::Bounds(format!(
                "slice {range:?} outside series of length {}",
                self.values.len()
            )));
        }
        Ok(TimeSeries {
            name: self.name.clone(),
            start: self.month_at(range.start),
            values: self.values[range].to_vec(),
        })
    }

    /// Same calendar position, new values (same length).
    pub fn with_values(&self, values: Vec<f64>) -> Result<TimeSeries> {
        if values.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                self.values.len(),
                values.len()
            )));
        }
        TimeSeries::new(self.name.clone(), self.start, values)
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Restricts `self` to the months it shares with `other`.
    pub fn overlap(&self, other: &TimeSeries) -> Result<TimeSeries> {
        let start = self.start.max(other.start);
        let end = self.end().min(other.end());
        if start > end {
            return Err(Error::Shape(format!(
                "`{}` and `{}` do not overlap",
                self.name, other.name
            )));
        }
        let from = self.index_of(start).expect("start inside series");
        let to = self.index_of(end).expect("end inside series");
        self.slice(from..to + 1)
    }
}

/// Reads a monthly series from a headed CSV file.
pub fn load_csv(path: impl AsRef<Path>, date_column: &str, value_column: &str) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, &name, date_column, value_column)
}

/// Like [`load_csv`], from any reader. Row numbers in errors count the
/// header as row 1.
pub fn read_csv<R: Read>(
    reader: R,
    name: &str,
    date_column: &str,
    value_column: &str,
) -> Result<TimeSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |wanted: &str| {
        headers.iter().position(|h| h == wanted).ok_or_else(|| Error::Format {
            row: 1,
            message: format!("missing column `{wanted}`"),
        })
    };
    let date_idx = column(date_column)?;
    let value_idx = column(value_column)?;

    let mut rows: Vec<(YearMonth, f64, usize)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let date: YearMonth = field(date_idx)
            .parse()
            .map_err(|message| Error::Format { row, message })?;
        let raw = field(value_idx);
        let value: f64 = raw.parse().map_err(|_| Error::Format {
            row,
            message: format!("cannot parse value `{raw}`"),
        })?;
        if !value.is_finite() {
            return Err(Error::Format {
                row,
                message: format!("non-finite value `{raw}`"),
            });
        }
        rows.push((date, value, row));
    }
    if rows.is_empty() {
        return Err(Error::Format {
            row: 1,
            message: "no data rows".into(),
        });
    }
    rows.sort_by_key(|r| r.0);
    for pair in rows.windows(2) {
        let (prev, next) = (pair[0].0, pair[1].0);
        match prev.months_until(next) {
            1 => {}
            0 => {
                return Err(Error::Format {
                    row: pair[1].2,
                    message: format!("duplicate month {next}"),
                })
            }
            _ => {
                return Err(Error::Continuity {
                    missing: prev.add_months(1),
                })
            }
        }
    }
    let start = rows[0].0;
    TimeSeries::new(name, start, rows.into_iter().map(|r| r.1).collect())
}

/// Year-on-year percentage change of a price index:
/// `100 (P_t - P_{t-12}) / P_{t-12}`.
pub fn yoy_inflation(cpi_index: &TimeSeries) -> Result<TimeSeries> {
    let v = cpi_index.values();
    if v.len() < 13 {
        return Err(Error::Bounds(format!(
            "year-on-year change needs at least 13 months, got {}",
            v.len()
        )));
    }
    if let Some(i) = v.iter().position(|&x| x <= 0.0) {
        return Err(Error::Domain(format!(
            "price index must be positive, got {} at {}",
            v[i],
            cpi_index.month_at(i)
        )));
    }
    let values = v[12..]
        .iter()
        .zip(v)
        .map(|(now, year_ago)| 100.0 * (now - year_ago) / year_ago)
        .collect();
    TimeSeries::new(cpi_index.name(), cpi_index.month_at(12), values)
}

/// Element-wise base-10 logarithm.
pub fn log_transform(series: &TimeSeries) -> Result<TimeSeries> {
    if let Some(i) = series.values().iter().position(|&x| x <= 0.0) {
        return Err(Error::Domain(format!(
            "log transform needs positive values, got {} at {}",
            series.values()[i],
            series.month_at(i)
        )));
    }
    series.with_values(series.values().iter().map(|x| x.log10()).collect())
}

/// Training window end (inclusive) and the number of test months after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: YearMonth,
    pub horizon: usize,
}

/// Splits into a training series ending at `train_end` and a test series of
/// the following `horizon` months.
pub fn split(series: &TimeSeries, spec: SplitSpec) -> Result<(TimeSeries, TimeSeries)> {
    if spec.horizon == 0 {
        return Err(Error::Bounds("horizon must be positive".into()));
    }
    let end = series.index_of(spec.train_end).ok_or_else(|| {
        Error::Bounds(format!(
            "train end {} outside {}..{}",
            spec.train_end,
            series.start(),
            series.end()
        ))
    })?;
    let test_end = end + spec.horizon;
    if test_end >= series.len() {
        return Err(Error::Bounds(format!(
            "train end {} plus {} months runs past {}",
            spec.train_end,
            spec.horizon,
            series.end()
        )));
    }
    Ok((series.slice(0..end + 1)?, series.slice(end + 1..test_end + 1)?))
}

/// One cross-validation fold as index ranges into the training series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Range<usize>,
    pub validation: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSet {
    folds: Vec<Fold>,
}

impl FoldSet {
    pub fn folds(&self) -> &[Fold] {
        &self.folds
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }
}

/// Expanding-window folds. The first training window has
/// `len - n_folds * horizon` points; every later fold adds `horizon` points,
/// and the last validation window ends at the end of the series.
pub fn rolling_origin_folds(len: usize, n_folds: usize, horizon: usize) -> Result<FoldSet> {
    if n_folds == 0 || horizon == 0 {
        return Err(Error::Bounds(
            "fold count and horizon must be positive".into(),
        ));
    }
    let needed = n_folds * horizon;
    if len <= needed {
        return Err(Error::Bounds(format!(
            "{n_folds} folds of {horizon} months need more than {needed} points, got {len}"
        )));
    }
    let first = len - needed;
    let folds = (0..n_folds)
        .map(|i| {
            let end = first + i * horizon;
            Fold {
                train: 0..end,
                validation: end..end + horizon,
            }
        })
        .collect();
    Ok(FoldSet { folds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ym(y: i32, m: u32) -> YearMonth {
        YearMonth::new(y, m).unwrap()
    }

    fn monthly(start: YearMonth, values: Vec<f64>) -> TimeSeries {
        TimeSeries::new("s", start, values).unwrap()
    }

    #[test]
    fn parses_both_date_forms() {
        assert_eq!("2003-01".parse::<YearMonth>().unwrap(), ym(2003, 1));
        assert_eq!("2003-01-15".parse::<YearMonth>().unwrap(), ym(2003, 1));
        assert!("2003-13".parse::<YearMonth>().is_err());
        assert!("2003/01".parse::<YearMonth>().is_err());
        assert!("03-01".parse::<YearMonth>().is_err());
    }

    #[test]
    fn month_arithmetic_wraps_years() {
        assert_eq!(ym(2019, 11).add_months(2), ym(2020, 1));
        assert_eq!(ym(2020, 1).add_months(-1), ym(2019, 12));
        assert_eq!(ym(2003, 1).months_until(ym(2021, 11)), 226);
    }

    #[test]
    fn reads_simple_csv() {
        let data = "date,value\n2003-01,100.0\n2003-02,101.0\n";
        let s = read_csv(data.as_bytes(), "cpi", "date", "value").unwrap();
        assert_eq!(s.start(), ym(2003, 1));
        assert_eq!(s.values(), &[100.0, 101.0]);
    }

    #[test]
    fn sorts_unordered_rows() {
        let data = "date,value\n2003-02,2\n2003-01,1\n";
        let s = read_csv(data.as_bytes(), "x", "date", "value").unwrap();
        assert_eq!(s.values(), &[1.0, 2.0]);
    }

    #[test]
    fn gap_is_a_continuity_error() {
        let data = "date,value\n2003-01,1.0\n2003-03,2.0\n";
        let err = read_csv(data.as_bytes(), "x", "date", "value").unwrap_err();
        match err {
            Error::Continuity { missing } => assert_eq!(missing, ym(2003, 2)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_text(data).contains("2003-02"));
    }

    fn err_text(data: &str) -> String {
        read_csv(data.as_bytes(), "x", "date", "value")
            .unwrap_err()
            .to_string()
    }

    #[test]
    fn bad_value_reports_row() {
        let data = "date,value\n2003-01,1.0\n2003-02,abc\n";
        match read_csv(data.as_bytes(), "x", "date", "value").unwrap_err() {
            Error::Format { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
        let data = "date,value\nJan 2003,1.0\n";
        match read_csv(data.as_bytes(), "x", "date", "value").unwrap_err() {
            Error::Format { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_index_has_zero_inflation() {
        let s = monthly(ym(2002, 1), vec![100.0; 24]);
        let pi = yoy_inflation(&s).unwrap();
        assert_eq!(pi.len(), 12);
        assert_eq!(pi.start(), ym(2003, 1));
        assert!(pi.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn yoy_by_hand() {
        let mut v = vec![100.0; 13];
        v[12] = 105.0;
        let pi = yoy_inflation(&monthly(ym(2002, 1), v)).unwrap();
        assert_eq!(pi.start(), ym(2003, 1));
        assert!((pi.values()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn one_percent_monthly_growth() {
        let v: Vec<f64> = (0..24).map(|i| 100.0 * 1.01f64.powi(i)).collect();
        let pi = yoy_inflation(&monthly(ym(2000, 1), v)).unwrap();
        let expected = 100.0 * (1.01f64.powi(12) - 1.0);
        assert!((expected - 12.682503013196972).abs() < 1e-12);
        for x in pi.values() {
            assert!((x - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn yoy_rejects_non_positive_and_short() {
        let mut v = vec![100.0; 13];
        v[3] = 0.0;
        assert!(matches!(
            yoy_inflation(&monthly(ym(2000, 1), v)),
            Err(Error::Domain(_))
        ));
        assert!(yoy_inflation(&monthly(ym(2000, 1), vec![1.0; 12])).is_err());
    }

    #[test]
    fn log_is_base_ten() {
        let s = log_transform(&monthly(ym(2000, 1), vec![1.0, 10.0, 100.0])).unwrap();
        assert_eq!(s.values(), &[0.0, 1.0, 2.0]);
        let epu = log_transform(&monthly(ym(2000, 1), vec![144.5])).unwrap();
        assert!((epu.values()[0] - 2.16).abs() < 0.005);
        assert!(log_transform(&monthly(ym(2000, 1), vec![1.0, -1.0])).is_err());
    }

    fn paper_window() -> TimeSeries {
        monthly(ym(2003, 1), (0..227).map(f64::from).collect())
    }

    #[test]
    fn split_lengths_match_the_study_windows() {
        let s = paper_window();
        assert_eq!(s.end(), ym(2021, 11));
        let (train, test) = split(&s, SplitSpec { train_end: ym(2019, 11), horizon: 24 }).unwrap();
        assert_eq!((train.len(), test.len()), (203, 24));
        assert_eq!(test.start(), ym(2019, 12));
        let (train, test) = split(&s, SplitSpec { train_end: ym(2020, 11), horizon: 12 }).unwrap();
        assert_eq!((train.len(), test.len()), (215, 12));
    }

    #[test]
    fn split_out_of_range() {
        let s = paper_window();
        assert!(matches!(
            split(&s, SplitSpec { train_end: ym(2020, 11), horizon: 13 }),
            Err(Error::Bounds(_))
        ));
        assert!(split(&s, SplitSpec { train_end: ym(2002, 11), horizon: 1 }).is_err());
    }

    #[test]
    fn folds_by_enumeration() {
        let set = rolling_origin_folds(60, 2, 12).unwrap();
        assert_eq!(
            set.folds(),
            &[
                Fold { train: 0..36, validation: 36..48 },
                Fold { train: 0..48, validation: 48..60 },
            ]
        );
        let one = rolling_origin_folds(30, 1, 12).unwrap();
        assert_eq!(one.folds()[0].validation, 18..30);
        assert!(matches!(rolling_origin_folds(13, 5, 12), Err(Error::Bounds(_))));
    }

    #[test]
    fn overlap_trims_to_common_months() {
        let a = monthly(ym(2003, 1), vec![1.0; 10]);
        let b = monthly(ym(2003, 4), vec![2.0; 10]);
        let c = a.overlap(&b).unwrap();
        assert_eq!(c.start(), ym(2003, 4));
        assert_eq!(c.len(), 7);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn split_concatenation_reproduces_range(
                values in prop::collection::vec(-1e3f64..1e3, 20..80),
                cut in 1usize..15,
                horizon in 1usize..5,
            ) {
                let s = monthly(ym(2001, 3), values.clone());
                let train_end = s.month_at(cut);
                let (train, test) = split(&s, SplitSpec { train_end, horizon }).unwrap();
                let joined: Vec<f64> = train.values().iter().chain(test.values()).copied().collect();
                prop_assert_eq!(&joined[..], &values[..cut + 1 + horizon]);
            }

            #[test]
            fn folds_are_chronological(len in 2usize..300, n in 1usize..6, h in 1usize..24) {
                if let Ok(set) = rolling_origin_folds(len, n, h) {
                    for f in set.folds() {
                        prop_assert!(f.train.end <= f.validation.start);
                        prop_assert!(f.train.end > 0);
                        prop_assert_eq!(f.validation.len(), h);
                    }
                    prop_assert_eq!(set.folds().last().unwrap().validation.end, len);
                }
            }

            #[test]
            fn yoy_on_noisy_growth_is_finite(noise in prop::collection::vec(-0.005f64..0.005, 36)) {
                let mut level = 100.0;
                let v: Vec<f64> = noise.iter().map(|e| { level *= 1.01 + e; level }).collect();
                let pi = yoy_inflation(&monthly(ym(2000, 1), v)).unwrap();
                prop_assert!(pi.values().iter().all(|x| x.is_finite()));
            }

            #[test]
            fn log_is_strictly_monotone(a in 1e-6f64..1e6, b in 1e-6f64..1e6) {
                prop_assume!(a < b);
                let s = log_transform(&monthly(ym(2000, 1), vec![a, b])).unwrap();
                prop_assert!(s.values()[0] < s.values()[1]);
            }
        }
    }
}
