//! Core data containers, sample splits and standardization.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{compensated_sum, Scalar};

/// Days lost to the longest (monthly, 22-day) lag window.
pub const BURN_IN: usize = 22;

fn is_iso_date(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter().enumerate().all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
}

fn check_dates(dates: &[String]) -> Result<()> {
    let bad: Vec<String> = dates.iter().filter(|d| !is_iso_date(d)).cloned().collect();
    if !bad.is_empty() {
        return Err(Error::Alignment { message: "dates must be ISO-8601 (YYYY-MM-DD)".into(), dates: bad });
    }
    let unordered: Vec<String> =
        dates.windows(2).filter(|w| w[1] <= w[0]).map(|w| w[1].clone()).collect();
    if !unordered.is_empty() {
        return Err(Error::Alignment {
            message: "dates must be strictly increasing without duplicates".into(),
            dates: unordered,
        });
    }
    Ok(())
}

/// Per-asset grid of intraday log-returns, one row of `n` returns per day.
#[derive(Debug, Clone, PartialEq)]
pub struct IntradayPanel {
    pub asset_id: String,
    days: Vec<String>,
    returns: Vec<Vec<f64>>,
}

impl IntradayPanel {
    pub fn new(asset_id: impl Into<String>, days: Vec<String>, returns: Vec<Vec<f64>>) -> Result<Self> {
        if days.len() != returns.len() {
            return Err(Error::InvalidInput(format!(
                "{} dates but {} return rows",
                days.len(),
                returns.len()
            )));
        }
        check_dates(&days)?;
        if let Some(first) = returns.first() {
            let n = first.len();
            if n < 2 {
                return Err(Error::InvalidInput(format!("need at least 2 intraday returns per day, got {n}")));
            }
            let ragged: Vec<String> = days
                .iter()
                .zip(&returns)
                .filter(|(_, r)| r.len() != n)
                .map(|(d, _)| d.clone())
                .collect();
            if !ragged.is_empty() {
                return Err(Error::Alignment {
                    message: format!("every day must carry exactly {n} intraday returns"),
                    dates: ragged,
                });
            }
            let nan: Vec<String> = days
                .iter()
                .zip(&returns)
                .filter(|(_, r)| r.iter().any(|x| !x.is_finite()))
                .map(|(d, _)| d.clone())
                .collect();
            if !nan.is_empty() {
                return Err(Error::Alignment { message: "non-finite intraday return".into(), dates: nan });
            }
        }
        Ok(Self { asset_id: asset_id.into(), days, returns })
    }

    pub fn days(&self) -> &[String] {
        &self.days
    }

    pub fn returns(&self) -> &[Vec<f64>] {
        &self.returns
    }

    pub fn n_per_day(&self) -> usize {
        self.returns.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Reads a `date,r1,...,rn` file.
    pub fn read_csv(asset_id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("date") || headers.len() < 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: "expected header date,r1,...,rn".into(),
            });
        }
        let mut days = Vec::new();
        let mut returns = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut it = rec.iter();
            let date = it.next().unwrap_or_default().to_string();
            let row = it
                .map(|s| parse_f64(s.trim(), path, &date))
                .collect::<Result<Vec<f64>>>()?;
            days.push(date);
            returns.push(row);
        }
        Self::new(asset_id, days, returns)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["date".to_string()];
        header.extend((1..=self.n_per_day()).map(|j| format!("r{j}")));
        w.write_record(&header)?;
        for (d, r) in self.days.iter().zip(&self.returns) {
            let mut rec = vec![d.clone()];
            rec.extend(r.iter().map(|x| format!("{x:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_f64(s: &str, path: &Path, date: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        message: format!("cannot parse '{s}' as a number on {date}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Alignment { message: "missing or non-finite value".into(), dates: vec![date.into()] });
    }
    Ok(v)
}

/// A dated daily series: realized variance or one raw covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct DailySeries {
    pub asset_id: String,
    dates: Vec<String>,
    values: Vec<f64>,
}

impl DailySeries {
    pub fn new(asset_id: impl Into<String>, dates: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::InvalidInput(format!("{} dates but {} values", dates.len(), values.len())));
        }
        check_dates(&dates)?;
        let missing: Vec<String> =
            dates.iter().zip(&values).filter(|(_, v)| !v.is_finite()).map(|(d, _)| d.clone()).collect();
        if !missing.is_empty() {
            return Err(Error::Alignment { message: "missing values are not imputed".into(), dates: missing });
        }
        Ok(Self { asset_id: asset_id.into(), dates, values })
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
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

    /// Reads a `date,value` file.
    pub fn read_csv(asset_id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || headers.get(0) != Some("date") {
            return Err(Error::Parse { path: path.display().to_string(), message: "expected header date,value".into() });
        }
        let mut dates = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let date = rec.get(0).unwrap_or_default().to_string();
            let v = parse_f64(rec.get(1).unwrap_or_default().trim(), path, &date)?;
            dates.push(date);
            values.push(v);
        }
        Self::new(asset_id, dates, values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "value"])?;
        for (d, v) in self.dates.iter().zip(&self.values) {
            w.write_record([d.as_str(), &format!("{v:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitScheme {
    /// 70% train, 10% validation, 20% test of the post-burn-in sample.
    Percent70_10_20,
    /// Fixed training length, 200 validation days, remainder test.
    FixedTrain(usize),
}

impl SplitScheme {
    pub const FIXED_VALIDATION: usize = 200;

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "70-10-20" | "percent70_10_20" => Ok(Self::Percent70_10_20),
            other => {
                let n = other
                    .strip_prefix("fixed-")
                    .or_else(|| other.strip_prefix("fixed"))
                    .and_then(|n| n.parse::<usize>().ok());
                n.map(Self::FixedTrain)
                    .ok_or_else(|| Error::Config(format!("unknown split scheme '{s}' (use 70-10-20 or fixed-<n>)")))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Percent70_10_20 => "70-10-20".into(),
            Self::FixedTrain(n) => format!("fixed-{n}"),
        }
    }
}

/// Contiguous train / validation / test index ranges over post-burn-in rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl DataSplit {
    pub fn lengths(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    pub fn total(&self) -> usize {
        self.test.end
    }

    /// Same split, expressed in day indices of the original sample.
    pub fn day_ranges(&self) -> [Range<usize>; 3] {
        let shift = |r: &Range<usize>| r.start + BURN_IN..r.end + BURN_IN;
        [shift(&self.train), shift(&self.validation), shift(&self.test)]
    }

    /// Split over `rows` already-burned-in rows.
    pub fn for_rows(rows: usize, scheme: SplitScheme) -> Result<Self> {
        make_split(rows + BURN_IN, scheme)
    }
}

/// Splits `total_days` trading days, discarding the first [`BURN_IN`] days.
pub fn make_split(total_days: usize, scheme: SplitScheme) -> Result<DataSplit> {
    if total_days < 30 {
        return Err(Error::Sizing(format!("{total_days} days is below the minimum of 30")));
    }
    let usable = total_days - BURN_IN;
    let (train, validation) = match scheme {
        SplitScheme::Percent70_10_20 => {
            let train = usable * 7 / 10;
            let test = usable * 2 / 10;
            (train, usable - train - test)
        }
        SplitScheme::FixedTrain(n) => (n, SplitScheme::FIXED_VALIDATION),
    };
    if train == 0 || validation == 0 || train + validation >= usable {
        return Err(Error::Sizing(format!(
            "{total_days} days ({usable} after burn-in) leave no test rows under {}",
            scheme.label()
        )));
    }
    Ok(DataSplit { train: 0..train, validation: train..train + validation, test: train + validation..usable })
}

/// How a column was scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleKind {
    Scaled,
    /// Zero training variance: passed through, std recorded as 1.
    Constant,
    /// Deliberately left unscaled (binary indicators).
    Passthrough,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale<T> {
    pub mean: T,
    pub std: T,
    pub kind: ScaleKind,
}

/// Named design matrix with a target column and a split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    pub column_names: Vec<String>,
    /// Information date of each row (features are measurable on it).
    pub dates: Vec<String>,
    /// First day of each row's target window.
    pub target_dates: Vec<String>,
    data: Vec<T>,
    pub target: Vec<T>,
    pub split: DataSplit,
    pub scales: Option<Vec<ColumnScale<T>>>,
    /// Columns excluded from standardization.
    pub passthrough: Vec<bool>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(column_names: Vec<String>, rows: Vec<Vec<T>>, target: Vec<T>, split: DataSplit) -> Result<Self> {
        let n = rows.len();
        let dates: Vec<String> = (0..n).map(|i| format!("row{i}")).collect();
        Self::with_dates(column_names, dates.clone(), dates, rows, target, split)
    }

    pub fn with_dates(
        column_names: Vec<String>,
        dates: Vec<String>,
        target_dates: Vec<String>,
        rows: Vec<Vec<T>>,
        target: Vec<T>,
        split: DataSplit,
    ) -> Result<Self> {
        let p = column_names.len();
        if rows.len() != target.len() || rows.len() != dates.len() || rows.len() != target_dates.len() {
            return Err(Error::Dimension { expected: rows.len(), got: target.len() });
        }
        if split.total() > rows.len() {
            return Err(Error::Sizing(format!("split covers {} rows, matrix has {}", split.total(), rows.len())));
        }
        let mut data = Vec::with_capacity(rows.len() * p);
        for r in &rows {
            if r.len() != p {
                return Err(Error::Dimension { expected: p, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            passthrough: vec![false; p],
            column_names,
            dates,
            target_dates,
            data,
            target,
            split,
            scales: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.column_names.len()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let p = self.n_cols();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        let p = self.n_cols().max(1);
        self.data.chunks(p).take(self.n_rows())
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.n_rows()).map(|i| self.row(i)[j]).collect()
    }

    pub fn set_passthrough(&mut self, column: &str) {
        if let Some(j) = self.column_names.iter().position(|c| c == column) {
            self.passthrough[j] = true;
        }
    }

    /// Copy restricted to the given columns (by index), same split.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let rows = (0..self.n_rows()).map(|i| cols.iter().map(|&j| self.row(i)[j]).collect()).collect();
        let mut out = Self::with_dates(
            cols.iter().map(|&j| self.column_names[j].clone()).collect(),
            self.dates.clone(),
            self.target_dates.clone(),
            rows,
            self.target.clone(),
            self.split.clone(),
        )
        .expect("consistent selection");
        out.passthrough = cols.iter().map(|&j| self.passthrough[j]).collect();
        out.scales = self.scales.as_ref().map(|s| cols.iter().map(|&j| s[j]).collect());
        out
    }

    /// Copy restricted to a row range, re-splitting as all-train.
    pub fn slice_rows(&self, range: Range<usize>) -> Self {
        let rows = range.clone().map(|i| self.row(i).to_vec()).collect();
        let n = range.len();
        let mut out = Self::with_dates(
            self.column_names.clone(),
            self.dates[range.clone()].to_vec(),
            self.target_dates[range.clone()].to_vec(),
            rows,
            self.target[range].to_vec(),
            DataSplit { train: 0..n, validation: n..n, test: n..n },
        )
        .expect("consistent slice");
        out.passthrough = self.passthrough.clone();
        out.scales = self.scales.clone();
        out
    }

    pub fn with_split(mut self, split: DataSplit) -> Result<Self> {
        if split.total() > self.n_rows() {
            return Err(Error::Sizing(format!("split covers {} rows, matrix has {}", split.total(), self.n_rows())));
        }
        self.split = split;
        Ok(self)
    }

    pub fn train_rows(&self) -> Range<usize> {
        self.split.train.clone()
    }

    /// Maps a standardized row back to raw units.
    pub fn inverse_standardize_row(&self, row: &[T]) -> Vec<T> {
        match &self.scales {
            None => row.to_vec(),
            Some(s) => row.iter().zip(s).map(|(&z, c)| invert(z, c)).collect(),
        }
    }

    pub fn standardize_row(&self, row: &[T]) -> Vec<T> {
        match &self.scales {
            None => row.to_vec(),
            Some(s) => row.iter().zip(s).map(|(&x, c)| apply(x, c)).collect(),
        }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

fn apply<T: Scalar>(x: T, c: &ColumnScale<T>) -> T {
    match c.kind {
        ScaleKind::Scaled => (x - c.mean) / c.std,
        ScaleKind::Constant | ScaleKind::Passthrough => x,
    }
}

fn invert<T: Scalar>(z: T, c: &ColumnScale<T>) -> T {
    match c.kind {
        ScaleKind::Scaled => z * c.std + c.mean,
        ScaleKind::Constant | ScaleKind::Passthrough => z,
    }
}

/// Standardizes every row with the training-row mean and (population) std.
///
/// Constant columns are passed through with std 1 and logged. Already
/// standardized matrices are returned unchanged.
pub fn standardize<T: Scalar>(fm: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>> {
    if fm.scales.is_some() {
        return Ok(fm.clone());
    }
    let train = fm.train_rows();
    if train.is_empty() {
        return Err(Error::Empty("standardization needs training rows".into()));
    }
    let nt = T::from_usize_lossy(train.len());
    let mut scales = Vec::with_capacity(fm.n_cols());
    for j in 0..fm.n_cols() {
        let col: Vec<T> = train.clone().map(|i| fm.row(i)[j]).collect();
        let mean = compensated_sum(col.iter().copied()) / nt;
        if fm.passthrough[j] {
            scales.push(ColumnScale { mean, std: T::one(), kind: ScaleKind::Passthrough });
            continue;
        }
        let var = compensated_sum(col.iter().map(|&x| (x - mean) * (x - mean))) / nt;
        let std = var.sqrt();
        if !(std > T::zero()) || !std.is_finite() {
            log::warn!("column '{}' is constant on training rows; left unscaled", fm.column_names[j]);
            scales.push(ColumnScale { mean, std: T::one(), kind: ScaleKind::Constant });
        } else {
            scales.push(ColumnScale { mean, std, kind: ScaleKind::Scaled });
        }
    }
    let mut out = fm.clone();
    let p = fm.n_cols();
    for (k, x) in out.data_mut().iter_mut().enumerate() {
        *x = apply(*x, &scales[k % p]);
    }
    out.scales = Some(scales);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split3() -> DataSplit {
        DataSplit { train: 0..3, validation: 3..4, test: 4..4 }
    }

    #[test]
    fn paper_split_lengths() {
        let s = make_split(4257, SplitScheme::Percent70_10_20).unwrap();
        assert_eq!(s.lengths(), (2964, 424, 847));
    }

    #[test]
    fn fixed_train_boundary_is_sizing_error() {
        assert!(matches!(make_split(1222, SplitScheme::FixedTrain(1000)), Err(Error::Sizing(_))));
        let s = make_split(2000, SplitScheme::FixedTrain(1000)).unwrap();
        assert_eq!(s.lengths(), (1000, 200, 778));
        assert!(make_split(29, SplitScheme::Percent70_10_20).is_err());
    }

    #[test]
    fn split_scheme_parsing() {
        assert_eq!(SplitScheme::parse("70-10-20").unwrap(), SplitScheme::Percent70_10_20);
        assert_eq!(SplitScheme::parse("fixed-2000").unwrap(), SplitScheme::FixedTrain(2000));
        assert!(SplitScheme::parse("50-50").is_err());
    }

    #[test]
    fn standardize_training_column() {
        let fm = FeatureMatrix::new(
            vec!["a".into(), "c".into()],
            vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0], vec![4.0, 5.0]],
            vec![0.0; 4],
            split3(),
        )
        .unwrap();
        let s = standardize(&fm).unwrap();
        let z: Vec<f64> = s.column(0);
        assert!((z[0] + 1.2247).abs() < 1e-4);
        assert!(z[1].abs() < 1e-12);
        assert!((z[2] - 1.2247).abs() < 1e-4);
        // validation row uses training statistics: (4 - 2) / 0.8165
        assert!((z[3] - 2.4495).abs() < 1e-4);
        assert_eq!(s.column(1), vec![5.0; 4]);
        let scales = s.scales.as_ref().unwrap();
        assert_eq!(scales[1].kind, ScaleKind::Constant);
        assert_eq!(scales[1].std, 1.0);
        let back = s.inverse_standardize_row(s.row(3));
        assert!((back[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ragged_days_rejected() {
        let err = IntradayPanel::new(
            "x",
            vec!["2020-01-01".into(), "2020-01-02".into()],
            vec![vec![0.0, 0.1, 0.2], vec![0.1, 0.2]],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Alignment { .. }));
    }

    #[test]
    fn unordered_dates_rejected() {
        let err = DailySeries::new("x", vec!["2020-01-02".into(), "2020-01-01".into()], vec![1.0, 2.0]);
        assert!(err.is_err());
        let err = DailySeries::new("x", vec!["2020-01-01".into(), "2020-01-02".into()], vec![1.0, f64::NAN]);
        assert!(err.is_err());
    }
}
