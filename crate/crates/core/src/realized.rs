//! Realized variance, signed semivariances, realized quarticity and the
//! lagged HAR regressors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Scalar};
use crate::timeseries::{IntradayPanel, BURN_IN};

/// One asset-day of realized measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealizedDay<T> {
    pub rv: T,
    pub rv_pos: T,
    pub rv_neg: T,
    pub rq: T,
    /// Open-to-close log-return (sum of the intraday returns).
    pub ret_oc: T,
}

/// Realized measures of one day of `n >= 2` intraday log-returns.
///
/// The two semivariances are accumulated with compensated summation and
/// `rv` is their sum, so `rv == rv_pos + rv_neg` holds bit for bit.
pub fn realized_day<T: Scalar>(returns: &[T]) -> Result<RealizedDay<T>> {
    if returns.is_empty() {
        return Err(Error::Empty("no intraday returns".into()));
    }
    if returns.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 intraday returns".into()));
    }
    if returns.iter().any(|r| r.is_nan()) {
        return Err(Error::InvalidInput("NaN intraday return".into()));
    }
    let mut pos = CompensatedSum::new();
    let mut neg = CompensatedSum::new();
    let mut quart = CompensatedSum::new();
    let mut ret = CompensatedSum::new();
    for &r in returns {
        let r2 = r * r;
        if r > T::zero() {
            pos.add(r2);
        } else if r < T::zero() {
            neg.add(r2);
        }
        quart.add(r2 * r2);
        ret.add(r);
    }
    let rv_pos = pos.value();
    let rv_neg = neg.value();
    let n = T::from_usize_lossy(returns.len());
    Ok(RealizedDay {
        rv: rv_pos + rv_neg,
        rv_pos,
        rv_neg,
        rq: n / T::lit(3.0) * quart.value(),
        ret_oc: ret.value(),
    })
}

/// Realized measures for every day of a panel.
pub fn realized_panel(panel: &IntradayPanel) -> Result<Vec<RealizedDay<f64>>> {
    panel.returns().iter().map(|r| realized_day(r)).collect()
}

/// Lagged regressors available when forecasting day `t` (windows end at `t - 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagSet<T> {
    pub rvd: T,
    pub rvw: T,
    pub rvm: T,
    pub rq_sqrt: T,
    pub retd_neg: T,
    pub retw_neg: T,
    pub retm_neg: T,
    pub rvd_pos: T,
    pub rvd_neg: T,
}

fn trailing_mean<T: Scalar>(series: &[RealizedDay<T>], t: usize, h: usize, f: impl Fn(&RealizedDay<T>) -> T) -> T {
    let mut acc = CompensatedSum::new();
    for day in &series[t - h..t] {
        acc.add(f(day));
    }
    acc.value() / T::from_usize_lossy(h)
}

/// Lags for day index `t`; requires `22 <= t <= series.len()`.
pub fn build_lags<T: Scalar>(series: &[RealizedDay<T>], t: usize) -> Result<LagSet<T>> {
    if t < BURN_IN {
        return Err(Error::BurnIn { index: t, required: BURN_IN });
    }
    if t > series.len() {
        return Err(Error::InvalidInput(format!("day index {t} beyond series of {} days", series.len())));
    }
    let prev = &series[t - 1];
    let neg = |x: T| x.min(T::zero());
    Ok(LagSet {
        rvd: prev.rv,
        rvw: trailing_mean(series, t, 5, |d| d.rv),
        rvm: trailing_mean(series, t, 22, |d| d.rv),
        rq_sqrt: prev.rq.sqrt(),
        retd_neg: neg(prev.ret_oc),
        retw_neg: neg(trailing_mean(series, t, 5, |d| d.ret_oc)),
        retm_neg: neg(trailing_mean(series, t, 22, |d| d.ret_oc)),
        rvd_pos: prev.rv_pos,
        rvd_neg: prev.rv_neg,
    })
}

/// Dated realized measures of one asset.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedSeries {
    pub asset_id: String,
    pub dates: Vec<String>,
    pub days: Vec<RealizedDay<f64>>,
}

impl RealizedSeries {
    pub fn from_panel(panel: &IntradayPanel) -> Result<Self> {
        Ok(Self { asset_id: panel.asset_id.clone(), dates: panel.days().to_vec(), days: realized_panel(panel)? })
    }

    /// A series known only through its daily RV, e.g. one produced by a HAR
    /// generator. The semivariances split RV evenly, RQ is set to `rv^2`
    /// and returns are zero.
    pub fn from_rv(series: &crate::timeseries::DailySeries) -> Self {
        let days = series
            .values()
            .iter()
            .map(|&rv| RealizedDay { rv, rv_pos: rv / 2.0, rv_neg: rv / 2.0, rq: rv * rv, ret_oc: 0.0 })
            .collect();
        Self { asset_id: series.asset_id.clone(), dates: series.dates().to_vec(), days }
    }

    pub fn rv(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.rv).collect()
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Writes `date,rv,rv_pos,rv_neg,rq,ret_oc`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["date", "rv", "rv_pos", "rv_neg", "rq", "ret_oc"])?;
        for (date, d) in self.dates.iter().zip(&self.days) {
            w.write_record([
                date.clone(),
                format!("{:e}", d.rv),
                format!("{:e}", d.rv_pos),
                format!("{:e}", d.rv_neg),
                format!("{:e}", d.rq),
                format!("{:e}", d.ret_oc),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(asset_id: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if headers != ["date", "rv", "rv_pos", "rv_neg", "rq", "ret_oc"] {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: "expected header date,rv,rv_pos,rv_neg,rq,ret_oc".into(),
            });
        }
        let mut dates = Vec::new();
        let mut days = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let date = rec.get(0).unwrap_or_default().to_string();
            let mut v = [0.0; 5];
            for (k, slot) in v.iter_mut().enumerate() {
                let s = rec.get(k + 1).unwrap_or_default().trim();
                *slot = s.parse().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    message: format!("bad number '{s}' on {date}"),
                })?;
            }
            dates.push(date);
            days.push(RealizedDay { rv: v[0], rv_pos: v[1], rv_neg: v[2], rq: v[3], ret_oc: v[4] });
        }
        // Reuse the date checks of DailySeries.
        crate::timeseries::DailySeries::new("", dates.clone(), days.iter().map(|d| d.rv).collect())?;
        Ok(Self { asset_id: asset_id.into(), dates, days })
    }
}
