//! One-day Value-at-Risk from variance forecasts by filtered historical
//! simulation, the quantile loss, and coverage backtests.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::harness::ForecastTable;
use crate::models::ModelId;
use crate::realized::RealizedSeries;

pub const MIN_RESIDUALS: usize = 250;
pub const MIN_BACKTEST: usize = 100;

/// Returns divided by the square root of same-day realized variance.
/// Days with non-positive RV carry no scale information and are skipped.
pub fn standardized_residuals(returns: &[f64], rv: &[f64]) -> Vec<f64> {
    returns.iter().zip(rv).filter(|(_, v)| **v > 0.0).map(|(r, v)| r / v.sqrt()).collect()
}

/// Lower empirical quantile: the `ceil(alpha N)`-th order statistic.
pub fn lower_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("no residuals".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("VaR level {alpha} must lie in (0, 1)")));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let k = ((alpha * s.len() as f64).ceil() as usize).clamp(1, s.len());
    Ok(s[k - 1])
}

pub fn fhs_var(vol_forecast: f64, residuals: &[f64], alpha: f64) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::Empty("no residuals".into()));
    }
    if residuals.len() < MIN_RESIDUALS {
        return Err(Error::Sizing(format!("FHS needs at least {MIN_RESIDUALS} residuals, got {}", residuals.len())));
    }
    if !(vol_forecast >= 0.0) {
        return Err(Error::InvalidInput(format!("variance forecast {vol_forecast} is negative")));
    }
    Ok(vol_forecast.sqrt() * lower_quantile(residuals, alpha)?)
}

/// `1` when the return falls below the VaR.
pub fn hits(returns: &[f64], var: &[f64]) -> Result<Vec<bool>> {
    if returns.len() != var.len() {
        return Err(Error::Dimension { expected: returns.len(), got: var.len() });
    }
    Ok(returns.iter().zip(var).map(|(r, v)| r < v).collect())
}

/// Mean of `(alpha - d)(r - VaR)`.
pub fn quantile_loss(returns: &[f64], var: &[f64], alpha: f64) -> Result<f64> {
    let d = hits(returns, var)?;
    if d.is_empty() {
        return Err(Error::Empty("no returns".into()));
    }
    let s: f64 = returns.iter().zip(var).zip(&d).map(|((r, v), &h)| (alpha - f64::from(u8::from(h))) * (r - v)).sum();
    Ok(s / d.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n: usize,
    pub hits: usize,
    pub exceedance_rate: f64,
    pub kupiec_lr: f64,
    pub kupiec_p: f64,
    pub independence_lr: f64,
    pub independence_p: f64,
    pub conditional_lr: f64,
    pub conditional_p: f64,
    /// No exceedance (or only exceedances) was observed.
    pub low_power: bool,
}

/// `a ln b`, with `0 ln 0 = 0`.
fn xlny(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.ln()
    }
}

fn chi2_upper(lr: f64, df: f64) -> f64 {
    let d = ChiSquared::new(df).expect("positive degrees of freedom");
    if lr <= 0.0 {
        1.0
    } else {
        d.sf(lr)
    }
}

pub fn kupiec_lr(hits: &[bool], alpha: f64) -> f64 {
    let t1 = hits.iter().filter(|h| **h).count() as f64;
    let t0 = hits.len() as f64 - t1;
    let pi = t1 / (t0 + t1);
    let lr = -2.0 * (xlny(t0, 1.0 - alpha) + xlny(t1, alpha) - xlny(t0, 1.0 - pi) - xlny(t1, pi));
    lr.max(0.0)
}

pub fn independence_lr(hits: &[bool]) -> f64 {
    let mut n = [[0.0f64; 2]; 2];
    for w in hits.windows(2) {
        n[usize::from(w[0])][usize::from(w[1])] += 1.0;
    }
    let (n00, n01, n10, n11) = (n[0][0], n[0][1], n[1][0], n[1][1]);
    let total = n00 + n01 + n10 + n11;
    if total == 0.0 {
        return 0.0;
    }
    let p01 = if n00 + n01 > 0.0 { n01 / (n00 + n01) } else { 0.0 };
    let p11 = if n10 + n11 > 0.0 { n11 / (n10 + n11) } else { 0.0 };
    let p = (n01 + n11) / total;
    let restricted = xlny(n00 + n10, 1.0 - p) + xlny(n01 + n11, p);
    let free = xlny(n00, 1.0 - p01) + xlny(n01, p01) + xlny(n10, 1.0 - p11) + xlny(n11, p11);
    (-2.0 * (restricted - free)).max(0.0)
}

pub fn coverage_tests(hits: &[bool], alpha: f64) -> Result<CoverageReport> {
    if hits.len() < MIN_BACKTEST {
        return Err(Error::Sizing(format!("coverage tests need at least {MIN_BACKTEST} days, got {}", hits.len())));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("VaR level {alpha} must lie in (0, 1)")));
    }
    let n = hits.len();
    let k = hits.iter().filter(|h| **h).count();
    let uc = kupiec_lr(hits, alpha);
    let ind = independence_lr(hits);
    let cc = uc + ind;
    Ok(CoverageReport {
        n,
        hits: k,
        exceedance_rate: k as f64 / n as f64,
        kupiec_lr: uc,
        kupiec_p: chi2_upper(uc, 1.0),
        independence_lr: ind,
        independence_p: chi2_upper(ind, 1.0),
        conditional_lr: cc,
        conditional_p: chi2_upper(cc, 2.0),
        low_power: k == 0 || k == n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarSeries {
    pub asset: String,
    pub model: ModelId,
    pub dates: Vec<String>,
    pub var: Vec<f64>,
    pub returns: Vec<f64>,
    pub loss: f64,
    pub coverage: Option<CoverageReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarReport {
    pub alpha: f64,
    pub models: Vec<ModelId>,
    pub series: Vec<VarSeries>,
}

/// VaR forecasts of every (asset, model) pair of a one-day forecast table.
/// Residuals come from the `window` days preceding each forecast date.
pub fn var_backtest(table: &ForecastTable, assets: &[RealizedSeries], window: usize, alpha: f64) -> Result<VarReport> {
    if table.records.iter().any(|r| r.horizon.days() != 1) {
        return Err(Error::InvalidInput("VaR needs one-day variance forecasts".into()));
    }
    let models = table.models();
    let mut series = Vec::new();
    for asset in table.assets() {
        let realized = assets
            .iter()
            .find(|a| a.asset_id == asset)
            .ok_or_else(|| Error::InvalidInput(format!("no realized data for asset {asset}")))?;
        let index: HashMap<&str, usize> = realized.dates.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
        let rets: Vec<f64> = realized.days.iter().map(|d| d.ret_oc).collect();
        let rv = realized.rv();
        for &model in &models {
            let s = table.series(&asset, model);
            let mut out = VarSeries {
                asset: asset.clone(),
                model,
                dates: Vec::new(),
                var: Vec::new(),
                returns: Vec::new(),
                loss: f64::NAN,
                coverage: None,
            };
            for (date, f) in s.dates.iter().zip(&s.forecast) {
                let Some(f) = f else { continue };
                let i = *index
                    .get(date.as_str())
                    .ok_or_else(|| Error::Alignment { message: format!("{asset}: forecast date not in data"), dates: vec![date.clone()] })?;
                let lo = i.saturating_sub(window);
                let resid = standardized_residuals(&rets[lo..i], &rv[lo..i]);
                match fhs_var(*f, &resid, alpha) {
                    Ok(v) => {
                        out.dates.push(date.clone());
                        out.var.push(v);
                        out.returns.push(rets[i]);
                    }
                    Err(e) => log::warn!("{asset}/{model} on {date}: {e}"),
                }
            }
            if !out.var.is_empty() {
                out.loss = quantile_loss(&out.returns, &out.var, alpha)?;
                let h = hits(&out.returns, &out.var)?;
                out.coverage = coverage_tests(&h, alpha).ok();
            }
            series.push(out);
        }
    }
    Ok(VarReport { alpha, models, series })
}

impl VarReport {
    fn losses_of(&self, asset: &str) -> Vec<f64> {
        self.models
            .iter()
            .map(|m| self.series.iter().find(|s| s.asset == asset && s.model == *m).map_or(f64::NAN, |s| s.loss))
            .collect()
    }

    /// Relative quantile loss (column over row, averaged over assets)
    /// followed by the average exceedance rate and the number of assets
    /// where the unconditional and conditional tests reject at 5%.
    pub fn write_csv(&self, path: impl AsRef<Path>, header_comment: Option<&str>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        if let Some(c) = header_comment {
            writeln!(file, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["row".to_string()];
        header.extend(self.models.iter().map(ModelId::id));
        w.write_record(&header)?;
        let mut asset_names: Vec<&str> = Vec::new();
        for s in &self.series {
            if !asset_names.contains(&s.asset.as_str()) {
                asset_names.push(&s.asset);
            }
        }
        let losses: Vec<Vec<f64>> = asset_names.iter().map(|a| self.losses_of(a)).collect();
        for (i, row) in self.models.iter().enumerate() {
            let mut rec = vec![row.id()];
            for j in 0..self.models.len() {
                let r: Vec<f64> = losses
                    .iter()
                    .filter(|l| l[i] > 0.0 && l[j].is_finite())
                    .map(|l| if i == j { 1.0 } else { l[j] / l[i] })
                    .collect();
                rec.push(if r.is_empty() { "NA".into() } else { (r.iter().sum::<f64>() / r.len() as f64).to_string() });
            }
            w.write_record(&rec)?;
        }
        let summary = |label: &str, f: &dyn Fn(&[&CoverageReport]) -> String| -> Vec<String> {
            let mut rec = vec![label.to_string()];
            for m in &self.models {
                let reps: Vec<&CoverageReport> =
                    self.series.iter().filter(|s| s.model == *m).filter_map(|s| s.coverage.as_ref()).collect();
                rec.push(if reps.is_empty() { "NA".into() } else { f(&reps) });
            }
            rec
        };
        w.write_record(summary("Prb.", &|r| {
            (r.iter().map(|c| c.exceedance_rate).sum::<f64>() / r.len() as f64).to_string()
        }))?;
        w.write_record(summary("Unc.", &|r| r.iter().filter(|c| c.kupiec_p < 0.05).count().to_string()))?;
        w.write_record(summary("Cond.", &|r| r.iter().filter(|c| c.conditional_p < 0.05).count().to_string()))?;
        w.flush()?;
        Ok(())
    }
}
