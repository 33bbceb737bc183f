//! Assembly of the M_HAR / M_ALL design matrices and horizon targets.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::realized::{build_lags, RealizedSeries};
use crate::scalar::compensated_sum;
use crate::timeseries::{standardize, DailySeries, DataSplit, FeatureMatrix, SplitScheme, BURN_IN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Covariate {
    Rvd,
    Rvw,
    Rvm,
    Iv,
    Ea,
    Vix,
    Epu,
    Us3m,
    Hsi,
    M1w,
    DollarVol,
    Ads,
}

impl Covariate {
    /// The nine exogenous covariates appended in M_ALL, in table order.
    pub const EXOGENOUS: [Covariate; 9] = [
        Covariate::Iv,
        Covariate::Ea,
        Covariate::Vix,
        Covariate::Epu,
        Covariate::Us3m,
        Covariate::Hsi,
        Covariate::M1w,
        Covariate::DollarVol,
        Covariate::Ads,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Covariate::Rvd => "RVD",
            Covariate::Rvw => "RVW",
            Covariate::Rvm => "RVM",
            Covariate::Iv => "IV",
            Covariate::Ea => "EA",
            Covariate::Vix => "VIX",
            Covariate::Epu => "EPU",
            Covariate::Us3m => "US3M",
            Covariate::Hsi => "HSI",
            Covariate::M1w => "M1W",
            Covariate::DollarVol => "$VOL",
            Covariate::Ads => "ADS",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            Covariate::Rvd,
            Covariate::Rvw,
            Covariate::Rvm,
            Covariate::Iv,
            Covariate::Ea,
            Covariate::Vix,
            Covariate::Epu,
            Covariate::Us3m,
            Covariate::Hsi,
            Covariate::M1w,
            Covariate::DollarVol,
            Covariate::Ads,
        ]
        .into_iter()
        .find(|c| c.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("DVOL") && *c == Covariate::DollarVol))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    None,
    FirstDifference,
    /// First difference of the log.
    DLog,
    Log,
}

impl Transform {
    fn suffix(&self) -> &'static str {
        match self {
            Transform::None => "",
            Transform::FirstDifference => "_diff",
            Transform::DLog => "_dlog",
            Transform::Log => "_log",
        }
    }

    fn apply(&self, values: &[f64]) -> Vec<f64> {
        let lag = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
            std::iter::once(f64::NAN).chain(values.windows(2).map(|w| f(w[1]) - f(w[0]))).collect()
        };
        let ln = |x: f64| if x > 0.0 { x.ln() } else { f64::NAN };
        match self {
            Transform::None => values.to_vec(),
            Transform::FirstDifference => lag(&|x| x),
            Transform::DLog => lag(&ln),
            Transform::Log => values.iter().map(|&x| ln(x)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateSource {
    Csv(std::path::PathBuf),
    Realized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub covariate: Covariate,
    pub transform: Transform,
    pub source: CovariateSource,
}

impl CovariateSpec {
    /// Default transform of a covariate; VIX and IV are logged for LogHAR.
    pub fn default_for(covariate: Covariate, log_model: bool) -> Self {
        let transform = match covariate {
            Covariate::Us3m => Transform::FirstDifference,
            Covariate::DollarVol => Transform::DLog,
            Covariate::Iv | Covariate::Vix if log_model => Transform::Log,
            _ => Transform::None,
        };
        let source = match covariate {
            Covariate::Rvd | Covariate::Rvw | Covariate::Rvm => CovariateSource::Realized,
            c => CovariateSource::Csv(format!("{}.csv", c.name()).into()),
        };
        Self { covariate, transform, source }
    }

    pub fn column_name(&self) -> String {
        format!("{}{}", self.covariate.name(), self.transform.suffix())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Horizon {
    Day,
    Week,
    Month,
}

impl Horizon {
    pub fn days(&self) -> usize {
        match self {
            Horizon::Day => 1,
            Horizon::Week => 5,
            Horizon::Month => 22,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "day" | "1" | "d" => Ok(Horizon::Day),
            "week" | "5" | "w" => Ok(Horizon::Week),
            "month" | "22" | "m" => Ok(Horizon::Month),
            _ => Err(Error::Config(format!("unknown horizon '{s}' (day, week, month)"))),
        }
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Horizon::Day => "day",
            Horizon::Week => "week",
            Horizon::Month => "month",
        })
    }
}

/// Target: mean RV over `t+1..=t+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub horizon: Horizon,
}

pub fn build_target(rv: &[f64], spec: TargetSpec, t: usize) -> Result<f64> {
    let h = spec.horizon.days();
    if t + h >= rv.len() {
        return Err(Error::Truncation { index: t, horizon: h });
    }
    Ok(compensated_sum(rv[t + 1..=t + h].iter().copied()) / h as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    MHar,
    MAll,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "m_har" | "har" => Ok(Self::MHar),
            "m_all" | "all" => Ok(Self::MAll),
            _ => Err(Error::Config(format!("unknown dataset '{s}' (m_har, m_all)"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MHar => "m_har",
            Self::MAll => "m_all",
        })
    }
}

/// Which model-specific regressors a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureSet {
    Har,
    LogHar,
    LevHar,
    Shar,
    Harq,
}

impl FeatureSet {
    fn own_columns(&self) -> &'static [&'static str] {
        match self {
            FeatureSet::Har => &["RVD", "RVW", "RVM"],
            FeatureSet::LogHar => &["log_RVD", "log_RVW", "log_RVM"],
            FeatureSet::LevHar => &["RVD", "RVW", "RVM", "RETD_NEG", "RETW_NEG", "RETM_NEG"],
            FeatureSet::Shar => &["RVD_NEG", "RVD_POS", "RVW", "RVM"],
            FeatureSet::Harq => &["RVD", "RQ_SQRT_RVD", "RVW", "RVM"],
        }
    }

    pub fn is_log(&self) -> bool {
        matches!(self, FeatureSet::LogHar)
    }
}

/// Number of feature columns for a (dataset, model family) pair.
pub fn column_count(dataset: DatasetKind, set: FeatureSet) -> usize {
    set.own_columns().len()
        + match dataset {
            DatasetKind::MHar => 0,
            DatasetKind::MAll => Covariate::EXOGENOUS.len(),
        }
}

/// Realized measures plus raw covariates of one asset.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetData {
    pub realized: RealizedSeries,
    pub covariates: BTreeMap<String, DailySeries>,
}

impl AssetData {
    pub fn id(&self) -> &str {
        &self.realized.asset_id
    }

    /// Loads covariate CSVs from `dir/<asset>/<NAME>.csv`, falling back to
    /// `dir/<NAME>.csv` for shared (macro) series.
    pub fn load_covariates(realized: RealizedSeries, dir: &Path) -> Result<Self> {
        let mut covariates = BTreeMap::new();
        for c in Covariate::EXOGENOUS {
            let own = dir.join(&realized.asset_id).join(format!("{}.csv", c.name()));
            let shared = dir.join(format!("{}.csv", c.name()));
            let path = if own.exists() { own } else { shared };
            if path.exists() {
                covariates.insert(c.name().to_string(), DailySeries::read_csv(c.name(), &path)?);
            }
        }
        Ok(Self { realized, covariates })
    }
}

/// A model-ready design: standardized features plus the level-scale target.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub fm: FeatureMatrix<f64>,
    /// The matrix target is `ln` of the level target.
    pub log_target: bool,
    /// Target in variance units (equals `fm.target` unless `log_target`).
    pub level_target: Vec<f64>,
    pub horizon: Horizon,
    /// Information dates of rows dropped for undefined transforms.
    pub dropped: Vec<String>,
}

fn aligned(asset: &AssetData, c: Covariate) -> Result<Vec<f64>> {
    let name = c.name();
    let series = asset.covariates.get(name).ok_or_else(|| Error::Alignment {
        message: format!("asset {} has no {name} covariate", asset.id()),
        dates: Vec::new(),
    })?;
    let index: BTreeMap<&str, f64> =
        series.dates().iter().map(String::as_str).zip(series.values().iter().copied()).collect();
    let mut out = Vec::with_capacity(asset.realized.len());
    let mut missing = Vec::new();
    for d in &asset.realized.dates {
        match index.get(d.as_str()) {
            Some(&v) => out.push(v),
            None => missing.push(d.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Alignment { message: format!("{name} misses asset dates of {}", asset.id()), dates: missing });
    }
    Ok(out)
}

/// Builds the design matrix for one asset.
///
/// Row `r` has information date `d = r + 21`; its lags cover days `d-21..=d`
/// and its target is the mean RV over `d+1..=d+h`. Standardization uses the
/// training rows of the split produced by `scheme`.
pub fn build_features(
    asset: &AssetData,
    dataset: DatasetKind,
    set: FeatureSet,
    target: TargetSpec,
    scheme: SplitScheme,
) -> Result<Design> {
    let days = &asset.realized.days;
    let dates = &asset.realized.dates;
    let h = target.horizon.days();
    let n_days = days.len();
    if n_days < BURN_IN + h + 1 {
        return Err(Error::Sizing(format!("{n_days} days cannot cover the burn-in and a {h}-day target")));
    }
    let rv: Vec<f64> = days.iter().map(|d| d.rv).collect();

    let exo: Vec<(CovariateSpec, Vec<f64>)> = match dataset {
        DatasetKind::MHar => Vec::new(),
        DatasetKind::MAll => Covariate::EXOGENOUS
            .iter()
            .map(|&c| {
                let spec = CovariateSpec::default_for(c, set.is_log());
                aligned(asset, c).map(|raw| {
                    let t = spec.transform.apply(&raw);
                    (spec, t)
                })
            })
            .collect::<Result<_>>()?,
    };

    let mut names: Vec<String> = set.own_columns().iter().map(|s| s.to_string()).collect();
    names.extend(exo.iter().map(|(s, _)| s.column_name()));

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut info_dates = Vec::new();
    let mut target_dates = Vec::new();
    let mut dropped = Vec::new();
    for d in (BURN_IN - 1)..(n_days - h) {
        let lags = build_lags(days, d + 1)?;
        let mut row: Vec<f64> = match set {
            FeatureSet::Har => vec![lags.rvd, lags.rvw, lags.rvm],
            FeatureSet::LogHar => {
                let ln = |x: f64| if x > 0.0 { x.ln() } else { f64::NAN };
                vec![ln(lags.rvd), ln(lags.rvw), ln(lags.rvm)]
            }
            FeatureSet::LevHar => {
                vec![lags.rvd, lags.rvw, lags.rvm, lags.retd_neg, lags.retw_neg, lags.retm_neg]
            }
            FeatureSet::Shar => vec![lags.rvd_neg, lags.rvd_pos, lags.rvw, lags.rvm],
            FeatureSet::Harq => vec![lags.rvd, lags.rq_sqrt * lags.rvd, lags.rvw, lags.rvm],
        };
        row.extend(exo.iter().map(|(_, v)| v[d]));
        let y = build_target(&rv, target, d)?;
        if row.iter().any(|x| !x.is_finite()) || (set.is_log() && !(y > 0.0)) {
            dropped.push(dates[d].clone());
            continue;
        }
        rows.push(row);
        targets.push(y);
        info_dates.push(dates[d].clone());
        target_dates.push(dates[d + 1].clone());
    }
    if !dropped.is_empty() {
        log::info!("{}: dropped {} rows with undefined transformed values", asset.id(), dropped.len());
    }
    let split = DataSplit::for_rows(rows.len(), scheme)?;
    let fit_target: Vec<f64> = if set.is_log() { targets.iter().map(|y| y.ln()).collect() } else { targets.clone() };
    let mut fm = FeatureMatrix::with_dates(names, info_dates, target_dates, rows, fit_target, split)?;
    if dataset == DatasetKind::MAll {
        fm.set_passthrough(Covariate::Ea.name());
    }
    let fm = standardize(&fm)?;
    Ok(Design { fm, log_target: set.is_log(), level_target: targets, horizon: target.horizon, dropped })
}

/// Writes a design as CSV: `date,target_date,<columns...>,target`.
pub fn write_design_csv(design: &Design, path: impl AsRef<Path>, header_comment: Option<&str>) -> Result<()> {
    use std::io::Write;
    let mut file = std::fs::File::create(path)?;
    if let Some(c) = header_comment {
        writeln!(file, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    let fm = &design.fm;
    let mut header = vec!["date".to_string(), "target_date".to_string()];
    header.extend(fm.column_names.iter().cloned());
    header.push("target".into());
    header.push("split".into());
    w.write_record(&header)?;
    for i in 0..fm.n_rows() {
        let mut rec = vec![fm.dates[i].clone(), fm.target_dates[i].clone()];
        rec.extend(fm.row(i).iter().map(|x| format!("{x:.10e}")));
        rec.push(format!("{:.10e}", design.level_target[i]));
        let s = if fm.split.train.contains(&i) {
            "train"
        } else if fm.split.validation.contains(&i) {
            "validation"
        } else {
            "test"
        };
        rec.push(s.into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
