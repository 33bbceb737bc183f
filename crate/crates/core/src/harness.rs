//! Out-of-sample forecasting: validation tuning, rolling and fixed windows,
//! forecast sanitation and the resulting forecast table.
//!
//! For a test row `i` with horizon `h`, a window may only contain rows `j`
//! with `j + h <= i`, so that no training target overlaps the forecast
//! period. With `h = 1` this reproduces the plain train/validation/test
//! split at the first test row.

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_features, AssetData, DatasetKind, Design, FeatureSet, Horizon, TargetSpec};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve};
use crate::linear::{
    adaptive_weights, coordinate_descent, elastic_net_path, ols_from_gram, CdOptions, Gram, HoldoutMoments, LinearFit,
    Penalty,
};
use crate::models::{FittedModel, ModelId, Predictor, TopNetworks, WindowPolicy};
use crate::nn::{train_seed_ensemble, Dropout, NetworkSpec, NnData, SeedEnsemble};
use crate::rng::SeedStream;
use crate::timeseries::{DataSplit, SplitScheme};
use crate::tree::{fit_forest, fit_gradient_boosting, BoostingOptions, ForestOptions, TreeData, TreeEnsemble};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "GridSpec")]
pub struct TuningGrid {
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub gb_depths: Vec<usize>,
    pub gb_trees: Vec<usize>,
    pub gb_learning_rates: Vec<f64>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self::standard()
    }
}

impl TuningGrid {
    /// 1000 log-spaced penalties on `[1e-5, 1e2]`, ten mixing weights on
    /// `[0, 1]`, and boosting with depth 1 or 2, 50 to 500 trees and
    /// learning rate 0.01 or 0.1.
    pub fn standard() -> Self {
        Self::sized(1000, 10)
    }

    /// The standard grid with `n_lambda` penalties and `n_alpha` weights.
    pub fn sized(n_lambda: usize, n_alpha: usize) -> Self {
        Self {
            lambdas: log_grid(1e-5, 1e2, n_lambda),
            alphas: lin_grid(0.0, 1.0, n_alpha),
            gb_depths: vec![1, 2],
            gb_trees: (1..=10).map(|k| 50 * k).collect(),
            gb_learning_rates: vec![0.01, 0.1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.alphas.is_empty() {
            return Err(Error::Config("tuning grid has no penalty cells".into()));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("penalties must be finite and >= 0".into()));
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config("mixing weights must lie in [0, 1]".into()));
        }
        if self.gb_depths.is_empty() || self.gb_trees.is_empty() || self.gb_learning_rates.is_empty() {
            return Err(Error::Config("boosting grid is empty".into()));
        }
        if self.gb_depths.contains(&0) || self.gb_trees.contains(&0) || self.gb_learning_rates.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("boosting depths, tree counts and learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Grid as written in a configuration file: explicit lists, or a number
/// of points for the standard penalty and mixing ranges.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GridSpec {
    lambdas: Option<Vec<f64>>,
    lambda_points: Option<usize>,
    lambda_range: Option<[f64; 2]>,
    alphas: Option<Vec<f64>>,
    alpha_points: Option<usize>,
    gb_depths: Option<Vec<usize>>,
    gb_trees: Option<Vec<usize>>,
    gb_learning_rates: Option<Vec<f64>>,
}

impl From<GridSpec> for TuningGrid {
    fn from(s: GridSpec) -> Self {
        let d = TuningGrid::standard();
        let [lo, hi] = s.lambda_range.unwrap_or([1e-5, 1e2]);
        let lambdas = match (s.lambdas, s.lambda_points) {
            (Some(l), _) => l,
            (None, Some(n)) => log_grid(lo, hi, n),
            (None, None) => log_grid(lo, hi, d.lambdas.len()),
        };
        let alphas = s.alphas.unwrap_or_else(|| s.alpha_points.map_or(d.alphas.clone(), |n| lin_grid(0.0, 1.0, n)));
        Self {
            lambdas,
            alphas,
            gb_depths: s.gb_depths.unwrap_or(d.gb_depths),
            gb_trees: s.gb_trees.unwrap_or(d.gb_trees),
            gb_learning_rates: s.gb_learning_rates.unwrap_or(d.gb_learning_rates),
        }
    }
}

/// `n` points evenly spaced in `ln` between `lo` and `hi` (inclusive).
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}

/// `n` evenly spaced points from `lo` to `hi` (inclusive).
pub fn lin_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub grid: TuningGrid,
    pub forest_trees: usize,
    pub forest_min_node_size: usize,
    pub gb_min_node_size: usize,
    pub nn_seeds: usize,
    pub nn_epochs: usize,
    pub nn_patience: usize,
    pub dropout: Dropout,
    /// Re-estimate rolling models every this many test days.
    pub refit_every: usize,
    pub seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            grid: TuningGrid::standard(),
            forest_trees: 500,
            forest_min_node_size: 5,
            gb_min_node_size: 10,
            nn_seeds: 100,
            nn_epochs: 500,
            nn_patience: 100,
            dropout: Dropout { rate: 0.8, convention: crate::nn::DropoutConvention::Keep },
            refit_every: 1,
            seed: 0,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.forest_trees == 0 || self.forest_min_node_size == 0 || self.gb_min_node_size == 0 {
            return Err(Error::Config("forest size and node sizes must be positive".into()));
        }
        if self.nn_seeds == 0 || self.nn_epochs == 0 {
            return Err(Error::Config("network seeds and epochs must be positive".into()));
        }
        if self.refit_every == 0 {
            return Err(Error::Config("refit_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn network_spec(&self, arch: u8) -> Result<NetworkSpec> {
        Ok(NetworkSpec {
            epochs_max: self.nn_epochs,
            patience: self.nn_patience,
            dropout: self.dropout,
            ..NetworkSpec::standard(arch as usize)?
        })
    }
}

/// Smallest validation block accepted for hyperparameter tuning.
pub const MIN_VALIDATION_ROWS: usize = 30;

/// Hyperparameters chosen on the validation block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Hyper {
    None,
    Lambda(f64),
    LambdaAlpha { lambda: f64, alpha: f64 },
    Boosting { depth: usize, trees: usize, learning_rate: f64 },
}

/// Min, max and mean of the in-sample targets, in variance units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl TrainStats {
    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::Empty("no in-sample targets".into()));
        }
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { min, max, mean: crate::scalar::mean(v) })
    }
}

/// Negative or undefined forecasts become the in-sample minimum. HARQ
/// forecasts outside the in-sample range are replaced by the in-sample mean.
pub fn sanitize_forecast(model: ModelId, raw: f64, stats: &TrainStats) -> f64 {
    if raw.is_nan() || raw < 0.0 {
        return stats.min;
    }
    if model == ModelId::Harq && (raw < stats.min || raw > stats.max) {
        return stats.mean;
    }
    if raw.is_infinite() {
        return stats.max;
    }
    raw
}

/// Training and validation rows for forecasting test row `i`.
pub fn windows(split: &DataSplit, policy: WindowPolicy, i: usize, h: usize) -> (Range<usize>, Range<usize>) {
    let (tr, va) = (split.train.len(), split.validation.len());
    let end = (i + 1).saturating_sub(h);
    match policy {
        WindowPolicy::RollingMerged => (end.saturating_sub(tr + va)..end, end..end),
        WindowPolicy::RollingTuned => {
            let mid = end.saturating_sub(va);
            (mid.saturating_sub(tr)..mid, mid..end)
        }
        WindowPolicy::Fixed => {
            let vend = (split.test.start + 1).saturating_sub(h);
            let tend = split.train.end.min(vend);
            (split.train.start.min(tend)..tend, tend..vend)
        }
    }
}

fn check_no_leak(train: &Range<usize>, validation: &Range<usize>, i: usize, h: usize) -> Result<()> {
    let last = train.end.max(validation.end);
    if last > 0 && last - 1 + h > i {
        return Err(Error::InvalidInput(format!("window ending at row {last} overlaps the target of test row {i}")));
    }
    Ok(())
}

/// Penalized regressions tuned over the grid on the validation moments.
/// The solvers see the target divided by its training standard deviation,
/// so the penalty grid is free of the units of the target.
pub fn tune_penalized(
    model: ModelId,
    g: &Gram<f64>,
    holdout: &HoldoutMoments<f64>,
    grid: &TuningGrid,
    names: &[String],
) -> Result<(LinearFit<f64>, Hyper, f64)> {
    grid.validate()?;
    if holdout.n < MIN_VALIDATION_ROWS {
        return Err(Error::Sizing(format!("tuning needs at least {MIN_VALIDATION_ROWS} validation rows, got {}", holdout.n)));
    }
    let s = if g.yy > 0.0 { g.yy.sqrt() } else { 1.0 };
    let gs = Gram { y_mean: g.y_mean / s, xy: g.xy.iter().map(|c| c / s).collect(), yy: g.yy / (s * s), ..g.clone() };
    let opts = CdOptions::default();
    let mut order: Vec<usize> = (0..grid.lambdas.len()).collect();
    order.sort_by(|&a, &b| grid.lambdas[b].total_cmp(&grid.lambdas[a]));

    let mut best: Option<(f64, Vec<f64>, Hyper)> = None;
    let mut consider = |mse: f64, beta: Vec<f64>, hyper: Hyper| {
        if best.as_ref().is_none_or(|(m, _, _)| mse < *m) {
            best = Some((mse, beta, hyper));
        }
    };
    let unscale = |b: &[f64]| b.iter().map(|v| v * s).collect::<Vec<f64>>();
    match model {
        ModelId::Ridge => {
            for &k in &order {
                let lambda = grid.lambdas[k];
                let mut a = gs.xx.clone();
                a.add_diagonal(lambda);
                let beta = match cholesky(&a) {
                    Some(l) => cholesky_solve(&l, &gs.xy),
                    None => ols_from_gram(&gs, names, false)?.weights,
                };
                let beta = unscale(&beta);
                consider(holdout.mse(&beta), beta, Hyper::Lambda(lambda));
            }
        }
        ModelId::Lasso | ModelId::ElasticNet => {
            let alphas: Vec<f64> = if model == ModelId::Lasso { vec![0.0] } else { grid.alphas.clone() };
            for &alpha in &alphas {
                let path = elastic_net_path(&gs, &grid.lambdas, alpha, opts)?;
                for &k in &order {
                    let beta = unscale(&path[k]);
                    let hyper = if model == ModelId::Lasso {
                        Hyper::Lambda(grid.lambdas[k])
                    } else {
                        Hyper::LambdaAlpha { lambda: grid.lambdas[k], alpha }
                    };
                    consider(holdout.mse(&beta), beta, hyper);
                }
            }
        }
        ModelId::AdaptiveLasso => {
            let first = ols_from_gram(&gs, names, false)?;
            let w = adaptive_weights(&first.weights);
            let mut beta = vec![0.0; gs.p()];
            for &k in &order {
                coordinate_descent(&gs, grid.lambdas[k], 0.0, Some(&w), &mut beta, opts)?;
                let b = unscale(&beta);
                consider(holdout.mse(&b), b, Hyper::Lambda(grid.lambdas[k]));
            }
        }
        ModelId::PostLasso => {
            let path = elastic_net_path(&gs, &grid.lambdas, 0.0, opts)?;
            let mut cache: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();
            for &k in &order {
                let support: Vec<usize> = (0..gs.p()).filter(|&j| path[k][j] != 0.0).collect();
                let beta = match cache.get(&support) {
                    Some(b) => b.clone(),
                    None => {
                        let b = crate::linear::post_lasso_from_gram(g, grid.lambdas[k], names, Some(&path[k]), opts)?.weights;
                        cache.insert(support, b.clone());
                        b
                    }
                };
                consider(holdout.mse(&beta), beta, Hyper::Lambda(grid.lambdas[k]));
            }
        }
        other => return Err(Error::InvalidInput(format!("{other} is not a penalized regression"))),
    }
    let (mse, beta, hyper) = best.ok_or_else(|| Error::Empty("empty tuning grid".into()))?;
    let penalty = match (model, hyper) {
        (ModelId::Ridge, Hyper::Lambda(lambda)) => Penalty::Ridge { lambda },
        (ModelId::Lasso, Hyper::Lambda(lambda)) => Penalty::Lasso { lambda },
        (ModelId::PostLasso, Hyper::Lambda(lambda)) => Penalty::PostLasso { lambda },
        (ModelId::AdaptiveLasso, Hyper::Lambda(lambda)) => {
            let first = ols_from_gram(&gs, names, false)?;
            Penalty::Adaptive { lambda, weights: adaptive_weights(&first.weights) }
        }
        (_, Hyper::LambdaAlpha { lambda, alpha }) => Penalty::ElasticNet { lambda, alpha },
        _ => Penalty::None,
    };
    Ok((g.finish(beta, penalty, names, false), hyper, mse))
}

/// Boosting tuned over depth, learning rate and number of trees. One fit
/// per (depth, rate) serves every tree count through staged predictions.
pub fn tune_boosting(
    train: &TreeData<f64>,
    validation: &[(Vec<f64>, f64)],
    grid: &TuningGrid,
    min_node_size: usize,
) -> Result<(TreeEnsemble<f64>, Hyper, f64)> {
    grid.validate()?;
    if validation.len() < MIN_VALIDATION_ROWS {
        return Err(Error::Sizing(format!(
            "tuning needs at least {MIN_VALIDATION_ROWS} validation rows, got {}",
            validation.len()
        )));
    }
    let max_trees = *grid.gb_trees.iter().max().expect("validated");
    let mut depths = grid.gb_depths.clone();
    depths.sort_unstable();
    let mut trees = grid.gb_trees.clone();
    trees.sort_unstable();
    let mut best: Option<(f64, TreeEnsemble<f64>, Hyper)> = None;
    for &depth in &depths {
        for &lr in &grid.gb_learning_rates {
            let fit = fit_gradient_boosting(
                train,
                BoostingOptions { trees: max_trees, depth: Some(depth), learning_rate: lr, min_node_size },
            )?;
            let staged: Vec<Vec<f64>> =
                validation.iter().map(|(x, _)| fit.ensemble.staged_predict(x)).collect::<Result<_>>()?;
            for &b in &trees {
                let mse = validation.iter().zip(&staged).map(|((_, y), p)| (p[b] - y).powi(2)).sum::<f64>()
                    / validation.len() as f64;
                if best.as_ref().is_none_or(|(m, _, _)| mse < *m) {
                    best = Some((mse, fit.ensemble.truncated(b), Hyper::Boosting { depth, trees: b, learning_rate: lr }));
                }
            }
        }
    }
    let (mse, e, h) = best.expect("non-empty grid");
    Ok((e, h, mse))
}

/// A fitted model together with what the harness needs to use it.
#[derive(Debug, Clone)]
pub struct WindowFit {
    pub model: FittedModel,
    pub hyper: Hyper,
    pub stats: TrainStats,
    pub train: Range<usize>,
    pub validation: Range<usize>,
}

impl WindowFit {
    pub fn forecast(&self, id: ModelId, row: &[f64]) -> f64 {
        let raw = self.model.predict(row).unwrap_or(f64::NAN);
        sanitize_forecast(id, raw, &self.stats)
    }
}

fn stats_for(design: &Design, train: &Range<usize>, validation: &Range<usize>) -> Result<TrainStats> {
    let mut v: Vec<f64> = design.level_target[train.clone()].to_vec();
    v.extend_from_slice(&design.level_target[validation.clone()]);
    TrainStats::from_values(&v)
}

/// Trains the networks of architecture `arch` on the fixed windows.
pub fn fit_network_ensemble(design: &Design, arch: u8, cfg: &HarnessConfig, stream: &SeedStream) -> Result<SeedEnsemble<f64>> {
    let split = &design.fm.split;
    let (train, validation) = windows(split, WindowPolicy::Fixed, split.test.start, design.horizon.days());
    if validation.is_empty() {
        return Err(Error::Empty("network training needs validation rows".into()));
    }
    let spec = cfg.network_spec(arch)?;
    let tr = NnData::from_matrix(&design.fm, train);
    let va = NnData::from_matrix(&design.fm, validation);
    let seeds: Vec<u64> = (0..cfg.nn_seeds).map(|k| stream.child(k).derive_seed()).collect();
    train_seed_ensemble(&spec, &tr, &va, &seeds, 1)
}

/// Fits `model` as it would be used to forecast test row `i`.
pub fn fit_at(model: ModelId, design: &Design, i: usize, cfg: &HarnessConfig, stream: &SeedStream) -> Result<WindowFit> {
    let fm = &design.fm;
    let h = design.horizon.days();
    let (train, validation) = windows(&fm.split, model.policy(), i, h);
    check_no_leak(&train, &validation, i, h)?;
    if train.is_empty() {
        return Err(Error::Empty(format!("no training rows before test row {i}")));
    }
    let stats = stats_for(design, &train, &validation)?;
    let names = &fm.column_names;
    let (fitted, hyper) = match model {
        ModelId::Har | ModelId::HarX | ModelId::LogHar | ModelId::LevHar | ModelId::Shar | ModelId::Harq => {
            let g = Gram::from_matrix(fm, train.clone())?;
            (FittedModel::Linear(ols_from_gram(&g, names, design.log_target)?), Hyper::None)
        }
        ModelId::Ridge | ModelId::Lasso | ModelId::ElasticNet | ModelId::AdaptiveLasso | ModelId::PostLasso => {
            if validation.is_empty() {
                return Err(Error::Empty("tuning needs validation rows".into()));
            }
            let g = Gram::from_matrix(fm, train.clone())?;
            let hold = HoldoutMoments::new(fm, validation.clone(), &g);
            let (fit, hyper, _) = tune_penalized(model, &g, &hold, &cfg.grid, names)?;
            (FittedModel::Linear(fit), hyper)
        }
        ModelId::Bagging | ModelId::RandomForest => {
            let data = TreeData::from_matrix(fm, train.clone())?;
            let mut opts = ForestOptions {
                trees: cfg.forest_trees,
                min_node_size: cfg.forest_min_node_size,
                ..ForestOptions::bagging(stream.derive_seed())
            };
            if model == ModelId::RandomForest {
                opts.feature_split = Some(crate::tree::default_feature_split(fm.n_cols()));
            }
            (FittedModel::Trees(fit_forest(&data, opts)?), Hyper::None)
        }
        ModelId::GradientBoosting => {
            let data = TreeData::from_matrix(fm, train.clone())?;
            let val: Vec<(Vec<f64>, f64)> = validation.clone().map(|r| (fm.row(r).to_vec(), fm.target[r])).collect();
            let (e, hyper, _) = tune_boosting(&data, &val, &cfg.grid, cfg.gb_min_node_size)?;
            (FittedModel::Trees(e), hyper)
        }
        ModelId::Nn { arch, top } => {
            let ensemble = fit_network_ensemble(design, arch, cfg, stream)?;
            (FittedModel::Networks(TopNetworks { ensemble, top: top as usize }), Hyper::None)
        }
    };
    Ok(WindowFit { model: fitted, hyper, stats, train, validation })
}

/// One cell of the forecast table. `forecast` is `None` when the model
/// failed for that date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub asset: String,
    pub model: ModelId,
    /// Date of the first day of the target window.
    pub date: String,
    pub horizon: Horizon,
    pub forecast: Option<f64>,
    pub realized: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecastTable {
    pub records: Vec<ForecastRecord>,
}

/// Forecasts of one (asset, model) pair, aligned by date.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSeries {
    pub dates: Vec<String>,
    pub forecast: Vec<Option<f64>>,
    pub realized: Vec<f64>,
}

impl ForecastTable {
    pub fn assets(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for r in &self.records {
            if !seen.contains(&r.asset) {
                seen.push(r.asset.clone());
            }
        }
        seen
    }

    pub fn models(&self) -> Vec<ModelId> {
        let mut seen = Vec::new();
        for r in &self.records {
            if !seen.contains(&r.model) {
                seen.push(r.model);
            }
        }
        seen
    }

    pub fn series(&self, asset: &str, model: ModelId) -> ForecastSeries {
        let mut s = ForecastSeries { dates: Vec::new(), forecast: Vec::new(), realized: Vec::new() };
        for r in self.records.iter().filter(|r| r.asset == asset && r.model == model) {
            s.dates.push(r.date.clone());
            s.forecast.push(r.forecast);
            s.realized.push(r.realized);
        }
        s
    }

    pub fn missing(&self) -> usize {
        self.records.iter().filter(|r| r.forecast.is_none()).count()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, header_comment: Option<&str>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        if let Some(c) = header_comment {
            writeln!(file, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["asset", "model", "date", "horizon", "forecast", "realized"])?;
        for r in &self.records {
            w.write_record([
                r.asset.clone(),
                r.model.id(),
                r.date.clone(),
                r.horizon.to_string(),
                r.forecast.map_or_else(|| "NA".to_string(), |f| f.to_string()),
                r.realized.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |m: String| Error::Parse { path: path.display().to_string(), message: m };
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if headers != ["asset", "model", "date", "horizon", "forecast", "realized"] {
            return Err(bad("expected header asset,model,date,horizon,forecast,realized".into()));
        }
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let f = |k: usize| rec.get(k).unwrap_or_default().trim().to_string();
            let forecast = match f(4).as_str() {
                "NA" | "" => None,
                s => Some(s.parse::<f64>().map_err(|_| bad(format!("bad forecast '{s}'")))?),
            };
            records.push(ForecastRecord {
                asset: f(0),
                model: f(1).parse().map_err(|e: Error| bad(e.to_string()))?,
                date: f(2),
                horizon: Horizon::parse(&f(3))?,
                forecast,
                realized: f(5).parse().map_err(|_| bad(format!("bad realized value '{}'", f(5))))?,
            });
        }
        Ok(Self { records })
    }
}

fn model_stream(cfg: &HarnessConfig, asset: &str, key: &str) -> SeedStream {
    SeedStream::new(cfg.seed).child(asset).child(key)
}

/// Rolling forecasts of one model over the test rows of `design`.
pub fn forecast_model(asset: &str, model: ModelId, design: &Design, cfg: &HarnessConfig) -> Vec<ForecastRecord> {
    let fm = &design.fm;
    let test = fm.split.test.clone();
    let stream = model_stream(cfg, asset, &model.id());
    let mut current: Option<WindowFit> = None;
    let mut out = Vec::with_capacity(test.len());
    for (step, i) in test.clone().enumerate() {
        let refit = match model.policy() {
            WindowPolicy::Fixed => step == 0,
            _ => step % cfg.refit_every == 0,
        };
        if refit {
            current = match fit_at(model, design, i, cfg, &stream.child(step)) {
                Ok(f) => Some(f),
                Err(e) => {
                    log::warn!("{asset}/{model}: fit for test row {i} failed: {e}");
                    if model.policy() == WindowPolicy::Fixed {
                        None
                    } else {
                        current
                    }
                }
            };
        }
        out.push(ForecastRecord {
            asset: asset.to_string(),
            model,
            date: fm.target_dates[i].clone(),
            horizon: design.horizon,
            forecast: current.as_ref().map(|f| f.forecast(model, fm.row(i))),
            realized: design.level_target[i],
        });
    }
    out
}

fn network_forecasts(asset: &str, arch: u8, tops: &[ModelId], design: &Design, cfg: &HarnessConfig) -> Vec<ForecastRecord> {
    let fm = &design.fm;
    let test = fm.split.test.clone();
    let stream = model_stream(cfg, asset, &format!("nn{arch}"));
    let fitted = fit_network_ensemble(design, arch, cfg, &stream).and_then(|e| {
        let h = design.horizon.days();
        let (train, validation) = windows(&fm.split, WindowPolicy::Fixed, test.start, h);
        Ok((e, stats_for(design, &train, &validation)?))
    });
    if let Err(e) = &fitted {
        log::warn!("{asset}/nn{arch}: training failed: {e}");
    }
    let mut out = Vec::new();
    for &m in tops {
        let ModelId::Nn { top, .. } = m else { continue };
        for i in test.clone() {
            let forecast = fitted.as_ref().ok().map(|(e, stats)| {
                let raw = e.predict_top(fm.row(i), (top as usize).min(e.members.len())).unwrap_or(f64::NAN);
                sanitize_forecast(m, raw, stats)
            });
            out.push(ForecastRecord {
                asset: asset.to_string(),
                model: m,
                date: fm.target_dates[i].clone(),
                horizon: design.horizon,
                forecast,
                realized: design.level_target[i],
            });
        }
    }
    out
}

/// Builds every design the requested models need for one asset.
pub fn designs_for(
    asset: &AssetData,
    models: &[ModelId],
    dataset: DatasetKind,
    target: TargetSpec,
    scheme: SplitScheme,
) -> Result<BTreeMap<(DatasetKind, FeatureSet), Design>> {
    let mut out = BTreeMap::new();
    for m in models {
        let key = m.design(dataset);
        if let std::collections::btree_map::Entry::Vacant(e) = out.entry(key) {
            e.insert(build_features(asset, key.0, key.1, target, scheme)?);
        }
    }
    Ok(out)
}

/// Forecasts of every model for every asset, one row per test date.
/// Model failures leave the affected cells empty; the run continues.
pub fn run_forecasts(
    assets: &[AssetData],
    models: &[ModelId],
    dataset: DatasetKind,
    target: TargetSpec,
    scheme: SplitScheme,
    cfg: &HarnessConfig,
) -> Result<ForecastTable> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(Error::Config("no models requested".into()));
    }
    let designs: Vec<BTreeMap<(DatasetKind, FeatureSet), Design>> =
        assets.iter().map(|a| designs_for(a, models, dataset, target, scheme)).collect::<Result<_>>()?;

    enum Job {
        Single(usize, ModelId),
        Networks(usize, u8, Vec<ModelId>),
    }
    let mut jobs = Vec::new();
    for (a, _) in assets.iter().enumerate() {
        let mut nets: BTreeMap<u8, Vec<ModelId>> = BTreeMap::new();
        for &m in models {
            match m {
                ModelId::Nn { arch, .. } => nets.entry(arch).or_default().push(m),
                _ => jobs.push(Job::Single(a, m)),
            }
        }
        jobs.extend(nets.into_iter().map(|(arch, ms)| Job::Networks(a, arch, ms)));
    }
    let results: Vec<Vec<ForecastRecord>> = jobs
        .par_iter()
        .map(|job| match job {
            Job::Single(a, m) => {
                let d = &designs[*a][&m.design(dataset)];
                forecast_model(assets[*a].id(), *m, d, cfg)
            }
            Job::Networks(a, arch, ms) => {
                let d = &designs[*a][&ms[0].design(dataset)];
                network_forecasts(assets[*a].id(), *arch, ms, d, cfg)
            }
        })
        .collect();
    let mut records: Vec<ForecastRecord> = results.into_iter().flatten().collect();
    let asset_rank: HashMap<&str, usize> = assets.iter().enumerate().map(|(k, a)| (a.id(), k)).collect();
    let model_rank: HashMap<ModelId, usize> = models.iter().enumerate().map(|(k, m)| (*m, k)).collect();
    records.sort_by(|x, y| {
        asset_rank[x.asset.as_str()]
            .cmp(&asset_rank[y.asset.as_str()])
            .then(model_rank[&x.model].cmp(&model_rank[&y.model]))
            .then(x.date.cmp(&y.date))
    });
    Ok(ForecastTable { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeseries::FeatureMatrix;

    #[test]
    fn grid_from_config() {
        let g: TuningGrid = toml::from_str("lambda_points = 5\nalpha_points = 3").unwrap();
        assert_eq!(g.lambdas.len(), 5);
        assert_eq!(g.alphas, vec![0.0, 0.5, 1.0]);
        assert_eq!(g.gb_depths, vec![1, 2]);
        let g: TuningGrid = toml::from_str("lambdas = [0.1, 1.0]").unwrap();
        assert_eq!(g.lambdas, vec![0.1, 1.0]);
        assert!(toml::from_str::<TuningGrid>("lambda_count = 3").is_err());
        let round: TuningGrid = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(round, g);
    }

    #[test]
    fn grids() {
        let g = TuningGrid::standard();
        assert_eq!(g.lambdas.len(), 1000);
        assert!((g.lambdas[0] - 1e-5).abs() < 1e-18 && (g.lambdas[999] - 1e2).abs() < 1e-10);
        let r = g.lambdas[1] / g.lambdas[0];
        assert!((g.lambdas[500] / g.lambdas[499] - r).abs() < 1e-9);
        assert_eq!(g.alphas.len(), 10);
        assert_eq!((g.alphas[0], g.alphas[9]), (0.0, 1.0));
        assert_eq!(g.gb_trees, vec![50, 100, 150, 200, 250, 300, 350, 400, 450, 500]);
    }

    #[test]
    fn sanitation_rules() {
        let s = TrainStats { min: 0.02, max: 0.5, mean: 0.1 };
        assert_eq!(sanitize_forecast(ModelId::Har, -0.3, &s), 0.02);
        assert_eq!(sanitize_forecast(ModelId::RandomForest, f64::NAN, &s), 0.02);
        assert_eq!(sanitize_forecast(ModelId::Harq, 0.9, &s), 0.1);
        assert_eq!(sanitize_forecast(ModelId::Harq, 0.01, &s), 0.1);
        assert_eq!(sanitize_forecast(ModelId::Har, 0.9, &s), 0.9);
        assert_eq!(sanitize_forecast(ModelId::Har, 0.3, &s), 0.3);
    }

    #[test]
    fn windows_never_leak() {
        let split = DataSplit { train: 0..70, validation: 70..80, test: 80..100 };
        for policy in [WindowPolicy::RollingMerged, WindowPolicy::RollingTuned, WindowPolicy::Fixed] {
            for h in [1, 5, 22] {
                for i in split.test.clone() {
                    let (t, v) = windows(&split, policy, i, h);
                    check_no_leak(&t, &v, i, h).unwrap();
                }
            }
        }
        assert_eq!(windows(&split, WindowPolicy::RollingMerged, 80, 1), (0..80, 80..80));
        assert_eq!(windows(&split, WindowPolicy::RollingTuned, 80, 1), (0..70, 70..80));
        assert_eq!(windows(&split, WindowPolicy::RollingTuned, 85, 1), (5..75, 75..85));
        assert_eq!(windows(&split, WindowPolicy::Fixed, 80, 1), (0..70, 70..80));
        assert!(check_no_leak(&(0..81), &(81..81), 80, 1).is_err());
    }

    fn linear_problem(noise_only: bool, seed: u64) -> (Gram<f64>, HoldoutMoments<f64>, Vec<String>) {
        use rand::Rng;
        let mut rng = SeedStream::new(seed).rng();
        let n = 300;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| if noise_only { rng.random_range(-1.0..1.0) } else { 1.0 + r[0] - 2.0 * r[3] })
            .collect();
        let fm = FeatureMatrix::new(
            (0..5).map(|j| format!("x{j}")).collect(),
            rows,
            y,
            DataSplit { train: 0..200, validation: 200..300, test: 300..300 },
        )
        .unwrap();
        let g = Gram::from_matrix(&fm, 0..200).unwrap();
        let h = HoldoutMoments::new(&fm, 200..300, &g);
        (g, h, fm.column_names.clone())
    }

    #[test]
    fn tuning_shrinks_under_noise() {
        let grid = TuningGrid::sized(60, 3);
        let upper = grid.lambdas[30];
        let mut hits = 0;
        for seed in 0..10 {
            let (g, h, names) = linear_problem(true, seed);
            let (_, hyper, _) = tune_penalized(ModelId::Lasso, &g, &h, &grid, &names).unwrap();
            if let Hyper::Lambda(l) = hyper {
                if l >= upper {
                    hits += 1;
                }
            }
        }
        assert!(hits >= 7, "{hits}");
    }

    #[test]
    fn tuning_picks_small_penalty_without_noise() {
        let grid = TuningGrid::sized(100, 3);
        let decile = grid.lambdas[9];
        for model in [ModelId::Ridge, ModelId::Lasso, ModelId::ElasticNet, ModelId::AdaptiveLasso, ModelId::PostLasso] {
            let (g, h, names) = linear_problem(false, 1);
            let (fit, hyper, mse) = tune_penalized(model, &g, &h, &grid, &names).unwrap();
            let lambda = match hyper {
                Hyper::Lambda(l) | Hyper::LambdaAlpha { lambda: l, .. } => l,
                _ => panic!(),
            };
            if model != ModelId::PostLasso {
                assert!(lambda <= decile, "{model}: {lambda}");
            }
            assert!(mse < 1e-3, "{model}: {mse}");
            assert!((fit.weights[0] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn single_cell_grid() {
        let grid = TuningGrid { lambdas: vec![0.5], alphas: vec![0.3], ..TuningGrid::standard() };
        let (g, h, names) = linear_problem(false, 2);
        let (_, hyper, _) = tune_penalized(ModelId::ElasticNet, &g, &h, &grid, &names).unwrap();
        assert_eq!(hyper, Hyper::LambdaAlpha { lambda: 0.5, alpha: 0.3 });
        let empty = TuningGrid { lambdas: vec![], ..TuningGrid::standard() };
        assert!(tune_penalized(ModelId::Ridge, &g, &h, &empty, &names).is_err());
    }
}
