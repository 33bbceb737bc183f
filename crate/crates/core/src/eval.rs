//! Forecast evaluation: squared-error loss, relative MSE, Diebold-Mariano
//! tests, the model confidence set, decile-conditional MSE and the
//! autocorrelation of fitted series.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::harness::ForecastTable;
use crate::models::ModelId;
use crate::rng::SeedStream;
use crate::scalar::compensated_sum;

pub fn squared_errors(forecast: &[f64], realized: &[f64]) -> Result<Vec<f64>> {
    if forecast.len() != realized.len() {
        return Err(Error::Dimension { expected: realized.len(), got: forecast.len() });
    }
    Ok(forecast.iter().zip(realized).map(|(f, r)| (f - r) * (f - r)).collect())
}

pub fn mse(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Empty("no losses".into()));
    }
    Ok(compensated_sum(losses.iter().copied()) / losses.len() as f64)
}

/// `m[i][j] = mse[j] / mse[i]`, with `None` where the row benchmark has
/// zero (or undefined) MSE. The diagonal is 1 whenever it is defined.
pub fn relative_matrix(mses: &[f64]) -> Vec<Vec<Option<f64>>> {
    mses.iter()
        .enumerate()
        .map(|(i, &bench)| {
            mses.iter()
                .enumerate()
                .map(|(j, &m)| {
                    if !(bench > 0.0) || !bench.is_finite() {
                        None
                    } else if i == j {
                        Some(1.0)
                    } else {
                        Some(m / bench)
                    }
                })
                .collect()
        })
        .collect()
}

/// Upper tail of the standard normal, accurate far into the tail.
pub fn normal_upper_tail(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    /// Positive when the second model has the smaller loss.
    pub statistic: f64,
    /// `P(Z > statistic)`: small values favour the second model.
    pub p_value: f64,
    pub hac_lags: usize,
    /// The loss differential has zero long-run variance.
    pub degenerate: bool,
}

/// Newey-West long-run variance with Bartlett weights.
pub fn newey_west(d: &[f64], lags: usize) -> f64 {
    let n = d.len();
    if n == 0 {
        return f64::NAN;
    }
    let m = d.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = d.iter().map(|x| x - m).collect();
    let gamma = |k: usize| c[k..].iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let mut lrv = gamma(0);
    for k in 1..=lags.min(n - 1) {
        lrv += 2.0 * (1.0 - k as f64 / (lags + 1) as f64) * gamma(k);
    }
    lrv
}

/// Diebold-Mariano test of equal accuracy against the alternative that
/// model `j` is more accurate, on `d = loss_i - loss_j` with `h - 1` HAC lags.
pub fn dm_test(loss_i: &[f64], loss_j: &[f64], horizon: usize) -> Result<DmResult> {
    if loss_i.len() != loss_j.len() {
        return Err(Error::Dimension { expected: loss_i.len(), got: loss_j.len() });
    }
    let t = loss_i.len();
    if t < 30 {
        return Err(Error::Sizing(format!("Diebold-Mariano test needs at least 30 observations, got {t}")));
    }
    let lags = horizon.saturating_sub(1);
    let d: Vec<f64> = loss_i.iter().zip(loss_j).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / t as f64;
    let lrv = newey_west(&d, lags);
    if !(lrv > 0.0) {
        let statistic = if mean > 0.0 {
            f64::INFINITY
        } else if mean < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        return Ok(DmResult { statistic, p_value: normal_upper_tail(statistic), hac_lags: lags, degenerate: true });
    }
    let statistic = mean / (lrv / t as f64).sqrt();
    Ok(DmResult { statistic, p_value: normal_upper_tail(statistic), hac_lags: lags, degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsOptions {
    pub level: f64,
    pub reps: usize,
    /// `None` means `ceil(T^(1/3))`.
    pub block_length: Option<usize>,
}

impl Default for McsOptions {
    fn default() -> Self {
        Self { level: 0.90, reps: 5000, block_length: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    /// Indices of the models in the confidence set, ascending.
    pub survivors: Vec<usize>,
    /// Every model in the order the procedure removes it; the last entry
    /// is the model never eliminated.
    pub elimination_order: Vec<usize>,
    /// MCS p-value of each model, by input index.
    pub p_values: Vec<f64>,
    pub level: f64,
    /// All loss differentials are constant, so nothing can be told apart.
    pub degenerate: bool,
}

/// Bootstrap means of each loss series: `out[b][i]`.
pub fn block_bootstrap_means(losses: &[Vec<f64>], reps: usize, block: usize, stream: &SeedStream) -> Vec<Vec<f64>> {
    let t = losses[0].len();
    let block = block.clamp(1, t);
    let n_blocks = t.div_ceil(block);
    let prefix: Vec<Vec<f64>> = losses
        .iter()
        .map(|l| {
            let mut p = Vec::with_capacity(t + 1);
            p.push(0.0);
            let mut acc = 0.0;
            for x in l {
                acc += x;
                p.push(acc);
            }
            p
        })
        .collect();
    let mut rng = stream.rng();
    let mut out = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut sums = vec![0.0; losses.len()];
        let mut remaining = t;
        for _ in 0..n_blocks {
            let len = block.min(remaining);
            let start = rng.random_range(0..=t - block);
            for (s, p) in sums.iter_mut().zip(&prefix) {
                *s += p[start + len] - p[start];
            }
            remaining -= len;
        }
        out.push(sums.into_iter().map(|s| s / t as f64).collect());
    }
    out
}

/// Model confidence set with the range statistic and a moving-block
/// bootstrap. The procedure runs to a single model; a model belongs to the
/// set when its MCS p-value is at least `1 - level`.
pub fn mcs(losses: &[Vec<f64>], opts: McsOptions, stream: &SeedStream) -> Result<McsResult> {
    let m = losses.len();
    if m < 2 {
        return Err(Error::Sizing("the model confidence set needs at least two models".into()));
    }
    let t = losses[0].len();
    if t < 2 || losses.iter().any(|l| l.len() != t) {
        return Err(Error::Sizing("loss series must be aligned and longer than one observation".into()));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) || opts.reps == 0 {
        return Err(Error::Config("MCS level must lie in (0, 1) with at least one bootstrap rep".into()));
    }
    let block = opts.block_length.unwrap_or_else(|| (t as f64).cbrt().ceil() as usize);
    let means: Vec<f64> = losses.iter().map(|l| l.iter().sum::<f64>() / t as f64).collect();
    let boot = block_bootstrap_means(losses, opts.reps, block, stream);
    let centered: Vec<Vec<f64>> = boot.iter().map(|b| b.iter().zip(&means).map(|(x, m)| x - m).collect()).collect();

    // Pairwise bootstrap variances of the mean differential.
    let mut var = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let v = centered.iter().map(|c| (c[i] - c[j]).powi(2)).sum::<f64>() / opts.reps as f64;
            var[i][j] = v;
            var[j][i] = v;
        }
    }
    let degenerate = (0..m).all(|i| (0..m).all(|j| i == j || var[i][j] == 0.0))
        && losses.iter().all(|l| {
            let d0 = l[0] - losses[0][0];
            l.iter().zip(&losses[0]).all(|(a, b)| a - b == d0)
        });
    if degenerate {
        return Ok(McsResult {
            survivors: (0..m).collect(),
            elimination_order: Vec::new(),
            p_values: vec![1.0; m],
            level: opts.level,
            degenerate: true,
        });
    }
    let tstat = |i: usize, j: usize, diff: f64| -> f64 {
        let v = var[i][j];
        if v > 0.0 {
            diff / v.sqrt()
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        }
    };

    let mut alive: Vec<usize> = (0..m).collect();
    let mut order = Vec::with_capacity(m);
    let mut p_values = vec![1.0; m];
    let mut running = 0.0f64;
    while alive.len() > 1 {
        let mut stat = 0.0f64;
        let mut worst = (f64::NEG_INFINITY, alive[0]);
        for &i in &alive {
            let mut row_max = f64::NEG_INFINITY;
            for &j in &alive {
                if i != j {
                    let tij = tstat(i, j, means[i] - means[j]);
                    stat = stat.max(tij.abs());
                    row_max = row_max.max(tij);
                }
            }
            if row_max > worst.0 {
                worst = (row_max, i);
            }
        }
        let exceed = centered
            .iter()
            .filter(|c| {
                let mut b = 0.0f64;
                for (k, &i) in alive.iter().enumerate() {
                    for &j in &alive[k + 1..] {
                        b = b.max(tstat(i, j, c[i] - c[j]).abs());
                    }
                }
                b >= stat
            })
            .count();
        let p = exceed as f64 / opts.reps as f64;
        running = running.max(p);
        let e = worst.1;
        p_values[e] = running;
        order.push(e);
        alive.retain(|&k| k != e);
    }
    order.push(alive[0]);
    p_values[alive[0]] = 1.0;
    let threshold = 1.0 - opts.level;
    let survivors = (0..m).filter(|&k| p_values[k] >= threshold).collect();
    Ok(McsResult { survivors, elimination_order: order, p_values, level: opts.level, degenerate: false })
}

/// Decile of each observation by its realized value. Equal values share
/// the decile of the first of them in sorted order, i.e. the lower one.
pub fn decile_buckets(realized: &[f64]) -> Result<Vec<usize>> {
    let t = realized.len();
    if t < 10 {
        return Err(Error::Sizing(format!("decile analysis needs at least 10 observations, got {t}")));
    }
    let mut idx: Vec<usize> = (0..t).collect();
    idx.sort_by(|&a, &b| realized[a].total_cmp(&realized[b]));
    let mut bucket = vec![0; t];
    let mut group_bucket = 0;
    for (rank, &k) in idx.iter().enumerate() {
        if rank == 0 || realized[k] != realized[idx[rank - 1]] {
            group_bucket = 10 * rank / t;
        }
        bucket[k] = group_bucket;
    }
    Ok(bucket)
}

/// Per-decile MSE of each model (`[model][decile]`, `None` for an empty
/// decile) and the same values relative to the benchmark model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileMse {
    pub counts: [usize; 10],
    pub mse: Vec<[Option<f64>; 10]>,
    pub relative: Vec<[Option<f64>; 10]>,
}

pub fn decile_mse(losses: &[Vec<f64>], realized: &[f64], benchmark: usize) -> Result<DecileMse> {
    if benchmark >= losses.len() {
        return Err(Error::InvalidInput(format!("benchmark index {benchmark} out of range")));
    }
    if losses.iter().any(|l| l.len() != realized.len()) {
        return Err(Error::Sizing("losses and realized values are not aligned".into()));
    }
    let bucket = decile_buckets(realized)?;
    let mut counts = [0usize; 10];
    for &b in &bucket {
        counts[b] += 1;
    }
    let mse: Vec<[Option<f64>; 10]> = losses
        .iter()
        .map(|l| {
            let mut sums = [0.0; 10];
            for (x, &b) in l.iter().zip(&bucket) {
                sums[b] += x;
            }
            std::array::from_fn(|k| (counts[k] > 0).then(|| sums[k] / counts[k] as f64))
        })
        .collect();
    let relative = mse
        .iter()
        .map(|row| {
            std::array::from_fn(|k| match (row[k], mse[benchmark][k]) {
                (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                _ => None,
            })
        })
        .collect();
    Ok(DecileMse { counts, mse, relative })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acf {
    /// Autocorrelations at lags `0..=max_lag`; empty if `constant`.
    pub values: Vec<f64>,
    /// Half-width of the white-noise band, `1.96 / sqrt(T)`.
    pub band: f64,
    pub constant: bool,
}

/// Sample autocorrelation function.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Acf> {
    let t = x.len();
    if t < 2 || max_lag >= t {
        return Err(Error::Sizing(format!("ACF up to lag {max_lag} needs more than {max_lag} observations, got {t}")));
    }
    let m = x.iter().sum::<f64>() / t as f64;
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let c0 = c.iter().map(|v| v * v).sum::<f64>();
    let band = 1.96 / (t as f64).sqrt();
    if !(c0 > 0.0) {
        return Ok(Acf { values: Vec::new(), band, constant: true });
    }
    let values = (0..=max_lag).map(|k| c[k..].iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / c0).collect();
    Ok(Acf { values, band, constant: false })
}

/// ACF of the in-sample fitted values of a model.
pub fn fitted_acf(model: &dyn crate::models::Predictor, rows: &[&[f64]], max_lag: usize) -> Result<Acf> {
    let fitted: Vec<f64> = rows.iter().map(|r| model.predict(r)).collect::<Result<_>>()?;
    acf(&fitted, max_lag)
}

/// One cell of the cross-asset comparison of a row model against a column model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub row: ModelId,
    pub column: ModelId,
    /// Relative MSE averaged over the assets where it is defined.
    pub avg_ratio: Option<f64>,
    /// Share of assets where the DM test rejects in favour of the column
    /// model at 10%, 5% and 1%.
    pub reject_10: f64,
    pub reject_5: f64,
    pub reject_1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetEvaluation {
    pub asset: String,
    pub models: Vec<ModelId>,
    pub dates: Vec<String>,
    pub realized: Vec<f64>,
    pub losses: Vec<Vec<f64>>,
    pub mse: Vec<f64>,
    pub dm: Vec<Vec<Option<DmResult>>>,
    pub mcs: Option<McsResult>,
    /// Test dates dropped because some model had no forecast.
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub models: Vec<ModelId>,
    pub assets: Vec<AssetEvaluation>,
    pub pairs: Vec<PairSummary>,
    /// Share of assets whose confidence set contains each model.
    pub mcs_inclusion: Vec<f64>,
}

/// Aligns each asset's forecasts on the dates where every model has one.
fn aligned(table: &ForecastTable, asset: &str, models: &[ModelId]) -> (Vec<String>, Vec<f64>, Vec<Vec<f64>>, usize) {
    let series: Vec<_> = models.iter().map(|m| table.series(asset, *m)).collect();
    let mut by_date: BTreeMap<&str, (f64, Vec<Option<f64>>)> = BTreeMap::new();
    for (k, s) in series.iter().enumerate() {
        for (i, d) in s.dates.iter().enumerate() {
            let e = by_date.entry(d.as_str()).or_insert_with(|| (s.realized[i], vec![None; models.len()]));
            e.1[k] = s.forecast[i];
        }
    }
    let mut dates = Vec::new();
    let mut realized = Vec::new();
    let mut losses = vec![Vec::new(); models.len()];
    let mut dropped = 0;
    for (d, (r, f)) in by_date {
        if f.iter().all(Option::is_some) {
            dates.push(d.to_string());
            realized.push(r);
            for (l, v) in losses.iter_mut().zip(&f) {
                l.push((v.unwrap() - r).powi(2));
            }
        } else {
            dropped += 1;
        }
    }
    (dates, realized, losses, dropped)
}

/// Full cross-model evaluation of a forecast table.
pub fn evaluate(table: &ForecastTable, horizon: usize, opts: McsOptions, seed: u64) -> Result<Evaluation> {
    let models = table.models();
    if models.is_empty() {
        return Err(Error::Empty("forecast table is empty".into()));
    }
    let root = SeedStream::new(seed).child("bootstrap");
    let assets: Vec<AssetEvaluation> = table
        .assets()
        .par_iter()
        .map(|asset| {
            let (dates, realized, losses, dropped) = aligned(table, asset, &models);
            if dropped > 0 {
                log::warn!("{asset}: {dropped} test dates dropped for missing forecasts");
            }
            if dates.is_empty() {
                return Err(Error::Empty(format!("{asset}: no date has a forecast from every model")));
            }
            let mse: Vec<f64> = losses.iter().map(|l| mse(l)).collect::<Result<_>>()?;
            let dm = (0..models.len())
                .map(|i| {
                    (0..models.len())
                        .map(|j| if i == j { None } else { dm_test(&losses[i], &losses[j], horizon).ok() })
                        .collect()
                })
                .collect();
            let mcs = if models.len() >= 2 { Some(mcs(&losses, opts, &root.child(asset))?) } else { None };
            Ok(AssetEvaluation { asset: asset.clone(), models: models.clone(), dates, realized, losses, mse, dm, mcs, dropped })
        })
        .collect::<Result<_>>()?;

    let n_assets = assets.len() as f64;
    let mut pairs = Vec::new();
    for (i, &row) in models.iter().enumerate() {
        for (j, &column) in models.iter().enumerate() {
            let ratios: Vec<f64> = assets.iter().filter_map(|a| relative_matrix(&a.mse)[i][j]).collect();
            let avg_ratio = (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64);
            let share = |level: f64| {
                assets.iter().filter(|a| a.dm[i][j].is_some_and(|d| d.p_value < level)).count() as f64 / n_assets
            };
            pairs.push(PairSummary { row, column, avg_ratio, reject_10: share(0.10), reject_5: share(0.05), reject_1: share(0.01) });
        }
    }
    let mcs_inclusion = (0..models.len())
        .map(|k| {
            assets.iter().filter(|a| a.mcs.as_ref().is_none_or(|r| r.survivors.contains(&k))).count() as f64 / n_assets
        })
        .collect();
    Ok(Evaluation { models, assets, pairs, mcs_inclusion })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn writer(path: &Path, header_comment: Option<&str>) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if let Some(c) = header_comment {
        writeln!(file, "# {c}")?;
    }
    Ok(csv::Writer::from_writer(file))
}

impl Evaluation {
    pub fn write_relative_mse(&self, path: impl AsRef<Path>, header_comment: Option<&str>) -> Result<()> {
        let mut w = writer(path.as_ref(), header_comment)?;
        w.write_record(["row_model", "column_model", "avg_ratio", "reject_10", "reject_5", "reject_1"])?;
        for p in &self.pairs {
            w.write_record([
                p.row.id(),
                p.column.id(),
                opt(p.avg_ratio),
                p.reject_10.to_string(),
                p.reject_5.to_string(),
                p.reject_1.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_mcs(&self, path: impl AsRef<Path>, header_comment: Option<&str>) -> Result<()> {
        let mut w = writer(path.as_ref(), header_comment)?;
        w.write_record(["model", "inclusion_rate"])?;
        for (m, r) in self.models.iter().zip(&self.mcs_inclusion) {
            w.write_record([m.id(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-asset MSE and MCS p-values, long format.
    pub fn write_asset_detail(&self, path: impl AsRef<Path>, header_comment: Option<&str>) -> Result<()> {
        let mut w = writer(path.as_ref(), header_comment)?;
        w.write_record(["asset", "model", "n", "mse", "mcs_p_value", "in_mcs"])?;
        for a in &self.assets {
            for (k, m) in a.models.iter().enumerate() {
                let (p, inside) = match &a.mcs {
                    Some(r) => (r.p_values[k].to_string(), r.survivors.contains(&k)),
                    None => ("NA".to_string(), true),
                };
                w.write_record([a.asset.clone(), m.id(), a.dates.len().to_string(), a.mse[k].to_string(), p, inside.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Decile MSE relative to `benchmark`, averaged over assets.
    pub fn write_deciles(&self, benchmark: ModelId, path: impl AsRef<Path>, header_comment: Option<&str>) -> Result<()> {
        let b = self
            .models
            .iter()
            .position(|m| *m == benchmark)
            .ok_or_else(|| Error::InvalidInput(format!("benchmark {benchmark} is not in the forecast table")))?;
        let per_asset: Vec<DecileMse> =
            self.assets.iter().filter_map(|a| decile_mse(&a.losses, &a.realized, b).ok()).collect();
        let mut w = writer(path.as_ref(), header_comment)?;
        w.write_record(["model", "decile", "relative_mse"])?;
        for (k, m) in self.models.iter().enumerate() {
            for d in 0..10 {
                let v: Vec<f64> = per_asset.iter().filter_map(|x| x.relative[k][d]).collect();
                let avg = (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
                w.write_record([m.id(), (d + 1).to_string(), opt(avg)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
