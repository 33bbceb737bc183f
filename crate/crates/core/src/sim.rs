//! Synthetic data with known ground truth: jump-diffusion log-price paths on
//! an intraday grid, and series generated directly from the HAR recursion.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::realized::RealizedDay;
use crate::rng::{indexed_rng, StreamRng};
use crate::timeseries::{DailySeries, IntradayPanel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolModel {
    /// Constant spot volatility, per square-root day.
    Constant { sigma: f64 },
    /// Mean-reverting square-root spot variance (rates per day):
    /// `dv = kappa (theta - v) dt + xi sqrt(v) dB`, started at `theta`.
    SquareRoot { kappa: f64, theta: f64, xi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpModel {
    /// Expected jumps per day.
    pub intensity: f64,
    /// Standard deviation of the Gaussian jump size.
    pub size_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub days: usize,
    #[serde(default = "default_n")]
    pub n_per_day: usize,
    #[serde(default)]
    pub mu: f64,
    pub vol_model: VolModel,
    #[serde(default)]
    pub jump: Option<JumpModel>,
    #[serde(default)]
    pub seed: u64,
    /// Deterministic jumps `(day, size)` added at the first interval of the day.
    #[serde(default)]
    pub forced_jumps: Vec<(usize, f64)>,
    #[serde(default = "default_start")]
    pub start_date: String,
}

fn default_n() -> usize {
    78
}

fn default_start() -> String {
    "2001-01-29".into()
}

impl SimConfig {
    pub fn constant(days: usize, sigma: f64, seed: u64) -> Self {
        Self {
            days,
            n_per_day: 78,
            mu: 0.0,
            vol_model: VolModel::Constant { sigma },
            jump: None,
            seed,
            forced_jumps: Vec::new(),
            start_date: default_start(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.days < 1 {
            problems.push("days must be >= 1".to_string());
        }
        if self.n_per_day < 2 {
            problems.push("n_per_day must be >= 2".to_string());
        }
        if !self.mu.is_finite() {
            problems.push("mu must be finite".to_string());
        }
        match self.vol_model {
            VolModel::Constant { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                problems.push("sigma must be finite and >= 0".to_string())
            }
            VolModel::SquareRoot { kappa, theta, xi }
                if ![kappa, theta, xi].iter().all(|v| *v >= 0.0 && v.is_finite()) =>
            {
                problems.push("kappa, theta, xi must be finite and >= 0".to_string())
            }
            _ => {}
        }
        if let Some(j) = &self.jump {
            if !(j.intensity >= 0.0 && j.size_std >= 0.0 && j.intensity.is_finite() && j.size_std.is_finite()) {
                problems.push("jump intensity and size_std must be finite and >= 0".to_string());
            }
        }
        if self.forced_jumps.iter().any(|(d, _)| *d >= self.days) {
            problems.push("forced jump outside the simulated days".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Output of one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub panel: IntradayPanel,
    /// Exact discretized quadratic variation per day: `sum v dt + sum J^2`.
    pub true_qv: Vec<f64>,
}

/// Simulates path 0 of `cfg`.
pub fn simulate_paths(cfg: &SimConfig) -> Result<SimulatedPath> {
    simulate_path_indexed(cfg, 0, "asset0")
}

/// Simulates `count` independent assets in parallel; path `i` uses the
/// stream `(seed, i)`.
pub fn simulate_assets(cfg: &SimConfig, names: &[String]) -> Result<Vec<SimulatedPath>> {
    cfg.validate()?;
    names.par_iter().enumerate().map(|(i, name)| simulate_path_indexed(cfg, i as u64, name)).collect()
}

pub fn simulate_path_indexed(cfg: &SimConfig, index: u64, asset_id: &str) -> Result<SimulatedPath> {
    cfg.validate()?;
    let mut rng = indexed_rng(cfg.seed, index);
    let n = cfg.n_per_day;
    let dt = 1.0 / n as f64;
    let sqrt_dt = dt.sqrt();
    let jump_size = cfg.jump.as_ref().map(|j| (Poisson::new(j.intensity * dt).ok(), j.size_std));
    let mut forced: BTreeMap<usize, f64> = BTreeMap::new();
    for &(d, s) in &cfg.forced_jumps {
        *forced.entry(d).or_default() += s;
    }

    let mut v = match cfg.vol_model {
        VolModel::Constant { sigma } => sigma * sigma,
        VolModel::SquareRoot { theta, .. } => theta,
    };
    let mut returns = Vec::with_capacity(cfg.days);
    let mut true_qv = Vec::with_capacity(cfg.days);
    for day in 0..cfg.days {
        let mut row = Vec::with_capacity(n);
        let mut qv = 0.0;
        for j in 0..n {
            let vp = v.max(0.0);
            let z: f64 = rng.sample(StandardNormal);
            let mut r = cfg.mu * dt + (vp * dt).sqrt() * z;
            qv += vp * dt;
            if let Some((Some(pois), size_std)) = &jump_size {
                let k = pois.sample(&mut rng) as usize;
                for _ in 0..k {
                    let jmp: f64 = size_std * rng.sample::<f64, _>(StandardNormal);
                    r += jmp;
                    qv += jmp * jmp;
                }
            }
            if j == 0 {
                if let Some(&jmp) = forced.get(&day) {
                    r += jmp;
                    qv += jmp * jmp;
                }
            }
            if let VolModel::SquareRoot { kappa, theta, xi } = cfg.vol_model {
                let z2: f64 = rng.sample(StandardNormal);
                v = v + kappa * (theta - vp) * dt + xi * vp.sqrt() * sqrt_dt * z2;
            }
            row.push(r);
        }
        returns.push(row);
        true_qv.push(qv);
    }
    let dates = business_days(&cfg.start_date, cfg.days)?;
    Ok(SimulatedPath { panel: IntradayPanel::new(asset_id, dates, returns)?, true_qv })
}

/// Direct HAR-recursion generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarGenConfig {
    /// `(b0, b_daily, b_weekly, b_monthly)`.
    pub betas: [f64; 4],
    pub noise_std: f64,
    pub days: usize,
    pub seed: u64,
}

pub const HAR_WARMUP: usize = 500;

/// Iterates the HAR equation with Gaussian noise truncated to keep the
/// series positive, discarding a 500-day warm-up.
pub fn generate_har_series(cfg: &HarGenConfig) -> Result<DailySeries> {
    let [b0, b1, b2, b3] = cfg.betas;
    let persistence = b1 + b2 + b3;
    if !(persistence < 1.0) || !cfg.betas.iter().all(|b| b.is_finite()) {
        return Err(Error::Config(format!("explosive HAR betas: b1 + b2 + b3 = {persistence} >= 1")));
    }
    if !(cfg.noise_std >= 0.0) || cfg.days == 0 {
        return Err(Error::Config("noise_std must be >= 0 and days > 0".into()));
    }
    let fixed = b0 / (1.0 - persistence);
    let total = cfg.days + HAR_WARMUP;
    let mut rv: Vec<f64> = vec![fixed; 22];
    rv.reserve(total);
    let mut rng = indexed_rng(cfg.seed, 0);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..total {
        let t = rv.len();
        let d = rv[t - 1];
        let w = rv[t - 5..t].iter().sum::<f64>() / 5.0;
        let m = rv[t - 22..t].iter().sum::<f64>() / 22.0;
        let mean = b0 + b1 * d + b2 * w + b3 * m;
        let next = if cfg.noise_std == 0.0 {
            mean
        } else {
            positive_draw(&mut rng, &noise, mean)
        };
        rv.push(next);
    }
    let values = rv.split_off(22 + HAR_WARMUP);
    DailySeries::new("har", business_days("2001-01-29", values.len())?, values)
}

fn positive_draw(rng: &mut StreamRng, noise: &Normal<f64>, mean: f64) -> f64 {
    for _ in 0..10_000 {
        let x = mean + noise.sample(rng);
        if x > 0.0 {
            return x;
        }
    }
    mean.abs().max(f64::MIN_POSITIVE)
}

/// Synthetic stand-ins for the nine exogenous covariates, driven by the
/// simulated realized measures so that they carry some predictive content.
pub fn simulate_covariates(days: &[RealizedDay<f64>], dates: &[String], seed: u64) -> Result<BTreeMap<String, DailySeries>> {
    let mut rng = indexed_rng(seed, 1_000_003);
    let n = days.len();
    let mut out = BTreeMap::new();
    let ann = |v: f64| 100.0 * (252.0 * v.max(0.0)).sqrt();
    let mut put = |name: &str, values: Vec<f64>| -> Result<()> {
        out.insert(name.to_string(), DailySeries::new(name, dates.to_vec(), values)?);
        Ok(())
    };

    // IV: forward-looking-ish annualized vol of a smoothed RV plus noise.
    let mut iv = Vec::with_capacity(n);
    let mut ewma = days.first().map_or(0.0, |d| d.rv);
    for d in days {
        ewma = 0.9 * ewma + 0.1 * d.rv;
        let z: f64 = rng.sample(StandardNormal);
        iv.push((ann(ewma) * 1.15 * (0.05 * z).exp()).max(1.0));
    }
    put("IV", iv.clone())?;
    put("EA", (0..n).map(|t| if t % 63 == 40 { 1.0 } else { 0.0 }).collect())?;
    let vix: Vec<f64> = iv.iter().map(|v| (0.8 * v + 4.0 * rng.sample::<f64, _>(StandardNormal).exp()).max(5.0)).collect();
    put("VIX", vix)?;
    let mut epu = Vec::with_capacity(n);
    let mut level: f64 = 4.5;
    for _ in 0..n {
        level = 4.5 + 0.95 * (level - 4.5) + 0.2 * rng.sample::<f64, _>(StandardNormal);
        epu.push(level.exp());
    }
    put("EPU", epu)?;
    let mut us3m = Vec::with_capacity(n);
    let mut rate: f64 = 200.0;
    for _ in 0..n {
        rate = (rate + 3.0 * rng.sample::<f64, _>(StandardNormal)).max(0.0);
        us3m.push(rate);
    }
    put("US3M", us3m)?;
    put("HSI", (0..n).map(|_| (0.015 * rng.sample::<f64, _>(StandardNormal)).powi(2)).collect())?;
    let rets: Vec<f64> = days.iter().map(|d| d.ret_oc).collect();
    put(
        "M1W",
        (0..n).map(|t| 100.0 * rets[t.saturating_sub(4)..=t].iter().sum::<f64>()).collect(),
    )?;
    let mut vol = Vec::with_capacity(n);
    for d in days {
        let z: f64 = rng.sample(StandardNormal);
        vol.push((20.0 + 0.3 * (d.rv.max(1e-12) / 1e-4).ln() + 0.2 * z).exp());
    }
    put("$VOL", vol)?;
    let mut ads = Vec::with_capacity(n);
    let mut a: f64 = 0.0;
    for _ in 0..n {
        a = 0.98 * a + 0.1 * rng.sample::<f64, _>(StandardNormal);
        ads.push(a);
    }
    put("ADS", ads)?;
    Ok(out)
}

/// `count` consecutive weekdays starting at (or after) `start` (YYYY-MM-DD).
pub fn business_days(start: &str, count: usize) -> Result<Vec<String>> {
    let parse = |s: &str| -> Option<(i64, i64, i64)> {
        let mut it = s.split('-');
        Some((it.next()?.parse().ok()?, it.next()?.parse().ok()?, it.next()?.parse().ok()?))
    };
    let (y, m, d) = parse(start).ok_or_else(|| Error::Config(format!("bad start date '{start}'")))?;
    let mut day = days_from_civil(y, m, d);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        // 1970-01-01 was a Thursday: weekday index 0 = Monday.
        let weekday = (day + 3).rem_euclid(7);
        if weekday < 5 {
            let (y, m, d) = civil_from_days(day);
            out.push(format!("{y:04}-{m:02}-{d:02}"));
        }
        day += 1;
    }
    Ok(out)
}

fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn civil_from_days(z: i64) -> (i64, i64, i64) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + if m <= 2 { 1 } else { 0 };
    (y, m, d)
}
