//! Accumulated local effects and the ALE-based variable importance.
//!
//! Bin `k` covers `(z_{k-1}, z_k]`. The lowest edge sits a hair below the
//! sample minimum so that every observation falls in some bin. A curve is
//! evaluated at a point by the value at the right edge of its bin.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Predictor;

pub const DEFAULT_BINS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AleCurve {
    pub feature: String,
    pub edges: Vec<f64>,
    /// Average prediction change across each bin; `local[k - 1]` belongs to bin `k`.
    pub local: Vec<f64>,
    pub counts: Vec<usize>,
    /// Accumulated effects at the edges, starting from 0.
    pub uncentered: Vec<f64>,
    pub centered: Vec<f64>,
    /// The feature is constant on the sample and the curve is zero.
    pub constant: bool,
}

impl AleCurve {
    pub fn bins(&self) -> usize {
        self.local.len()
    }

    /// Index of the bin containing `z`, clamped to the outermost bins.
    pub fn bin_of(&self, z: f64) -> usize {
        let k = self.edges.partition_point(|&e| e < z);
        k.clamp(1, self.bins().max(1))
    }

    pub fn value_at(&self, z: f64) -> f64 {
        if self.bins() == 0 {
            return 0.0;
        }
        self.centered[self.bin_of(z)]
    }

    /// Rebuilds the accumulated values from the stored local effects.
    pub fn reaccumulate(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(self.local.len() + 1);
        acc.push(0.0);
        let mut s = 0.0;
        for e in &self.local {
            s += e;
            acc.push(s);
        }
        acc
    }
}

/// Quantile edges with duplicates collapsed; the first edge is nudged
/// below the minimum by `1e-9 * (max - min)`.
fn quantile_edges(sorted: &[f64], bins: usize) -> Vec<f64> {
    let n = sorted.len();
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let mut edges = Vec::with_capacity(bins + 1);
    edges.push(lo - 1e-9 * (hi - lo));
    for k in 1..=bins {
        let pos = k as f64 * (n - 1) as f64 / bins as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        let q = if i + 1 < n { sorted[i] + frac * (sorted[i + 1] - sorted[i]) } else { sorted[n - 1] };
        if q > *edges.last().expect("nonempty") {
            edges.push(q);
        }
    }
    *edges.last_mut().expect("nonempty") = hi;
    edges
}

/// ALE curve of feature `j` for `model` over the sample `rows`.
pub fn ale_estimate(model: &dyn Predictor, rows: &[Vec<f64>], j: usize, bins: usize, feature: &str) -> Result<AleCurve> {
    let t = rows.len();
    if t < 2 {
        return Err(Error::Sizing("ALE needs at least two rows".into()));
    }
    if bins == 0 {
        return Err(Error::Config("ALE needs at least one bin".into()));
    }
    if rows.iter().any(|r| j >= r.len()) {
        return Err(Error::InvalidInput(format!("feature index {j} out of range")));
    }
    let mut sorted: Vec<f64> = rows.iter().map(|r| r[j]).collect();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("feature {feature} has non-finite values")));
    }
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[t - 1] {
        log::warn!("ALE: feature {feature} is constant; its curve is zero");
        return Ok(AleCurve {
            feature: feature.to_string(),
            edges: vec![sorted[0], sorted[0]],
            local: vec![0.0],
            counts: vec![t],
            uncentered: vec![0.0, 0.0],
            centered: vec![0.0, 0.0],
            constant: true,
        });
    }
    let edges = quantile_edges(&sorted, bins);
    let k_bins = edges.len() - 1;
    if k_bins < bins {
        log::info!("ALE: feature {feature} has {k_bins} distinct bins instead of {bins}");
    }
    let mut sums = vec![0.0; k_bins];
    let mut counts = vec![0usize; k_bins];
    let mut row_bin = Vec::with_capacity(t);
    let mut buf = Vec::new();
    for r in rows {
        let k = edges.partition_point(|&e| e < r[j]).clamp(1, k_bins);
        buf.clear();
        buf.extend_from_slice(r);
        buf[j] = edges[k];
        let upper = model.predict(&buf)?;
        buf[j] = edges[k - 1];
        let lower = model.predict(&buf)?;
        sums[k - 1] += upper - lower;
        counts[k - 1] += 1;
        row_bin.push(k);
    }
    let local: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    let mut curve = AleCurve {
        feature: feature.to_string(),
        edges,
        local,
        counts,
        uncentered: Vec::new(),
        centered: Vec::new(),
        constant: false,
    };
    curve.uncentered = curve.reaccumulate();
    let offset = row_bin.iter().map(|&k| curve.uncentered[k]).sum::<f64>() / t as f64;
    curve.centered = curve.uncentered.iter().map(|v| v - offset).collect();
    Ok(curve)
}

/// Curves for every feature, computed in parallel.
pub fn ale_all(model: &dyn Predictor, rows: &[Vec<f64>], names: &[String], bins: usize) -> Result<Vec<AleCurve>> {
    names.par_iter().enumerate().map(|(j, name)| ale_estimate(model, rows, j, bins, name)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViScore {
    pub features: Vec<String>,
    /// Standard deviation of each centered curve over the sample.
    pub importance: Vec<f64>,
    /// `importance` normalized to sum to one.
    pub vi: Vec<f64>,
    /// Every curve is zero and `vi` is uniform.
    pub uniform_fallback: bool,
}

pub fn variable_importance(curves: &[AleCurve], rows: &[Vec<f64>]) -> Result<ViScore> {
    if curves.is_empty() {
        return Err(Error::Empty("no ALE curves".into()));
    }
    let t = rows.len();
    if t < 2 {
        return Err(Error::Sizing("importance needs at least two rows".into()));
    }
    let importance: Vec<f64> = curves
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let ss: f64 = rows.iter().map(|r| c.value_at(r[j]).powi(2)).sum();
            (ss / (t - 1) as f64).sqrt()
        })
        .collect();
    let total: f64 = importance.iter().sum();
    let (vi, uniform_fallback) = if total > 0.0 {
        (importance.iter().map(|i| i / total).collect(), false)
    } else {
        log::warn!("every ALE curve is zero; reporting uniform importance");
        (vec![1.0 / curves.len() as f64; curves.len()], true)
    };
    Ok(ViScore { features: curves.iter().map(|c| c.feature.clone()).collect(), importance, vi, uniform_fallback })
}

/// `feature,z,ale` at the edges within one standard deviation of the mean
/// (the features are standardized).
pub fn write_curves_csv(curves: &[AleCurve], path: impl AsRef<Path>, header_comment: Option<&str>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if let Some(c) = header_comment {
        writeln!(file, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["feature", "z", "ale"])?;
    for c in curves {
        for (z, v) in c.edges.iter().zip(&c.centered) {
            if (-1.0..=1.0).contains(z) {
                w.write_record([c.feature.clone(), z.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_vi_csv(score: &ViScore, path: impl AsRef<Path>, header_comment: Option<&str>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if let Some(c) = header_comment {
        writeln!(file, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["feature", "importance", "vi"])?;
    for ((f, i), v) in score.features.iter().zip(&score.importance).zip(&score.vi) {
        w.write_record([f.clone(), i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
