//! Feed-forward networks with leaky-ReLU hidden layers and a linear output,
//! trained by Adam on squared error with inverted dropout and early
//! stopping, plus the multi-seed ensemble used for the NN forecasts.
//!
//! Parameters of all layers live in one flat vector. Layer `l` stores its
//! weights row-major (`w[o * n_in + i]`) followed by its biases. Every sum
//! runs in a fixed order, so a given seed reproduces identical weights.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeedStream, StreamRng};
use crate::scalar::Scalar;
use crate::timeseries::FeatureMatrix;

/// Hidden layer widths of the four standard architectures.
pub const ARCHITECTURES: [&[usize]; 4] = [&[2], &[4, 2], &[8, 4, 2], &[16, 8, 4, 2]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutConvention {
    /// `rate` is the probability of keeping a unit.
    Keep,
    /// `rate` is the probability of dropping a unit.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub rate: f64,
    pub convention: DropoutConvention,
}

impl Dropout {
    pub fn keep_probability(&self) -> f64 {
        match self.convention {
            DropoutConvention::Keep => self.rate,
            DropoutConvention::Drop => 1.0 - self.rate,
        }
    }

    pub fn none() -> Self {
        Self { rate: 1.0, convention: DropoutConvention::Keep }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub dropout: Dropout,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs_max: usize,
    pub patience: usize,
    /// `None` trains full batch.
    pub batch_size: Option<usize>,
}

impl NetworkSpec {
    /// Architecture `k` in `1..=4` with the default training settings.
    pub fn standard(k: usize) -> Result<Self> {
        let hidden = ARCHITECTURES
            .get(k.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidInput(format!("network architecture must be 1..=4, got {k}")))?;
        Ok(Self {
            hidden: hidden.to_vec(),
            leaky_slope: 0.01,
            dropout: Dropout { rate: 0.8, convention: DropoutConvention::Keep },
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            epochs_max: 500,
            patience: 100,
            batch_size: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty with positive widths".into()));
        }
        if self.leaky_slope < 0.0 {
            return Err(Error::Config("leaky slope must be >= 0".into()));
        }
        let keep = self.dropout.keep_probability();
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::Config(format!("dropout keep probability must lie in (0, 1], got {keep}")));
        }
        if !(self.learning_rate > 0.0) || self.epochs_max == 0 {
            return Err(Error::Config("learning rate and epoch cap must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Layer shapes and flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network<T> {
    /// `sizes[0]` inputs, then hidden widths, then the single output.
    pub sizes: Vec<usize>,
    pub params: Vec<T>,
    pub leaky_slope: T,
}

fn leaky<T: Scalar>(z: T, c: T) -> T {
    if z < T::zero() {
        c * z
    } else {
        z
    }
}

fn leaky_grad<T: Scalar>(z: T, c: T) -> T {
    if z < T::zero() {
        c
    } else {
        T::one()
    }
}

/// Per-sample activations kept for the backward pass.
struct Trace<T> {
    /// Pre-activations of each non-input layer.
    z: Vec<Vec<T>>,
    /// Layer outputs; `a[0]` is the input.
    a: Vec<Vec<T>>,
    /// Dropout multipliers (0 or 1/keep) for hidden layers.
    mask: Vec<Vec<T>>,
}

impl<T: Scalar> Trace<T> {
    fn new(sizes: &[usize]) -> Self {
        let nl = sizes.len() - 1;
        Self {
            z: sizes[1..].iter().map(|&n| vec![T::zero(); n]).collect(),
            a: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            mask: sizes[1..nl].iter().map(|&n| vec![T::one(); n]).collect(),
        }
    }
}

impl<T: Scalar> Network<T> {
    pub fn zeros(n_inputs: usize, hidden: &[usize], leaky_slope: f64) -> Self {
        let mut sizes = vec![n_inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self { sizes, params: vec![T::zero(); n], leaky_slope: T::lit(leaky_slope) }
    }

    /// Glorot-normal weights truncated at two standard deviations; zero biases.
    pub fn glorot(n_inputs: usize, hidden: &[usize], leaky_slope: f64, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(n_inputs, hidden, leaky_slope);
        for l in 0..net.n_layers() {
            let (n_in, n_out) = (net.sizes[l], net.sizes[l + 1]);
            let sd = (2.0 / (n_in + n_out) as f64).sqrt();
            let normal = Normal::new(0.0, sd).expect("positive std");
            let off = net.offset(l);
            for k in 0..n_in * n_out {
                let v = loop {
                    let v: f64 = normal.sample(rng);
                    if v.abs() <= 2.0 * sd {
                        break v;
                    }
                };
                net.params[off + k] = T::lit(v);
            }
        }
        net
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    fn offset(&self, layer: usize) -> usize {
        self.layer_offsets()[layer]
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.n_layers());
        let mut o = 0;
        for w in self.sizes.windows(2) {
            offs.push(o);
            o += w[0] * w[1] + w[1];
        }
        offs
    }

    pub fn weight(&self, layer: usize, out: usize, inp: usize) -> T {
        self.params[self.layer_offsets()[layer] + out * self.sizes[layer] + inp]
    }

    pub fn bias(&self, layer: usize, out: usize) -> T {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        self.params[self.layer_offsets()[layer] + n_in * n_out + out]
    }

    pub fn set_weight(&mut self, layer: usize, out: usize, inp: usize, v: T) {
        let i = self.layer_offsets()[layer] + out * self.sizes[layer] + inp;
        self.params[i] = v;
    }

    pub fn set_bias(&mut self, layer: usize, out: usize, v: T) {
        let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let i = self.layer_offsets()[layer] + n_in * n_out + out;
        self.params[i] = v;
    }

    fn trace(&self, row: &[T], offs: &[usize], masks: Option<(&mut StreamRng, f64)>) -> Trace<T> {
        let mut t = Trace::new(&self.sizes);
        self.fill(&mut t, row, offs, masks);
        t
    }

    fn fill(&self, t: &mut Trace<T>, row: &[T], offs: &[usize], mut masks: Option<(&mut StreamRng, f64)>) {
        let nl = self.n_layers();
        t.a[0].copy_from_slice(row);
        for l in 0..nl {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offs[l]..offs[l] + n_in * n_out];
            let b = &self.params[offs[l] + n_in * n_out..offs[l] + n_in * n_out + n_out];
            let (head, tail) = t.a.split_at_mut(l + 1);
            let prev = &head[l];
            let zl = &mut t.z[l];
            for o in 0..n_out {
                let mut s = b[o];
                let wo = &w[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    s += wo[i] * prev[i];
                }
                zl[o] = s;
            }
            let next = &mut tail[0];
            if l + 1 < nl {
                let m = &mut t.mask[l];
                match masks.as_mut() {
                    Some((rng, keep)) if *keep < 1.0 => {
                        let scale = T::lit(1.0 / *keep);
                        for mk in m.iter_mut() {
                            *mk = if rng.random::<f64>() < *keep { scale } else { T::zero() };
                        }
                    }
                    _ => m.iter_mut().for_each(|mk| *mk = T::one()),
                }
                for o in 0..n_out {
                    next[o] = leaky(zl[o], self.leaky_slope) * m[o];
                }
            } else {
                next.copy_from_slice(zl);
            }
        }
    }

    /// Inference-mode forward pass (no dropout).
    pub fn forward(&self, row: &[T]) -> Result<T> {
        if row.len() != self.n_inputs() {
            return Err(Error::Dimension { expected: self.n_inputs(), got: row.len() });
        }
        Ok(self.forward_unchecked(row, &self.layer_offsets()))
    }

    fn forward_unchecked(&self, row: &[T], offs: &[usize]) -> T {
        self.trace(row, offs, None).a[self.n_layers()][0]
    }

    /// Training-mode forward pass with a fresh dropout mask.
    pub fn forward_train(&self, row: &[T], keep: f64, rng: &mut StreamRng) -> Result<T> {
        if row.len() != self.n_inputs() {
            return Err(Error::Dimension { expected: self.n_inputs(), got: row.len() });
        }
        let offs = self.layer_offsets();
        Ok(self.trace(row, &offs, Some((rng, keep))).a[self.n_layers()][0])
    }

    /// Mean squared error over `rows` and its gradient with respect to
    /// `params`. Dropout masks are drawn when `dropout` is given.
    pub fn loss_and_gradient(
        &self,
        data: &NnData<T>,
        rows: &[usize],
        dropout: Option<(&mut StreamRng, f64)>,
    ) -> (T, Vec<T>) {
        let offs = self.layer_offsets();
        let nl = self.n_layers();
        let mut grad = vec![T::zero(); self.params.len()];
        let mut loss = T::zero();
        let nf = T::from_usize_lossy(rows.len().max(1));
        let mut dropout = dropout;
        let mut tr = Trace::new(&self.sizes);
        let width = self.sizes.iter().copied().max().unwrap_or(1);
        let mut delta = vec![T::zero(); width];
        let mut next_delta = vec![T::zero(); width];
        for &r in rows {
            match dropout.as_mut() {
                Some((rng, keep)) => self.fill(&mut tr, data.row(r), &offs, Some((&mut **rng, *keep))),
                None => self.fill(&mut tr, data.row(r), &offs, None),
            }
            let err = tr.a[nl][0] - data.y[r];
            loss += err * err;
            delta[0] = T::lit(2.0) * err / nf;
            for l in (0..nl).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let off = offs[l];
                let prev = &tr.a[l];
                for o in 0..n_out {
                    let d = delta[o];
                    let go = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    for i in 0..n_in {
                        go[i] += d * prev[i];
                    }
                    grad[off + n_in * n_out + o] += d;
                }
                if l > 0 {
                    let zp = &tr.z[l - 1];
                    let mp = &tr.mask[l - 1];
                    for i in 0..n_in {
                        let mut s = T::zero();
                        for o in 0..n_out {
                            s += self.params[off + o * n_in + i] * delta[o];
                        }
                        next_delta[i] = s * mp[i] * leaky_grad(zp[i], self.leaky_slope);
                    }
                    std::mem::swap(&mut delta, &mut next_delta);
                }
            }
        }
        (loss / nf, grad)
    }

    /// Inference MSE over `rows`.
    pub fn mse(&self, data: &NnData<T>, rows: &[usize]) -> T {
        let offs = self.layer_offsets();
        let mut tr = Trace::new(&self.sizes);
        let nl = self.n_layers();
        let mut s = T::zero();
        for &r in rows {
            self.fill(&mut tr, data.row(r), &offs, None);
            let e = tr.a[nl][0] - data.y[r];
            s += e * e;
        }
        s / T::from_usize_lossy(rows.len().max(1))
    }

    /// Signs of every hidden pre-activation over `rows`.
    fn activation_pattern(&self, data: &NnData<T>, rows: &[usize]) -> Vec<bool> {
        let offs = self.layer_offsets();
        let mut tr = Trace::new(&self.sizes);
        let nl = self.n_layers();
        let mut out = Vec::new();
        for &r in rows {
            self.fill(&mut tr, data.row(r), &offs, None);
            for z in &tr.z[..nl - 1] {
                out.extend(z.iter().map(|&v| v >= T::zero()));
            }
        }
        out
    }

    /// Layer-major JSON snapshot.
    pub fn to_json(&self) -> serde_json::Value {
        let layers: Vec<serde_json::Value> = (0..self.n_layers())
            .map(|l| {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let w: Vec<Vec<f64>> =
                    (0..n_out).map(|o| (0..n_in).map(|i| self.weight(l, o, i).to_f64_lossy()).collect()).collect();
                let b: Vec<f64> = (0..n_out).map(|o| self.bias(l, o).to_f64_lossy()).collect();
                serde_json::json!({"weights": w, "bias": b})
            })
            .collect();
        serde_json::json!({"version": 1, "sizes": self.sizes, "leaky_slope": self.leaky_slope.to_f64_lossy(), "layers": layers})
    }
}

/// Largest relative gap between the analytic gradient and central finite
/// differences with step `h`. The denominator is floored at `1e-4` so
/// that near-zero gradients are judged on an absolute scale, where the
/// roundoff of the difference quotient would otherwise dominate.
///
/// A coordinate whose perturbation moves any hidden pre-activation across
/// zero straddles a kink of the activation, where the difference quotient
/// is not a derivative estimate; such coordinates are skipped.
pub fn gradient_check(net: &Network<f64>, data: &NnData<f64>, rows: &[usize], h: f64) -> f64 {
    let (_, g) = net.loss_and_gradient(data, rows, None);
    let base = net.activation_pattern(data, rows);
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for k in 0..net.params.len() {
        probe.params[k] = net.params[k] + h;
        let up = probe.mse(data, rows);
        let crosses_up = probe.activation_pattern(data, rows) != base;
        probe.params[k] = net.params[k] - h;
        let dn = probe.mse(data, rows);
        let crosses_dn = probe.activation_pattern(data, rows) != base;
        probe.params[k] = net.params[k];
        if crosses_up || crosses_dn {
            continue;
        }
        let fd = (up - dn) / (2.0 * h);
        let denom = g[k].abs().max(fd.abs()).max(1e-4);
        worst = worst.max((g[k] - fd).abs() / denom);
    }
    worst
}

/// Row-major inputs with targets.
#[derive(Debug, Clone, PartialEq)]
pub struct NnData<T> {
    x: Vec<T>,
    pub y: Vec<T>,
    pub n_features: usize,
}

impl<T: Scalar> NnData<T> {
    pub fn new(rows: &[Vec<T>], y: Vec<T>) -> Result<Self> {
        if rows.len() != y.len() {
            return Err(Error::Dimension { expected: rows.len(), got: y.len() });
        }
        let p = rows.first().map_or(0, Vec::len);
        let mut x = Vec::with_capacity(rows.len() * p);
        for r in rows {
            if r.len() != p {
                return Err(Error::Dimension { expected: p, got: r.len() });
            }
            x.extend_from_slice(r);
        }
        Ok(Self { x, y, n_features: p })
    }

    pub fn from_matrix(fm: &FeatureMatrix<T>, rows: std::ops::Range<usize>) -> Self {
        let p = fm.n_cols();
        let mut x = Vec::with_capacity(rows.len() * p);
        for i in rows.clone() {
            x.extend_from_slice(fm.row(i));
        }
        Self { x, y: fm.target[rows].to_vec(), n_features: p }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNetwork<T> {
    pub net: Network<T>,
    pub seed: u64,
    /// Target standardization applied during training.
    pub y_mean: T,
    pub y_std: T,
    /// Set when the training target is constant: every forecast is `y_mean`.
    pub constant: bool,
    pub train_mse_history: Vec<T>,
    pub val_mse_history: Vec<T>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    /// Validation MSE of the restored weights, in target units.
    pub best_val_mse: T,
}

impl<T: Scalar> TrainedNetwork<T> {
    pub fn predict(&self, row: &[T]) -> Result<T> {
        if self.constant {
            if row.len() != self.net.n_inputs() {
                return Err(Error::Dimension { expected: self.net.n_inputs(), got: row.len() });
            }
            return Ok(self.y_mean);
        }
        Ok(self.y_mean + self.y_std * self.net.forward(row)?)
    }
}

/// Trains one network on `train`, early-stopping on `validation`.
pub fn train<T: Scalar>(spec: &NetworkSpec, train: &NnData<T>, validation: &NnData<T>, seed: u64) -> Result<TrainedNetwork<T>> {
    spec.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Empty("network training needs training and validation rows".into()));
    }
    if train.n_features != validation.n_features {
        return Err(Error::Dimension { expected: train.n_features, got: validation.n_features });
    }
    let stream = SeedStream::new(seed).child("network");
    let mut init_rng = stream.child("init").rng();
    let mut mask_rng = stream.child("dropout").rng();
    let mut order_rng = stream.child("batches").rng();
    let net = Network::glorot(train.n_features, &spec.hidden, spec.leaky_slope, &mut init_rng);

    let n = T::from_usize_lossy(train.len());
    let y_mean = train.y.iter().copied().sum::<T>() / n;
    let var = train.y.iter().map(|&y| (y - y_mean) * (y - y_mean)).sum::<T>() / n;
    let y_std = var.sqrt();
    if !(y_std > T::zero()) {
        return Ok(TrainedNetwork {
            best_val_mse: validation.y.iter().map(|&y| (y - y_mean) * (y - y_mean)).sum::<T>()
                / T::from_usize_lossy(validation.len()),
            net,
            seed,
            y_mean,
            y_std: T::one(),
            constant: true,
            train_mse_history: Vec::new(),
            val_mse_history: Vec::new(),
            stopped_epoch: 0,
            best_epoch: 0,
        });
    }
    let scale = |d: &NnData<T>| NnData { x: d.x.clone(), y: d.y.iter().map(|&y| (y - y_mean) / y_std).collect(), n_features: d.n_features };
    let tr = scale(train);
    let va = scale(validation);
    let var_units = y_std * y_std;

    let mut net = net;
    let p = net.params.len();
    let (mut m, mut v) = (vec![T::zero(); p], vec![T::zero(); p]);
    let (b1, b2) = (T::lit(spec.beta1), T::lit(spec.beta2));
    let (lr, eps) = (T::lit(spec.learning_rate), T::lit(spec.epsilon));
    let keep = spec.dropout.keep_probability();
    let mut step = 0i32;
    let all_rows: Vec<usize> = (0..tr.len()).collect();
    let val_rows: Vec<usize> = (0..va.len()).collect();
    let batch = spec.batch_size.unwrap_or(tr.len()).min(tr.len());

    let mut best = (T::infinity(), net.params.clone(), 0usize);
    let mut train_hist = Vec::new();
    let mut val_hist = Vec::new();
    let mut wait = 0usize;
    for epoch in 1..=spec.epochs_max {
        let mut order = all_rows.clone();
        if batch < tr.len() {
            order.shuffle(&mut order_rng);
        }
        let mut epoch_loss = T::zero();
        for chunk in order.chunks(batch) {
            let (loss, grad) = net.loss_and_gradient(&tr, chunk, Some((&mut mask_rng, keep)));
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            epoch_loss += loss * T::from_usize_lossy(chunk.len());
            step += 1;
            let c1 = T::one() - b1.powi(step);
            let c2 = T::one() - b2.powi(step);
            for k in 0..p {
                m[k] = b1 * m[k] + (T::one() - b1) * grad[k];
                v[k] = b2 * v[k] + (T::one() - b2) * grad[k] * grad[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                net.params[k] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        train_hist.push(epoch_loss / n * var_units);
        let val = net.mse(&va, &val_rows) * var_units;
        if !val.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        val_hist.push(val);
        if val < best.0 {
            best = (val, net.params.clone(), epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait > spec.patience {
                break;
            }
        }
    }
    let stopped_epoch = val_hist.len();
    net.params = best.1;
    Ok(TrainedNetwork {
        net,
        seed,
        y_mean,
        y_std,
        constant: false,
        train_mse_history: train_hist,
        val_mse_history: val_hist,
        stopped_epoch,
        best_epoch: best.2,
        best_val_mse: best.0,
    })
}

/// Networks trained from many seeds, ranked by validation MSE (ties by seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEnsemble<T> {
    pub members: Vec<TrainedNetwork<T>>,
    pub failures: usize,
}

impl<T: Scalar> SeedEnsemble<T> {
    /// Mean forecast of the `k` best members.
    pub fn predict_top(&self, row: &[T], k: usize) -> Result<T> {
        if k == 0 || k > self.members.len() {
            return Err(Error::InvalidInput(format!("cannot average the best {k} of {} networks", self.members.len())));
        }
        let mut s = T::zero();
        for m in &self.members[..k] {
            s += m.predict(row)?;
        }
        Ok(s / T::from_usize_lossy(k))
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.members.iter().map(|m| m.seed).collect()
    }
}

/// Trains one network per seed in parallel. Failed members are counted;
/// the ensemble is valid when at least `min_members` succeed.
pub fn train_seed_ensemble<T: Scalar>(
    spec: &NetworkSpec,
    train_data: &NnData<T>,
    validation: &NnData<T>,
    seeds: &[u64],
    min_members: usize,
) -> Result<SeedEnsemble<T>> {
    let mut uniq = seeds.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    if uniq.len() != seeds.len() {
        return Err(Error::InvalidInput("ensemble seeds must be distinct".into()));
    }
    let results: Vec<Result<TrainedNetwork<T>>> =
        seeds.par_iter().map(|&s| train(spec, train_data, validation, s)).collect();
    let mut members = Vec::new();
    let mut failures = 0;
    for r in results {
        match r {
            Ok(m) => members.push(m),
            Err(e) => {
                log::warn!("network training failed: {e}");
                failures += 1;
            }
        }
    }
    if members.len() < min_members.max(1) {
        return Err(Error::InvalidInput(format!(
            "only {} of {} networks trained; need {}",
            members.len(),
            seeds.len(),
            min_members
        )));
    }
    members.sort_by(|a, b| {
        a.best_val_mse.partial_cmp(&b.best_val_mse).unwrap_or(std::cmp::Ordering::Equal).then(a.seed.cmp(&b.seed))
    });
    Ok(SeedEnsemble { members, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(seed: u64, n: usize, p: usize) -> NnData<f64> {
        let mut rng = SeedStream::new(seed).rng();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y = rows.iter().map(|r| r.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v).sum::<f64>().sin()).collect();
        NnData::new(&rows, y).unwrap()
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut net = Network::<f64>::zeros(3, &[4, 2], 0.01);
        net.set_bias(2, 0, 1.7);
        assert_eq!(net.forward(&[5.0, -2.0, 0.3]).unwrap(), 1.7);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn leaky_negative_branch() {
        let mut net = Network::<f64>::zeros(1, &[1], 0.01);
        net.set_weight(0, 0, 0, 1.0);
        net.set_weight(1, 0, 0, 1.0);
        assert!((net.forward(&[-1.0]).unwrap() + 0.01).abs() < 1e-15);
    }

    #[test]
    fn matrix_recurrence_oracle() {
        let mut rng = SeedStream::new(4).rng();
        let net = Network::<f64>::glorot(5, &[8, 4, 2], 0.01, &mut rng);
        let x = [0.3, -1.2, 0.5, 2.0, -0.7];
        let mut a = x.to_vec();
        for l in 0..net.n_layers() {
            let n_out = net.sizes[l + 1];
            let mut next = vec![0.0; n_out];
            for (o, slot) in next.iter_mut().enumerate() {
                let z = net.bias(l, o) + (0..a.len()).map(|i| net.weight(l, o, i) * a[i]).sum::<f64>();
                *slot = if l + 1 == net.n_layers() || z >= 0.0 { z } else { 0.01 * z };
            }
            a = next;
        }
        assert!((net.forward(&x).unwrap() - a[0]).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = toy(1, 20, 3);
        let rows: Vec<usize> = (0..20).collect();
        for hidden in ARCHITECTURES {
            let mut rng = SeedStream::new(9).rng();
            let net = Network::<f64>::glorot(3, hidden, 0.01, &mut rng);
            let err = gradient_check(&net, &data, &rows, 1e-6);
            assert!(err < 1e-5, "{hidden:?}: {err}");
        }
    }

    #[test]
    fn dropout_keeps_expected_preactivation() {
        let mut rng = SeedStream::new(2).rng();
        let net = Network::<f64>::glorot(2, &[16, 1], 0.01, &mut rng);
        let offs = net.layer_offsets();
        let x = [0.8, -0.4];
        let clean = net.trace(&x, &offs, None).z[1][0];
        let mut mrng = SeedStream::new(3).rng();
        let reps = 20_000;
        let mean = (0..reps).map(|_| net.trace(&x, &offs, Some((&mut mrng, 0.8))).z[1][0]).sum::<f64>() / reps as f64;
        assert!((mean - clean).abs() <= 0.01 * clean.abs().max(1e-3), "{mean} vs {clean}");
    }

    #[test]
    fn training_is_deterministic_and_restores_best() {
        let spec = NetworkSpec { epochs_max: 40, ..NetworkSpec::standard(2).unwrap() };
        let tr = toy(5, 80, 3);
        let va = toy(6, 30, 3);
        let a = train(&spec, &tr, &va, 17).unwrap();
        let b = train(&spec, &tr, &va, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.val_mse_history.len(), a.stopped_epoch);
        let min = a.val_mse_history.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_val_mse, min);
    }

    #[test]
    fn patience_zero_stops_at_first_non_improvement() {
        let spec = NetworkSpec { patience: 0, epochs_max: 500, ..NetworkSpec::standard(1).unwrap() };
        let t = train(&spec, &toy(7, 50, 2), &toy(8, 20, 2), 1).unwrap();
        let h = &t.val_mse_history;
        if t.stopped_epoch < 500 {
            assert!(h[h.len() - 1] >= h[h.len() - 2]);
            assert!(h[..h.len() - 1].windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn constant_target_predicts_mean() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let d = NnData::new(&rows, vec![0.25; 20]).unwrap();
        let t = train(&NetworkSpec::standard(3).unwrap(), &d, &d, 3).unwrap();
        assert_eq!(t.predict(&[100.0]).unwrap(), 0.25);
    }

    #[test]
    fn linear_activation_matches_ols() {
        // c = 1 makes the network linear in its input.
        let mut rng = SeedStream::new(11).rng();
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 0.5 + 1.5 * r[0] - 0.7 * r[1] + 0.05 * rng.random_range(-1.0..1.0)).collect();
        let d = NnData::new(&rows, y.clone()).unwrap();
        let spec = NetworkSpec {
            leaky_slope: 1.0,
            dropout: Dropout::none(),
            learning_rate: 0.01,
            epochs_max: 3000,
            patience: 3000,
            ..NetworkSpec::standard(1).unwrap()
        };
        let t = train(&spec, &d, &d, 2).unwrap();
        let fm = FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            rows.clone(),
            y.clone(),
            crate::timeseries::DataSplit { train: 0..200, validation: 200..200, test: 200..200 },
        )
        .unwrap();
        let ols = crate::linear::fit_ols(&fm).unwrap();
        let mse = |f: &dyn Fn(&[f64]) -> f64| rows.iter().zip(&y).map(|(r, t)| (f(r) - t).powi(2)).sum::<f64>() / 200.0;
        let gap = mse(&|r| t.predict(r).unwrap()) - mse(&|r| ols.raw_predict(r));
        assert!(gap < 1e-3, "gap {gap}");
    }

    #[test]
    fn ensemble_ranking() {
        let spec = NetworkSpec { epochs_max: 15, ..NetworkSpec::standard(1).unwrap() };
        let (tr, va) = (toy(1, 60, 2), toy(2, 20, 2));
        let e = train_seed_ensemble(&spec, &tr, &va, &[5, 3, 9, 1], 1).unwrap();
        assert!(e.members.windows(2).all(|w| w[0].best_val_mse <= w[1].best_val_mse));
        let e2 = train_seed_ensemble(&spec, &tr, &va, &[9, 1, 3, 5], 1).unwrap();
        assert_eq!(e.seeds(), e2.seeds());
        assert!(train_seed_ensemble(&spec, &tr, &va, &[1, 1], 1).is_err());
        let row = tr.row(0);
        assert_eq!(e.predict_top(row, 1).unwrap(), e.members[0].predict(row).unwrap());
    }
}
