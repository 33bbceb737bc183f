//! Linear forecasters: OLS for the HAR family, ridge, lasso, elastic net,
//! adaptive lasso and post lasso.
//!
//! All penalized fits minimize
//!
//! ```text
//! (1/T) sum_t (y_t - b0 - x_t'b)^2 + lambda * (alpha * sum b_i^2 + (1 - alpha) * sum w_i |b_i|)
//! ```
//!
//! Note the mixing convention: `alpha` weights the *squared* term, so
//! `alpha = 0` is the lasso and `alpha = 1` is ridge. This is the reverse
//! of the glmnet convention. The intercept is never penalized; it is
//! recovered as `mean(y) - mean(x)'b` after solving on centered moments.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, spd_inverse, SquareMatrix};
use crate::scalar::Scalar;
use crate::timeseries::FeatureMatrix;

/// Weight given to coefficients whose first-stage OLS estimate is ~0.
pub const ADAPTIVE_ZERO_WEIGHT: f64 = 1e12;
const ADAPTIVE_ZERO_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty<T> {
    None,
    Ridge { lambda: T },
    Lasso { lambda: T },
    ElasticNet { lambda: T, alpha: T },
    Adaptive { lambda: T, weights: Vec<T> },
    PostLasso { lambda: T },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit<T> {
    pub intercept: T,
    pub weights: Vec<T>,
    pub penalty: Penalty<T>,
    /// Sample variance of in-sample residuals (used by the log-model correction).
    pub residual_variance: T,
    pub feature_names: Vec<String>,
    /// Fitted on `ln` of the target.
    #[serde(default)]
    pub log_target: bool,
}

impl<T: Scalar> LinearFit<T> {
    pub fn raw_predict(&self, row: &[T]) -> T {
        self.intercept + row.iter().zip(&self.weights).map(|(&x, &w)| x * w).sum::<T>()
    }

    /// Forecast in target units, applying the log-normal correction for
    /// log-target fits.
    pub fn predict(&self, row: &[T]) -> Result<T> {
        predict_linear(self, row, self.log_target)
    }

    pub fn l1_norm(&self) -> T {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let weights: serde_json::Map<String, serde_json::Value> = self
            .feature_names
            .iter()
            .zip(&self.weights)
            .map(|(n, w)| (n.clone(), serde_json::json!(w.to_f64_lossy())))
            .collect();
        let penalty = match &self.penalty {
            Penalty::None => serde_json::json!({"kind": "none"}),
            Penalty::Ridge { lambda } => serde_json::json!({"kind": "ridge", "lambda": lambda.to_f64_lossy()}),
            Penalty::Lasso { lambda } => serde_json::json!({"kind": "lasso", "lambda": lambda.to_f64_lossy()}),
            Penalty::ElasticNet { lambda, alpha } => serde_json::json!({
                "kind": "elastic_net", "lambda": lambda.to_f64_lossy(), "alpha": alpha.to_f64_lossy()
            }),
            Penalty::Adaptive { lambda, weights } => serde_json::json!({
                "kind": "adaptive", "lambda": lambda.to_f64_lossy(),
                "penalty_weights": weights.iter().map(|w| w.to_f64_lossy()).collect::<Vec<_>>()
            }),
            Penalty::PostLasso { lambda } => serde_json::json!({"kind": "post_lasso", "lambda": lambda.to_f64_lossy()}),
        };
        serde_json::json!({
            "intercept": self.intercept.to_f64_lossy(),
            "weights": weights,
            "penalty": penalty,
            "residual_variance": self.residual_variance.to_f64_lossy(),
            "log_target": self.log_target,
        })
    }
}

/// `intercept + row'weights`, or `exp(f + residual_variance / 2)` in log space.
pub fn predict_linear<T: Scalar>(fit: &LinearFit<T>, row: &[T], log_space: bool) -> Result<T> {
    if row.len() != fit.weights.len() {
        return Err(Error::Dimension { expected: fit.weights.len(), got: row.len() });
    }
    let f = fit.raw_predict(row);
    Ok(if log_space { (f + T::lit(0.5) * fit.residual_variance).exp() } else { f })
}

/// Centered second moments of a design: everything the solvers need.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram<T> {
    pub n: usize,
    pub x_mean: Vec<T>,
    pub y_mean: T,
    /// `(1/n) sum (x - xbar)(x - xbar)'`.
    pub xx: SquareMatrix<T>,
    /// `(1/n) sum (x - xbar)(y - ybar)`.
    pub xy: Vec<T>,
    /// `(1/n) sum (y - ybar)^2`.
    pub yy: T,
}

impl<T: Scalar> Gram<T> {
    pub fn from_matrix(fm: &FeatureMatrix<T>, rows: Range<usize>) -> Result<Self> {
        let xs: Vec<&[T]> = rows.clone().map(|i| fm.row(i)).collect();
        Self::from_rows(&xs, &fm.target[rows], fm.n_cols())
    }

    pub fn from_rows(xs: &[&[T]], y: &[T], p: usize) -> Result<Self> {
        let n = xs.len();
        if n == 0 || n != y.len() {
            return Err(Error::Empty("no rows to fit".into()));
        }
        let nf = T::from_usize_lossy(n);
        let mut x_mean = vec![T::zero(); p];
        for r in xs {
            if r.len() != p {
                return Err(Error::Dimension { expected: p, got: r.len() });
            }
            for (m, &v) in x_mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        x_mean.iter_mut().for_each(|m| *m /= nf);
        let y_mean = y.iter().copied().sum::<T>() / nf;
        let mut xx = SquareMatrix::zeros(p);
        let mut xy = vec![T::zero(); p];
        let mut yy = T::zero();
        let mut dx = vec![T::zero(); p];
        for (r, &yt) in xs.iter().zip(y) {
            for j in 0..p {
                dx[j] = r[j] - x_mean[j];
            }
            let dy = yt - y_mean;
            yy += dy * dy;
            for i in 0..p {
                xy[i] += dx[i] * dy;
                for j in i..p {
                    xx.data[i * p + j] += dx[i] * dx[j];
                }
            }
        }
        for i in 0..p {
            for j in i..p {
                let v = xx.data[i * p + j] / nf;
                xx.data[i * p + j] = v;
                xx.data[j * p + i] = v;
            }
            xy[i] /= nf;
        }
        Ok(Self { n, x_mean, y_mean, xx, xy, yy: yy / nf })
    }

    pub fn p(&self) -> usize {
        self.x_mean.len()
    }

    fn intercept(&self, beta: &[T]) -> T {
        self.y_mean - self.x_mean.iter().zip(beta).map(|(&m, &b)| m * b).sum::<T>()
    }

    /// `(1/n) * SSE` of the fit with slopes `beta` (intercept profiled out).
    pub fn mean_squared_residual(&self, beta: &[T]) -> T {
        let sb = self.xx.mul_vec(beta);
        let v = self.yy - T::lit(2.0) * dot(beta, &self.xy) + dot(beta, &sb);
        v.max(T::zero())
    }

    fn residual_variance(&self, beta: &[T]) -> T {
        if self.n < 2 {
            return T::zero();
        }
        self.mean_squared_residual(beta) * T::from_usize_lossy(self.n) / T::from_usize_lossy(self.n - 1)
    }

    /// Packages slopes fitted on these moments, recovering the intercept.
    pub fn finish(&self, beta: Vec<T>, penalty: Penalty<T>, names: &[String], log_target: bool) -> LinearFit<T> {
        LinearFit {
            intercept: self.intercept(&beta),
            residual_variance: self.residual_variance(&beta),
            weights: beta,
            penalty,
            feature_names: names.to_vec(),
            log_target,
        }
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Second moments of a hold-out block about a training center, so that
/// the hold-out MSE of any slope vector costs `O(p^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutMoments<T> {
    pub n: usize,
    xx: SquareMatrix<T>,
    xy: Vec<T>,
    yy: T,
}

impl<T: Scalar> HoldoutMoments<T> {
    pub fn new(fm: &FeatureMatrix<T>, rows: Range<usize>, center: &Gram<T>) -> Self {
        let p = fm.n_cols();
        let mut xx = SquareMatrix::zeros(p);
        let mut xy = vec![T::zero(); p];
        let mut yy = T::zero();
        let mut dx = vec![T::zero(); p];
        let n = rows.len();
        for i in rows {
            let r = fm.row(i);
            for j in 0..p {
                dx[j] = r[j] - center.x_mean[j];
            }
            let dy = fm.target[i] - center.y_mean;
            yy += dy * dy;
            for a in 0..p {
                xy[a] += dx[a] * dy;
                for b in a..p {
                    xx.data[a * p + b] += dx[a] * dx[b];
                }
            }
        }
        let nf = T::from_usize_lossy(n.max(1));
        for a in 0..p {
            for b in a..p {
                let v = xx.data[a * p + b] / nf;
                xx.data[a * p + b] = v;
                xx.data[b * p + a] = v;
            }
            xy[a] /= nf;
        }
        Self { n, xx, xy, yy: yy / nf }
    }

    /// Hold-out MSE of the fit `center.y_mean + (x - center.x_mean)'beta`.
    pub fn mse(&self, beta: &[T]) -> T {
        let sb = self.xx.mul_vec(beta);
        (self.yy - T::lit(2.0) * dot(beta, &self.xy) + dot(beta, &sb)).max(T::zero())
    }
}

fn solve_normal<T: Scalar>(g: &Gram<T>, ridge: T, jitter_fallback: bool) -> Result<Vec<T>> {
    let p = g.p();
    if p == 0 {
        return Ok(Vec::new());
    }
    let mut a = g.xx.clone();
    a.add_diagonal(ridge);
    if let Some(l) = cholesky(&a) {
        return Ok(cholesky_solve(&l, &g.xy));
    }
    if !jitter_fallback {
        return Err(Error::Singular(format!("normal equations of {p} columns are not positive definite")));
    }
    let scale = (g.xx.trace() / T::from_usize_lossy(p)).max(T::one());
    let jitter = scale * T::lit(1e-10).max(T::epsilon() * T::lit(64.0));
    log::warn!("rank-deficient design; solving with ridge jitter {jitter}");
    a.add_diagonal(jitter);
    let l = cholesky(&a).ok_or_else(|| Error::Singular("jittered normal equations still singular".into()))?;
    let beta = cholesky_solve(&l, &g.xy);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Singular("non-finite coefficients".into()));
    }
    Ok(beta)
}

/// OLS on the training rows of `fm`.
pub fn fit_ols<T: Scalar>(fm: &FeatureMatrix<T>) -> Result<LinearFit<T>> {
    let g = Gram::from_matrix(fm, fm.train_rows())?;
    ols_from_gram(&g, &fm.column_names, false)
}

/// OLS without the jitter fallback: rank deficiency is an error.
pub fn fit_ols_strict<T: Scalar>(fm: &FeatureMatrix<T>) -> Result<LinearFit<T>> {
    let g = Gram::from_matrix(fm, fm.train_rows())?;
    check_rows(&g)?;
    let beta = solve_normal(&g, T::zero(), false)?;
    Ok(g.finish(beta, Penalty::None, &fm.column_names, false))
}

fn check_rows<T: Scalar>(g: &Gram<T>) -> Result<()> {
    if g.n < g.p() + 1 {
        return Err(Error::Singular(format!("{} rows cannot identify {} slopes and an intercept", g.n, g.p())));
    }
    Ok(())
}

pub fn ols_from_gram<T: Scalar>(g: &Gram<T>, names: &[String], log_target: bool) -> Result<LinearFit<T>> {
    check_rows(g)?;
    let beta = solve_normal(g, T::zero(), true)?;
    Ok(g.finish(beta, Penalty::None, names, log_target))
}

/// Closed-form ridge: `(S + lambda I) b = c` on centered moments.
pub fn fit_ridge<T: Scalar>(fm: &FeatureMatrix<T>, lambda: T) -> Result<LinearFit<T>> {
    let g = Gram::from_matrix(fm, fm.train_rows())?;
    ridge_from_gram(&g, lambda, &fm.column_names)
}

pub fn ridge_from_gram<T: Scalar>(g: &Gram<T>, lambda: T, names: &[String]) -> Result<LinearFit<T>> {
    if !(lambda >= T::zero()) {
        return Err(Error::InvalidInput(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let beta = if lambda > T::zero() {
        solve_normal(g, lambda, true)?
    } else {
        check_rows(g)?;
        solve_normal(g, T::zero(), true)?
    };
    let penalty = if lambda > T::zero() { Penalty::Ridge { lambda } } else { Penalty::None };
    Ok(g.finish(beta, penalty, names, false))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdOptions {
    /// Converged when the largest coefficient change of a sweep is below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_sweeps: 100_000 }
    }
}

fn soft_threshold<T: Scalar>(z: T, gamma: T) -> T {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        T::zero()
    }
}

/// Cyclic coordinate descent on centered moments, updating `beta` in place.
/// Returns the number of sweeps.
pub fn coordinate_descent<T: Scalar>(
    g: &Gram<T>,
    lambda: T,
    alpha: T,
    penalty_weights: Option<&[T]>,
    beta: &mut [T],
    opts: CdOptions,
) -> Result<usize> {
    let p = g.p();
    let l1 = lambda * (T::one() - alpha) * T::lit(0.5);
    let l2 = lambda * alpha;
    let mut q = g.xx.mul_vec(beta);
    let tol = T::lit(opts.tol).max(T::epsilon() * T::lit(100.0));
    let mut max_change = T::zero();
    for sweep in 1..=opts.max_sweeps {
        max_change = T::zero();
        for j in 0..p {
            let sjj = g.xx.get(j, j);
            let old = beta[j];
            let rho = g.xy[j] - q[j] + sjj * old;
            let w = penalty_weights.map_or(T::one(), |w| w[j]);
            let denom = sjj + l2;
            let new = if denom > T::zero() { soft_threshold(rho, l1 * w) / denom } else { T::zero() };
            let delta = new - old;
            if delta != T::zero() {
                beta[j] = new;
                for k in 0..p {
                    q[k] += delta * g.xx.data[k * p + j];
                }
                let scaled = delta.abs();
                if scaled > max_change {
                    max_change = scaled;
                }
            }
        }
        if !max_change.is_finite() {
            return Err(Error::IterationLimit { sweeps: sweep, max_change: f64::NAN });
        }
        if max_change < tol {
            return Ok(sweep);
        }
    }
    Err(Error::IterationLimit { sweeps: opts.max_sweeps, max_change: max_change.to_f64_lossy() })
}

/// Largest violation of the subgradient optimality conditions.
pub fn kkt_violation<T: Scalar>(g: &Gram<T>, beta: &[T], lambda: T, alpha: T, penalty_weights: Option<&[T]>) -> T {
    let sb = g.xx.mul_vec(beta);
    let mut worst = T::zero();
    for j in 0..g.p() {
        let grad = T::lit(-2.0) * (g.xy[j] - sb[j]) + T::lit(2.0) * lambda * alpha * beta[j];
        let w = penalty_weights.map_or(T::one(), |w| w[j]);
        let l1 = lambda * (T::one() - alpha) * w;
        let v = if beta[j] != T::zero() {
            (grad + l1 * beta[j].signum()).abs()
        } else {
            (grad.abs() - l1).max(T::zero())
        };
        worst = worst.max(v);
    }
    worst
}

pub fn fit_elastic_net<T: Scalar>(fm: &FeatureMatrix<T>, lambda: T, alpha: T) -> Result<LinearFit<T>> {
    let g = Gram::from_matrix(fm, fm.train_rows())?;
    elastic_net_from_gram(&g, lambda, alpha, &fm.column_names, None, CdOptions::default())
}

pub fn fit_lasso<T: Scalar>(fm: &FeatureMatrix<T>, lambda: T) -> Result<LinearFit<T>> {
    fit_elastic_net(fm, lambda, T::zero())
}

pub fn elastic_net_from_gram<T: Scalar>(
    g: &Gram<T>,
    lambda: T,
    alpha: T,
    names: &[String],
    warm: Option<&[T]>,
    opts: CdOptions,
) -> Result<LinearFit<T>> {
    check_penalty(lambda, alpha)?;
    let mut beta = warm.map_or_else(|| vec![T::zero(); g.p()], <[T]>::to_vec);
    coordinate_descent(g, lambda, alpha, None, &mut beta, opts)?;
    let penalty = if alpha == T::zero() { Penalty::Lasso { lambda } } else { Penalty::ElasticNet { lambda, alpha } };
    Ok(g.finish(beta, penalty, names, false))
}

fn check_penalty<T: Scalar>(lambda: T, alpha: T) -> Result<()> {
    if !(lambda >= T::zero()) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::InvalidInput(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// Elastic-net solutions along `lambdas` (any order), warm-starting from
/// the largest value downwards. Output is in the input order.
pub fn elastic_net_path<T: Scalar>(g: &Gram<T>, lambdas: &[T], alpha: T, opts: CdOptions) -> Result<Vec<Vec<T>>> {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].partial_cmp(&lambdas[a]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![Vec::new(); lambdas.len()];
    let mut beta = vec![T::zero(); g.p()];
    for k in order {
        check_penalty(lambdas[k], alpha)?;
        coordinate_descent(g, lambdas[k], alpha, None, &mut beta, opts)?;
        out[k] = beta.clone();
    }
    Ok(out)
}

/// First-stage OLS weights `1 / |b_ols|`, with near-zero estimates mapped
/// to [`ADAPTIVE_ZERO_WEIGHT`].
pub fn adaptive_weights<T: Scalar>(ols: &[T]) -> Vec<T> {
    ols.iter()
        .map(|b| {
            if b.abs() < T::lit(ADAPTIVE_ZERO_CUTOFF) {
                T::lit(ADAPTIVE_ZERO_WEIGHT)
            } else {
                T::one() / b.abs()
            }
        })
        .collect()
}

pub fn fit_adaptive_lasso<T: Scalar>(fm: &FeatureMatrix<T>, lambda: T) -> Result<LinearFit<T>> {
    let g = Gram::from_matrix(fm, fm.train_rows())?;
    adaptive_lasso_from_gram(&g, lambda, &fm.column_names, CdOptions::default())
}

pub fn adaptive_lasso_from_gram<T: Scalar>(g: &Gram<T>, lambda: T, names: &[String], opts: CdOptions) -> Result<LinearFit<T>> {
    check_penalty(lambda, T::zero())?;
    let first = ols_from_gram(g, names, false)?;
    if lambda == T::zero() {
        return Ok(first);
    }
    let weights = adaptive_weights(&first.weights);
    let mut beta = first.weights.clone();
    // weights of 1e12 dominate any data term; start those coordinates at zero
    for (b, w) in beta.iter_mut().zip(&weights) {
        if *w >= T::lit(ADAPTIVE_ZERO_WEIGHT) {
            *b = T::zero();
        }
    }
    coordinate_descent(g, lambda, T::zero(), Some(&weights), &mut beta, opts)?;
    Ok(g.finish(beta, Penalty::Adaptive { lambda, weights }, names, false))
}

pub fn fit_post_lasso<T: Scalar>(fm: &FeatureMatrix<T>, lambda: T) -> Result<LinearFit<T>> {
    let g = Gram::from_matrix(fm, fm.train_rows())?;
    post_lasso_from_gram(&g, lambda, &fm.column_names, None, CdOptions::default())
}

/// Lasso selection followed by OLS on the surviving columns.
pub fn post_lasso_from_gram<T: Scalar>(
    g: &Gram<T>,
    lambda: T,
    names: &[String],
    lasso_beta: Option<&[T]>,
    opts: CdOptions,
) -> Result<LinearFit<T>> {
    check_penalty(lambda, T::zero())?;
    let support: Vec<usize> = if lambda == T::zero() {
        (0..g.p()).collect()
    } else {
        let beta = match lasso_beta {
            Some(b) => b.to_vec(),
            None => {
                let mut b = vec![T::zero(); g.p()];
                coordinate_descent(g, lambda, T::zero(), None, &mut b, opts)?;
                b
            }
        };
        (0..g.p()).filter(|&j| beta[j] != T::zero()).collect()
    };
    let mut full = vec![T::zero(); g.p()];
    if support.is_empty() {
        log::info!("post lasso: every column dropped at lambda {lambda}; intercept-only model");
    } else {
        let sub = Gram {
            n: g.n,
            x_mean: support.iter().map(|&j| g.x_mean[j]).collect(),
            y_mean: g.y_mean,
            xx: g.xx.submatrix(&support),
            xy: support.iter().map(|&j| g.xy[j]).collect(),
            yy: g.yy,
        };
        check_rows(&sub)?;
        let b = solve_normal(&sub, T::zero(), true)?;
        for (k, &j) in support.iter().enumerate() {
            full[j] = b[k];
        }
    }
    Ok(g.finish(full, Penalty::PostLasso { lambda }, names, false))
}

/// Fits OLS on `ln(target)` and marks the fit for log-space prediction.
pub fn fit_log_ols<T: Scalar>(fm: &FeatureMatrix<T>) -> Result<LinearFit<T>> {
    let mut fit = fit_ols(fm)?;
    fit.log_target = true;
    Ok(fit)
}

/// One row of an OLS report: estimate, heteroskedasticity-robust (White,
/// HC0) standard error and t-statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_stat: f64,
}

/// OLS with White standard errors over `rows` of `fm` (intercept first).
pub fn ols_white_report(fm: &FeatureMatrix<f64>, rows: Range<usize>) -> Result<Vec<CoefficientRow>> {
    let g = Gram::from_matrix(fm, rows.clone())?;
    let fit = ols_from_gram(&g, &fm.column_names, false)?;
    let p = fm.n_cols() + 1;
    let mut xtx: SquareMatrix<f64> = SquareMatrix::zeros(p);
    let mut meat: SquareMatrix<f64> = SquareMatrix::zeros(p);
    let mut z = vec![0.0; p];
    for i in rows {
        z[0] = 1.0;
        z[1..].copy_from_slice(fm.row(i));
        let e = fm.target[i] - fit.raw_predict(fm.row(i));
        for a in 0..p {
            for b in 0..p {
                xtx.data[a * p + b] += z[a] * z[b];
                meat.data[a * p + b] += e * e * z[a] * z[b];
            }
        }
    }
    let inv = spd_inverse(&xtx).ok_or_else(|| Error::Singular("X'X not invertible".into()))?;
    let mut cov: SquareMatrix<f64> = SquareMatrix::zeros(p);
    for a in 0..p {
        for b in 0..p {
            let mut s = 0.0;
            for k in 0..p {
                for l in 0..p {
                    s += inv.get(a, k) * meat.get(k, l) * inv.get(l, b);
                }
            }
            cov.set(a, b, s);
        }
    }
    let mut names = vec!["intercept".to_string()];
    names.extend(fm.column_names.iter().cloned());
    let mut est = vec![fit.intercept];
    est.extend(fit.weights.iter().copied());
    Ok(names
        .into_iter()
        .zip(est)
        .enumerate()
        .map(|(k, (name, estimate))| {
            let se = cov.get(k, k).max(0.0).sqrt();
            CoefficientRow { name, estimate, std_error: se, t_stat: if se > 0.0 { estimate / se } else { f64::NAN } }
        })
        .collect())
}

/// Column-name keyed weights, for reporting.
pub fn named_weights<T: Scalar>(fit: &LinearFit<T>) -> BTreeMap<String, f64> {
    fit.feature_names.iter().cloned().zip(fit.weights.iter().map(|w| w.to_f64_lossy())).collect()
}
