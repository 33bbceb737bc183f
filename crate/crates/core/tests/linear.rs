use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use volaforge::linear::{
    elastic_net_from_gram, fit_elastic_net, fit_lasso, fit_log_ols, fit_ols, fit_post_lasso, fit_ridge, kkt_violation,
    CdOptions, Gram,
};
use volaforge::rng::SeedStream;
use volaforge::timeseries::{DataSplit, FeatureMatrix};

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn all_train(n: usize) -> DataSplit {
    DataSplit { train: 0..n, validation: n..n, test: n..n }
}

/// Random design with correlated columns and a sparse linear signal.
fn problem(seed: u64, n: usize, p: usize, noise: f64) -> (FeatureMatrix<f64>, Vec<f64>) {
    let mut rng = SeedStream::new(seed).child("linear").rng();
    let beta: Vec<f64> = (0..p).map(|j| if j % 3 == 0 { rng.random_range(-2.0..2.0) } else { 0.0 }).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let common = gauss(&mut rng);
            (0..p).map(|_| 0.5 * common + gauss(&mut rng)).collect()
        })
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| 0.3 + r.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>() + noise * gauss(&mut rng))
        .collect();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    (FeatureMatrix::new(names, rows, y, all_train(n)).unwrap(), beta)
}

/// The penalized objective with the intercept profiled out.
fn objective(g: &Gram<f64>, beta: &[f64], lambda: f64, alpha: f64) -> f64 {
    let sb = g.xx.mul_vec(beta);
    let quad: f64 = beta.iter().zip(&sb).map(|(b, s)| b * s).sum();
    let lin: f64 = beta.iter().zip(&g.xy).map(|(b, c)| b * c).sum();
    let pen = alpha * beta.iter().map(|b| b * b).sum::<f64>() + (1.0 - alpha) * beta.iter().map(|b| b.abs()).sum::<f64>();
    g.yy - 2.0 * lin + quad + lambda * pen
}

/// Coarse-to-fine lattice minimization over two coefficients.
fn lattice_min(g: &Gram<f64>, lambda: f64, alpha: f64) -> ([f64; 2], f64) {
    let mut centre = [0.0, 0.0];
    let mut half = 4.0;
    let mut best = (centre, f64::INFINITY);
    for _ in 0..4 {
        let step = half / 100.0;
        for i in -100..=100 {
            for j in -100..=100 {
                let b = [centre[0] + i as f64 * step, centre[1] + j as f64 * step];
                let v = objective(g, &b, lambda, alpha);
                if v < best.1 {
                    best = (b, v);
                }
            }
        }
        centre = best.0;
        half = step * 4.0;
    }
    best
}

#[test]
fn two_coefficient_solutions_match_the_lattice() {
    for seed in 0..20 {
        let (fm, _) = problem(seed, 60, 2, 1.0);
        let g = Gram::from_matrix(&fm, 0..60).unwrap();
        let lambda = 0.05 + 0.1 * seed as f64;
        for alpha in [0.0, 0.3, 1.0] {
            let fit = elastic_net_from_gram(&g, lambda, alpha, &fm.column_names, None, CdOptions::default()).unwrap();
            let (lat, lat_obj) = lattice_min(&g, lambda, alpha);
            let cd_obj = objective(&g, &fit.weights, lambda, alpha);
            // The finest lattice spacing is about 2.6e-6.
            assert!(cd_obj <= lat_obj + 1e-12, "seed {seed}: {cd_obj} > {lat_obj}");
            for k in 0..2 {
                assert!((fit.weights[k] - lat[k]).abs() < 1e-5, "seed {seed} alpha {alpha}: {:?} vs {lat:?}", fit.weights);
            }
        }
    }
}

#[test]
fn kkt_conditions_hold_on_random_problems() {
    let mut rng = SeedStream::new(7).rng();
    for seed in 0..100 {
        let p = rng.random_range(1..=12);
        let (fm, _) = problem(100 + seed, 80, p, 0.7);
        let g = Gram::from_matrix(&fm, 0..80).unwrap();
        let lambda = 10f64.powf(rng.random_range(-3.0..0.5));
        let alpha = rng.random_range(0.0..1.0);
        let fit = elastic_net_from_gram(&g, lambda, alpha, &fm.column_names, None, CdOptions::default()).unwrap();
        let v = kkt_violation(&g, &fit.weights, lambda, alpha, None);
        assert!(v < 1e-8, "p={p} lambda={lambda} alpha={alpha}: {v}");
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn penalties_nest() {
    for seed in 0..50 {
        let (fm, _) = problem(500 + seed, 70, 6, 0.5);
        let lambda = 0.01 + 0.02 * seed as f64;
        let en1 = fit_elastic_net(&fm, lambda, 1.0).unwrap();
        let ridge = fit_ridge(&fm, lambda).unwrap();
        assert!(max_diff(&en1.weights, &ridge.weights) < 1e-8);
        assert!((en1.intercept - ridge.intercept).abs() < 1e-8);
        let en0 = fit_elastic_net(&fm, lambda, 0.0).unwrap();
        let lasso = fit_lasso(&fm, lambda).unwrap();
        assert!(max_diff(&en0.weights, &lasso.weights) < 1e-8);
        let ols = fit_ols(&fm).unwrap();
        assert!(max_diff(&fit_ridge(&fm, 0.0).unwrap().weights, &ols.weights) < 1e-8);
        assert!(max_diff(&fit_post_lasso(&fm, 0.0).unwrap().weights, &ols.weights) < 1e-8);
    }
}

#[test]
fn lasso_recovers_a_planted_support() {
    for seed in 0..20 {
        let mut rng = SeedStream::new(seed).child("planted").rng();
        let n = 500;
        let truth = [2.0, -1.5, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..10).map(|_| gauss(&mut rng)).collect()).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&truth).map(|(x, b)| x * b).sum::<f64>() + 0.5 * gauss(&mut rng))
            .collect();
        let fm = FeatureMatrix::new((0..10).map(|j| format!("x{j}")).collect(), rows, y, all_train(n)).unwrap();
        let fit = fit_lasso(&fm, 0.2).unwrap();
        let support: Vec<usize> = (0..10).filter(|&j| fit.weights[j] != 0.0).collect();
        assert_eq!(support, vec![0, 1, 4], "seed {seed}: {:?}", fit.weights);
        let post = fit_post_lasso(&fm, 0.2).unwrap();
        for j in [0, 1, 4] {
            assert!((post.weights[j] - truth[j]).abs() < 0.1);
            // Post-lasso undoes the shrinkage of the selected coefficients.
            assert!((post.weights[j] - truth[j]).abs() < (fit.weights[j] - truth[j]).abs() + 0.02);
        }
    }
}

#[test]
fn log_model_forecasts_the_conditional_mean() {
    let mut rng = SeedStream::new(3).child("jensen").rng();
    let (a, b, sigma) = (-9.0, 0.4, 0.5);
    let n = 20_000;
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let log_y: Vec<f64> = xs.iter().map(|x| a + b * x + sigma * gauss(&mut rng)).collect();
    let fm = FeatureMatrix::new(vec!["x".into()], xs.iter().map(|x| vec![*x]).collect(), log_y, all_train(n)).unwrap();
    let fit = fit_log_ols(&fm).unwrap();
    for x in [-0.5, 0.0, 0.7] {
        let truth = (a + b * x + 0.5 * sigma * sigma).exp();
        let naive = (a + b * x).exp();
        let f = fit.predict(&[x]).unwrap();
        assert!((f / truth - 1.0).abs() < 0.02, "{f} vs {truth}");
        assert!((naive / truth - 1.0).abs() > 0.1);
    }
}
