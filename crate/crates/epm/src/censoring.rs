//! Truncated-normal utilities and the iterative imputation scheme for
//! right-censored runtimes over a random-forest base model, including the
//! per-tree sampling variant.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::data::{ColumnKind, Matrix};
use crate::error::{EpmError, Result};
use crate::forest::{fit_forest, fit_forest_with_targets, predict_forest, ForestModel, ForestParams};

/// Imputation flavor: deterministic truncated means, or per-tree stratified
/// samples that preserve the forest's spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CensoredVariant {
    Mean,
    Sample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CensoredFitConfig {
    pub variant: CensoredVariant,
    pub max_iters: usize,
    /// Convergence threshold on the maximum absolute change of imputed
    /// values between iterations.
    pub tol: f64,
    /// Global ceiling on imputed values (log scale).
    pub kappa_max: f64,
    pub seed: u64,
}

impl CensoredFitConfig {
    pub fn new(variant: CensoredVariant, kappa_max: f64, seed: u64) -> Self {
        CensoredFitConfig {
            variant,
            max_iters: 20,
            tol: 1e-3,
            kappa_max,
            seed,
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

/// Hazard phi(a) / (1 - Phi(a)) of the standard normal; the asymptotic
/// series takes over for large arguments where the cdf tail underflows.
fn normal_hazard(a: f64) -> f64 {
    if a <= 8.0 {
        let n = std_normal();
        let tail = n.cdf(-a);
        n.pdf(a) / tail
    } else {
        // 1/h = (1/a)(1 - a^-2 + 3a^-4 - 15a^-6 + 105a^-8 - 945a^-10)
        let inv2 = 1.0 / (a * a);
        let series = 1.0 + inv2 * (-1.0 + inv2 * (3.0 + inv2 * (-15.0 + inv2 * (105.0 - 945.0 * inv2))));
        a / series
    }
}

/// Mean of a normal left-truncated at kappa: mu + sigma * phi(a)/(1-Phi(a))
/// with a = (kappa - mu) / sigma. Always at least kappa when truncation is
/// active.
pub fn trunc_normal_mean(mu: f64, var: f64, kappa: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(EpmError::Domain("truncated normal needs variance > 0".into()));
    }
    let sigma = var.sqrt();
    let a = (kappa - mu) / sigma;
    let mean = mu + sigma * normal_hazard(a);
    Ok(mean.max(kappa))
}

/// Quantile of the truncated distribution at the given uniform u in (0, 1),
/// computed through the upper tail to stay accurate for deep truncation.
pub fn trunc_normal_quantile(mu: f64, var: f64, kappa: f64, u: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(EpmError::Domain("truncated normal needs variance > 0".into()));
    }
    let sigma = var.sqrt();
    let a = (kappa - mu) / sigma;
    let value = if a > 8.0 {
        // exponential tail approximation matching the exact truncated mean
        let scale = sigma * (normal_hazard(a) - a);
        kappa - scale * (1.0 - u).ln()
    } else {
        let n = std_normal();
        let tail = n.cdf(-a);
        let q = ((1.0 - u) * tail).max(f64::MIN_POSITIVE);
        mu + sigma * (-n.inverse_cdf(q))
    };
    Ok(value.max(kappa))
}

/// Draws from the truncated distribution via the inverse CDF of a uniform.
pub fn trunc_normal_sample(mu: f64, var: f64, kappa: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let u: f64 = rand::Rng::gen(rng);
    trunc_normal_quantile(mu, var, kappa, u)
}

/// Fits a forest on the uncensored rows only.
pub fn fit_forest_drop_censored(
    x: &Matrix,
    y: &[f64],
    censored: &[bool],
    kinds: &[ColumnKind],
    params: &ForestParams,
) -> Result<ForestModel> {
    let keep: Vec<usize> = (0..x.n_rows()).filter(|&i| !censored[i]).collect();
    if keep.is_empty() {
        return Err(EpmError::Training(
            "no uncensored data points to fit on".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = keep.iter().map(|&i| x.row(i).to_vec()).collect();
    let ys: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
    fit_forest(&Matrix::from_rows(&rows), &ys, kinds, params)
}

/// Fits a forest treating censored observations as exact.
pub fn fit_forest_pretend_uncensored(
    x: &Matrix,
    y: &[f64],
    kinds: &[ColumnKind],
    params: &ForestParams,
) -> Result<ForestModel> {
    fit_forest(x, y, kinds, params)
}

/// Iterative imputation for right-censored responses: fit an initial forest
/// on uncensored rows, then alternate imputing censored targets from the
/// current forest's truncated predictive distribution with refitting. Tree
/// seeds and data assignments stay fixed across iterations. The mean variant
/// imputes min(kappa_max, truncated mean) identically for every tree; the
/// sampling variant imputes per-tree stratified quantiles, shifting a
/// point's samples down when their mean exceeds kappa_max (never below the
/// censoring threshold).
pub fn fit_forest_censored(
    x: &Matrix,
    y: &[f64],
    censored: &[bool],
    kinds: &[ColumnKind],
    params: &ForestParams,
    config: &CensoredFitConfig,
) -> Result<ForestModel> {
    let n = x.n_rows();
    if y.len() != n || censored.len() != n {
        return Err(EpmError::Schema("censored fit shape mismatch".into()));
    }
    if config.max_iters < 1 {
        return Err(EpmError::Config("max_iters must be >= 1".into()));
    }
    let censored_idx: Vec<usize> = (0..n).filter(|&i| censored[i]).collect();
    if censored_idx.len() == n {
        return Err(EpmError::Training(
            "all points censored; initial fit impossible".into(),
        ));
    }
    if censored_idx.is_empty() {
        return fit_forest(x, y, kinds, params);
    }

    let b = params.b;
    let mut model = fit_forest_drop_censored(x, y, censored, kinds, params)?;

    // per-point stratification: tree b reads band perm[b], fixed across
    // iterations
    let uniforms: Vec<Vec<f64>> = censored_idx
        .iter()
        .map(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (i as u64).wrapping_mul(0x9E3779B97F4A7C15));
            let mut bands: Vec<usize> = (0..b).collect();
            bands.shuffle(&mut rng);
            bands.iter().map(|&k| (k as f64 + 0.5) / b as f64).collect()
        })
        .collect();

    // previous imputations start at the censoring thresholds
    let mut prev: Vec<Vec<f64>> = censored_idx.iter().map(|&i| vec![y[i]; b]).collect();

    for _ in 0..config.max_iters {
        // E step: impute per censored point (and per tree for the sampling
        // variant) from the truncated forest predictive distribution
        let mut imputed: Vec<Vec<f64>> = Vec::with_capacity(censored_idx.len());
        for (c, &i) in censored_idx.iter().enumerate() {
            let pred = predict_forest(&model, x.row(i))?;
            let threshold = y[i];
            let values = match config.variant {
                CensoredVariant::Mean => {
                    let m = trunc_normal_mean(pred.mean, pred.variance, threshold)?;
                    vec![m.min(config.kappa_max); b]
                }
                CensoredVariant::Sample => {
                    let mut s: Vec<f64> = uniforms[c]
                        .iter()
                        .map(|&u| trunc_normal_quantile(pred.mean, pred.variance, threshold, u))
                        .collect::<Result<_>>()?;
                    let m: f64 = s.iter().sum::<f64>() / b as f64;
                    if m > config.kappa_max {
                        let shift = m - config.kappa_max;
                        for v in &mut s {
                            *v = (*v - shift).max(threshold);
                        }
                    }
                    s
                }
            };
            imputed.push(values);
        }

        let change = imputed
            .iter()
            .zip(&prev)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, f64::max);

        // M step: refit each tree with its own imputed targets
        let mut per_tree: Vec<Vec<f64>> = (0..b).map(|_| y.to_vec()).collect();
        for (c, &i) in censored_idx.iter().enumerate() {
            for (t, target) in per_tree.iter_mut().enumerate() {
                target[i] = imputed[c][t];
            }
        }
        let refs: Vec<&[f64]> = per_tree.iter().map(|v| v.as_slice()).collect();
        model = fit_forest_with_targets(x, &refs, kinds, params)?;
        prev = imputed;

        if change < config.tol {
            break;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    /// Numerical-integration oracle for the truncated mean: Simpson's rule
    /// over [kappa, kappa + 40 sigma] on the renormalized density.
    pub(crate) fn trunc_mean_quadrature(mu: f64, sigma: f64, kappa: f64) -> f64 {
        let steps = 400_000;
        let hi = kappa + 40.0 * sigma;
        let h = (hi - kappa) / steps as f64;
        let pdf = |t: f64| {
            let z = (t - mu) / sigma;
            (-0.5 * z * z).exp()
        };
        let mut mass = 0.0;
        let mut moment = 0.0;
        for k in 0..steps {
            let a = kappa + k as f64 * h;
            let m = a + 0.5 * h;
            let b = a + h;
            let w = (pdf(a) + 4.0 * pdf(m) + pdf(b)) / 6.0;
            let wm = (a * pdf(a) + 4.0 * m * pdf(m) + b * pdf(b)) / 6.0;
            mass += w * h;
            moment += wm * h;
        }
        moment / mass
    }

    #[test]
    fn trunc_mean_standard_half() {
        // quadrature oracle reproduces sqrt(2/pi)
        let oracle = trunc_mean_quadrature(0.0, 1.0, 0.0);
        let got = trunc_normal_mean(0.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(got, oracle, epsilon = 1e-8);
        assert_relative_eq!(got, (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn trunc_mean_no_truncation_limit() {
        let got = trunc_normal_mean(1.5, 4.0, -1e6).unwrap();
        assert_relative_eq!(got, 1.5, epsilon = 1e-9);
    }

    #[test]
    fn trunc_mean_deep_truncation() {
        let oracle = trunc_mean_quadrature(0.0, 1.0, 3.0);
        let got = trunc_normal_mean(0.0, 1.0, 3.0).unwrap();
        assert_relative_eq!(got, oracle, epsilon = 1e-6);
        assert_relative_eq!(got, 3.2831, epsilon = 1e-4);
    }

    #[test]
    fn trunc_mean_extreme_alpha_no_nan() {
        for kappa in [8.5, 12.0, 50.0, 300.0] {
            let v = trunc_normal_mean(0.0, 1.0, kappa).unwrap();
            assert!(v.is_finite());
            assert!(v >= kappa);
        }
        // continuity across the series switch at alpha = 8
        let below = trunc_normal_mean(0.0, 1.0, 7.999).unwrap();
        let above = trunc_normal_mean(0.0, 1.0, 8.001).unwrap();
        assert!((below - above).abs() < 1e-2, "{} vs {}", below, above);
    }

    #[test]
    fn trunc_sample_support_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut sum = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let s = trunc_normal_sample(0.0, 1.0, 0.0, &mut rng).unwrap();
            assert!(s >= 0.0);
            sum += s;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.79788).abs() < 0.01, "empirical mean {}", mean);
    }

    #[test]
    fn trunc_sample_untruncated_matches_normal() {
        // Kolmogorov-Smirnov against the plain normal CDF
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| trunc_normal_sample(0.0, 1.0, -1e9, &mut rng).unwrap())
            .collect();
        draws.sort_by(|a, b| a.total_cmp(b));
        let norm = std_normal();
        let mut d = 0.0f64;
        for (i, v) in draws.iter().enumerate() {
            let f = norm.cdf(*v);
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            d = d.max((f - lo).abs()).max((f - hi).abs());
        }
        // critical value at p = 0.01 is ~1.63/sqrt(n)
        assert!(d < 1.63 / (n as f64).sqrt(), "KS statistic {}", d);
    }

    #[test]
    fn stratified_bands_cover_unit_interval() {
        // the B quantile draws sit at band midpoints: empirical CDF within
        // 1/B of the truncated CDF at band edges
        let b = 10;
        let (mu, var, kappa) = (0.3, 0.8, 0.5);
        let quantiles: Vec<f64> = (0..b)
            .map(|k| trunc_normal_quantile(mu, var, kappa, (k as f64 + 0.5) / b as f64).unwrap())
            .collect();
        let sigma = var.sqrt();
        let n = std_normal();
        let a = (kappa - mu) / sigma;
        let tail = n.cdf(-a);
        let trunc_cdf = |y: f64| (n.cdf((y - mu) / sigma) - n.cdf(a)) / tail;
        for j in 0..=b {
            let edge = j as f64 / b as f64;
            let below = quantiles.iter().filter(|&&q| trunc_cdf(q) < edge).count() as f64 / b as f64;
            assert!(
                (below - edge).abs() <= 1.0 / b as f64 + 1e-9,
                "edge {}: empirical {}",
                edge,
                below
            );
        }
    }

    fn cont_kinds(p: usize) -> Vec<ColumnKind> {
        vec![ColumnKind::Continuous; p]
    }

    #[test]
    fn no_censoring_equals_plain_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Matrix::from_rows(
            &(0..40)
                .map(|_| vec![rng.gen_range(0.0..1.0)])
                .collect::<Vec<_>>(),
        );
        let y: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = ForestParams {
            seed: 5,
            ..ForestParams::default()
        };
        let config = CensoredFitConfig::new(CensoredVariant::Mean, 10.0, 5);
        let censored = vec![false; 40];
        let a = fit_forest_censored(&x, &y, &censored, &cont_kinds(1), &params, &config).unwrap();
        let b = fit_forest(&x, &y, &cont_kinds(1), &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_censored_is_an_error() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]);
        let y = [1.0, 1.0];
        let config = CensoredFitConfig::new(CensoredVariant::Mean, 10.0, 0);
        assert!(fit_forest_censored(
            &x,
            &y,
            &[true, true],
            &cont_kinds(1),
            &ForestParams::default(),
            &config
        )
        .is_err());
    }

    #[test]
    fn single_iteration_imputes_above_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Matrix::from_rows(
            &(0..30)
                .map(|_| vec![rng.gen_range(0.0..1.0)])
                .collect::<Vec<_>>(),
        );
        let mut y: Vec<f64> = (0..30).map(|i| x.get(i, 0) * 2.0).collect();
        let mut censored = vec![false; 30];
        censored[3] = true;
        y[3] = 0.9; // censoring threshold
        let params = ForestParams {
            seed: 2,
            ..ForestParams::default()
        };
        let config = CensoredFitConfig {
            max_iters: 1,
            ..CensoredFitConfig::new(CensoredVariant::Mean, 5.0, 2)
        };
        let m = fit_forest_censored(&x, &y, &censored, &cont_kinds(1), &params, &config).unwrap();
        // the refit model saw an imputed target >= threshold for row 3, so
        // its prediction there must not sit below the other strategy that
        // drops the point entirely
        let p = predict_forest(&m, x.row(3)).unwrap();
        assert!(p.mean >= 0.9 - 0.5, "prediction {}", p.mean);
    }

    #[test]
    fn imputations_respect_threshold_and_ceiling() {
        // mean variant: imputed values within [threshold, kappa_max]
        for kappa in [0.0f64, 1.0, 2.5] {
            let m = trunc_normal_mean(0.5, 0.3, kappa).unwrap().min(2.0);
            assert!(m >= kappa.min(2.0) - 1e-12);
            assert!(m <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn censored_fit_beats_pretend_uncensored_on_tail() {
        // synthetic linear log-runtime with fixed-threshold censoring
        let mut wins = 0;
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 300;
            let gen_rows = |rng: &mut ChaCha8Rng, n: usize| -> (Matrix, Vec<f64>) {
                let rows: Vec<Vec<f64>> = (0..n)
                    .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
                    .collect();
                let y: Vec<f64> = rows
                    .iter()
                    .map(|r| 3.0 * r[0] + 1.0 * r[1] + 0.05 * rng.gen_range(-1.0..1.0))
                    .collect();
                (Matrix::from_rows(&rows), y)
            };
            let (x_train, y_true) = gen_rows(&mut rng, n);
            let threshold = 2.0;
            let censored: Vec<bool> = y_true.iter().map(|&v| v > threshold).collect();
            let y_obs: Vec<f64> = y_true
                .iter()
                .map(|&v| if v > threshold { threshold } else { v })
                .collect();
            let (x_test, y_test) = gen_rows(&mut rng, 200);
            let params = ForestParams {
                seed,
                ..ForestParams::default()
            };
            let config = CensoredFitConfig::new(CensoredVariant::Mean, 4.5, seed);
            let kinds = cont_kinds(2);
            let sh = fit_forest_censored(&x_train, &y_obs, &censored, &kinds, &params, &config)
                .unwrap();
            let pretend = fit_forest_pretend_uncensored(&x_train, &y_obs, &kinds, &params).unwrap();
            let tail: Vec<usize> = (0..200).filter(|&i| y_test[i] > threshold).collect();
            let rmse_of = |m: &ForestModel| -> f64 {
                let sse: f64 = tail
                    .iter()
                    .map(|&i| {
                        let p = predict_forest(m, x_test.row(i)).unwrap();
                        (p.mean - y_test[i]).powi(2)
                    })
                    .sum();
                (sse / tail.len() as f64).sqrt()
            };
            if rmse_of(&sh) < rmse_of(&pretend) {
                wins += 1;
            }
        }
        assert!(wins >= 2, "censored handling won only {}/3 seeds", wins);
    }

    #[test]
    fn sampling_variant_estimates_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Matrix::from_rows(
            &(0..60)
                .map(|_| vec![rng.gen_range(0.0..1.0)])
                .collect::<Vec<_>>(),
        );
        let y_true: Vec<f64> = (0..60).map(|i| 2.0 * x.get(i, 0)).collect();
        let threshold = 1.2;
        let censored: Vec<bool> = y_true.iter().map(|&v| v > threshold).collect();
        let y_obs: Vec<f64> = y_true
            .iter()
            .map(|&v| v.min(threshold))
            .collect();
        let params = ForestParams {
            seed: 3,
            ..ForestParams::default()
        };
        let config = CensoredFitConfig::new(CensoredVariant::Sample, 3.0, 3);
        let m = fit_forest_censored(&x, &y_obs, &censored, &cont_kinds(1), &params, &config)
            .unwrap();
        let p = predict_forest(&m, &[0.95]).unwrap();
        assert!(p.mean.is_finite());
        assert!(p.variance > 0.0);
    }
}
