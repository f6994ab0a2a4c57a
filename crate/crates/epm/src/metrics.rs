//! Evaluation metrics and split utilities: RMSE, Pearson correlation, the
//! log-likelihood score, k-fold and instance/configuration splits, and a
//! paired signed-rank test over fold metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EpmError, Result};

/// Metric triple for one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub cc: f64,
    pub ll: f64,
    pub n_points: usize,
}

pub fn rmse(y: &[f64], mu: &[f64]) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(EpmError::ArityMismatch {
            expected: y.len(),
            got: mu.len(),
        });
    }
    if y.is_empty() {
        return Err(EpmError::UndefinedMetric("rmse of empty vectors".into()));
    }
    let sse: f64 = y.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// Pearson's correlation coefficient in the sample form
/// (sum mu_i y_i - n mu_bar y_bar) / ((n-1) s_mu s_y).
pub fn pearson_cc(y: &[f64], mu: &[f64]) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(EpmError::ArityMismatch {
            expected: y.len(),
            got: mu.len(),
        });
    }
    let n = y.len();
    if n < 2 {
        return Err(EpmError::UndefinedMetric(
            "correlation needs at least 2 points".into(),
        ));
    }
    let nf = n as f64;
    let mean_y = y.iter().sum::<f64>() / nf;
    let mean_mu = mu.iter().sum::<f64>() / nf;
    let s_y = (y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let s_mu = (mu.iter().map(|v| (v - mean_mu).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if s_y == 0.0 || s_mu == 0.0 {
        return Err(EpmError::UndefinedMetric(
            "correlation undefined for constant vector".into(),
        ));
    }
    let cross: f64 = y.iter().zip(mu).map(|(a, b)| a * b).sum();
    Ok((cross - nf * mean_mu * mean_y) / ((nf - 1.0) * s_mu * s_y))
}

const LOG_SQRT_2PI: f64 = 0.918938533204672741780329736406; // log(sqrt(2*pi))

/// Log-likelihood score sum_i log phi((y_i - mu_i) / sigma_i), with phi the
/// standard normal pdf. When `density_correct` is set, the 1/sigma Jacobian
/// of the standardization is included (sum_i -log sigma_i), giving the usual
/// Gaussian log density.
pub fn log_likelihood(y: &[f64], mu: &[f64], sigma: &[f64], density_correct: bool) -> Result<f64> {
    if y.len() != mu.len() || y.len() != sigma.len() {
        return Err(EpmError::ArityMismatch {
            expected: y.len(),
            got: mu.len().min(sigma.len()),
        });
    }
    let mut total = 0.0;
    for ((&yi, &mi), &si) in y.iter().zip(mu).zip(sigma) {
        if !(si > 0.0) {
            return Err(EpmError::Domain(format!("nonpositive sigma {}", si)));
        }
        let z = (yi - mi) / si;
        total += -0.5 * z * z - LOG_SQRT_2PI;
        if density_correct {
            total -= si.ln();
        }
    }
    Ok(total)
}

/// Seeded permutation partitioned into k folds of size floor(n/k) or
/// ceil(n/k); the union covers all indices.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(EpmError::Config(format!(
            "cannot split {} points into {} folds",
            n, k
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut pos = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(idx[pos..pos + size].to_vec());
        pos += size;
    }
    Ok(folds)
}

/// Disjoint train/test id sets for instances and configurations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadrantSplit {
    pub train_instances: Vec<String>,
    pub test_instances: Vec<String>,
    pub train_configs: Vec<String>,
    pub test_configs: Vec<String>,
    pub seed: u64,
}

/// Splits both id lists into halves via seeded uniform permutations; when a
/// count is odd the training half receives the extra element.
pub fn quadrant_split(
    instance_ids: &[String],
    config_ids: &[String],
    seed: u64,
) -> Result<QuadrantSplit> {
    if instance_ids.len() < 2 || config_ids.len() < 2 {
        return Err(EpmError::Config(
            "quadrant split needs at least 2 instances and 2 configurations".into(),
        ));
    }
    let halve = |ids: &[String], rng: &mut ChaCha8Rng| {
        let mut perm: Vec<String> = ids.to_vec();
        perm.shuffle(rng);
        let train_len = ids.len() - ids.len() / 2;
        let train = perm[..train_len].to_vec();
        let test = perm[train_len..].to_vec();
        (train, test)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train_instances, test_instances) = halve(instance_ids, &mut rng);
    let (train_configs, test_configs) = halve(config_ids, &mut rng);
    Ok(QuadrantSplit {
        train_instances,
        test_instances,
        train_configs,
        test_configs,
        seed,
    })
}

/// Two-sided Wilcoxon signed-rank test over paired fold metrics. Returns the
/// test statistic W (smaller signed-rank sum) and an approximate p-value;
/// zero differences are dropped, ties share midranks. For fewer than 5
/// non-zero pairs the p-value is reported as 1.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(EpmError::ArityMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n < 5 {
        return Ok((0.0, 1.0));
    }
    diffs.sort_by(|x, y| x.abs().partial_cmp(&y.abs()).unwrap());
    // midranks for ties on |d|
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[j + 1].abs() == diffs[i].abs() {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for r in ranks.iter_mut().take(j + 1).skip(i) {
            *r = mid;
        }
        i = j + 1;
    }
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let w_minus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d < 0.0)
        .map(|(_, r)| r)
        .sum();
    let w = w_plus.min(w_minus);
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
    let z = (w - mean + 0.5) / var.sqrt();
    let p = 2.0 * standard_normal_cdf(z);
    Ok((w, p.min(1.0)))
}

fn standard_normal_cdf(z: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).unwrap().cdf(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        // hand arithmetic: sqrt((0 + 4)/2) = sqrt(2)
        assert_relative_eq!(
            rmse(&[0.0, 2.0], &[0.0, 0.0]).unwrap(),
            2f64.sqrt(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn rmse_length_mismatch() {
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cc_perfect_and_anti() {
        let y = [1.0, 2.0, 3.0];
        assert_relative_eq!(pearson_cc(&y, &y).unwrap(), 1.0, max_relative = 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        assert_relative_eq!(pearson_cc(&y, &neg).unwrap(), -1.0, max_relative = 1e-12);
    }

    #[test]
    fn cc_hand_value() {
        // brute-force covariance oracle, computed in the test
        let y = [1.0, 2.0, 3.0];
        let mu = [1.0, 2.0, 4.0];
        let oracle = {
            let my = y.iter().sum::<f64>() / 3.0;
            let mm = mu.iter().sum::<f64>() / 3.0;
            let cov: f64 = y.iter().zip(&mu).map(|(a, b)| (a - my) * (b - mm)).sum();
            let vy: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
            let vm: f64 = mu.iter().map(|a| (a - mm).powi(2)).sum();
            cov / (vy.sqrt() * vm.sqrt())
        };
        let got = pearson_cc(&y, &mu).unwrap();
        assert_relative_eq!(got, oracle, max_relative = 1e-12);
        assert_relative_eq!(got, 0.98198, epsilon = 1e-5);
    }

    #[test]
    fn cc_constant_vector_errors() {
        assert!(matches!(
            pearson_cc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(EpmError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ll_examples() {
        // pdf at 0: log(1/sqrt(2 pi)) per point
        let n = 4;
        let y = vec![1.0; n];
        let sig = vec![1.0; n];
        let ll = log_likelihood(&y, &y, &sig, false).unwrap();
        assert_relative_eq!(ll, -0.918938533204672_f64 * n as f64, max_relative = 1e-12);

        // one point, residual of one sigma
        let ll1 = log_likelihood(&[1.0], &[0.0], &[1.0], false).unwrap();
        assert_relative_eq!(ll1, -1.418938533204672, max_relative = 1e-12);

        // diverging residual drives LL to -inf monotonically
        let mut prev = f64::INFINITY;
        for r in [1.0, 10.0, 100.0, 1000.0] {
            let v = log_likelihood(&[r], &[0.0], &[1.0], false).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn ll_density_correct_subtracts_log_sigma() {
        let base = log_likelihood(&[0.0], &[0.0], &[2.0], false).unwrap();
        let corr = log_likelihood(&[0.0], &[0.0], &[2.0], true).unwrap();
        assert_relative_eq!(corr, base - 2.0f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn ll_rejects_nonpositive_sigma() {
        assert!(log_likelihood(&[0.0], &[0.0], &[0.0], false).is_err());
    }

    #[test]
    fn kfold_shapes() {
        let folds = kfold_split(10, 10, 1).unwrap();
        assert!(folds.iter().all(|f| f.len() == 1));

        let folds = kfold_split(10, 3, 1).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(|f| f.len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);

        let mut all: Vec<usize> = folds.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn kfold_deterministic() {
        assert_eq!(kfold_split(20, 4, 7).unwrap(), kfold_split(20, 4, 7).unwrap());
    }

    #[test]
    fn kfold_too_many_folds() {
        assert!(kfold_split(3, 5, 0).is_err());
    }

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn quadrant_even_and_odd() {
        let s = quadrant_split(&ids(&["a", "b", "c", "d"]), &ids(&["x", "y", "z", "w"]), 3).unwrap();
        assert_eq!(s.train_instances.len(), 2);
        assert_eq!(s.test_instances.len(), 2);
        assert_eq!(s.train_configs.len(), 2);

        let s = quadrant_split(&ids(&["a", "b", "c"]), &ids(&["x", "y"]), 3).unwrap();
        assert_eq!(s.train_instances.len(), 2);
        assert_eq!(s.test_instances.len(), 1);
    }

    #[test]
    fn quadrant_deterministic_and_disjoint() {
        let i = ids(&["a", "b", "c", "d", "e"]);
        let c = ids(&["x", "y", "z"]);
        let s1 = quadrant_split(&i, &c, 11).unwrap();
        let s2 = quadrant_split(&i, &c, 11).unwrap();
        assert_eq!(s1.train_instances, s2.train_instances);
        assert_eq!(s1.test_configs, s2.test_configs);
        for t in &s1.train_instances {
            assert!(!s1.test_instances.contains(t));
        }
        let mut all = s1.train_instances.clone();
        all.extend(s1.test_instances.clone());
        all.sort();
        let mut want = i.clone();
        want.sort();
        assert_eq!(all, want);
    }

    #[test]
    fn quadrant_too_few_ids() {
        assert!(quadrant_split(&ids(&["a"]), &ids(&["x", "y"]), 0).is_err());
    }

    #[test]
    fn wilcoxon_detects_shift() {
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 2.0).collect();
        let (_, p) = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(p < 0.05, "p = {}", p);
        let (_, p_same) = wilcoxon_signed_rank(&a, &a).unwrap();
        assert_eq!(p_same, 1.0);
    }
}
