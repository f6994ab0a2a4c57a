//! Random forest regression with variance-quantifying leaves, per-node
//! random split variables, randomized split points, and mixture-moment
//! aggregation of per-tree predictions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Matrix, PredictiveDistribution};
use crate::error::{EpmError, Result};
use crate::tree::{grow, GrowthConfig, TreeNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    /// Number of trees.
    pub b: usize,
    /// Fraction of variables considered at each node.
    pub perc: f64,
    /// Nodes with more than this many points remain split-eligible.
    pub n_min: usize,
    /// Lower bound on stored leaf variances.
    pub var_floor: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            b: 10,
            perc: 0.5,
            n_min: 5,
            var_floor: 0.01,
            seed: 0,
        }
    }
}

impl ForestParams {
    fn validate(&self) -> Result<()> {
        if self.b < 1 {
            return Err(EpmError::Config("forest needs B >= 1 trees".into()));
        }
        if !(self.perc > 0.0 && self.perc <= 1.0) {
            return Err(EpmError::Config("perc must lie in (0, 1]".into()));
        }
        if self.n_min < 1 {
            return Err(EpmError::Config("n_min must be >= 1".into()));
        }
        if !(self.var_floor > 0.0) {
            return Err(EpmError::Config("leaf variance floor must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub params: ForestParams,
    pub n_inputs: usize,
}

/// Per-tree seeds drawn once from the master seed; tree data assignments and
/// seeds stay fixed across refits that reuse the same parameters.
pub fn tree_seeds(params: &ForestParams) -> Vec<u64> {
    let mut master = ChaCha8Rng::seed_from_u64(params.seed);
    (0..params.b).map(|_| master.gen()).collect()
}

/// Fits B unpruned trees on the full training set, each drawing a fresh
/// variable subset of size max(1, floor(perc * p)) per node and sampling
/// continuous split points uniformly inside the optimal interval.
pub fn fit_forest(
    x: &Matrix,
    y: &[f64],
    kinds: &[ColumnKind],
    params: &ForestParams,
) -> Result<ForestModel> {
    let targets: Vec<&[f64]> = (0..params.b).map(|_| y).collect();
    fit_forest_with_targets(x, &targets, kinds, params)
}

/// Forest fit with one response vector per tree; the censored-data EM uses
/// this to refit trees on their own imputed targets while keeping seeds and
/// data assignments fixed.
pub fn fit_forest_with_targets(
    x: &Matrix,
    targets: &[&[f64]],
    kinds: &[ColumnKind],
    params: &ForestParams,
) -> Result<ForestModel> {
    params.validate()?;
    let n = x.n_rows();
    if n == 0 {
        return Err(EpmError::Schema("forest fit needs n >= 1 rows".into()));
    }
    if targets.len() != params.b {
        return Err(EpmError::Schema(format!(
            "expected {} per-tree target vectors, got {}",
            params.b,
            targets.len()
        )));
    }
    for t in targets {
        if t.len() != n {
            return Err(EpmError::Schema("target length mismatch".into()));
        }
    }
    let p = x.n_cols();
    let v = ((params.perc * p as f64).floor() as usize).max(1);
    let cfg = GrowthConfig {
        min_leaf: 1,
        n_min: Some(params.n_min),
        vars_per_node: Some(v.min(p)),
        random_split_point: true,
        var_floor: params.var_floor,
    };
    let seeds = tree_seeds(params);
    let rows: Vec<usize> = (0..n).collect();
    let trees: Vec<TreeNode> = seeds
        .par_iter()
        .zip(targets.par_iter())
        .map(|(&s, y_b)| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            grow(x, y_b, kinds, &rows, &cfg, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        trees,
        params: params.clone(),
        n_inputs: p,
    })
}

/// Mixture-moment aggregation: the forest is an equal-weight mixture of the
/// per-tree normals, so the mean is the average of tree means and the
/// variance follows the law of total variance.
pub fn predict_forest(model: &ForestModel, x: &[f64]) -> Result<PredictiveDistribution> {
    if x.len() != model.n_inputs {
        return Err(EpmError::ArityMismatch {
            expected: model.n_inputs,
            got: x.len(),
        });
    }
    let b = model.trees.len() as f64;
    let mut mean = 0.0;
    let mut second = 0.0;
    for tree in &model.trees {
        let (mu, var, _) = tree.leaf_for(x);
        mean += mu;
        second += var + mu * mu;
    }
    mean /= b;
    second /= b;
    Ok(PredictiveDistribution::new(mean, second - mean * mean))
}

/// Per-tree predictive pairs, used by the censoring EM.
pub fn tree_predictions(model: &ForestModel, x: &[f64]) -> Vec<(f64, f64)> {
    model
        .trees
        .iter()
        .map(|t| {
            let (mu, var, _) = t.leaf_for(x);
            (mu, var)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn cont_kinds(p: usize) -> Vec<ColumnKind> {
        vec![ColumnKind::Continuous; p]
    }

    #[test]
    fn single_leaf_forest_constant_prediction() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]);
        let y = [1.0, 2.0, 6.0];
        let params = ForestParams {
            b: 1,
            n_min: 4, // n_min >= n: no node is split-eligible
            ..ForestParams::default()
        };
        let m = fit_forest(&x, &y, &cont_kinds(1), &params).unwrap();
        let p = predict_forest(&m, &[5.0]).unwrap();
        assert_relative_eq!(p.mean, 3.0, max_relative = 1e-12);
        // sample variance of y is 7, above the floor
        assert_relative_eq!(p.variance, 7.0, max_relative = 1e-12);
    }

    #[test]
    fn fixed_seed_reproduces_forest() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_rows(
            &(0..50)
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect::<Vec<_>>(),
        );
        let y: Vec<f64> = (0..50).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let params = ForestParams {
            seed: 99,
            ..ForestParams::default()
        };
        let a = fit_forest(&x, &y, &cont_kinds(2), &params).unwrap();
        let b = fit_forest(&x, &y, &cont_kinds(2), &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_function_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::from_rows(
            &(0..200)
                .map(|_| vec![rng.gen_range(0.0..1.0)])
                .collect::<Vec<_>>(),
        );
        let y: Vec<f64> = (0..200)
            .map(|i| if x.get(i, 0) <= 0.5 { 0.0 } else { 4.0 })
            .collect();
        let params = ForestParams {
            perc: 1.0,
            ..ForestParams::default()
        };
        let m = fit_forest(&x, &y, &cont_kinds(1), &params).unwrap();
        let sse: f64 = (0..200)
            .map(|i| {
                let p = predict_forest(&m, x.row(i)).unwrap();
                (p.mean - y[i]).powi(2)
            })
            .sum();
        let rmse = (sse / 200.0).sqrt();
        assert!(rmse < 0.1 * 4.0, "training rmse {}", rmse);
    }

    #[test]
    fn aggregation_hand_case() {
        // two trees (1, 0) and (3, 0): mean 2, variance (0+1+0+9)/2 - 4 = 1
        let trees = vec![
            TreeNode::Leaf {
                mean: 1.0,
                variance: 0.0,
                count: 1,
            },
            TreeNode::Leaf {
                mean: 3.0,
                variance: 0.0,
                count: 1,
            },
        ];
        let m = ForestModel {
            trees,
            params: ForestParams {
                b: 2,
                ..ForestParams::default()
            },
            n_inputs: 1,
        };
        let p = predict_forest(&m, &[0.0]).unwrap();
        assert_relative_eq!(p.mean, 2.0, max_relative = 1e-15);
        assert_relative_eq!(p.variance, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn aggregation_matches_mixture_oracle() {
        // brute-force mixture moments via raw first/second moments
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let b = rng.gen_range(1..=12);
            let pairs: Vec<(f64, f64)> = (0..b)
                .map(|_| (rng.gen_range(-3.0..3.0), rng.gen_range(0.01..2.0)))
                .collect();
            let trees: Vec<TreeNode> = pairs
                .iter()
                .map(|&(mu, var)| TreeNode::Leaf {
                    mean: mu,
                    variance: var,
                    count: 1,
                })
                .collect();
            let m = ForestModel {
                trees,
                params: ForestParams {
                    b,
                    ..ForestParams::default()
                },
                n_inputs: 1,
            };
            let p = predict_forest(&m, &[0.0]).unwrap();
            let first: f64 = pairs.iter().map(|(mu, _)| mu).sum::<f64>() / b as f64;
            let second: f64 = pairs
                .iter()
                .map(|(mu, var)| var + mu * mu)
                .sum::<f64>()
                / b as f64;
            assert_relative_eq!(p.mean, first, epsilon = 1e-10);
            assert_relative_eq!(p.variance, second - first * first, epsilon = 1e-10);
            // disagreement term is non-negative
            let avg_var: f64 = pairs.iter().map(|(_, v)| v).sum::<f64>() / b as f64;
            assert!(p.variance >= avg_var - 1e-12);
        }
    }

    #[test]
    fn all_trees_agree_variance_is_floor() {
        let trees: Vec<TreeNode> = (0..5)
            .map(|_| TreeNode::Leaf {
                mean: 1.5,
                variance: 0.01,
                count: 3,
            })
            .collect();
        let m = ForestModel {
            trees,
            params: ForestParams {
                b: 5,
                ..ForestParams::default()
            },
            n_inputs: 1,
        };
        let p = predict_forest(&m, &[0.0]).unwrap();
        assert_relative_eq!(p.variance, 0.01, max_relative = 1e-12);
    }

    #[test]
    fn interpolating_settings_memorize_training_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Matrix::from_rows(
            &(0..30)
                .map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
                .collect::<Vec<_>>(),
        );
        let y: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = ForestParams {
            perc: 1.0,
            n_min: 1,
            ..ForestParams::default()
        };
        let m = fit_forest(&x, &y, &cont_kinds(2), &params).unwrap();
        for i in 0..30 {
            let p = predict_forest(&m, x.row(i)).unwrap();
            assert_relative_eq!(p.mean, y[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn predictions_within_response_hull_and_tree_order_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = Matrix::from_rows(
            &(0..60)
                .map(|_| vec![rng.gen_range(0.0..1.0)])
                .collect::<Vec<_>>(),
        );
        let y: Vec<f64> = (0..60).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let m = fit_forest(&x, &y, &cont_kinds(1), &ForestParams::default()).unwrap();
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
        let mut reversed = m.clone();
        reversed.trees.reverse();
        for _ in 0..40 {
            let q = [rng.gen_range(-0.5..1.5)];
            let p = predict_forest(&m, &q).unwrap();
            assert!(p.mean >= lo - 1e-12 && p.mean <= hi + 1e-12);
            let pr = predict_forest(&reversed, &q).unwrap();
            assert_relative_eq!(p.mean, pr.mean, epsilon = 1e-12);
            assert_relative_eq!(p.variance, pr.variance, epsilon = 1e-12);
        }
    }
}
