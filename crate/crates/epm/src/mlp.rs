//! One-hidden-layer perceptron regression with a tanh hidden layer and a
//! quadratic weight penalty, trained by a monotone first-order minimizer.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Matrix, PredictiveDistribution};
use crate::error::{EpmError, Result};
use crate::ridge::MIN_RESIDUAL_VARIANCE;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: usize,
    pub alpha: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: 28,
            alpha: 0.01,
            steps: 100,
            seed: 0,
        }
    }
}

/// Fitted network: hidden weights are stored row-per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub hidden_weights: Vec<Vec<f64>>, // h x p
    pub hidden_biases: Vec<f64>,       // h
    pub output_weights: Vec<f64>,      // h
    pub output_bias: f64,
    pub alpha: f64,
    pub residual_variance: f64,
}

impl MlpModel {
    pub fn n_inputs(&self) -> usize {
        self.hidden_weights.first().map_or(0, |w| w.len())
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictiveDistribution> {
        Ok(PredictiveDistribution::new(
            mlp_forward(self, x)?,
            self.residual_variance,
        ))
    }
}

/// Network output: sum_j tanh(w_j . x + b_j) * v_j + c.
pub fn mlp_forward(model: &MlpModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.n_inputs() {
        return Err(EpmError::ArityMismatch {
            expected: model.n_inputs(),
            got: x.len(),
        });
    }
    let mut out = model.output_bias;
    for (j, wj) in model.hidden_weights.iter().enumerate() {
        let z: f64 = wj.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + model.hidden_biases[j];
        out += z.tanh() * model.output_weights[j];
    }
    Ok(out)
}

/// Flat parameter vector layout: [W (h*p), b (h), v (h), c].
struct Layout {
    h: usize,
    p: usize,
}

impl Layout {
    fn len(&self) -> usize {
        self.h * self.p + 2 * self.h + 1
    }

    fn unpack(&self, theta: &[f64]) -> MlpModel {
        let (h, p) = (self.h, self.p);
        let hidden_weights: Vec<Vec<f64>> =
            (0..h).map(|j| theta[j * p..(j + 1) * p].to_vec()).collect();
        let hidden_biases = theta[h * p..h * p + h].to_vec();
        let output_weights = theta[h * p + h..h * p + 2 * h].to_vec();
        let output_bias = theta[h * p + 2 * h];
        MlpModel {
            hidden_weights,
            hidden_biases,
            output_weights,
            output_bias,
            alpha: 0.0,
            residual_variance: MIN_RESIDUAL_VARIANCE,
        }
    }
}

/// Regularized objective sum_i (f(x_i) - y_i)^2 + alpha * (|W|^2 + |v|^2);
/// bias terms are excluded from the penalty.
pub fn mlp_objective(theta: &[f64], layout_h: usize, x: &Matrix, y: &[f64], alpha: f64) -> f64 {
    let layout = Layout {
        h: layout_h,
        p: x.n_cols(),
    };
    let model = layout.unpack(theta);
    let mut obj = 0.0;
    for i in 0..x.n_rows() {
        let e = mlp_forward(&model, x.row(i)).unwrap() - y[i];
        obj += e * e;
    }
    let penalty: f64 = model
        .hidden_weights
        .iter()
        .flat_map(|w| w.iter())
        .map(|w| w * w)
        .sum::<f64>()
        + model.output_weights.iter().map(|w| w * w).sum::<f64>();
    obj + alpha * penalty
}

/// Analytic gradient of the regularized objective (backpropagation).
pub fn mlp_gradient(theta: &[f64], layout_h: usize, x: &Matrix, y: &[f64], alpha: f64) -> Vec<f64> {
    let h = layout_h;
    let p = x.n_cols();
    let layout = Layout { h, p };
    let model = layout.unpack(theta);
    let mut grad = vec![0.0; layout.len()];
    let mut activations = vec![0.0; h];
    for i in 0..x.n_rows() {
        let row = x.row(i);
        let mut out = model.output_bias;
        for j in 0..h {
            let z: f64 = model.hidden_weights[j]
                .iter()
                .zip(row)
                .map(|(w, v)| w * v)
                .sum::<f64>()
                + model.hidden_biases[j];
            activations[j] = z.tanh();
            out += activations[j] * model.output_weights[j];
        }
        let e2 = 2.0 * (out - y[i]);
        for j in 0..h {
            let a = activations[j];
            // d out / d z_j = v_j * (1 - a^2)
            let dz = e2 * model.output_weights[j] * (1.0 - a * a);
            for (k, &xv) in row.iter().enumerate() {
                grad[j * p + k] += dz * xv;
            }
            grad[h * p + j] += dz; // hidden bias
            grad[h * p + h + j] += e2 * a; // output weight
        }
        grad[h * p + 2 * h] += e2; // output bias
    }
    for j in 0..h {
        for k in 0..p {
            grad[j * p + k] += 2.0 * alpha * theta[j * p + k];
        }
        grad[h * p + h + j] += 2.0 * alpha * theta[h * p + h + j];
    }
    grad
}

/// Trains the network by Polak-Ribiere conjugate gradients with a
/// backtracking line search; accepted iterations never increase the
/// objective. `steps` bounds the number of outer iterations and `steps = 0`
/// returns the seeded initialization unchanged.
pub fn fit_mlp(x: &Matrix, y: &[f64], params: &MlpParams) -> Result<MlpModel> {
    let n = x.n_rows();
    if n == 0 || y.len() != n {
        return Err(EpmError::Schema("mlp fit needs n >= 1 rows".into()));
    }
    if params.hidden == 0 {
        return Err(EpmError::Config("mlp needs h >= 1 hidden units".into()));
    }
    let layout = Layout {
        h: params.hidden,
        p: x.n_cols(),
    };
    // canonical row order makes the fit independent of input row order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = x.row(a).iter().map(|v| v.to_bits());
        let rb = x.row(b).iter().map(|v| v.to_bits());
        ra.cmp(rb).then(y[a].total_cmp(&y[b]))
    });
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| x.row(i).to_vec()).collect();
    let x = &Matrix::from_rows(&rows);
    let y: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let y = y.as_slice();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut theta: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(-0.1..0.1)).collect();

    let mut obj = mlp_objective(&theta, params.hidden, x, y, params.alpha);
    if !obj.is_finite() {
        return Err(EpmError::Training("non-finite initial objective".into()));
    }
    let mut grad = mlp_gradient(&theta, params.hidden, x, y, params.alpha);
    let mut dir: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut step = 1.0 / (1.0 + norm2(&grad));

    for it in 0..params.steps {
        let gnorm2 = dot(&grad, &grad);
        if gnorm2 < 1e-18 {
            break;
        }
        // ensure a descent direction; restart on failure
        if dot(&dir, &grad) >= 0.0 {
            dir = grad.iter().map(|g| -g).collect();
        }
        let slope = dot(&dir, &grad);
        let mut t = step;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let cand_obj = mlp_objective(&cand, params.hidden, x, y, params.alpha);
            if cand_obj.is_finite() && cand_obj <= obj + 1e-4 * t * slope {
                let new_grad = mlp_gradient(&cand, params.hidden, x, y, params.alpha);
                // Polak-Ribiere coefficient with restart every p iterations
                let beta = if (it + 1) % layout.len().max(8) == 0 {
                    0.0
                } else {
                    let num: f64 = new_grad
                        .iter()
                        .zip(&grad)
                        .map(|(ng, g)| ng * (ng - g))
                        .sum();
                    (num / gnorm2).max(0.0)
                };
                dir = new_grad
                    .iter()
                    .zip(&dir)
                    .map(|(ng, d)| -ng + beta * d)
                    .collect();
                theta = cand;
                obj = cand_obj;
                grad = new_grad;
                step = t * 2.0;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no acceptable step along this direction; restart steepest
            dir = grad.iter().map(|g| -g).collect();
            step = step * 0.5;
            if step < 1e-16 {
                break;
            }
        }
    }
    if !obj.is_finite() {
        return Err(EpmError::Training("objective overflowed".into()));
    }

    let mut model = layout.unpack(&theta);
    model.alpha = params.alpha;
    let mut sse = 0.0;
    for i in 0..n {
        let e = mlp_forward(&model, x.row(i))? - y[i];
        sse += e * e;
    }
    model.residual_variance = (sse / n as f64).max(MIN_RESIDUAL_VARIANCE);
    Ok(model)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn model_from(theta: &[f64], h: usize, p: usize) -> MlpModel {
        Layout { h, p }.unpack(theta)
    }

    #[test]
    fn forward_zero_weights_returns_output_bias() {
        let mut m = model_from(&vec![0.0; 1 * 2 + 2 + 1], 1, 2);
        m.output_bias = 3.25;
        assert_eq!(mlp_forward(&m, &[5.0, -2.0]).unwrap(), 3.25);
    }

    #[test]
    fn forward_tanh_zero() {
        let m = MlpModel {
            hidden_weights: vec![vec![0.0]],
            hidden_biases: vec![0.0],
            output_weights: vec![1.0],
            output_bias: 0.0,
            alpha: 0.0,
            residual_variance: 1e-6,
        };
        assert_eq!(mlp_forward(&m, &[7.0]).unwrap(), 0.0);
    }

    #[test]
    fn forward_scalar_evaluation() {
        // oracle: 1 + 2 * tanh(1)
        let m = MlpModel {
            hidden_weights: vec![vec![1.0]],
            hidden_biases: vec![0.0],
            output_weights: vec![2.0],
            output_bias: 1.0,
            alpha: 0.0,
            residual_variance: 1e-6,
        };
        let got = mlp_forward(&m, &[1.0]).unwrap();
        assert_relative_eq!(got, 1.0 + 2.0 * 1.0f64.tanh(), max_relative = 1e-15);
        assert_relative_eq!(got, 2.5232, epsilon = 1e-4);
    }

    #[test]
    fn forward_arity_mismatch() {
        let m = model_from(&vec![0.0; 4], 1, 1);
        assert!(mlp_forward(&m, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = 4;
        let len = h * 3 + 2 * h + 1;
        let alpha = 0.01;
        for _ in 0..20 {
            let theta: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let grad = mlp_gradient(&theta, h, &x, &y, alpha);
            let eps = 1e-5;
            for k in 0..len {
                let mut tp = theta.clone();
                tp[k] += eps;
                let mut tm = theta.clone();
                tm[k] -= eps;
                let fd = (mlp_objective(&tp, h, &x, &y, alpha)
                    - mlp_objective(&tm, h, &x, &y, alpha))
                    / (2.0 * eps);
                let denom = fd.abs().max(grad[k].abs()).max(1e-6);
                assert!(
                    (fd - grad[k]).abs() / denom < 1e-4,
                    "component {}: fd {} analytic {}",
                    k,
                    fd,
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn fit_zero_target_shrinks_weights() {
        let x = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![0.5]]);
        let y = vec![0.0; 3];
        let params = MlpParams {
            hidden: 3,
            alpha: 10.0,
            steps: 100,
            seed: 1,
        };
        let m = fit_mlp(&x, &y, &params).unwrap();
        let theta_pen: f64 = m
            .hidden_weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(m.output_weights.iter())
            .map(|w| w * w)
            .sum();
        assert!(theta_pen < 0.05, "penalty term {}", theta_pen);
    }

    #[test]
    fn fit_zero_steps_returns_initialization() {
        let x = Matrix::from_rows(&[vec![0.3], vec![0.7]]);
        let y = vec![1.0, -1.0];
        let params = MlpParams {
            hidden: 2,
            alpha: 0.01,
            steps: 0,
            seed: 5,
        };
        let m = fit_mlp(&x, &y, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let expect: Vec<f64> = (0..(2 + 2 + 2 + 1)).map(|_| rng.gen_range(-0.1..0.1)).collect();
        assert_eq!(m.hidden_weights[0][0], expect[0]);
        assert_eq!(m.output_bias, expect[6]);
    }

    #[test]
    fn fit_bump_beats_linear_fit() {
        // 1-D bump: linear models cannot follow it
        let xs: Vec<f64> = (0..20).map(|i| -1.0 + i as f64 * (2.0 / 19.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (-(x * x) * 8.0).exp()).collect();
        let x = Matrix::from_rows(&xs.iter().map(|&v| vec![v]).collect::<Vec<_>>());
        let params = MlpParams {
            hidden: 8,
            alpha: 0.001,
            steps: 200,
            seed: 2,
        };
        let m = fit_mlp(&x, &ys, &params).unwrap();
        let mlp_rmse = {
            let sse: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(&v, &t)| (mlp_forward(&m, &[v]).unwrap() - t).powi(2))
                .sum();
            (sse / xs.len() as f64).sqrt()
        };
        // oracle: best linear fit computed directly in the test
        let lin_rmse = {
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
            let sxx: f64 = xs.iter().map(|a| (a - mx).powi(2)).sum();
            let slope = sxy / sxx;
            let icept = my - slope * mx;
            let sse: f64 = xs
                .iter()
                .zip(&ys)
                .map(|(&v, &t)| (slope * v + icept - t).powi(2))
                .sum();
            (sse / n).sqrt()
        };
        assert!(
            mlp_rmse < lin_rmse,
            "mlp {} not better than linear {}",
            mlp_rmse,
            lin_rmse
        );
    }

    #[test]
    fn fit_objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<f64> = rows.iter().map(|r| r[0] - r[1]).collect();
        let mut prev = f64::INFINITY;
        for steps in [0, 5, 25, 100] {
            let params = MlpParams {
                hidden: 5,
                alpha: 0.01,
                steps,
                seed: 11,
            };
            let m = fit_mlp(&x, &y, &params).unwrap();
            let theta: Vec<f64> = m
                .hidden_weights
                .iter()
                .flat_map(|w| w.iter().copied())
                .chain(m.hidden_biases.iter().copied())
                .chain(m.output_weights.iter().copied())
                .chain(std::iter::once(m.output_bias))
                .collect();
            let obj = mlp_objective(&theta, 5, &x, &y, 0.01);
            assert!(obj <= prev + 1e-9, "objective rose: {} -> {}", prev, obj);
            prev = obj;
        }
    }

    #[test]
    fn fit_invariant_to_row_order() {
        let rows = vec![vec![0.1], vec![0.5], vec![0.9], vec![0.3]];
        let y = vec![1.0, 2.0, 0.5, 1.5];
        let params = MlpParams {
            hidden: 3,
            alpha: 0.01,
            steps: 50,
            seed: 21,
        };
        let m1 = fit_mlp(&Matrix::from_rows(&rows), &y, &params).unwrap();
        let perm = [2usize, 0, 3, 1];
        let rows2: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let y2: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let m2 = fit_mlp(&Matrix::from_rows(&rows2), &y2, &params).unwrap();
        for q in [0.0, 0.42, 1.0] {
            let a = mlp_forward(&m1, &[q]).unwrap();
            let b = mlp_forward(&m2, &[q]).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-6);
        }
    }
}
