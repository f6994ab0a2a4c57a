//! Kernels for continuous, categorical, and mixed inputs, exact Gaussian
//! process regression with marginal-likelihood hyperparameter fitting, and
//! the projected-process approximation for larger data.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Matrix, PredictiveDistribution};
use crate::error::{EpmError, Result};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Per-dimension treatment inside the mixed kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimKind {
    Continuous,
    Categorical,
}

/// Kernel hyperparameters: one weight per original input dimension plus the
/// observation noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lambdas: Vec<f64>,
    pub noise_var: f64,
    pub dim_kinds: Vec<DimKind>,
}

impl KernelParams {
    pub fn new(lambdas: Vec<f64>, noise_var: f64, dim_kinds: Vec<DimKind>) -> Result<Self> {
        if lambdas.len() != dim_kinds.len() {
            return Err(EpmError::Schema(
                "lambdas and dim_kinds must have equal length".into(),
            ));
        }
        if !lambdas.iter().all(|l| *l > 0.0) || !(noise_var > 0.0) {
            return Err(EpmError::Domain(
                "kernel weights and noise variance must be positive".into(),
            ));
        }
        Ok(KernelParams {
            lambdas,
            noise_var,
            dim_kinds,
        })
    }

    /// All-continuous parameters with unit weights.
    pub fn default_for(p: usize, dim_kinds: Vec<DimKind>) -> Self {
        KernelParams {
            lambdas: vec![1.0; p],
            noise_var: 0.01,
            dim_kinds,
        }
    }
}

/// Squared exponential kernel over continuous dimensions.
pub fn k_cont(xi: &[f64], xj: &[f64], lambdas: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((a, b), l) in xi.iter().zip(xj).zip(lambdas) {
        let d = a - b;
        s -= l * d * d;
    }
    s.exp()
}

/// Weighted Hamming kernel over categorical dimensions.
pub fn k_cat(xi: &[f64], xj: &[f64], lambdas: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((a, b), l) in xi.iter().zip(xj).zip(lambdas) {
        if a != b {
            s -= l;
        }
    }
    s.exp()
}

/// Mixed kernel: continuous dimensions contribute weighted squared
/// differences, categorical dimensions weighted mismatch indicators, inside
/// one exponential.
pub fn k_mixed(xi: &[f64], xj: &[f64], params: &KernelParams) -> f64 {
    let mut s = 0.0;
    for (d, ((a, b), l)) in xi.iter().zip(xj).zip(&params.lambdas).enumerate() {
        match params.dim_kinds[d] {
            DimKind::Continuous => {
                let diff = a - b;
                s -= l * diff * diff;
            }
            DimKind::Categorical => {
                if a != b {
                    s -= l;
                }
            }
        }
    }
    s.exp()
}

/// Lower-triangular Cholesky factor stored flat, with substitution solvers.
/// Keeping the factor in the model makes serialization round trips
/// prediction-preserving without refactorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriFactor {
    l: Vec<f64>,
    n: usize,
}

impl TriFactor {
    fn from_cholesky(chol: &Cholesky<f64, nalgebra::Dyn>) -> Self {
        let l = chol.l();
        let n = l.nrows();
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                flat[i * n + j] = l[(i, j)];
            }
        }
        TriFactor { l: flat, n }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves L v = b.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut v = b.to_vec();
        for i in 0..n {
            let mut s = v[i];
            for j in 0..i {
                s -= self.l[i * n + j] * v[j];
            }
            v[i] = s / self.l[i * n + i];
        }
        v
    }

    /// Solves L^T w = v.
    fn solve_upper(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut w = v.to_vec();
        for i in (0..n).rev() {
            let mut s = w[i];
            for j in i + 1..n {
                s -= self.l[j * n + i] * w[j];
            }
            w[i] = s / self.l[i * n + i];
        }
        w
    }

    /// Solves (L L^T) x = b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn log_det_half(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum()
    }
}

/// Cholesky with jitter escalation on failure: no jitter, then 1e-10, then
/// 1e-6 on the diagonal.
fn cholesky_with_jitter(mut k: DMatrix<f64>) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    for jitter in [0.0, 1e-10, 1e-6] {
        if jitter > 0.0 {
            for i in 0..k.nrows() {
                k[(i, i)] += jitter;
            }
        }
        if let Some(c) = Cholesky::new(k.clone()) {
            return Ok((c, jitter));
        }
    }
    Err(EpmError::Numerical(
        "kernel matrix not positive definite after jitter".into(),
    ))
}

/// Precomputed per-dimension distance matrices for a training set.
struct KernelWorkspace {
    dists: Vec<DMatrix<f64>>,
    n: usize,
}

impl KernelWorkspace {
    fn build(x: &Matrix, kinds: &[DimKind]) -> KernelWorkspace {
        let n = x.n_rows();
        let p = x.n_cols();
        let dists = (0..p)
            .map(|d| {
                DMatrix::from_fn(n, n, |i, j| {
                    let (a, b) = (x.get(i, d), x.get(j, d));
                    match kinds[d] {
                        DimKind::Continuous => {
                            let v = a - b;
                            v * v
                        }
                        DimKind::Categorical => {
                            if a != b {
                                1.0
                            } else {
                                0.0
                            }
                        }
                    }
                })
            })
            .collect();
        KernelWorkspace { dists, n }
    }

    fn kernel_matrix(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let mut s = 0.0;
                for (d, l) in lambdas.iter().enumerate() {
                    s -= l * self.dists[d][(i, j)];
                }
                k[(i, j)] = s.exp();
            }
        }
        k
    }
}

/// Log marginal likelihood and its gradient with respect to
/// [log lambda_1..p, log sigma^2].
fn lml_and_grad(
    ws: &KernelWorkspace,
    y: &DVector<f64>,
    log_params: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let p = ws.dists.len();
    let lambdas: Vec<f64> = log_params[..p].iter().map(|u| u.exp()).collect();
    let noise = log_params[p].exp();
    let n = ws.n;
    let k = ws.kernel_matrix(&lambdas);
    let mut kn = k.clone();
    for i in 0..n {
        kn[(i, i)] += noise;
    }
    let (chol, _) = cholesky_with_jitter(kn)?;
    let alpha = chol.solve(y);
    let log_det_half: f64 = (0..n).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    let lml = -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;

    let kinv = chol.inverse();
    // G = alpha alpha^T - Kn^-1 ; dLML/dtheta = 0.5 tr(G dK/dtheta)
    let mut grad = vec![0.0; p + 1];
    for d in 0..p {
        let mut tr = 0.0;
        for i in 0..n {
            for j in 0..n {
                let g = alpha[i] * alpha[j] - kinv[(i, j)];
                // dK/d(log lambda_d) = -lambda_d * D_d .* K
                tr += g * (-lambdas[d] * ws.dists[d][(i, j)] * k[(i, j)]);
            }
        }
        grad[d] = 0.5 * tr;
    }
    let mut tr_noise = 0.0;
    for i in 0..n {
        tr_noise += alpha[i] * alpha[i] - kinv[(i, i)];
    }
    grad[p] = 0.5 * tr_noise * noise;
    Ok((lml, grad))
}

/// Public hook for gradient checking: log marginal likelihood at the given
/// log-space hyperparameters.
pub fn log_marginal_likelihood(
    x: &Matrix,
    y: &[f64],
    kinds: &[DimKind],
    log_params: &[f64],
) -> Result<f64> {
    let ws = KernelWorkspace::build(x, kinds);
    let yv = DVector::from_row_slice(y);
    lml_and_grad(&ws, &yv, log_params).map(|(l, _)| l)
}

/// Same hook returning the analytic gradient.
pub fn log_marginal_likelihood_grad(
    x: &Matrix,
    y: &[f64],
    kinds: &[DimKind],
    log_params: &[f64],
) -> Result<Vec<f64>> {
    let ws = KernelWorkspace::build(x, kinds);
    let yv = DVector::from_row_slice(y);
    lml_and_grad(&ws, &yv, log_params).map(|(_, g)| g)
}

/// Exact GP posterior model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub params: KernelParams,
    pub x_train: Matrix,
    pub y_train: Vec<f64>,
    factor: TriFactor,
    alpha: Vec<f64>,
}

/// Optimizes hyperparameters in log space by gradient ascent with a
/// backtracking line search; `opt_steps` counts objective evaluations and the
/// returned parameters never score below the initialization.
pub fn gp_fit(x: &Matrix, y: &[f64], init: &KernelParams, opt_steps: usize) -> Result<GpModel> {
    let n = x.n_rows();
    if n < 2 {
        return Err(EpmError::Config("gp fit needs n >= 2".into()));
    }
    if y.len() != n || init.lambdas.len() != x.n_cols() {
        return Err(EpmError::Schema("gp fit input shape mismatch".into()));
    }
    let ws = KernelWorkspace::build(x, &init.dim_kinds);
    let yv = DVector::from_row_slice(y);
    let p = x.n_cols();

    let mut u: Vec<f64> = init
        .lambdas
        .iter()
        .map(|l| l.ln())
        .chain(std::iter::once(init.noise_var.ln()))
        .collect();
    // None keeps the exact initialization (a strict improvement replaces it)
    let mut best_u: Option<Vec<f64>> = None;

    if opt_steps > 0 {
        let mut evals = 0usize;
        let (mut lml, mut grad) = lml_and_grad(&ws, &yv, &u)?;
        evals += 1;
        let mut best_lml = lml;
        let mut step = 0.1;
        'outer: while evals < opt_steps {
            let gnorm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm < 1e-10 {
                break;
            }
            let mut t = step;
            loop {
                if evals >= opt_steps {
                    break 'outer;
                }
                let cand: Vec<f64> = u
                    .iter()
                    .zip(&grad)
                    .map(|(a, g)| (a + t * g).clamp(-20.0, 20.0))
                    .collect();
                match lml_and_grad(&ws, &yv, &cand) {
                    Ok((cl, cg)) => {
                        evals += 1;
                        if cl > lml {
                            u = cand;
                            lml = cl;
                            grad = cg;
                            if lml > best_lml {
                                best_lml = lml;
                                best_u = Some(u.clone());
                            }
                            step = t * 2.0;
                            break;
                        }
                    }
                    Err(_) => {
                        evals += 1;
                    }
                }
                t *= 0.5;
                if t < 1e-12 {
                    break 'outer;
                }
            }
        }
    }

    let params = match best_u {
        None => init.clone(),
        Some(bu) => KernelParams::new(
            bu[..p].iter().map(|v| v.exp()).collect(),
            bu[p].exp(),
            init.dim_kinds.clone(),
        )?,
    };

    let mut kn = ws.kernel_matrix(&params.lambdas);
    for i in 0..n {
        kn[(i, i)] += params.noise_var;
    }
    let (chol, _) = cholesky_with_jitter(kn)?;
    let alpha = chol.solve(&yv).iter().copied().collect();
    Ok(GpModel {
        params,
        x_train: x.clone(),
        y_train: y.to_vec(),
        factor: TriFactor::from_cholesky(&chol),
        alpha,
    })
}

/// Posterior mean and variance at a query point; the variance includes the
/// observation noise term.
pub fn gp_predict(model: &GpModel, x: &[f64]) -> Result<PredictiveDistribution> {
    if x.len() != model.x_train.n_cols() {
        return Err(EpmError::ArityMismatch {
            expected: model.x_train.n_cols(),
            got: x.len(),
        });
    }
    let n = model.x_train.n_rows();
    let kstar: Vec<f64> = (0..n)
        .map(|i| k_mixed(model.x_train.row(i), x, &model.params))
        .collect();
    let mean: f64 = kstar.iter().zip(&model.alpha).map(|(k, a)| k * a).sum();
    let v = model.factor.solve_lower(&kstar);
    let kss = k_mixed(x, x, &model.params) + model.params.noise_var;
    let var = kss - v.iter().map(|w| w * w).sum::<f64>();
    Ok(PredictiveDistribution::new(mean, var))
}

/// Projected-process approximation built on an active subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpModel {
    pub params: KernelParams,
    pub active_x: Matrix,
    pub active_indices: Vec<usize>,
    factor_aa: TriFactor,
    factor_m: TriFactor,
    beta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpParams {
    pub active_size: usize,
    pub opt_steps: usize,
    pub seed: u64,
}

impl Default for PpParams {
    fn default() -> Self {
        PpParams {
            active_size: 300,
            opt_steps: 50,
            seed: 0,
        }
    }
}

fn sample_without_replacement(n: usize, a: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, n, a).into_vec();
    idx.sort_unstable();
    idx
}

/// Fits hyperparameters on one random active-size subset via `gp_fit`, then
/// builds the projected-process caches on an independently sampled subset.
/// When the requested active size exceeds n, all n points are used.
pub fn pp_fit(x: &Matrix, y: &[f64], init: &KernelParams, pp: &PpParams) -> Result<PpModel> {
    let n = x.n_rows();
    if n == 0 {
        return Err(EpmError::Config("pp fit needs n >= 1".into()));
    }
    let a = pp.active_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(pp.seed);
    let hyper_idx = sample_without_replacement(n, a.max(2.min(n)), &mut rng);
    let active_idx = sample_without_replacement(n, a, &mut rng);

    let params = if hyper_idx.len() >= 2 && pp.opt_steps > 0 {
        let xs = select_rows(x, &hyper_idx);
        let ys: Vec<f64> = hyper_idx.iter().map(|&i| y[i]).collect();
        gp_fit(&xs, &ys, init, pp.opt_steps)?.params
    } else {
        init.clone()
    };

    build_pp(x, y, &params, active_idx)
}

fn select_rows(x: &Matrix, idx: &[usize]) -> Matrix {
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| x.row(i).to_vec()).collect();
    Matrix::from_rows(&rows)
}

fn build_pp(x: &Matrix, y: &[f64], params: &KernelParams, active_idx: Vec<usize>) -> Result<PpModel> {
    let a = active_idx.len();
    let n = x.n_rows();
    let active_x = select_rows(x, &active_idx);
    let k_aa = DMatrix::from_fn(a, a, |i, j| {
        k_mixed(active_x.row(i), active_x.row(j), params)
    });
    let k_an = DMatrix::from_fn(a, n, |i, j| k_mixed(active_x.row(i), x.row(j), params));
    let (chol_aa, jitter) = cholesky_with_jitter(k_aa.clone())?;
    let mut m = &k_an * k_an.transpose();
    m += k_aa * params.noise_var;
    if jitter > 0.0 {
        for i in 0..a {
            m[(i, i)] += jitter * params.noise_var;
        }
    }
    let (chol_m, _) = cholesky_with_jitter(m)?;
    let yv = DVector::from_row_slice(y);
    let kan_y = &k_an * yv;
    let beta = chol_m.solve(&kan_y).iter().copied().collect();
    Ok(PpModel {
        params: params.clone(),
        active_x,
        active_indices: active_idx,
        factor_aa: TriFactor::from_cholesky(&chol_aa),
        factor_m: TriFactor::from_cholesky(&chol_m),
        beta,
    })
}

/// Projected-process predictive mean and variance.
pub fn pp_predict(model: &PpModel, x: &[f64]) -> Result<PredictiveDistribution> {
    if x.len() != model.active_x.n_cols() {
        return Err(EpmError::ArityMismatch {
            expected: model.active_x.n_cols(),
            got: x.len(),
        });
    }
    let a = model.active_x.n_rows();
    let kstar: Vec<f64> = (0..a)
        .map(|i| k_mixed(model.active_x.row(i), x, &model.params))
        .collect();
    let mean: f64 = kstar.iter().zip(&model.beta).map(|(k, b)| k * b).sum();
    let kss = k_mixed(x, x, &model.params) + model.params.noise_var;
    let v_aa = model.factor_aa.solve_lower(&kstar);
    let quad_aa: f64 = v_aa.iter().map(|w| w * w).sum();
    let m_inv_k = model.factor_m.solve(&kstar);
    let quad_m: f64 = kstar.iter().zip(&m_inv_k).map(|(k, w)| k * w).sum();
    let var = kss - quad_aa + model.params.noise_var * quad_m;
    Ok(PredictiveDistribution::new(mean, var))
}
