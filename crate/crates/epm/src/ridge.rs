//! Ridge regression core and the two feature-selection variants: two-phase
//! forward selection and the cubic forward-backward search.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Matrix, PredictiveDistribution};
use crate::error::{EpmError, Result};
use crate::metrics::kfold_split;
use crate::preprocess::{cubic_terms, Term, CONSTANT_SD};

/// Floor for the residual variance attached to ridge point predictions.
pub const MIN_RESIDUAL_VARIANCE: f64 = 1e-6;

/// A fitted ridge model over a set of selected terms. Terms are monomials in
/// the (encoded, imputed) predictor columns; each term column is z-scored
/// with the stored training statistics before the weights apply. A constant
/// intercept is always present and exempt from normalization and selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub terms: Vec<Term>,
    pub term_means: Vec<f64>,
    pub term_sds: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub epsilon: f64,
    pub residual_variance: f64,
    pub n_input_cols: usize,
}

impl RidgeModel {
    pub fn predict(&self, row: &[f64]) -> Result<PredictiveDistribution> {
        if row.len() != self.n_input_cols {
            return Err(EpmError::ArityMismatch {
                expected: self.n_input_cols,
                got: row.len(),
            });
        }
        let mut mean = self.intercept;
        for (k, t) in self.terms.iter().enumerate() {
            let (m, s, w) = (self.term_means[k], self.term_sds[k], self.weights[k]);
            let z = if s < CONSTANT_SD { 0.0 } else { (t.eval(row) - m) / s };
            mean += w * z;
        }
        Ok(PredictiveDistribution::new(mean, self.residual_variance))
    }
}

/// Computes w = (X^T X + eps I)^-1 X^T y through a Cholesky factorization.
pub fn fit_ridge(x: &Matrix, y: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    let n = x.n_rows();
    let p = x.n_cols();
    if n == 0 || y.len() != n {
        return Err(EpmError::Schema(format!(
            "ridge fit needs n >= 1 rows with matching response ({} rows, {} responses)",
            n,
            y.len()
        )));
    }
    if epsilon < 0.0 {
        return Err(EpmError::Domain("ridge penalty must be >= 0".into()));
    }
    let xm = DMatrix::from_fn(n, p, |i, j| x.get(i, j));
    let yv = DVector::from_row_slice(y);
    let mut a = xm.transpose() * &xm;
    for j in 0..p {
        a[(j, j)] += epsilon;
    }
    let b = xm.transpose() * yv;
    let chol = Cholesky::new(a).ok_or_else(|| {
        EpmError::Singular("X^T X + eps I is not positive definite".into())
    })?;
    if epsilon == 0.0 {
        // an unregularized rank-deficient system shows up as a collapsed
        // pivot in the factor
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for j in 0..p {
            lo = lo.min(l[(j, j)]);
            hi = hi.max(l[(j, j)]);
        }
        if !(lo > 1e-7 * hi) {
            return Err(EpmError::Singular("X^T X is singular".into()));
        }
    }
    let w: Vec<f64> = chol.solve(&b).iter().copied().collect();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(EpmError::Singular("normal equations are singular".into()));
    }
    Ok(w)
}

/// Hyperparameters of the two-phase forward-selection variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoPhaseParams {
    /// Linear inputs selected in phase 1.
    pub l: usize,
    /// Terms selected in phase 2 after quadratic expansion of the l inputs.
    pub q: usize,
    pub epsilon: f64,
    pub inner_folds: usize,
}

impl Default for TwoPhaseParams {
    fn default() -> Self {
        TwoPhaseParams {
            l: 30,
            q: 20,
            epsilon: 1e-3,
            inner_folds: 5,
        }
    }
}

/// Hyperparameters of the forward-backward variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SporeParams {
    pub epsilon: f64,
    pub t_max: usize,
    pub gamma: f64,
}

impl Default for SporeParams {
    fn default() -> Self {
        SporeParams {
            epsilon: 1e-3,
            t_max: 10,
            gamma: 0.01,
        }
    }
}

/// Raw term-value columns for a candidate set, evaluated once on the full
/// training matrix.
struct TermColumns {
    values: Vec<Vec<f64>>, // one Vec per term, length n
    n: usize,
}

impl TermColumns {
    fn build(x: &Matrix, terms: &[Term]) -> TermColumns {
        let n = x.n_rows();
        let values = terms
            .iter()
            .map(|t| (0..n).map(|i| t.eval(x.row(i))).collect())
            .collect();
        TermColumns { values, n }
    }
}

/// Gram-based ridge evaluator over z-scored term columns plus an intercept.
/// Statistics and the Gram matrix come from the given training rows only, so
/// held-out rows never influence the transform.
struct SubsetSolver {
    gram: DMatrix<f64>,   // (T+1) x (T+1); intercept is the last index
    xty: DVector<f64>,    // (T+1)
    means: Vec<f64>,
    sds: Vec<f64>,
    n_train: usize,
}

impl SubsetSolver {
    fn from_rows(cols: &TermColumns, y: &[f64], rows: &[usize]) -> SubsetSolver {
        let t = cols.values.len();
        let n = rows.len();
        let mut means = vec![0.0; t];
        let mut sds = vec![0.0; t];
        for (j, col) in cols.values.iter().enumerate() {
            let mean = rows.iter().map(|&i| col[i]).sum::<f64>() / n as f64;
            let var = if n < 2 {
                0.0
            } else {
                rows.iter().map(|&i| (col[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            };
            means[j] = mean;
            sds[j] = var.sqrt();
        }
        // z-scored columns, constant-in-fold columns become all-zero
        let z = |j: usize, i: usize| -> f64 {
            if sds[j] < CONSTANT_SD {
                0.0
            } else {
                (cols.values[j][i] - means[j]) / sds[j]
            }
        };
        let mut gram = DMatrix::zeros(t + 1, t + 1);
        let mut xty = DVector::zeros(t + 1);
        for a in 0..t {
            for b in a..t {
                let s: f64 = rows.iter().map(|&i| z(a, i) * z(b, i)).sum();
                gram[(a, b)] = s;
                gram[(b, a)] = s;
            }
            let s1: f64 = rows.iter().map(|&i| z(a, i)).sum();
            gram[(a, t)] = s1;
            gram[(t, a)] = s1;
            xty[a] = rows.iter().map(|&i| z(a, i) * y[i]).sum();
        }
        gram[(t, t)] = n as f64;
        xty[t] = rows.iter().map(|&i| y[i]).sum();
        SubsetSolver {
            gram,
            xty,
            means,
            sds,
            n_train: n,
        }
    }

    /// Ridge weights for the subset (term indices) plus intercept; the
    /// returned vector has one weight per subset entry followed by the
    /// intercept weight.
    fn solve(&self, subset: &[usize], epsilon: f64) -> Result<Vec<f64>> {
        let k = subset.len();
        let mut a = DMatrix::zeros(k + 1, k + 1);
        let mut b = DVector::zeros(k + 1);
        let t = self.means.len();
        for (ai, &ti) in subset.iter().enumerate() {
            for (aj, &tj) in subset.iter().enumerate() {
                a[(ai, aj)] = self.gram[(ti, tj)];
            }
            a[(ai, k)] = self.gram[(ti, t)];
            a[(k, ai)] = self.gram[(t, ti)];
            b[ai] = self.xty[ti];
        }
        a[(k, k)] = self.gram[(t, t)];
        b[k] = self.xty[t];
        for j in 0..=k {
            a[(j, j)] += epsilon;
        }
        let chol = Cholesky::new(a)
            .ok_or_else(|| EpmError::Singular("selection subsystem not positive definite".into()))?;
        Ok(chol.solve(&b).iter().copied().collect())
    }

    fn predict_row(&self, cols: &TermColumns, subset: &[usize], w: &[f64], i: usize) -> f64 {
        let mut out = w[subset.len()];
        for (a, &tj) in subset.iter().enumerate() {
            let z = if self.sds[tj] < CONSTANT_SD {
                0.0
            } else {
                (cols.values[tj][i] - self.means[tj]) / self.sds[tj]
            };
            out += w[a] * z;
        }
        out
    }

    fn rmse_on(&self, cols: &TermColumns, subset: &[usize], w: &[f64], rows: &[usize], y: &[f64]) -> f64 {
        let sse: f64 = rows
            .iter()
            .map(|&i| {
                let e = self.predict_row(cols, subset, w, i) - y[i];
                e * e
            })
            .sum();
        (sse / rows.len() as f64).sqrt()
    }
}

/// Mean held-out RMSE of a subset across prepared inner folds.
fn cv_rmse(
    solvers: &[(SubsetSolver, Vec<usize>)],
    cols: &TermColumns,
    y: &[f64],
    subset: &[usize],
    epsilon: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (solver, val_rows) in solvers {
        let w = solver.solve(subset, epsilon)?;
        total += solver.rmse_on(cols, subset, &w, val_rows, y);
    }
    Ok(total / solvers.len() as f64)
}

fn build_inner_folds(
    cols: &TermColumns,
    y: &[f64],
    folds: usize,
    seed: u64,
) -> Result<Vec<(SubsetSolver, Vec<usize>)>> {
    let n = cols.n;
    if folds > n {
        return Err(EpmError::Config(format!(
            "inner cross-validation needs n >= folds ({} < {})",
            n, folds
        )));
    }
    let fold_sets = kfold_split(n, folds, seed)?;
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let val = fold_sets[f].clone();
        let train: Vec<usize> = fold_sets
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        out.push((SubsetSolver::from_rows(cols, y, &train), val));
    }
    Ok(out)
}

/// Greedy forward selection: repeatedly adds the candidate minimizing inner
/// cross-validated RMSE until `target` terms are selected. Ties break toward
/// the lowest candidate index.
fn greedy_forward(
    cols: &TermColumns,
    y: &[f64],
    candidates: &[usize],
    target: usize,
    epsilon: f64,
    folds: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let solvers = build_inner_folds(cols, y, folds, seed)?;
    let mut selected: Vec<usize> = Vec::new();
    let mut remaining: Vec<usize> = candidates.to_vec();
    while selected.len() < target && !remaining.is_empty() {
        let mut best: Option<(f64, usize)> = None;
        for &c in &remaining {
            let mut subset = selected.clone();
            subset.push(c);
            let score = cv_rmse(&solvers, cols, y, &subset, epsilon)?;
            let better = match best {
                None => true,
                Some((bs, _)) => score < bs,
            };
            if better {
                best = Some((score, c));
            }
        }
        let (_, chosen) = best.expect("non-empty candidate set");
        selected.push(chosen);
        remaining.retain(|&c| c != chosen);
    }
    Ok(selected)
}

/// Final fit on the chosen terms: z-score with full-training statistics,
/// append the intercept column, solve, and record the training residual
/// variance used as the predictive variance.
fn finalize_model(
    x: &Matrix,
    y: &[f64],
    terms: Vec<Term>,
    epsilon: f64,
) -> Result<RidgeModel> {
    let cols = TermColumns::build(x, &terms);
    let all_rows: Vec<usize> = (0..x.n_rows()).collect();
    let solver = SubsetSolver::from_rows(&cols, y, &all_rows);
    let subset: Vec<usize> = (0..terms.len()).collect();
    let w = solver.solve(&subset, epsilon)?;
    let mut sse = 0.0;
    for &i in &all_rows {
        let e = solver.predict_row(&cols, &subset, &w, i) - y[i];
        sse += e * e;
    }
    let residual_variance = (sse / solver.n_train as f64).max(MIN_RESIDUAL_VARIANCE);
    Ok(RidgeModel {
        term_means: solver.means,
        term_sds: solver.sds,
        weights: w[..terms.len()].to_vec(),
        intercept: w[terms.len()],
        terms,
        epsilon,
        residual_variance,
        n_input_cols: x.n_cols(),
    })
}

/// Two-phase forward selection: phase 1 greedily picks `l` linear inputs by
/// inner-CV RMSE; the quadratic expansion of those inputs (computed on the
/// unnormalized columns) feeds a second forward selection of `q` terms. The
/// full expansion of all p columns is never formed.
pub fn forward_select_two_phase(
    x: &Matrix,
    y: &[f64],
    params: &TwoPhaseParams,
    seed: u64,
) -> Result<RidgeModel> {
    let p = x.n_cols();
    if p == 0 {
        return Err(EpmError::EmptyPredictors("no predictor columns".into()));
    }
    if params.l > p {
        return Err(EpmError::Config(format!(
            "phase-1 target l={} exceeds p={}",
            params.l, p
        )));
    }
    if params.inner_folds < 2 {
        return Err(EpmError::Config("inner CV needs at least 2 folds".into()));
    }

    // Phase 1: linear terms over all columns.
    let linear_terms: Vec<Term> = (0..p).map(Term::linear).collect();
    let lin_cols = TermColumns::build(x, &linear_terms);
    let candidates: Vec<usize> = (0..p).collect();
    let selected_lin = greedy_forward(
        &lin_cols,
        y,
        &candidates,
        params.l,
        params.epsilon,
        params.inner_folds,
        seed,
    )?;

    // Phase 2: quadratic expansion of the selected columns only.
    let sel_cols: Vec<usize> = selected_lin;
    let mut phase2_terms: Vec<Term> = sel_cols.iter().map(|&c| Term::linear(c)).collect();
    for (a, &ca) in sel_cols.iter().enumerate() {
        for &cb in sel_cols.iter().skip(a) {
            phase2_terms.push(Term::product(ca, cb));
        }
    }
    let cols2 = TermColumns::build(x, &phase2_terms);
    let cand2: Vec<usize> = (0..phase2_terms.len()).collect();
    let q = params.q.min(phase2_terms.len());
    let chosen = greedy_forward(
        &cols2,
        y,
        &cand2,
        q,
        params.epsilon,
        params.inner_folds,
        seed.wrapping_add(1),
    )?;
    let final_terms: Vec<Term> = chosen.iter().map(|&i| phase2_terms[i].clone()).collect();
    finalize_model(x, y, final_terms, params.epsilon)
}

/// Training RMSE of a term set with ridge fit, used by the forward-backward
/// thresholds.
fn training_rmse(
    cols: &TermColumns,
    solver: &SubsetSolver,
    y: &[f64],
    subset: &[usize],
    rows: &[usize],
    epsilon: f64,
) -> Result<f64> {
    let w = solver.solve(subset, epsilon)?;
    Ok(solver.rmse_on(cols, subset, &w, rows, y))
}

/// Forward-backward selection over cubic candidate sets. The outer loop
/// walks raw features not yet in the support set, builds the degree-bounded
/// candidate terms for each, runs a forward-backward phase, and keeps the
/// best outcome; it stops when the term budget is reached or no step
/// qualifies.
pub fn spore_foba(x: &Matrix, y: &[f64], params: &SporeParams) -> Result<RidgeModel> {
    let p = x.n_cols();
    if p == 0 {
        return Err(EpmError::EmptyPredictors("no predictor columns".into()));
    }
    let all_rows: Vec<usize> = (0..x.n_rows()).collect();

    let mut support: Vec<usize> = Vec::new();
    let mut terms: Vec<Term> = Vec::new();

    loop {
        if terms.len() >= params.t_max {
            break;
        }
        let mut best: Option<(f64, usize, Vec<Term>)> = None;
        for r in 0..p {
            if support.contains(&r) {
                continue;
            }
            let cand_terms = cubic_terms(&support, r);
            let phase_terms = foba_phase(x, y, &all_rows, &terms, &cand_terms, params)?;
            if phase_terms == terms {
                continue;
            }
            let cols = TermColumns::build(x, &phase_terms);
            let solver = SubsetSolver::from_rows(&cols, y, &all_rows);
            let subset: Vec<usize> = (0..phase_terms.len()).collect();
            let score = training_rmse(&cols, &solver, y, &subset, &all_rows, params.epsilon)?;
            let better = match &best {
                None => true,
                Some((bs, _, _)) => score < *bs,
            };
            if better {
                best = Some((score, r, phase_terms));
            }
        }
        match best {
            Some((_, r, new_terms)) => {
                support.push(r);
                support.sort_unstable();
                terms = new_terms;
            }
            None => break,
        }
    }

    finalize_model(x, y, terms, params.epsilon)
}

/// One forward-backward phase: adds the best candidate term when its RMSE
/// reduction exceeds gamma, then drops the weakest selected term when its
/// contribution falls below gamma / 2.
fn foba_phase(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    current: &[Term],
    candidates: &[Term],
    params: &SporeParams,
) -> Result<Vec<Term>> {
    // work over the union of current terms and phase candidates
    let mut pool: Vec<Term> = current.to_vec();
    for t in candidates {
        if !pool.contains(t) {
            pool.push(t.clone());
        }
    }
    let cols = TermColumns::build(x, &pool);
    let solver = SubsetSolver::from_rows(&cols, y, rows);
    let mut selected: Vec<usize> = (0..current.len()).collect();

    let rmse_of = |subset: &[usize]| -> Result<f64> {
        training_rmse(&cols, &solver, y, subset, rows, params.epsilon)
    };

    let mut guard = 0usize;
    let max_iters = 10 * (params.t_max + pool.len()) + 10;
    loop {
        guard += 1;
        if guard > max_iters {
            break;
        }
        if selected.len() >= params.t_max {
            break;
        }
        let base = rmse_of(&selected)?;
        // forward step
        let mut best_add: Option<(f64, usize)> = None;
        for c in 0..pool.len() {
            if selected.contains(&c) {
                continue;
            }
            let mut s = selected.clone();
            s.push(c);
            let reduction = base - rmse_of(&s)?;
            let better = match best_add {
                None => true,
                Some((br, _)) => reduction > br,
            };
            if better {
                best_add = Some((reduction, c));
            }
        }
        match best_add {
            Some((reduction, c)) if reduction > params.gamma => {
                selected.push(c);
            }
            _ => break,
        }
        // backward step: remove the weakest contributor if it helps too little
        if selected.len() >= 2 {
            let with_all = rmse_of(&selected)?;
            let mut weakest: Option<(f64, usize)> = None;
            for (pos, _) in selected.iter().enumerate() {
                let mut s = selected.clone();
                s.remove(pos);
                let contribution = rmse_of(&s)? - with_all;
                let worse = match weakest {
                    None => true,
                    Some((wc, _)) => contribution < wc,
                };
                if worse {
                    weakest = Some((contribution, pos));
                }
            }
            if let Some((contribution, pos)) = weakest {
                if contribution < 0.5 * params.gamma {
                    selected.remove(pos);
                }
            }
        }
    }

    selected.sort_unstable();
    Ok(selected.into_iter().map(|i| pool[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dense normal-equation solve by Gaussian elimination with partial
    /// pivoting; independent of the nalgebra path used by fit_ridge.
    pub(crate) fn ridge_oracle(x: &Matrix, y: &[f64], eps: f64) -> Vec<f64> {
        let n = x.n_rows();
        let p = x.n_cols();
        let mut a = vec![vec![0.0; p + 1]; p];
        for i in 0..p {
            for j in 0..p {
                let mut s = 0.0;
                for r in 0..n {
                    s += x.get(r, i) * x.get(r, j);
                }
                a[i][j] = s + if i == j { eps } else { 0.0 };
            }
            let mut s = 0.0;
            for r in 0..n {
                s += x.get(r, i) * y[r];
            }
            a[i][p] = s;
        }
        for col in 0..p {
            let piv = (col..p)
                .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            let d = a[col][col];
            for j in col..=p {
                a[col][j] /= d;
            }
            for r in 0..p {
                if r != col {
                    let f = a[r][col];
                    for j in col..=p {
                        a[r][j] -= f * a[col][j];
                    }
                }
            }
        }
        (0..p).map(|i| a[i][p]).collect()
    }

    #[test]
    fn ridge_identity_design() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let w = fit_ridge(&x, &[2.0, 3.0], 0.0).unwrap();
        assert_relative_eq!(w[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(w[1], 3.0, max_relative = 1e-12);
    }

    #[test]
    fn ridge_identity_with_penalty_matches_oracle() {
        // oracle: (I + I)^-1 y = y / 2
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let y = [2.0, 3.0];
        let w = fit_ridge(&x, &y, 1.0).unwrap();
        let oracle = ridge_oracle(&x, &y, 1.0);
        assert_relative_eq!(w[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(w[1], 1.5, max_relative = 1e-12);
        for (a, b) in w.iter().zip(&oracle) {
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }

    #[test]
    fn ridge_least_squares_mean() {
        let x = Matrix::from_rows(&[vec![1.0], vec![1.0]]);
        let w = fit_ridge(&x, &[1.0, 3.0], 0.0).unwrap();
        let oracle = ridge_oracle(&x, &[1.0, 3.0], 0.0);
        assert_relative_eq!(w[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(w[0], oracle[0], max_relative = 1e-12);
    }

    #[test]
    fn ridge_singular_at_zero_eps() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(
            fit_ridge(&x, &[1.0, 2.0], 0.0),
            Err(EpmError::Singular(_))
        ));
    }

    #[test]
    fn ridge_matches_oracle_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for eps in [0.001, 1.0] {
            for _ in 0..20 {
                let rows: Vec<Vec<f64>> = (0..50)
                    .map(|_| (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect();
                let x = Matrix::from_rows(&rows);
                let y: Vec<f64> = (0..50).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let w = fit_ridge(&x, &y, eps).unwrap();
                let o = ridge_oracle(&x, &y, eps);
                for (a, b) in w.iter().zip(&o) {
                    assert_relative_eq!(a, b, max_relative = 1e-8, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn shrinkage_monotone_in_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<f64> = (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let norms: Vec<f64> = [0.0, 0.01, 0.1, 1.0, 10.0]
            .iter()
            .map(|&e| {
                fit_ridge(&x, &y, e)
                    .unwrap()
                    .iter()
                    .map(|w| w * w)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        for w in norms.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", norms);
        }
    }

    fn make_signal_dataset(n: usize, p: usize, signal_col: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[signal_col]).collect();
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn two_phase_picks_signal_column_first() {
        let (x, y) = make_signal_dataset(80, 10, 3, 5);
        let params = TwoPhaseParams {
            l: 1,
            q: 1,
            ..TwoPhaseParams::default()
        };
        let model = forward_select_two_phase(&x, &y, &params, 9).unwrap();
        // q=1: exactly one term, built from column 3
        assert_eq!(model.terms.len(), 1);
        assert!(model.terms[0].exps.iter().all(|&(c, _)| c == 3));
    }

    #[test]
    fn two_phase_l_equals_p_selects_all() {
        let (x, y) = make_signal_dataset(40, 4, 0, 6);
        let params = TwoPhaseParams {
            l: 4,
            q: 2,
            ..TwoPhaseParams::default()
        };
        let model = forward_select_two_phase(&x, &y, &params, 1).unwrap();
        assert_eq!(model.terms.len(), 2);
    }

    #[test]
    fn two_phase_candidate_pool_is_restricted_to_l() {
        // scalability contract: only the l selected columns are expanded
        let (x, y) = make_signal_dataset(60, 12, 2, 8);
        let params = TwoPhaseParams {
            l: 3,
            q: 9,
            ..TwoPhaseParams::default()
        };
        let model = forward_select_two_phase(&x, &y, &params, 2).unwrap();
        // 3 linear + 6 products = 9 candidates; every selected term uses only
        // columns from the phase-1 picks
        assert_eq!(model.terms.len(), 9);
        let mut used: Vec<usize> = model
            .terms
            .iter()
            .flat_map(|t| t.exps.iter().map(|&(c, _)| c))
            .collect();
        used.sort_unstable();
        used.dedup();
        assert!(used.len() <= 3, "terms use columns {:?}", used);
    }

    #[test]
    fn two_phase_interpolates_noise_free_linear_data() {
        let (x, y) = make_signal_dataset(30, 3, 1, 10);
        let params = TwoPhaseParams {
            l: 3,
            q: 3,
            epsilon: 0.0,
            inner_folds: 5,
        };
        let model = forward_select_two_phase(&x, &y, &params, 3).unwrap();
        for i in 0..x.n_rows() {
            let pred = model.predict(x.row(i)).unwrap();
            assert_relative_eq!(pred.mean, y[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn two_phase_inner_cv_infeasible_errors() {
        let (x, y) = make_signal_dataset(3, 2, 0, 1);
        let params = TwoPhaseParams {
            l: 1,
            q: 1,
            inner_folds: 5,
            ..TwoPhaseParams::default()
        };
        assert!(matches!(
            forward_select_two_phase(&x, &y, &params, 0),
            Err(EpmError::Config(_))
        ));
    }

    #[test]
    fn spore_finds_square_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| r[1] * r[1]).collect();
        let x = Matrix::from_rows(&rows);
        let model = spore_foba(&x, &y, &SporeParams::default()).unwrap();
        assert!(
            model.terms.contains(&Term { exps: vec![(1, 2)] }),
            "terms: {:?}",
            model.terms
        );
    }

    #[test]
    fn spore_infinite_gamma_gives_intercept_only() {
        let (x, y) = make_signal_dataset(30, 3, 0, 2);
        let params = SporeParams {
            gamma: f64::INFINITY,
            ..SporeParams::default()
        };
        let model = spore_foba(&x, &y, &params).unwrap();
        assert!(model.terms.is_empty());
        let mean_y = y.iter().sum::<f64>() / y.len() as f64;
        let pred = model.predict(&[0.5, 0.5, 0.5]).unwrap();
        assert_relative_eq!(pred.mean, mean_y, epsilon = 1e-3);
    }

    #[test]
    fn spore_t_max_one_selects_single_term() {
        let (x, y) = make_signal_dataset(40, 3, 0, 4);
        let params = SporeParams {
            t_max: 1,
            ..SporeParams::default()
        };
        let model = spore_foba(&x, &y, &params).unwrap();
        assert_eq!(model.terms.len(), 1);
    }

    #[test]
    fn spore_termination_leaves_no_qualifying_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r[0] + 0.05 * rng.gen_range(-1.0..1.0))
            .collect();
        let x = Matrix::from_rows(&rows);
        let params = SporeParams {
            t_max: 50,
            ..SporeParams::default()
        };
        let model = spore_foba(&x, &y, &params).unwrap();
        // recompute: no candidate term reduces training RMSE by more than gamma
        let all_rows: Vec<usize> = (0..x.n_rows()).collect();
        let support: Vec<usize> = {
            let mut s: Vec<usize> = model
                .terms
                .iter()
                .flat_map(|t| t.exps.iter().map(|&(c, _)| c))
                .collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        let base_cols = TermColumns::build(&x, &model.terms);
        let base_solver = SubsetSolver::from_rows(&base_cols, &y, &all_rows);
        let base_subset: Vec<usize> = (0..model.terms.len()).collect();
        let base =
            training_rmse(&base_cols, &base_solver, &y, &base_subset, &all_rows, params.epsilon)
                .unwrap();
        for r in 0..x.n_cols() {
            if support.contains(&r) {
                continue;
            }
            for cand in cubic_terms(&support, r) {
                if model.terms.contains(&cand) {
                    continue;
                }
                let mut terms = model.terms.clone();
                terms.push(cand.clone());
                let cols = TermColumns::build(&x, &terms);
                let solver = SubsetSolver::from_rows(&cols, &y, &all_rows);
                let subset: Vec<usize> = (0..terms.len()).collect();
                let with =
                    training_rmse(&cols, &solver, &y, &subset, &all_rows, params.epsilon).unwrap();
                assert!(
                    base - with <= params.gamma + 1e-12,
                    "term {} still reduces RMSE by {}",
                    cand,
                    base - with
                );
            }
        }
    }

    #[test]
    fn predict_dot_product_and_arity() {
        let model = RidgeModel {
            terms: vec![Term::linear(0), Term::linear(1)],
            term_means: vec![0.0, 0.0],
            term_sds: vec![1.0, 1.0],
            weights: vec![2.0, 3.0],
            intercept: 0.0,
            epsilon: 0.0,
            residual_variance: 1e-6,
            n_input_cols: 2,
        };
        let p = model.predict(&[1.0, 1.0]).unwrap();
        assert_relative_eq!(p.mean, 5.0, max_relative = 1e-12);
        // all-zero input with no intercept term
        assert_eq!(model.predict(&[0.0, 0.0]).unwrap().mean, 0.0);
        assert!(model.predict(&[1.0]).is_err());
    }
}
