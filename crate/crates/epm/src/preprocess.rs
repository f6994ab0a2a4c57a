//! Response and predictor transformations applied before model fits, plus the
//! basis expansions used by the ridge variants and the categorical encoding
//! used by numeric-input models.

use serde::{Deserialize, Serialize};

use crate::data::{is_missing, ColumnKind, ColumnMeta, ColumnOrigin, Matrix};
use crate::error::{EpmError, Result};

/// Runtimes below this resolution are counted as `floor / 2` before taking
/// the log.
pub const DEFAULT_RESOLUTION_FLOOR: f64 = 0.01;

/// Columns whose sample standard deviation falls below this are treated as
/// constant and dropped.
pub const CONSTANT_SD: f64 = 1e-12;

/// log10-transform of raw runtimes. Values under the resolution floor are
/// counted as `floor / 2`.
pub fn log_transform_response(seconds: &[f64], resolution_floor: f64) -> Result<Vec<f64>> {
    seconds
        .iter()
        .map(|&r| {
            if r < 0.0 || r.is_nan() {
                Err(EpmError::Domain(format!("negative runtime {}", r)))
            } else if r >= resolution_floor {
                Ok(r.log10())
            } else {
                Ok((resolution_floor / 2.0).log10())
            }
        })
        .collect()
}

/// Mean and sample (n-1) standard deviation, ignoring missing entries.
/// Returns None when fewer than one finite value exists.
fn column_stats(values: impl Iterator<Item = f64>) -> Option<(f64, f64, usize)> {
    let finite: Vec<f64> = values.filter(|v| !is_missing(*v)).collect();
    if finite.is_empty() {
        return None;
    }
    let n = finite.len();
    let mean = finite.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Some((mean, sd, n))
}

/// Fitted normalization state: which columns survive, and the training
/// statistics used to z-score them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    /// Indices into the original column list, in original order.
    pub kept_columns: Vec<usize>,
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
    /// Kept columns that are passed through unscaled (categorical indices).
    pub passthrough: Vec<bool>,
}

impl Normalizer {
    /// Fits on the training matrix: constant columns dropped, remaining ones
    /// z-scored with statistics over non-missing entries. Columns flagged in
    /// `passthrough` are kept verbatim unless constant.
    pub fn fit_masked(x: &Matrix, passthrough_cols: &[bool]) -> Result<Normalizer> {
        if x.n_rows() == 0 {
            return Err(EpmError::EmptyPredictors("no training rows".into()));
        }
        assert_eq!(passthrough_cols.len(), x.n_cols());
        let mut kept = Vec::new();
        let mut means = Vec::new();
        let mut stds = Vec::new();
        let mut pass = Vec::new();
        for j in 0..x.n_cols() {
            let stats = column_stats((0..x.n_rows()).map(|i| x.get(i, j)));
            let (mean, sd, _) = match stats {
                Some(s) => s,
                None => continue, // all-missing column behaves like a constant
            };
            if sd < CONSTANT_SD {
                continue;
            }
            kept.push(j);
            pass.push(passthrough_cols[j]);
            if passthrough_cols[j] {
                means.push(0.0);
                stds.push(1.0);
            } else {
                means.push(mean);
                stds.push(sd);
            }
        }
        if kept.is_empty() {
            return Err(EpmError::EmptyPredictors(
                "all predictor columns are constant".into(),
            ));
        }
        Ok(Normalizer {
            kept_columns: kept,
            means,
            stddevs: stds,
            passthrough: pass,
        })
    }

    pub fn fit(x: &Matrix) -> Result<Normalizer> {
        Normalizer::fit_masked(x, &vec![false; x.n_cols()])
    }

    /// Applies the fitted transform; missing entries become 0 (the training
    /// mean) in scaled columns and stay missing-imputed-to-mean semantics in
    /// passthrough columns (where they are invalid and rejected).
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(x.n_rows(), self.kept_columns.len());
        for i in 0..x.n_rows() {
            let row = self.apply_row(x.row(i))?;
            for (j, v) in row.iter().enumerate() {
                out.set(i, j, *v);
            }
        }
        Ok(out)
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.kept_columns.len());
        for (k, &j) in self.kept_columns.iter().enumerate() {
            if j >= row.len() {
                return Err(EpmError::ArityMismatch {
                    expected: j + 1,
                    got: row.len(),
                });
            }
            let v = row[j];
            if self.passthrough[k] {
                if is_missing(v) {
                    return Err(EpmError::Domain(
                        "missing value in categorical column".into(),
                    ));
                }
                out.push(v);
            } else if is_missing(v) {
                out.push(0.0);
            } else {
                out.push((v - self.means[k]) / self.stddevs[k]);
            }
        }
        Ok(out)
    }

    pub fn n_output(&self) -> usize {
        self.kept_columns.len()
    }
}

/// Map from an original categorical column to the indicator columns it
/// produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingMap {
    pub groups: Vec<(usize, Vec<usize>)>,
}

/// Replaces each categorical column (domain size K) by K binary indicator
/// columns; numeric columns pass through. Returns the encoded matrix, the
/// encoded column metadata, and the encoding map.
pub fn one_in_k_encode(
    columns: &[ColumnMeta],
    x: &Matrix,
) -> Result<(Matrix, Vec<ColumnMeta>, EncodingMap)> {
    assert_eq!(columns.len(), x.n_cols());
    let mut out_cols: Vec<ColumnMeta> = Vec::new();
    let mut groups = Vec::new();
    for (j, meta) in columns.iter().enumerate() {
        match &meta.kind {
            ColumnKind::Continuous => {
                out_cols.push(meta.clone());
            }
            ColumnKind::Categorical { arity } => {
                let start = out_cols.len();
                for v in 0..*arity {
                    out_cols.push(ColumnMeta {
                        name: format!("{}={}", meta.name, v),
                        origin: meta.origin,
                        kind: ColumnKind::Continuous,
                    });
                }
                groups.push((j, (start..start + arity).collect()));
            }
        }
    }
    let map = EncodingMap { groups };
    let mut out = Matrix::zeros(x.n_rows(), out_cols.len());
    for i in 0..x.n_rows() {
        let row = encode_row(columns, x.row(i), out_cols.len())?;
        for (j, v) in row.iter().enumerate() {
            out.set(i, j, *v);
        }
    }
    Ok((out, out_cols, map))
}

/// Encodes a single raw row against the same column layout.
pub fn encode_row(columns: &[ColumnMeta], row: &[f64], out_len: usize) -> Result<Vec<f64>> {
    if row.len() != columns.len() {
        return Err(EpmError::ArityMismatch {
            expected: columns.len(),
            got: row.len(),
        });
    }
    let mut out = Vec::with_capacity(out_len);
    for (j, meta) in columns.iter().enumerate() {
        match &meta.kind {
            ColumnKind::Continuous => out.push(row[j]),
            ColumnKind::Categorical { arity } => {
                let v = row[j];
                if is_missing(v) || v.fract() != 0.0 || v < 0.0 || v >= *arity as f64 {
                    return Err(EpmError::Encoding(format!(
                        "value {} out of categorical domain of column '{}' (arity {})",
                        v, meta.name, arity
                    )));
                }
                let idx = v as usize;
                for k in 0..*arity {
                    out.push(if k == idx { 1.0 } else { 0.0 });
                }
            }
        }
    }
    Ok(out)
}

/// Appends the pairwise products x_j * x_l (j = 1..p, l = j..p) to the
/// matrix: p + p(p+1)/2 output columns, products computed on the columns as
/// given (unnormalized).
pub fn quadratic_expand(x: &Matrix) -> Matrix {
    let p = x.n_cols();
    let extra = p * (p + 1) / 2;
    let mut out = Matrix::zeros(x.n_rows(), p + extra);
    for i in 0..x.n_rows() {
        for j in 0..p {
            out.set(i, j, x.get(i, j));
        }
        let mut c = p;
        for j in 0..p {
            for l in j..p {
                out.set(i, c, x.get(i, j) * x.get(i, l));
                c += 1;
            }
        }
    }
    out
}

/// A monomial over raw column indices, with total degree bounded by 3 in the
/// cubic expansion. The constant term is the empty monomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Term {
    /// (column, exponent) pairs sorted by column; exponents >= 1.
    pub exps: Vec<(usize, u32)>,
}

impl Term {
    pub fn linear(col: usize) -> Term {
        Term { exps: vec![(col, 1)] }
    }

    pub fn product(a: usize, b: usize) -> Term {
        if a == b {
            Term { exps: vec![(a, 2)] }
        } else {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            Term {
                exps: vec![(lo, 1), (hi, 1)],
            }
        }
    }

    pub fn degree(&self) -> u32 {
        self.exps.iter().map(|&(_, d)| d).sum()
    }

    pub fn eval(&self, row: &[f64]) -> f64 {
        self.exps
            .iter()
            .map(|&(c, d)| row[c].powi(d as i32))
            .product()
    }

    pub fn max_col(&self) -> Option<usize> {
        self.exps.iter().map(|&(c, _)| c).max()
    }
}

impl std::fmt::Display for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.exps.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self
            .exps
            .iter()
            .map(|&(c, d)| {
                if d == 1 {
                    format!("x{}", c)
                } else {
                    format!("x{}^{}", c, d)
                }
            })
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

/// All monomials over `s ∪ {r}` that include `r` with non-zero degree and
/// whose total degree is bounded by 3. `r` must not already be in `s`.
pub fn cubic_terms(s: &[usize], r: usize) -> Vec<Term> {
    assert!(!s.contains(&r), "r must not be in s");
    let mut vars: Vec<usize> = s.to_vec();
    vars.push(r);
    vars.sort_unstable();
    let mut out = Vec::new();
    // exponent vectors over `vars` with total degree 1..=3 and exp(r) >= 1
    let mut exps = vec![0u32; vars.len()];
    fn rec(
        vars: &[usize],
        r: usize,
        pos: usize,
        remaining: u32,
        exps: &mut Vec<u32>,
        out: &mut Vec<Term>,
    ) {
        if pos == vars.len() {
            let r_pos = vars.iter().position(|&v| v == r).unwrap();
            if exps[r_pos] >= 1 {
                let e: Vec<(usize, u32)> = vars
                    .iter()
                    .zip(exps.iter())
                    .filter(|&(_, &d)| d > 0)
                    .map(|(&c, &d)| (c, d))
                    .collect();
                if !e.is_empty() {
                    out.push(Term { exps: e });
                }
            }
            return;
        }
        for d in 0..=remaining {
            exps[pos] = d;
            rec(vars, r, pos + 1, remaining - d, exps, out);
        }
        exps[pos] = 0;
    }
    rec(&vars, r, 0, 3, &mut exps, &mut out);
    out.sort_by(|a, b| (a.degree(), &a.exps).cmp(&(b.degree(), &b.exps)));
    out.dedup();
    out
}

/// Continuous-column mask for a set of column metadata (true = passthrough,
/// i.e. categorical).
pub fn categorical_mask(columns: &[ColumnMeta]) -> Vec<bool> {
    columns
        .iter()
        .map(|c| matches!(c.kind, ColumnKind::Categorical { .. }))
        .collect()
}

/// Per-column training means over non-missing entries; used to impute raw
/// missing values before basis expansion.
pub fn fit_imputer(x: &Matrix) -> Vec<f64> {
    (0..x.n_cols())
        .map(|j| {
            column_stats((0..x.n_rows()).map(|i| x.get(i, j)))
                .map(|(m, _, _)| m)
                .unwrap_or(0.0)
        })
        .collect()
}

pub fn impute_row(means: &[f64], row: &[f64]) -> Vec<f64> {
    row.iter()
        .zip(means)
        .map(|(&v, &m)| if is_missing(v) { m } else { v })
        .collect()
}

pub fn impute_matrix(means: &[f64], x: &Matrix) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..x.n_rows())
        .map(|i| impute_row(means, x.row(i)))
        .collect();
    Matrix::from_rows(&rows)
}

/// Helper for building column metadata in tests and synthetic benchmarks.
pub fn continuous_columns(n: usize, origin: ColumnOrigin) -> Vec<ColumnMeta> {
    (0..n)
        .map(|j| ColumnMeta {
            name: format!("c{}", j),
            origin,
            kind: ColumnKind::Continuous,
        })
        .collect()
}
