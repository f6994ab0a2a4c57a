//! Domain types shared by all modules: parameter spaces, configurations,
//! instance features, run records, and assembled datasets.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{EpmError, Result};

/// Kind of an algorithm parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Categorical,
    Integer,
    Continuous,
}

/// Domain of a parameter: a value list for categorical parameters, a closed
/// interval for numeric ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamDomain {
    Categorical(Vec<String>),
    Interval { lower: f64, upper: f64 },
}

/// One algorithm parameter definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDef {
    pub name: String,
    pub kind: ParamKind,
    pub domain: ParamDomain,
}

impl ParameterDef {
    pub fn categorical(name: &str, values: &[&str]) -> Result<Self> {
        let def = ParameterDef {
            name: name.to_string(),
            kind: ParamKind::Categorical,
            domain: ParamDomain::Categorical(values.iter().map(|s| s.to_string()).collect()),
        };
        def.validate()?;
        Ok(def)
    }

    pub fn continuous(name: &str, lower: f64, upper: f64) -> Result<Self> {
        let def = ParameterDef {
            name: name.to_string(),
            kind: ParamKind::Continuous,
            domain: ParamDomain::Interval { lower, upper },
        };
        def.validate()?;
        Ok(def)
    }

    pub fn integer(name: &str, lower: i64, upper: i64) -> Result<Self> {
        let def = ParameterDef {
            name: name.to_string(),
            kind: ParamKind::Integer,
            domain: ParamDomain::Interval {
                lower: lower as f64,
                upper: upper as f64,
            },
        };
        def.validate()?;
        Ok(def)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.kind, &self.domain) {
            (ParamKind::Categorical, ParamDomain::Categorical(vals)) => {
                let mut uniq = vals.clone();
                uniq.sort();
                uniq.dedup();
                if uniq.len() < 2 {
                    return Err(EpmError::Domain(format!(
                        "categorical parameter '{}' needs >= 2 distinct values",
                        self.name
                    )));
                }
                if uniq.len() != vals.len() {
                    return Err(EpmError::Domain(format!(
                        "categorical parameter '{}' has duplicate values",
                        self.name
                    )));
                }
                Ok(())
            }
            (ParamKind::Integer | ParamKind::Continuous, ParamDomain::Interval { lower, upper }) => {
                if lower > upper || !lower.is_finite() || !upper.is_finite() {
                    return Err(EpmError::Domain(format!(
                        "parameter '{}' interval requires lower <= upper, got [{}, {}]",
                        self.name, lower, upper
                    )));
                }
                Ok(())
            }
            _ => Err(EpmError::Domain(format!(
                "parameter '{}': kind does not match domain shape",
                self.name
            ))),
        }
    }

    /// Index of a categorical value inside the declared domain.
    pub fn categorical_index(&self, value: &str) -> Result<usize> {
        match &self.domain {
            ParamDomain::Categorical(vals) => vals
                .iter()
                .position(|v| v == value)
                .ok_or_else(|| {
                    EpmError::Encoding(format!(
                        "value '{}' not in domain of parameter '{}'",
                        value, self.name
                    ))
                }),
            _ => Err(EpmError::Encoding(format!(
                "parameter '{}' is not categorical",
                self.name
            ))),
        }
    }
}

/// Ordered list of parameter definitions spanning the configuration half of
/// the input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationSpace {
    params: Vec<ParameterDef>,
}

impl ConfigurationSpace {
    pub fn new(params: Vec<ParameterDef>) -> Result<Self> {
        let mut names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        names.sort();
        names.dedup();
        if names.len() != params.len() {
            return Err(EpmError::Domain("parameter names must be unique".into()));
        }
        for p in &params {
            p.validate()?;
        }
        Ok(ConfigurationSpace { params })
    }

    pub fn empty() -> Self {
        ConfigurationSpace { params: Vec::new() }
    }

    pub fn params(&self) -> &[ParameterDef] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// A concrete parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Cat(String),
    Num(f64),
}

/// One complete instantiation of all parameters, in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub values: Vec<ParamValue>,
}

impl Configuration {
    pub fn new(values: Vec<ParamValue>) -> Self {
        Configuration { values }
    }

    /// Checks every value against its parameter's domain.
    pub fn validate(&self, space: &ConfigurationSpace) -> Result<()> {
        if self.values.len() != space.len() {
            return Err(EpmError::Schema(format!(
                "configuration has {} values, space has {} parameters",
                self.values.len(),
                space.len()
            )));
        }
        for (v, def) in self.values.iter().zip(space.params()) {
            match (v, &def.domain) {
                (ParamValue::Cat(s), ParamDomain::Categorical(_)) => {
                    def.categorical_index(s)?;
                }
                (ParamValue::Num(x), ParamDomain::Interval { lower, upper }) => {
                    if !(x >= lower && x <= upper) {
                        return Err(EpmError::Domain(format!(
                            "value {} of parameter '{}' outside [{}, {}]",
                            x, def.name, lower, upper
                        )));
                    }
                    if def.kind == ParamKind::Integer && x.fract() != 0.0 {
                        return Err(EpmError::Domain(format!(
                            "value {} of integer parameter '{}' is not integral",
                            x, def.name
                        )));
                    }
                }
                _ => {
                    return Err(EpmError::Schema(format!(
                        "value for parameter '{}' has wrong shape",
                        def.name
                    )))
                }
            }
        }
        Ok(())
    }
}

/// Named instance feature values; `None` marks a missing value, carried until
/// preprocessing resolves it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<Option<f64>>,
}

/// A set of instances sharing one feature-name list.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: HashMap<String, FeatureVector>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>) -> Self {
        FeatureTable {
            names,
            rows: HashMap::new(),
        }
    }

    pub fn insert(&mut self, instance_id: &str, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(EpmError::Schema(format!(
                "instance '{}' has {} feature values, expected {}",
                instance_id,
                values.len(),
                self.names.len()
            )));
        }
        self.rows
            .insert(instance_id.to_string(), FeatureVector { values });
        Ok(())
    }
}

/// One algorithm execution record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance_id: String,
    pub config_id: String,
    /// Observed runtime in seconds; for censored runs this equals the captime
    /// and is only a lower bound.
    pub observed: f64,
    pub captime: f64,
    pub censored: bool,
}

impl RunRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.observed >= 0.0) {
            return Err(EpmError::Domain(format!(
                "observed runtime must be >= 0, got {}",
                self.observed
            )));
        }
        if !(self.captime > 0.0) {
            return Err(EpmError::Domain(format!(
                "captime must be > 0, got {}",
                self.captime
            )));
        }
        if self.censored && self.observed != self.captime {
            return Err(EpmError::Domain(format!(
                "censored run must record observed == captime ({} != {})",
                self.observed, self.captime
            )));
        }
        if !self.censored && self.observed > self.captime {
            return Err(EpmError::Domain(format!(
                "uncensored run must have observed <= captime ({} > {})",
                self.observed, self.captime
            )));
        }
        Ok(())
    }
}

/// Where a design-matrix column comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnOrigin {
    Parameter,
    Feature,
}

/// Numeric interpretation of a column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    /// Values are indices into the named categorical domain.
    Categorical { arity: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub origin: ColumnOrigin,
    pub kind: ColumnKind,
}

/// Dense row-major matrix of predictors. Missing entries are stored as NaN
/// until preprocessing resolves them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { data, rows: r, cols: c }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }
}

/// Marker for a missing entry inside a `Matrix`.
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

/// Assembled design matrix plus response and censoring information.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    /// n x p predictors, parameters first then features.
    pub x: Matrix,
    /// Raw (untransformed) runtimes in seconds.
    pub y: Vec<f64>,
    pub censored: Vec<bool>,
    pub captimes: Vec<f64>,
    pub columns: Vec<ColumnMeta>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.x.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.n_cols()
    }

    /// Dataset restricted to the given row indices.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let mut x = Matrix::zeros(idx.len(), self.n_cols());
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..self.n_cols() {
                x.set(r, j, self.x.get(i, j));
            }
        }
        Dataset {
            x,
            y: idx.iter().map(|&i| self.y[i]).collect(),
            censored: idx.iter().map(|&i| self.censored[i]).collect(),
            captimes: idx.iter().map(|&i| self.captimes[i]).collect(),
            columns: self.columns.clone(),
        }
    }
}

/// Per-query predicted mean and variance of log10 runtime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub mean: f64,
    pub variance: f64,
}

impl PredictiveDistribution {
    pub fn new(mean: f64, variance: f64) -> Self {
        PredictiveDistribution {
            mean,
            variance: variance.max(0.0),
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Builds the design matrix: row i is [theta_i^T, z_i^T], parameters in
/// declaration order followed by features in name-list order. Responses stay
/// in raw seconds; the log transform is applied by the model pipelines.
pub fn assemble_dataset(
    runs: &[RunRecord],
    features: &FeatureTable,
    space: &ConfigurationSpace,
    configs: &HashMap<String, Configuration>,
) -> Result<Dataset> {
    let k = space.len();
    let m = features.names.len();
    let mut columns = Vec::with_capacity(k + m);
    for def in space.params() {
        let kind = match &def.domain {
            ParamDomain::Categorical(vals) => ColumnKind::Categorical { arity: vals.len() },
            ParamDomain::Interval { .. } => ColumnKind::Continuous,
        };
        columns.push(ColumnMeta {
            name: def.name.clone(),
            origin: ColumnOrigin::Parameter,
            kind,
        });
    }
    for name in &features.names {
        columns.push(ColumnMeta {
            name: name.clone(),
            origin: ColumnOrigin::Feature,
            kind: ColumnKind::Continuous,
        });
    }

    let mut x = Matrix::zeros(runs.len(), k + m);
    let mut y = Vec::with_capacity(runs.len());
    let mut censored = Vec::with_capacity(runs.len());
    let mut captimes = Vec::with_capacity(runs.len());

    for (i, run) in runs.iter().enumerate() {
        run.validate()?;
        let config = configs
            .get(&run.config_id)
            .ok_or_else(|| EpmError::UnresolvedId(format!("config '{}'", run.config_id)))?;
        config.validate(space)?;
        let feats = features
            .rows
            .get(&run.instance_id)
            .ok_or_else(|| EpmError::UnresolvedId(format!("instance '{}'", run.instance_id)))?;
        if feats.values.len() != m {
            return Err(EpmError::Schema(format!(
                "instance '{}' feature arity {} != {}",
                run.instance_id,
                feats.values.len(),
                m
            )));
        }
        for (j, (v, def)) in config.values.iter().zip(space.params()).enumerate() {
            let numeric = match v {
                ParamValue::Cat(s) => def.categorical_index(s)? as f64,
                ParamValue::Num(n) => *n,
            };
            x.set(i, j, numeric);
        }
        for (j, v) in feats.values.iter().enumerate() {
            x.set(i, k + j, v.unwrap_or(f64::NAN));
        }
        y.push(run.observed);
        censored.push(run.censored);
        captimes.push(run.captime);
    }

    Ok(Dataset {
        x,
        y,
        censored,
        captimes,
        columns,
    })
}
