//! Gradient-free hyperparameter search: a deterministic rectangle-dividing
//! minimizer over a normalized unit box, plus the 2-fold cross-validated
//! RMSE objective used to tune model families.

use serde::{Deserialize, Serialize};

use crate::error::{EpmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimScale {
    Linear,
    Log,
}

/// One tunable dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperDim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: DimScale,
    pub integer: bool,
}

impl HyperDim {
    pub fn linear(name: &str, lower: f64, upper: f64) -> Self {
        HyperDim {
            name: name.into(),
            lower,
            upper,
            scale: DimScale::Linear,
            integer: false,
        }
    }

    pub fn log(name: &str, lower: f64, upper: f64) -> Self {
        HyperDim {
            name: name.into(),
            lower,
            upper,
            scale: DimScale::Log,
            integer: false,
        }
    }

    pub fn int_log(name: &str, lower: f64, upper: f64) -> Self {
        HyperDim {
            name: name.into(),
            lower,
            upper,
            scale: DimScale::Log,
            integer: true,
        }
    }

    pub fn int_linear(name: &str, lower: f64, upper: f64) -> Self {
        HyperDim {
            name: name.into(),
            lower,
            upper,
            scale: DimScale::Linear,
            integer: true,
        }
    }

    /// Maps a unit-box coordinate to the actual value (integer dims rounded).
    pub fn to_actual(&self, u: f64) -> f64 {
        let v = match self.scale {
            DimScale::Linear => self.lower + u * (self.upper - self.lower),
            DimScale::Log => {
                let (la, lb) = (self.lower.log10(), self.upper.log10());
                10f64.powf(la + u * (lb - la))
            }
        };
        if self.integer {
            v.round().clamp(self.lower, self.upper)
        } else {
            v
        }
    }

    /// Inverse map, used to place a default point inside the unit box.
    pub fn to_unit(&self, v: f64) -> f64 {
        let u = match self.scale {
            DimScale::Linear => (v - self.lower) / (self.upper - self.lower),
            DimScale::Log => {
                let (la, lb) = (self.lower.log10(), self.upper.log10());
                (v.log10() - la) / (lb - la)
            }
        };
        u.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperSpace {
    pub dims: Vec<HyperDim>,
}

impl HyperSpace {
    pub fn new(dims: Vec<HyperDim>) -> Result<Self> {
        for d in &dims {
            if !(d.lower < d.upper) {
                return Err(EpmError::Config(format!(
                    "dimension '{}' needs lower < upper",
                    d.name
                )));
            }
            if d.scale == DimScale::Log && d.lower <= 0.0 {
                return Err(EpmError::Config(format!(
                    "log dimension '{}' needs positive bounds",
                    d.name
                )));
            }
        }
        Ok(HyperSpace { dims })
    }

    pub fn to_actual(&self, unit: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(unit)
            .map(|(d, &u)| d.to_actual(u))
            .collect()
    }
}

struct Rect {
    center: Vec<f64>,
    levels: Vec<u32>,
    value: f64,
}

impl Rect {
    fn size(&self) -> f64 {
        let s: f64 = self
            .levels
            .iter()
            .map(|&l| {
                let side = 3f64.powi(-(l as i32));
                side * side
            })
            .sum();
        0.5 * s.sqrt()
    }
}

const PO_EPS: f64 = 1e-4;

/// Deterministic rectangle-dividing search over the normalized unit box. At
/// each round the potentially-optimal rectangles (lower hull over the
/// size/value plane) are trisected along their longest sides, sampling the
/// two new centers per side. At most `budget` objective evaluations run; the
/// best evaluated point is returned in actual coordinates.
pub fn direct_minimize<F>(
    mut f: F,
    space: &HyperSpace,
    budget: usize,
) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> f64,
{
    if budget < 1 {
        return Err(EpmError::Config("budget must be >= 1".into()));
    }
    let d = space.dims.len();
    if d == 0 {
        return Err(EpmError::Config("empty hyperparameter space".into()));
    }
    let mut evals = 0usize;
    let mut best_point: Option<Vec<f64>> = None;
    let mut best_value = f64::INFINITY;
    let mut eval = |unit: &[f64],
                    evals: &mut usize,
                    best_point: &mut Option<Vec<f64>>,
                    best_value: &mut f64|
     -> f64 {
        let actual = space.to_actual(unit);
        let v = f(&actual);
        *evals += 1;
        let v = if v.is_finite() { v } else { f64::INFINITY };
        if v < *best_value || best_point.is_none() {
            *best_value = v;
            *best_point = Some(unit.to_vec());
        }
        v
    };

    let center = vec![0.5; d];
    let v0 = eval(&center, &mut evals, &mut best_point, &mut best_value);
    let mut rects = vec![Rect {
        center,
        levels: vec![0; d],
        value: v0,
    }];

    'outer: while evals < budget {
        // potentially optimal rectangles: for each size class the best value,
        // kept if some slope K separates it below every other class and
        // beats f_min by the epsilon margin
        let f_min = rects
            .iter()
            .map(|r| r.value)
            .fold(f64::INFINITY, f64::min);
        let sizes: Vec<f64> = rects.iter().map(|r| r.size()).collect();
        let mut class_best: Vec<(f64, usize)> = Vec::new(); // (size, rect idx)
        for (i, r) in rects.iter().enumerate() {
            match class_best.iter_mut().find(|(s, _)| *s == sizes[i]) {
                Some((_, j)) => {
                    if r.value < rects[*j].value {
                        *j = i;
                    }
                }
                None => class_best.push((sizes[i], i)),
            }
        }
        class_best.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut selected: Vec<usize> = Vec::new();
        for &(dj, j) in &class_best {
            let fj = rects[j].value;
            let mut k_lo = 0.0f64;
            let mut k_hi = f64::INFINITY;
            for &(di, i) in &class_best {
                if i == j {
                    continue;
                }
                let fi = rects[i].value;
                if di < dj {
                    k_lo = k_lo.max((fj - fi) / (dj - di));
                } else if di > dj {
                    k_hi = k_hi.min((fi - fj) / (di - dj));
                }
            }
            if k_lo > k_hi {
                continue;
            }
            let margin = if f_min.is_finite() {
                f_min - PO_EPS * f_min.abs()
            } else {
                f64::INFINITY
            };
            if k_hi.is_infinite() || fj - k_hi * dj <= margin {
                selected.push(j);
            }
        }
        if selected.is_empty() {
            // numerical corner: fall back to the largest best rectangle
            selected.push(class_best.last().unwrap().1);
        }
        // process larger rectangles first
        selected.sort_by(|&a, &b| sizes[b].total_cmp(&sizes[a]).then(a.cmp(&b)));

        for &j in &selected {
            let lmin = *rects[j].levels.iter().min().unwrap();
            let long_dims: Vec<usize> = (0..d).filter(|&k| rects[j].levels[k] == lmin).collect();
            let delta = 3f64.powi(-(lmin as i32 + 1));

            // sample both neighbours along every longest dimension
            struct Pair {
                dim: usize,
                plus: (Vec<f64>, f64),
                minus: Option<(Vec<f64>, f64)>,
            }
            let mut samples: Vec<Pair> = Vec::new();
            let mut truncated = false;
            for &k in &long_dims {
                if evals >= budget {
                    truncated = true;
                    break;
                }
                let mut plus = rects[j].center.clone();
                plus[k] += delta;
                let vp = eval(&plus, &mut evals, &mut best_point, &mut best_value);
                let minus = if evals < budget {
                    let mut m = rects[j].center.clone();
                    m[k] -= delta;
                    let vm = eval(&m, &mut evals, &mut best_point, &mut best_value);
                    Some((m, vm))
                } else {
                    truncated = true;
                    None
                };
                samples.push(Pair {
                    dim: k,
                    plus: (plus, vp),
                    minus,
                });
                if truncated {
                    break;
                }
            }
            if samples.is_empty() {
                break 'outer;
            }
            // divide along the sampled dimensions, best pair first
            samples.sort_by(|a, b| {
                let wa = a.plus.1.min(a.minus.as_ref().map_or(f64::INFINITY, |m| m.1));
                let wb = b.plus.1.min(b.minus.as_ref().map_or(f64::INFINITY, |m| m.1));
                wa.total_cmp(&wb).then(a.dim.cmp(&b.dim))
            });
            for s in samples {
                rects[j].levels[s.dim] += 1;
                let levels = rects[j].levels.clone();
                rects.push(Rect {
                    center: s.plus.0,
                    levels: levels.clone(),
                    value: s.plus.1,
                });
                if let Some((center, value)) = s.minus {
                    rects.push(Rect {
                        center,
                        levels,
                        value,
                    });
                }
            }
            if truncated || evals >= budget {
                break 'outer;
            }
        }
    }

    let unit = best_point.expect("at least one evaluation");
    Ok((space.to_actual(&unit), best_value))
}

/// Outcome of a hyperparameter search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub best_objective: f64,
    pub default_objective: f64,
    pub evaluations: usize,
}

/// Shipped search domains per family: log dimensions bracket the default by
/// a factor of 1000 each way (integer dimensions additionally capped to keep
/// single fits tractable); families without free hyperparameters get an
/// empty space.
pub fn default_hyper_space(family: crate::model::ModelFamily) -> Result<HyperSpace> {
    use crate::model::ModelFamily::*;
    let dims = match family {
        Rr => vec![
            HyperDim::int_log("q", 1.0, 1024.0),
            HyperDim::log("epsilon", 1e-6, 1.0),
        ],
        Spore => vec![
            HyperDim::log("epsilon", 1e-6, 1.0),
            HyperDim::int_log("t_max", 1.0, 1024.0),
            HyperDim::log("gamma", 1e-5, 10.0),
        ],
        Nn => vec![
            HyperDim::log("alpha", 1e-5, 10.0),
            HyperDim::int_log("h", 1.0, 1024.0),
        ],
        Rf => vec![
            HyperDim::int_log("n_min", 1.0, 5000.0),
            HyperDim::linear("perc", 0.1, 1.0),
        ],
        Gp | Pp | Rt => vec![],
    };
    HyperSpace::new(dims)
}

/// Tunes a family's hyperparameters by minimizing 2-fold cross-validated
/// RMSE on the training set. The default hyperparameter point is
/// force-evaluated first (inside the budget), so the reported best can never
/// be worse than the default on the inner objective.
pub fn tune_model(
    spec: &crate::model::ModelSpec,
    dataset: &crate::data::Dataset,
    space: Option<HyperSpace>,
    seed: u64,
    budget: usize,
) -> Result<TuneOutcome> {
    use crate::metrics::{kfold_split, rmse};
    use crate::preprocess::log_transform_response;

    let n = dataset.n_rows();
    if n < 2 {
        return Err(EpmError::Config("tuning needs at least 2 rows".into()));
    }
    if budget < 1 {
        return Err(EpmError::Config("tuning budget must be >= 1".into()));
    }
    let space = match space {
        Some(s) => s,
        None => default_hyper_space(spec.family)?,
    };
    let names: Vec<String> = space.dims.iter().map(|d| d.name.clone()).collect();
    let y_log = log_transform_response(&dataset.y, spec.resolution_floor)?;
    let folds = kfold_split(n, 2, seed)?;

    let objective = |values: &[f64]| -> f64 {
        let cand = match spec.with_hypers(&names, values) {
            Ok(c) => c,
            Err(_) => return f64::INFINITY,
        };
        let mut total = 0.0;
        for f in 0..2 {
            let val = &folds[f];
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            let sub = dataset.select_rows(&train);
            let model = match cand.fit(&sub) {
                Ok(m) => m,
                Err(_) => return f64::INFINITY,
            };
            let mut mu = Vec::with_capacity(val.len());
            let mut yv = Vec::with_capacity(val.len());
            for &i in val {
                match model.predict(dataset.x.row(i)) {
                    Ok(p) => {
                        mu.push(p.mean);
                        yv.push(y_log[i]);
                    }
                    Err(_) => return f64::INFINITY,
                }
            }
            match rmse(&yv, &mu) {
                Ok(r) => total += r,
                Err(_) => return f64::INFINITY,
            }
        }
        total / 2.0
    };

    // force-evaluate the defaults first
    let default_values: Vec<f64> = spec.hyper_values().iter().map(|&(_, v)| v).collect();
    let default_objective = objective(&default_values);
    let mut evaluations = 1usize;

    if space.dims.is_empty() || budget == 1 {
        return Ok(TuneOutcome {
            names,
            values: default_values,
            best_objective: default_objective,
            default_objective,
            evaluations,
        });
    }

    let mut direct_evals = 0usize;
    let (point, value) = direct_minimize(
        |p| {
            direct_evals += 1;
            objective(p)
        },
        &space,
        budget - 1,
    )?;
    evaluations += direct_evals;

    if value < default_objective {
        Ok(TuneOutcome {
            names,
            values: point,
            best_objective: value,
            default_objective,
            evaluations,
        })
    } else {
        Ok(TuneOutcome {
            names,
            values: default_values,
            best_objective: default_objective,
            default_objective,
            evaluations,
        })
    }
}
