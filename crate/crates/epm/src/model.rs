//! Uniform model layer: per-family fit pipelines over assembled datasets, a
//! shared predict interface with one (mean, variance) distribution per
//! query, and versioned model serialization.

use serde::{Deserialize, Serialize};

use crate::censoring::{
    fit_forest_censored, fit_forest_drop_censored, CensoredFitConfig, CensoredVariant,
};
use crate::data::{ColumnKind, ColumnMeta, Dataset, Matrix, PredictiveDistribution};
use crate::error::{EpmError, Result};
use crate::forest::{fit_forest, predict_forest, ForestModel, ForestParams};
use crate::gp::{gp_fit, gp_predict, pp_fit, pp_predict, DimKind, GpModel, KernelParams, PpModel, PpParams};
use crate::mlp::{fit_mlp, MlpModel, MlpParams};
use crate::preprocess::{
    categorical_mask, encode_row, fit_imputer, impute_matrix, impute_row, log_transform_response,
    one_in_k_encode, Normalizer, DEFAULT_RESOLUTION_FLOOR,
};
use crate::ridge::{
    forward_select_two_phase, spore_foba, RidgeModel, SporeParams, TwoPhaseParams,
    MIN_RESIDUAL_VARIANCE,
};
use crate::tree::{grow_tree, predict_tree, prune_tree, TreeNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    /// Ridge regression with two-phase forward selection.
    Rr,
    /// Ridge regression with cubic forward-backward selection.
    Spore,
    /// One-hidden-layer perceptron.
    Nn,
    /// Exact Gaussian process with the mixed kernel.
    Gp,
    /// Projected-process approximate Gaussian process.
    Pp,
    /// Single regression tree with cost-complexity pruning.
    Rt,
    /// Random forest with predictive variance.
    Rf,
}

impl ModelFamily {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "rr" => Ok(ModelFamily::Rr),
            "spore" | "sp" => Ok(ModelFamily::Spore),
            "nn" => Ok(ModelFamily::Nn),
            "gp" => Ok(ModelFamily::Gp),
            "pp" => Ok(ModelFamily::Pp),
            "rt" => Ok(ModelFamily::Rt),
            "rf" => Ok(ModelFamily::Rf),
            other => Err(EpmError::Config(format!("unknown model family '{}'", other))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Rr => "rr",
            ModelFamily::Spore => "spore",
            ModelFamily::Nn => "nn",
            ModelFamily::Gp => "gp",
            ModelFamily::Pp => "pp",
            ModelFamily::Rt => "rt",
            ModelFamily::Rf => "rf",
        }
    }
}

/// How censored observations enter a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CensoringStrategy {
    /// Drop censored rows entirely.
    Drop,
    /// Treat censored observations as exact runtimes.
    Uncensored,
    /// Iterative truncated-mean imputation (random forests only).
    ShMean,
    /// Iterative stratified-sample imputation (random forests only).
    ShSample,
}

impl CensoringStrategy {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "drop" => Ok(CensoringStrategy::Drop),
            "uncensored" => Ok(CensoringStrategy::Uncensored),
            "sh-mean" => Ok(CensoringStrategy::ShMean),
            "sh-sample" => Ok(CensoringStrategy::ShSample),
            other => Err(EpmError::Config(format!(
                "unknown censoring strategy '{}'",
                other
            ))),
        }
    }
}

/// Family choice plus every family's hyperparameters; unused blocks keep
/// their defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub seed: u64,
    pub resolution_floor: f64,
    pub two_phase: TwoPhaseParams,
    pub spore: SporeParams,
    pub mlp: MlpParams,
    pub forest: ForestParams,
    pub pp: PpParams,
    /// Marginal-likelihood optimization budget for the exact GP.
    pub gp_opt_steps: usize,
    /// Pruning folds for the single regression tree.
    pub rt_folds: usize,
}

impl ModelSpec {
    pub fn new(family: ModelFamily, seed: u64) -> Self {
        ModelSpec {
            family,
            seed,
            resolution_floor: DEFAULT_RESOLUTION_FLOOR,
            two_phase: TwoPhaseParams::default(),
            spore: SporeParams::default(),
            mlp: MlpParams::default(),
            forest: ForestParams::default(),
            pp: PpParams::default(),
            gp_opt_steps: 50,
            rt_folds: 10,
        }
    }

    /// Tunable hyperparameter names for this family, with current values.
    pub fn hyper_values(&self) -> Vec<(&'static str, f64)> {
        match self.family {
            ModelFamily::Rr => vec![
                ("q", self.two_phase.q as f64),
                ("epsilon", self.two_phase.epsilon),
            ],
            ModelFamily::Spore => vec![
                ("epsilon", self.spore.epsilon),
                ("t_max", self.spore.t_max as f64),
                ("gamma", self.spore.gamma),
            ],
            ModelFamily::Nn => vec![("alpha", self.mlp.alpha), ("h", self.mlp.hidden as f64)],
            ModelFamily::Rf => vec![
                ("n_min", self.forest.n_min as f64),
                ("perc", self.forest.perc),
            ],
            ModelFamily::Gp | ModelFamily::Pp | ModelFamily::Rt => vec![],
        }
    }

    /// Applies a named hyperparameter value; unknown names are rejected.
    pub fn set_hyper(&mut self, name: &str, value: f64) -> Result<()> {
        match (self.family, name) {
            (ModelFamily::Rr, "q") => self.two_phase.q = value.round().max(1.0) as usize,
            (ModelFamily::Rr, "l") => self.two_phase.l = value.round().max(1.0) as usize,
            (ModelFamily::Rr, "epsilon") => self.two_phase.epsilon = value,
            (ModelFamily::Spore, "epsilon") => self.spore.epsilon = value,
            (ModelFamily::Spore, "t_max") => self.spore.t_max = value.round().max(1.0) as usize,
            (ModelFamily::Spore, "gamma") => self.spore.gamma = value,
            (ModelFamily::Nn, "alpha") => self.mlp.alpha = value,
            (ModelFamily::Nn, "h") => self.mlp.hidden = value.round().max(1.0) as usize,
            (ModelFamily::Nn, "steps") => self.mlp.steps = value.round().max(0.0) as usize,
            (ModelFamily::Rf, "n_min") => self.forest.n_min = value.round().max(1.0) as usize,
            (ModelFamily::Rf, "perc") => self.forest.perc = value,
            (ModelFamily::Rf, "b") => self.forest.b = value.round().max(1.0) as usize,
            (ModelFamily::Gp, "h") => self.gp_opt_steps = value.round().max(0.0) as usize,
            (ModelFamily::Pp, "a") => self.pp.active_size = value.round().max(1.0) as usize,
            (ModelFamily::Pp, "h") => self.pp.opt_steps = value.round().max(0.0) as usize,
            (f, n) => {
                return Err(EpmError::Config(format!(
                    "family '{}' has no hyperparameter '{}'",
                    f.name(),
                    n
                )))
            }
        }
        Ok(())
    }

    pub fn with_hypers(&self, names: &[String], values: &[f64]) -> Result<ModelSpec> {
        let mut spec = self.clone();
        for (n, v) in names.iter().zip(values) {
            spec.set_hyper(n, *v)?;
        }
        Ok(spec)
    }

    /// Fits on all rows, treating censored observations as exact.
    pub fn fit(&self, dataset: &Dataset) -> Result<FittedModel> {
        self.fit_with_censoring(dataset, CensoringStrategy::Uncensored)
    }

    pub fn fit_with_censoring(
        &self,
        dataset: &Dataset,
        strategy: CensoringStrategy,
    ) -> Result<FittedModel> {
        if dataset.n_rows() == 0 {
            return Err(EpmError::Schema("cannot fit on an empty dataset".into()));
        }
        let y_log = log_transform_response(&dataset.y, self.resolution_floor)?;

        match strategy {
            CensoringStrategy::Drop => {
                let keep: Vec<usize> = (0..dataset.n_rows())
                    .filter(|&i| !dataset.censored[i])
                    .collect();
                if keep.is_empty() {
                    return Err(EpmError::Training("all rows are censored".into()));
                }
                let sub = dataset.select_rows(&keep);
                let y_sub = log_transform_response(&sub.y, self.resolution_floor)?;
                self.fit_family(&sub, &y_sub, None)
            }
            CensoringStrategy::Uncensored => self.fit_family(dataset, &y_log, None),
            CensoringStrategy::ShMean | CensoringStrategy::ShSample => {
                if self.family != ModelFamily::Rf {
                    return Err(EpmError::Config(
                        "iterative censored fitting is available for the rf family only".into(),
                    ));
                }
                let variant = if strategy == CensoringStrategy::ShMean {
                    CensoredVariant::Mean
                } else {
                    CensoredVariant::Sample
                };
                self.fit_family(dataset, &y_log, Some(variant))
            }
        }
    }

    fn fit_family(
        &self,
        dataset: &Dataset,
        y_log: &[f64],
        censored_variant: Option<CensoredVariant>,
    ) -> Result<FittedModel> {
        let columns = dataset.columns.clone();
        let imputer = fit_imputer(&dataset.x);
        let imputed = impute_matrix(&imputer, &dataset.x);

        let detail = match self.family {
            ModelFamily::Rr | ModelFamily::Spore => {
                let (enc, _enc_cols, _map) = one_in_k_encode(&columns, &imputed)?;
                let model = match self.family {
                    ModelFamily::Rr => {
                        let mut params = self.two_phase.clone();
                        params.l = params.l.min(enc.n_cols());
                        params.q = params.q.min(params.l + params.l * (params.l + 1) / 2);
                        forward_select_two_phase(&enc, y_log, &params, self.seed)?
                    }
                    _ => spore_foba(&enc, y_log, &self.spore)?,
                };
                FamilyDetail::Ridge { model }
            }
            ModelFamily::Nn => {
                let (enc, _, _) = one_in_k_encode(&columns, &imputed)?;
                let normalizer = Normalizer::fit(&enc)?;
                let z = normalizer.apply(&enc)?;
                let params = MlpParams {
                    seed: self.seed,
                    ..self.mlp.clone()
                };
                let model = fit_mlp(&z, y_log, &params)?;
                FamilyDetail::Mlp { normalizer, model }
            }
            ModelFamily::Gp | ModelFamily::Pp => {
                let mask = categorical_mask(&columns);
                let normalizer = Normalizer::fit_masked(&imputed, &mask)?;
                let z = normalizer.apply(&imputed)?;
                let kinds: Vec<DimKind> = normalizer
                    .passthrough
                    .iter()
                    .map(|&cat| if cat { DimKind::Categorical } else { DimKind::Continuous })
                    .collect();
                let y_mean = y_log.iter().sum::<f64>() / y_log.len() as f64;
                let centered: Vec<f64> = y_log.iter().map(|v| v - y_mean).collect();
                let init = KernelParams::default_for(z.n_cols(), kinds);
                if self.family == ModelFamily::Gp {
                    let model = gp_fit(&z, &centered, &init, self.gp_opt_steps)?;
                    FamilyDetail::Gp {
                        normalizer,
                        y_mean,
                        model,
                    }
                } else {
                    let pp_params = PpParams {
                        seed: self.seed,
                        ..self.pp.clone()
                    };
                    let model = pp_fit(&z, &centered, &init, &pp_params)?;
                    FamilyDetail::Pp {
                        normalizer,
                        y_mean,
                        model,
                    }
                }
            }
            ModelFamily::Rt => {
                let kinds: Vec<ColumnKind> = columns.iter().map(|c| c.kind.clone()).collect();
                let tree = grow_tree(&imputed, y_log, &kinds, 1);
                let folds = self.rt_folds.min(imputed.n_rows());
                let tree = if folds >= 2 {
                    prune_tree(&tree, &imputed, y_log, &kinds, folds, self.seed)?
                } else {
                    tree
                };
                let n = imputed.n_rows() as f64;
                let sse: f64 = (0..imputed.n_rows())
                    .map(|i| {
                        let e = predict_tree(&tree, imputed.row(i)) - y_log[i];
                        e * e
                    })
                    .sum();
                FamilyDetail::Tree {
                    tree,
                    residual_variance: (sse / n).max(MIN_RESIDUAL_VARIANCE),
                }
            }
            ModelFamily::Rf => {
                let kinds: Vec<ColumnKind> = columns.iter().map(|c| c.kind.clone()).collect();
                let params = ForestParams {
                    seed: self.seed,
                    ..self.forest.clone()
                };
                let model = match censored_variant {
                    None => fit_forest(&imputed, y_log, &kinds, &params)?,
                    Some(variant) => {
                        let kappa_max = dataset
                            .captimes
                            .iter()
                            .cloned()
                            .fold(f64::NEG_INFINITY, f64::max)
                            .log10();
                        let config = CensoredFitConfig::new(variant, kappa_max, self.seed);
                        fit_forest_censored(
                            &imputed,
                            y_log,
                            &dataset.censored,
                            &kinds,
                            &params,
                            &config,
                        )?
                    }
                };
                FamilyDetail::Forest { model }
            }
        };
        Ok(FittedModel {
            family: self.family,
            columns,
            imputer_means: imputer,
            detail,
        })
    }
}

/// Baseline used by comparisons: a forest fit only on uncensored rows (the
/// drop-censored strategy expressed as a plain delegation).
pub fn fit_rf_drop_censored(spec: &ModelSpec, dataset: &Dataset) -> Result<FittedModel> {
    let y_log = log_transform_response(&dataset.y, spec.resolution_floor)?;
    let columns = dataset.columns.clone();
    let imputer = fit_imputer(&dataset.x);
    let imputed = impute_matrix(&imputer, &dataset.x);
    let kinds: Vec<ColumnKind> = columns.iter().map(|c| c.kind.clone()).collect();
    let params = ForestParams {
        seed: spec.seed,
        ..spec.forest.clone()
    };
    let model = fit_forest_drop_censored(&imputed, &y_log, &dataset.censored, &kinds, &params)?;
    Ok(FittedModel {
        family: ModelFamily::Rf,
        columns,
        imputer_means: imputer,
        detail: FamilyDetail::Forest { model },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FamilyDetail {
    Ridge {
        model: RidgeModel,
    },
    Mlp {
        normalizer: Normalizer,
        model: MlpModel,
    },
    Gp {
        normalizer: Normalizer,
        y_mean: f64,
        model: GpModel,
    },
    Pp {
        normalizer: Normalizer,
        y_mean: f64,
        model: PpModel,
    },
    Tree {
        tree: TreeNode,
        residual_variance: f64,
    },
    Forest {
        model: ForestModel,
    },
}

/// A fitted model of any family: raw predictor rows in, predictive
/// distributions of log10 runtime out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub family: ModelFamily,
    pub columns: Vec<ColumnMeta>,
    imputer_means: Vec<f64>,
    detail: FamilyDetail,
}

impl FittedModel {
    pub fn n_inputs(&self) -> usize {
        self.columns.len()
    }

    /// Predicts from a raw predictor row (parameters then features, missing
    /// features as NaN).
    pub fn predict(&self, raw_row: &[f64]) -> Result<PredictiveDistribution> {
        if raw_row.len() != self.columns.len() {
            return Err(EpmError::ArityMismatch {
                expected: self.columns.len(),
                got: raw_row.len(),
            });
        }
        let row = impute_row(&self.imputer_means, raw_row);
        match &self.detail {
            FamilyDetail::Ridge { model } => {
                let enc = encode_row(&self.columns, &row, model.n_input_cols)?;
                model.predict(&enc)
            }
            FamilyDetail::Mlp { normalizer, model } => {
                let enc = encode_row(&self.columns, &row, normalizer.kept_columns.len())?;
                let z = normalizer.apply_row(&enc)?;
                model.predict(&z)
            }
            FamilyDetail::Gp {
                normalizer,
                y_mean,
                model,
            } => {
                let z = normalizer.apply_row(&row)?;
                let p = gp_predict(model, &z)?;
                Ok(PredictiveDistribution::new(p.mean + y_mean, p.variance))
            }
            FamilyDetail::Pp {
                normalizer,
                y_mean,
                model,
            } => {
                let z = normalizer.apply_row(&row)?;
                let p = pp_predict(model, &z)?;
                Ok(PredictiveDistribution::new(p.mean + y_mean, p.variance))
            }
            FamilyDetail::Tree {
                tree,
                residual_variance,
            } => Ok(PredictiveDistribution::new(
                predict_tree(tree, &row),
                *residual_variance,
            )),
            FamilyDetail::Forest { model } => predict_forest(model, &row),
        }
    }

    pub fn predict_dataset(&self, x: &Matrix) -> Result<Vec<PredictiveDistribution>> {
        (0..x.n_rows()).map(|i| self.predict(x.row(i))).collect()
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: FittedModel,
}

/// Serializes a fitted model; the byte stream round-trips to a model with
/// bit-identical predictions.
pub fn serialize_model(model: &FittedModel) -> Result<Vec<u8>> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    };
    serde_json::to_vec(&file).map_err(|e| EpmError::Format(format!("serialize failed: {}", e)))
}

pub fn deserialize_model(bytes: &[u8]) -> Result<FittedModel> {
    let file: ModelFile = serde_json::from_slice(bytes)
        .map_err(|e| EpmError::Format(format!("malformed model stream: {}", e)))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(EpmError::Format(format!(
            "model format version {} unsupported (expected {})",
            file.format_version, MODEL_FORMAT_VERSION
        )));
    }
    Ok(file.model)
}
