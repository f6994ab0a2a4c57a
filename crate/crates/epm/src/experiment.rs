//! Experiment protocols: k-fold cross-validation over runs and the
//! four-quadrant instance/configuration generalization study, with per-fold
//! metric reports.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{assemble_dataset, Configuration, ConfigurationSpace, Dataset, FeatureTable, RunRecord};
use crate::error::{EpmError, Result};
use crate::metrics::{kfold_split, log_likelihood, pearson_cc, quadrant_split, rmse, MetricReport};
use crate::model::{CensoringStrategy, FittedModel, ModelSpec};
use crate::preprocess::log_transform_response;

/// Run data plus everything needed to resolve it into design matrices.
#[derive(Debug, Clone)]
pub struct RunTable {
    pub runs: Vec<RunRecord>,
    pub features: FeatureTable,
    pub space: ConfigurationSpace,
    pub configs: HashMap<String, Configuration>,
}

impl RunTable {
    pub fn dataset(&self) -> Result<Dataset> {
        assemble_dataset(&self.runs, &self.features, &self.space, &self.configs)
    }

    pub fn dataset_for(&self, run_idx: &[usize]) -> Result<Dataset> {
        let subset: Vec<RunRecord> = run_idx.iter().map(|&i| self.runs[i].clone()).collect();
        assemble_dataset(&subset, &self.features, &self.space, &self.configs)
    }

    pub fn instance_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.runs.iter().map(|r| r.instance_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn config_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.runs.iter().map(|r| r.config_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Evaluation protocol selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Cv {
        k: usize,
    },
    /// Disjoint instance/configuration halves; training samples up to
    /// `train_points` run rows from the train x train quadrant.
    Quadrant {
        train_points: Option<usize>,
    },
}

/// One evaluated fold or quadrant; metric computation errors (for example an
/// undefined correlation under a constant predictor) are surfaced per fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub label: String,
    pub report: std::result::Result<MetricReport, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: String,
    pub folds: Vec<FoldOutcome>,
    /// Arithmetic mean of each metric across successful folds.
    pub mean: Option<MetricReport>,
}

fn evaluate_rows(
    model: &FittedModel,
    table: &RunTable,
    dataset: &Dataset,
    y_log: &[f64],
    rows: &[usize],
    density_correct_ll: bool,
) -> std::result::Result<MetricReport, String> {
    let _ = table;
    let mut mu = Vec::with_capacity(rows.len());
    let mut sigma = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for &i in rows {
        match model.predict(dataset.x.row(i)) {
            Ok(p) => {
                mu.push(p.mean);
                sigma.push(p.sd().max(1e-9));
                y.push(y_log[i]);
            }
            Err(e) => return Err(e.to_string()),
        }
    }
    let rmse_v = rmse(&y, &mu).map_err(|e| e.to_string())?;
    let cc_v = pearson_cc(&y, &mu).map_err(|e| e.to_string())?;
    let ll_v = log_likelihood(&y, &mu, &sigma, density_correct_ll).map_err(|e| e.to_string())?;
    Ok(MetricReport {
        rmse: rmse_v,
        cc: cc_v,
        ll: ll_v,
        n_points: rows.len(),
    })
}

fn mean_report(folds: &[FoldOutcome]) -> Option<MetricReport> {
    let ok: Vec<&MetricReport> = folds.iter().filter_map(|f| f.report.as_ref().ok()).collect();
    if ok.is_empty() {
        return None;
    }
    let n = ok.len() as f64;
    Some(MetricReport {
        rmse: ok.iter().map(|r| r.rmse).sum::<f64>() / n,
        cc: ok.iter().map(|r| r.cc).sum::<f64>() / n,
        ll: ok.iter().map(|r| r.ll).sum::<f64>() / n,
        n_points: ok.iter().map(|r| r.n_points).sum(),
    })
}

/// Runs the chosen protocol: models are fit on training portions only (all
/// transform state comes from training rows) and evaluated on the held-out
/// sets.
pub fn run_experiment(
    table: &RunTable,
    spec: &ModelSpec,
    censoring: CensoringStrategy,
    protocol: &Protocol,
    seed: u64,
    density_correct_ll: bool,
) -> Result<ExperimentReport> {
    let dataset = table.dataset()?;
    let y_log = log_transform_response(&dataset.y, spec.resolution_floor)?;
    let folds = match protocol {
        Protocol::Cv { k } => {
            let fold_sets = kfold_split(dataset.n_rows(), *k, seed)?;
            let mut outcomes = Vec::with_capacity(*k);
            for f in 0..*k {
                let val = &fold_sets[f];
                let train: Vec<usize> = fold_sets
                    .iter()
                    .enumerate()
                    .filter(|(g, _)| *g != f)
                    .flat_map(|(_, v)| v.iter().copied())
                    .collect();
                let sub = table.dataset_for(&train)?;
                let report = match spec.fit_with_censoring(&sub, censoring) {
                    Ok(model) => {
                        evaluate_rows(&model, table, &dataset, &y_log, val, density_correct_ll)
                    }
                    Err(e) => Err(e.to_string()),
                };
                outcomes.push(FoldOutcome {
                    label: format!("fold{}", f + 1),
                    report,
                });
            }
            outcomes
        }
        Protocol::Quadrant { train_points } => {
            let split = quadrant_split(&table.instance_ids(), &table.config_ids(), seed)?;
            let in_set = |ids: &[String], id: &str| ids.iter().any(|x| x == id);
            let mut train_rows: Vec<usize> = (0..table.runs.len())
                .filter(|&i| {
                    in_set(&split.train_instances, &table.runs[i].instance_id)
                        && in_set(&split.train_configs, &table.runs[i].config_id)
                })
                .collect();
            if let Some(limit) = train_points {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
                train_rows.shuffle(&mut rng);
                train_rows.truncate(*limit);
                train_rows.sort_unstable();
            }
            if train_rows.is_empty() {
                return Err(EpmError::Config(
                    "no runs fall in the training quadrant".into(),
                ));
            }
            let sub = table.dataset_for(&train_rows)?;
            let model = spec.fit_with_censoring(&sub, censoring)?;

            let quadrants = [
                ("train_instances.train_configs", &split.train_instances, &split.train_configs),
                ("train_instances.test_configs", &split.train_instances, &split.test_configs),
                ("test_instances.train_configs", &split.test_instances, &split.train_configs),
                ("test_instances.test_configs", &split.test_instances, &split.test_configs),
            ];
            quadrants
                .iter()
                .map(|(label, insts, confs)| {
                    let rows: Vec<usize> = (0..table.runs.len())
                        .filter(|&i| {
                            in_set(insts, &table.runs[i].instance_id)
                                && in_set(confs, &table.runs[i].config_id)
                        })
                        .collect();
                    let report = if rows.is_empty() {
                        Err("no runs in quadrant".to_string())
                    } else {
                        evaluate_rows(&model, table, &dataset, &y_log, &rows, density_correct_ll)
                    };
                    FoldOutcome {
                        label: label.to_string(),
                        report,
                    }
                })
                .collect()
        }
    };
    let mean = mean_report(&folds);
    Ok(ExperimentReport {
        model: spec.family.name().to_string(),
        folds,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ParamValue, ParameterDef};
    use crate::model::{serialize_model, ModelFamily};
    use rand::Rng;

    /// Grid run table: every (instance, config) pair observed once.
    pub(crate) fn grid_table(n_inst: usize, n_conf: usize, seed: u64) -> RunTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = ConfigurationSpace::new(vec![
            ParameterDef::continuous("w", 0.0, 1.0).unwrap(),
        ])
        .unwrap();
        let mut features = FeatureTable::new(vec!["f".into()]);
        let mut configs = HashMap::new();
        let mut runs = Vec::new();
        for i in 0..n_inst {
            features
                .insert(&format!("i{}", i), vec![Some(rng.gen_range(0.0..2.0))])
                .unwrap();
        }
        for c in 0..n_conf {
            configs.insert(
                format!("c{}", c),
                Configuration::new(vec![ParamValue::Num(rng.gen_range(0.0..1.0))]),
            );
        }
        for i in 0..n_inst {
            for c in 0..n_conf {
                let f = features.rows[&format!("i{}", i)].values[0].unwrap();
                let w = match configs[&format!("c{}", c)].values[0] {
                    ParamValue::Num(v) => v,
                    _ => unreachable!(),
                };
                let log_rt = f + w + 0.02 * rng.gen_range(-1.0..1.0);
                runs.push(RunRecord {
                    instance_id: format!("i{}", i),
                    config_id: format!("c{}", c),
                    observed: 10f64.powf(log_rt),
                    captime: 1e6,
                    censored: false,
                });
            }
        }
        RunTable {
            runs,
            features,
            space,
            configs,
        }
    }

    #[test]
    fn cv_produces_k_folds_and_mean() {
        let table = grid_table(6, 6, 1);
        let spec = ModelSpec::new(ModelFamily::Rf, 2);
        let report = run_experiment(
            &table,
            &spec,
            CensoringStrategy::Uncensored,
            &Protocol::Cv { k: 10 },
            3,
            false,
        )
        .unwrap();
        assert_eq!(report.folds.len(), 10);
        assert!(report.folds.iter().all(|f| f.report.is_ok()));
        let mean = report.mean.unwrap();
        assert!(mean.rmse >= 0.0);
        assert!(mean.cc >= -1.0 && mean.cc <= 1.0);
    }

    #[test]
    fn quadrant_produces_four_labeled_reports() {
        let table = grid_table(4, 4, 2);
        let spec = ModelSpec::new(ModelFamily::Rf, 0);
        let report = run_experiment(
            &table,
            &spec,
            CensoringStrategy::Uncensored,
            &Protocol::Quadrant { train_points: None },
            5,
            false,
        )
        .unwrap();
        assert_eq!(report.folds.len(), 4);
        let labels: Vec<&str> = report.folds.iter().map(|f| f.label.as_str()).collect();
        assert_eq!(
            labels,
            vec![
                "train_instances.train_configs",
                "train_instances.test_configs",
                "test_instances.train_configs",
                "test_instances.test_configs"
            ]
        );
    }

    #[test]
    fn constant_predictor_surfaces_cc_error_per_fold() {
        let table = grid_table(4, 4, 3);
        let mut spec = ModelSpec::new(ModelFamily::Rf, 0);
        spec.forest.n_min = 10_000; // constant single-leaf trees
        let report = run_experiment(
            &table,
            &spec,
            CensoringStrategy::Uncensored,
            &Protocol::Cv { k: 4 },
            1,
            false,
        )
        .unwrap();
        for fold in &report.folds {
            let err = fold.report.as_ref().unwrap_err();
            assert!(err.contains("constant"), "{}", err);
        }
        assert!(report.mean.is_none());
    }

    #[test]
    fn test_rows_never_influence_fit() {
        // corrupting the held-out rows leaves the fitted model bit-identical
        let table = grid_table(5, 5, 4);
        let n = table.runs.len();
        let folds = kfold_split(n, 5, 9).unwrap();
        let train: Vec<usize> = folds
            .iter()
            .skip(1)
            .flat_map(|v| v.iter().copied())
            .collect();
        let spec = ModelSpec::new(ModelFamily::Rf, 11);
        let fit_bytes = |table: &RunTable| {
            let sub = table.dataset_for(&train).unwrap();
            let model = spec.fit(&sub).unwrap();
            serialize_model(&model).unwrap()
        };
        let clean = fit_bytes(&table);
        let mut corrupted = table.clone();
        for &i in &folds[0] {
            corrupted.runs[i].observed = 9999.0;
        }
        let dirty = fit_bytes(&corrupted);
        assert_eq!(clean, dirty);
    }

    #[test]
    fn memorizing_model_interpolates_duplicated_rows() {
        // leakage sanity: when every evaluation row duplicates a training
        // row, an interpolating forest reaches zero test error
        let mut table = grid_table(4, 4, 5);
        let dup: Vec<RunRecord> = table.runs.clone();
        let n = table.runs.len();
        table.runs.extend(dup);
        let train: Vec<usize> = (0..n).collect();
        let eval: Vec<usize> = (n..2 * n).collect();
        let mut spec = ModelSpec::new(ModelFamily::Rf, 1);
        spec.forest.perc = 1.0;
        spec.forest.n_min = 1;
        let sub = table.dataset_for(&train).unwrap();
        let model = spec.fit(&sub).unwrap();
        let dataset = table.dataset().unwrap();
        let y_log = log_transform_response(&dataset.y, spec.resolution_floor).unwrap();
        let report = evaluate_rows(&model, &table, &dataset, &y_log, &eval, false).unwrap();
        assert!(report.rmse < 1e-10, "rmse {}", report.rmse);
    }
}
