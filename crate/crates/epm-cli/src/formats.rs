//! On-disk formats: runs.csv, features.csv, configspace.json, configs.csv,
//! query/prediction CSVs, the experiment configuration, and the model file
//! envelope.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use epm::data::{
    ColumnKind, Configuration, ConfigurationSpace, FeatureTable, ParamDomain, ParamValue,
    RunRecord,
};
use epm::experiment::{Protocol, RunTable};
use epm::model::{deserialize_model, serialize_model, FittedModel};

/// runs.csv: instance_id, config_id, runtime_s, captime_s, censored (0/1).
pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open runs file {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let expect = ["instance_id", "config_id", "runtime_s", "captime_s", "censored"];
    if headers.iter().collect::<Vec<_>>() != expect {
        bail!(
            "runs file {} must have header {}",
            path.display(),
            expect.join(",")
        );
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let parse_f = |idx: usize, name: &str| -> Result<f64> {
            record[idx]
                .parse::<f64>()
                .with_context(|| format!("line {}: bad {} '{}'", line, name, &record[idx]))
        };
        let censored = match &record[4] {
            "0" => false,
            "1" => true,
            other => bail!("line {}: censored flag must be 0 or 1, got '{}'", line, other),
        };
        let run = RunRecord {
            instance_id: record[0].to_string(),
            config_id: record[1].to_string(),
            observed: parse_f(2, "runtime_s")?,
            captime: parse_f(3, "captime_s")?,
            censored,
        };
        run.validate()
            .with_context(|| format!("line {}: invalid run", line))?;
        out.push(run);
    }
    Ok(out)
}

/// features.csv: instance_id plus named numeric columns, "NA" for missing.
pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open features file {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || &headers[0] != "instance_id" {
        bail!("features file {} must start with instance_id", path.display());
    }
    let names: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    let mut table = FeatureTable::new(names.clone());
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != names.len() + 1 {
            bail!("line {}: expected {} fields", line, names.len() + 1);
        }
        let mut values = Vec::with_capacity(names.len());
        for f in record.iter().skip(1) {
            if f == "NA" || f.is_empty() {
                values.push(None);
            } else {
                values.push(Some(f.parse::<f64>().with_context(|| {
                    format!("line {}: bad feature value '{}'", line, f)
                })?));
            }
        }
        table.insert(&record[0], values)?;
    }
    Ok(table)
}

/// configspace.json: an array of parameter definitions.
pub fn read_space(path: &Path) -> Result<ConfigurationSpace> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read configuration space {}", path.display()))?;
    let params: Vec<epm::data::ParameterDef> =
        serde_json::from_str(&text).with_context(|| "malformed configspace.json")?;
    Ok(ConfigurationSpace::new(params)?)
}

/// configs.csv: config_id plus one column per parameter, in declaration
/// order.
pub fn read_configs(
    path: &Path,
    space: &ConfigurationSpace,
) -> Result<HashMap<String, Configuration>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open configs file {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let expect: Vec<&str> = std::iter::once("config_id")
        .chain(space.params().iter().map(|p| p.name.as_str()))
        .collect();
    if headers.iter().collect::<Vec<_>>() != expect {
        bail!(
            "configs file {} must have header {}",
            path.display(),
            expect.join(",")
        );
    }
    let mut out = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let mut values = Vec::with_capacity(space.len());
        for (j, def) in space.params().iter().enumerate() {
            let field = &record[j + 1];
            let value = match &def.domain {
                ParamDomain::Categorical(_) => ParamValue::Cat(field.to_string()),
                ParamDomain::Interval { .. } => ParamValue::Num(
                    field
                        .parse::<f64>()
                        .with_context(|| format!("line {}: bad numeric value '{}'", line, field))?,
                ),
            };
            values.push(value);
        }
        let config = Configuration::new(values);
        config
            .validate(space)
            .with_context(|| format!("line {}: configuration outside its space", line))?;
        out.insert(record[0].to_string(), config);
    }
    Ok(out)
}

pub fn read_run_table(
    runs: &Path,
    features: &Path,
    space: &Path,
    configs: &Path,
) -> Result<RunTable> {
    let space = read_space(space)?;
    Ok(RunTable {
        runs: read_runs(runs)?,
        features: read_features(features)?,
        configs: read_configs(configs, &space)?,
        space,
    })
}

/// Model file: the serialized model plus the configuration space needed to
/// map categorical labels in query files.
#[derive(Serialize, Deserialize)]
struct ModelEnvelope {
    space: ConfigurationSpace,
    model: serde_json::Value,
}

pub fn write_model_file(path: &Path, model: &FittedModel, space: &ConfigurationSpace) -> Result<()> {
    let bytes = serialize_model(model)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    let envelope = ModelEnvelope {
        space: space.clone(),
        model: value,
    };
    fs::write(path, serde_json::to_vec(&envelope)?)
        .with_context(|| format!("cannot write model file {}", path.display()))?;
    Ok(())
}

pub fn read_model_file(path: &Path) -> Result<(FittedModel, ConfigurationSpace)> {
    let bytes = fs::read(path)
        .with_context(|| format!("cannot read model file {}", path.display()))?;
    let envelope: ModelEnvelope =
        serde_json::from_slice(&bytes).with_context(|| "malformed model file")?;
    let model = deserialize_model(&serde_json::to_vec(&envelope.model)?)?;
    Ok((model, envelope.space))
}

/// queries.csv: header must equal the model's column names; categorical
/// parameters take their string labels, numerics plain numbers, missing
/// features "NA". Returns raw predictor rows.
pub fn read_queries(
    path: &Path,
    model: &FittedModel,
    space: &ConfigurationSpace,
) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open query file {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let expect: Vec<&str> = model.columns.iter().map(|c| c.name.as_str()).collect();
    let got: Vec<&str> = headers.iter().collect();
    if got != expect {
        bail!(
            "query header mismatch: expected '{}', got '{}'",
            expect.join(","),
            got.join(",")
        );
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != model.columns.len() {
            bail!("line {}: expected {} fields", line, model.columns.len());
        }
        let mut row = Vec::with_capacity(model.columns.len());
        for (j, meta) in model.columns.iter().enumerate() {
            let field = &record[j];
            let v = match &meta.kind {
                ColumnKind::Categorical { .. } => {
                    let def = space
                        .params()
                        .iter()
                        .find(|p| p.name == meta.name)
                        .with_context(|| {
                            format!("parameter '{}' missing from model space", meta.name)
                        })?;
                    def.categorical_index(field).with_context(|| {
                        format!("line {}: bad categorical value '{}'", line, field)
                    })? as f64
                }
                ColumnKind::Continuous => {
                    if field == "NA" || field.is_empty() {
                        f64::NAN
                    } else {
                        field.parse::<f64>().with_context(|| {
                            format!("line {}: bad numeric value '{}'", line, field)
                        })?
                    }
                }
            };
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Experiment configuration consumed by `epm evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub runs: String,
    pub features: String,
    pub space: String,
    pub configs: String,
    pub models: Vec<ModelConfig>,
    pub protocol: Protocol,
    #[serde(default = "default_censoring")]
    pub censoring: String,
    pub seed: u64,
    #[serde(default)]
    pub ll_density_correct: bool,
    pub out_dir: String,
}

fn default_censoring() -> String {
    "uncensored".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub family: String,
    #[serde(default)]
    pub params: HashMap<String, f64>,
}

pub fn read_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read experiment config {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| "malformed experiment config")?)
}

/// Formats a float with full round-trip precision.
pub fn fmt_f64(v: f64) -> String {
    format!("{}", v)
}
