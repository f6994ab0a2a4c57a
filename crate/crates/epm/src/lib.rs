//! Empirical performance models: regression models that predict algorithm
//! runtime from problem-instance features and algorithm parameter
//! configurations.
//!
//! The crate provides the model families (ridge with forward selection,
//! sparse polynomial ridge, a one-hidden-layer perceptron, exact and
//! projected-process Gaussian processes with a mixed continuous/categorical
//! kernel, regression trees, and random forests with predictive variance),
//! handling of right-censored runtimes, a solver-independent TSP feature
//! extractor, gradient-free hyperparameter tuning, and the evaluation
//! protocols used to compare models.

pub mod censoring;
pub mod data;
pub mod error;
pub mod experiment;
pub mod forest;
pub mod gp;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod preprocess;
pub mod ridge;
pub mod tree;
pub mod tsp;
pub mod tune;

pub use data::{
    assemble_dataset, Configuration, ConfigurationSpace, Dataset, FeatureTable, FeatureVector,
    Matrix, ParamValue, ParameterDef, PredictiveDistribution, RunRecord,
};
pub use error::{EpmError, Result};
pub use model::{
    deserialize_model, serialize_model, CensoringStrategy, FittedModel, ModelFamily, ModelSpec,
};
