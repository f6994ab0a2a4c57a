//! Command-line front end: TSP feature extraction, model training,
//! prediction, experiment evaluation, and hyperparameter tuning.

mod commands;
mod formats;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "epm",
    about = "Empirical performance models: predict algorithm runtime from instance features and parameter configurations",
    version
)]
struct Cli {
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// runs.csv: instance_id,config_id,runtime_s,captime_s,censored
    #[arg(long)]
    runs: PathBuf,
    /// features.csv: instance_id plus named numeric columns (NA = missing)
    #[arg(long)]
    features: PathBuf,
    /// configspace.json: array of parameter definitions
    #[arg(long)]
    space: PathBuf,
    /// configs.csv: config_id plus one column per parameter
    #[arg(long)]
    configs: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Extract TSP instance features into a CSV table.
    Features {
        /// TSPLIB (.tsp) or coordinate CSV file, or a directory of them.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and write it to a model file.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Model family: rr|spore|nn|gp|pp|rt|rf
        #[arg(long)]
        model: String,
        /// Censored-run handling: drop|uncensored|sh-mean|sh-sample
        #[arg(long, default_value = "uncensored")]
        censoring: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Hyperparameter overrides as name=value (repeatable).
        #[arg(long = "param", value_parser = parse_key_value)]
        params: Vec<(String, f64)>,
    },
    /// Predict with a trained model on query rows.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// CSV whose header matches the model's predictor columns.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a cross-validation or quadrant experiment from a config file.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's protocol: cv:k or quadrant[:n].
        #[arg(long)]
        protocol: Option<String>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tune a family's hyperparameters by inner 2-fold CV RMSE.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        /// Model family: rr|spore|nn|gp|pp|rt|rf
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Objective evaluation budget (the default point included).
        #[arg(long, default_value_t = 30)]
        budget: usize,
        /// Optional JSON output for the tuning result.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_key_value(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got '{}'", s))?;
    let value: f64 = v.parse().map_err(|_| format!("bad value in '{}'", s))?;
    Ok((k.to_string(), value))
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    match &cli.command {
        Command::Features { input, out, seed } => commands::cmd_features(input, out, *seed),
        Command::Train {
            data,
            model,
            censoring,
            out,
            seed,
            params,
        } => commands::cmd_train(&commands::TrainArgs {
            runs: &data.runs,
            features: &data.features,
            space: &data.space,
            configs: &data.configs,
            model,
            censoring,
            out,
            seed: *seed,
            params,
        }),
        Command::Predict {
            model,
            queries,
            out,
        } => commands::cmd_predict(model, queries, out),
        Command::Evaluate {
            config,
            protocol,
            seed,
        } => commands::cmd_evaluate(config, protocol.as_deref(), *seed),
        Command::Tune {
            data,
            model,
            seed,
            budget,
            out,
        } => commands::cmd_tune(&commands::TuneArgs {
            runs: &data.runs,
            features: &data.features,
            space: &data.space,
            configs: &data.configs,
            model,
            seed: *seed,
            budget: *budget,
            out: out.as_deref(),
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("EPM_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
