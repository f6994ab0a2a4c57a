//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use epm::experiment::{run_experiment, ExperimentReport, Protocol};
use epm::metrics::wilcoxon_signed_rank;
use epm::model::{CensoringStrategy, ModelFamily, ModelSpec};
use epm::tsp::{extract_all, feature_names, parse, TspInstance};
use epm::tune::tune_model;

use crate::formats::{
    fmt_f64, read_experiment_config, read_model_file, read_queries, read_run_table,
    write_model_file,
};

fn parse_instance(path: &Path) -> Result<TspInstance> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let inst = match ext.as_str() {
        "tsp" => parse::parse_tsplib(&text),
        "csv" => parse::parse_coord_csv(&text),
        _ => parse::parse_tsplib(&text).or_else(|_| parse::parse_coord_csv(&text)),
    };
    inst.with_context(|| format!("while parsing {}", path.display()))
}

pub fn cmd_features(input: &Path, out: &Path, seed: u64) -> Result<()> {
    let mut files: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(input)
            .with_context(|| format!("cannot list {}", input.display()))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| matches!(e.to_ascii_lowercase().as_str(), "tsp" | "csv"))
                    .unwrap_or(false)
            })
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    if files.is_empty() {
        bail!("no .tsp or .csv instances under {}", input.display());
    }
    files.sort();

    let mut writer = csv::Writer::from_path(out)
        .with_context(|| format!("cannot write {}", out.display()))?;
    let mut header = vec!["instance_id".to_string()];
    header.extend(feature_names());
    writer.write_record(&header)?;
    for file in &files {
        let inst = parse_instance(file)?;
        let row = extract_all(&inst, seed)?;
        let id = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("instance")
            .to_string();
        let mut record = vec![id];
        record.extend(row.values.iter().map(|v| match v {
            Some(x) => fmt_f64(*x),
            None => "NA".to_string(),
        }));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    log::info!("wrote {} feature rows to {}", files.len(), out.display());
    Ok(())
}

pub struct TrainArgs<'a> {
    pub runs: &'a Path,
    pub features: &'a Path,
    pub space: &'a Path,
    pub configs: &'a Path,
    pub model: &'a str,
    pub censoring: &'a str,
    pub out: &'a Path,
    pub seed: u64,
    pub params: &'a [(String, f64)],
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let family = ModelFamily::parse(args.model)?;
    let censoring = CensoringStrategy::parse(args.censoring)?;
    let table = read_run_table(args.runs, args.features, args.space, args.configs)?;
    let dataset = table.dataset()?;
    let mut spec = ModelSpec::new(family, args.seed);
    for (k, v) in args.params {
        spec.set_hyper(k, *v)?;
    }
    let model = spec.fit_with_censoring(&dataset, censoring)?;
    write_model_file(args.out, &model, &table.space)?;
    println!(
        "trained {} on n={} runs, p={} predictor columns ({} parameters, {} features); model written to {}",
        family.name(),
        dataset.n_rows(),
        dataset.n_cols(),
        table.space.len(),
        table.features.names.len(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_predict(model_path: &Path, queries: &Path, out: &Path) -> Result<()> {
    let (model, space) = read_model_file(model_path)?;
    let rows = read_queries(queries, &model, &space)?;
    let mut writer = csv::Writer::from_path(out)
        .with_context(|| format!("cannot write {}", out.display()))?;
    writer.write_record(["mean", "variance"])?;
    for row in &rows {
        let p = model.predict(row)?;
        writer.write_record([fmt_f64(p.mean), fmt_f64(p.variance)])?;
    }
    writer.flush()?;
    println!("wrote {} predictions to {}", rows.len(), out.display());
    Ok(())
}

fn write_fold_csv(path: &Path, report: &ExperimentReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    writer.write_record(["label", "rmse", "cc", "ll", "n_points", "error"])?;
    for fold in &report.folds {
        match &fold.report {
            Ok(r) => writer.write_record([
                fold.label.clone(),
                fmt_f64(r.rmse),
                fmt_f64(r.cc),
                fmt_f64(r.ll),
                r.n_points.to_string(),
                String::new(),
            ])?,
            Err(e) => writer.write_record([
                fold.label.clone(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ])?,
        }
    }
    if let Some(mean) = &report.mean {
        writer.write_record([
            "mean".to_string(),
            fmt_f64(mean.rmse),
            fmt_f64(mean.cc),
            fmt_f64(mean.ll),
            mean.n_points.to_string(),
            String::new(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn text_table(reports: &[ExperimentReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<10} {:<30} {:>12} {:>10} {:>14} {:>8}\n",
        "model", "fold", "rmse", "cc", "ll", "n"
    ));
    for report in reports {
        for fold in &report.folds {
            match &fold.report {
                Ok(r) => out.push_str(&format!(
                    "{:<10} {:<30} {:>12.5} {:>10.5} {:>14.4} {:>8}\n",
                    report.model, fold.label, r.rmse, r.cc, r.ll, r.n_points
                )),
                Err(e) => out.push_str(&format!(
                    "{:<10} {:<30} error: {}\n",
                    report.model, fold.label, e
                )),
            }
        }
        if let Some(m) = &report.mean {
            out.push_str(&format!(
                "{:<10} {:<30} {:>12.5} {:>10.5} {:>14.4} {:>8}\n",
                report.model, "mean", m.rmse, m.cc, m.ll, m.n_points
            ));
        }
        out.push('\n');
    }
    out
}

pub fn cmd_evaluate(
    config_path: &Path,
    protocol_override: Option<&str>,
    seed_override: Option<u64>,
) -> Result<()> {
    let mut config = read_experiment_config(config_path)?;
    if let Some(p) = protocol_override {
        config.protocol = parse_protocol(p)?;
    }
    if let Some(s) = seed_override {
        config.seed = s;
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base.join(path)
        }
    };
    let table = read_run_table(
        &resolve(&config.runs),
        &resolve(&config.features),
        &resolve(&config.space),
        &resolve(&config.configs),
    )?;
    let censoring = CensoringStrategy::parse(&config.censoring)?;
    let out_dir = resolve(&config.out_dir);
    fs::create_dir_all(&out_dir)?;

    let mut reports = Vec::new();
    for mc in &config.models {
        let family = ModelFamily::parse(&mc.family)?;
        let mut spec = ModelSpec::new(family, config.seed);
        let mut keys: Vec<&String> = mc.params.keys().collect();
        keys.sort();
        for k in keys {
            spec.set_hyper(k, mc.params[k])?;
        }
        let report = run_experiment(
            &table,
            &spec,
            censoring,
            &config.protocol,
            config.seed,
            config.ll_density_correct,
        )?;
        write_fold_csv(&out_dir.join(format!("{}_folds.csv", family.name())), &report)?;
        reports.push(report);
    }

    let mut text = text_table(&reports);

    // paired significance tests over fold RMSEs for each model pair
    if reports.len() >= 2 {
        let mut sig = csv::Writer::from_path(out_dir.join("significance.csv"))?;
        sig.write_record(["model_a", "model_b", "metric", "w_statistic", "p_value"])?;
        text.push_str("paired signed-rank tests (fold RMSE):\n");
        for i in 0..reports.len() {
            for j in i + 1..reports.len() {
                let (a, b): (Vec<f64>, Vec<f64>) = reports[i]
                    .folds
                    .iter()
                    .zip(&reports[j].folds)
                    .filter_map(|(fa, fb)| match (&fa.report, &fb.report) {
                        (Ok(ra), Ok(rb)) => Some((ra.rmse, rb.rmse)),
                        _ => None,
                    })
                    .unzip();
                let (w, p) = wilcoxon_signed_rank(&a, &b)?;
                sig.write_record([
                    reports[i].model.clone(),
                    reports[j].model.clone(),
                    "rmse".to_string(),
                    fmt_f64(w),
                    fmt_f64(p),
                ])?;
                text.push_str(&format!(
                    "  {} vs {}: W = {}, p = {:.4}\n",
                    reports[i].model, reports[j].model, w, p
                ));
            }
        }
        sig.flush()?;
    }

    fs::write(out_dir.join("report.txt"), &text)?;
    print!("{}", text);
    Ok(())
}

pub struct TuneArgs<'a> {
    pub runs: &'a Path,
    pub features: &'a Path,
    pub space: &'a Path,
    pub configs: &'a Path,
    pub model: &'a str,
    pub seed: u64,
    pub budget: usize,
    pub out: Option<&'a Path>,
}

pub fn cmd_tune(args: &TuneArgs) -> Result<()> {
    let family = ModelFamily::parse(args.model)?;
    let table = read_run_table(args.runs, args.features, args.space, args.configs)?;
    let dataset = table.dataset()?;
    let spec = ModelSpec::new(family, args.seed);
    let outcome = tune_model(&spec, &dataset, None, args.seed, args.budget)?;
    println!(
        "tuned {} in {} objective evaluations; inner 2-fold CV RMSE {} (default {})",
        family.name(),
        outcome.evaluations,
        fmt_f64(outcome.best_objective),
        fmt_f64(outcome.default_objective)
    );
    for (name, value) in outcome.names.iter().zip(&outcome.values) {
        println!("  {} = {}", name, fmt_f64(*value));
    }
    if let Some(out) = args.out {
        fs::write(out, serde_json::to_vec_pretty(&outcome)?)?;
        println!("tuning result written to {}", out.display());
    }
    Ok(())
}

/// Protocol parser for the CLI flag form `cv:k` or `quadrant[:n]`.
pub fn parse_protocol(text: &str) -> Result<Protocol> {
    if let Some(rest) = text.strip_prefix("cv:") {
        let k: usize = rest.parse().with_context(|| format!("bad fold count '{}'", rest))?;
        return Ok(Protocol::Cv { k });
    }
    if text == "cv" {
        return Ok(Protocol::Cv { k: 10 });
    }
    if text == "quadrant" {
        return Ok(Protocol::Quadrant { train_points: None });
    }
    if let Some(rest) = text.strip_prefix("quadrant:") {
        let n: usize = rest.parse().with_context(|| format!("bad train point count '{}'", rest))?;
        return Ok(Protocol::Quadrant {
            train_points: Some(n),
        });
    }
    bail!("unknown protocol '{}', expected cv:k or quadrant", text)
}
