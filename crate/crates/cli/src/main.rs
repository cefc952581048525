use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ifa_core::c2st::{
    count_parameters, rfi, run_c2st, C2stRun, ClassifierKind, KnnConfig, NeuralConfig, SyntheticSource,
};
use ifa_core::error::{IfaError, Result};
use ifa_core::grm::{sample_responses, zero_factor_mle, GeneratingModel, ModelSpec, ResponseMatrix};
use ifa_core::io::{
    load_fit, load_responses, load_spec, read_json, responses_to_csv, save_results, timestamp, write_atomic,
    write_json, ResponseOptions, RunManifest,
};
use ifa_core::iwave::{fit, FitConfig, FitResult};
use ifa_core::rng::derive_seed;
use ifa_core::sim::{run_study, write_long_csv, StudyConfig};
use log::{info, warn};
use serde_json::json;

const OUTPUT_ROOT_VAR: &str = "IFA_OUTPUT_ROOT";

/// Confirmatory item factor analysis with importance-weighted variational
/// inference and classifier two-sample goodness-of-fit tests.
#[derive(Parser, Debug)]
#[command(name = "ifa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a graded response model to a response matrix.
    Fit(FitArgs),
    /// Sample response patterns from a fitted or generating model.
    Simulate(SimulateArgs),
    /// Goodness-of-fit diagnostics for a fitted model.
    Gof {
        #[command(subcommand)]
        test: GofCommand,
    },
    /// Run a simulation study.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory [default: $IFA_OUTPUT_ROOT/<command>-<time>]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV of integer category codes, one row per respondent.
    #[arg(long)]
    data: PathBuf,
    /// Codes in the file run 1..K instead of 0..K-1.
    #[arg(long)]
    one_based: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON model spec.
    #[arg(long)]
    spec: PathBuf,
    /// JSON fit configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Importance samples per observation (R).
    #[arg(long)]
    iw_samples: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Fit result (fit.json) or generating-model JSON.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Classifier {
    Knn,
    Nn,
}

#[derive(Args, Debug)]
struct GofArgs {
    /// Fit result (fit.json).
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = Classifier::Nn)]
    classifier: Classifier,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train the KNN on this fraction of the training rows.
    #[arg(long)]
    knn_subsample: Option<f64>,
    /// Fixed neural weight decay instead of tuning over the grid.
    #[arg(long)]
    weight_decay: Option<f64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Subcommand, Debug)]
enum GofCommand {
    /// Exact (delta = 0) or approximate classifier two-sample test.
    C2st {
        #[command(flatten)]
        common: GofArgs,
        #[arg(long, default_value_t = 0.0)]
        delta: f64,
        /// Also write per-observation class probabilities.
        #[arg(long)]
        probabilities: bool,
    },
    /// Relative fit index against the zero-factor baseline.
    Rfi {
        #[command(flatten)]
        common: GofArgs,
    },
    /// Per-item permutation importances.
    Pi {
        #[command(flatten)]
        common: GofArgs,
        /// Shuffles per item.
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Study {
    Recovery,
    UniformCalibration,
    Misspecification,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    study: Study,
    /// JSON study configuration.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads [default: all cores].
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

fn output_dir(out: &OutArgs, command: &str) -> PathBuf {
    if let Some(dir) = &out.out {
        return dir.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("ifa-output"));
    let stamp = timestamp().replace([':', '.'], "-");
    root.join(format!("{command}-{stamp}"))
}

fn args_vec() -> Vec<String> {
    std::env::args().collect()
}

fn load_data(args: &DataArgs, categories: Option<Vec<usize>>) -> Result<ResponseMatrix> {
    let data = load_responses(
        &args.data,
        &ResponseOptions {
            one_based: args.one_based,
            categories,
        },
    )?;
    info!(
        "loaded {} rows x {} items from {}",
        data.n_rows(),
        data.n_items(),
        args.data.display()
    );
    Ok(data)
}

fn run_fit(a: &FitArgs) -> Result<()> {
    let loaded = load_spec(&a.spec)?;
    for w in &loaded.warnings {
        warn!("{}: {w}", a.spec.display());
    }
    let spec = loaded.spec;
    let data = load_data(&a.data, Some(spec.categories.clone()))?;
    let mut cfg: FitConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => FitConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.iw_samples {
        cfg.iw_samples = r;
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = Some(lr);
    }
    if let Some(m) = a.max_steps {
        cfg.max_steps = m;
    }
    cfg.validate()?;
    let dir = output_dir(&a.out, "fit");
    let manifest = RunManifest::start(
        "fit",
        args_vec(),
        json!({
            "data": a.data.data,
            "one_based": a.data.one_based,
            "spec": spec,
            "fit": cfg,
        }),
        Some(cfg.seed),
    );
    let result = fit(&data, &spec, &cfg)?;
    info!(
        "fit finished after {} steps ({}), final IW-ELBO {:?}",
        result.steps,
        if result.converged { "converged" } else { "step limit" },
        result.trace.last()
    );
    let outputs = save_results(&result, &dir)?;
    manifest.finish(&dir, &outputs)?;
    println!("{}", dir.display());
    Ok(())
}

/// A fit result or a bare generating model.
fn load_generator(path: &Path) -> Result<GeneratingModel> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("params").is_some() {
        Ok(serde_json::from_value::<FitResult>(value)?.generating_model())
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

fn run_simulate(a: &SimulateArgs) -> Result<()> {
    let model = load_generator(&a.model)?;
    let dir = output_dir(&a.out, "simulate");
    let manifest = RunManifest::start(
        "simulate",
        args_vec(),
        json!({ "model": a.model, "n": a.n, "seed": a.seed }),
        Some(a.seed),
    );
    let data = sample_responses(&model, a.n, a.seed)?;
    let path = dir.join("responses.csv");
    write_atomic(&path, &responses_to_csv(&data)?)?;
    manifest.finish(&dir, &[path.clone()])?;
    println!("{}", path.display());
    Ok(())
}

fn classifier_kind(a: &GofArgs) -> ClassifierKind {
    match a.classifier {
        Classifier::Knn => ClassifierKind::Knn(KnnConfig {
            k: None,
            subsample: a.knn_subsample,
        }),
        Classifier::Nn => ClassifierKind::Neural(NeuralConfig {
            weight_decays: a
                .weight_decay
                .map(|w| vec![w])
                .unwrap_or_else(|| NeuralConfig::default().weight_decays),
            ..NeuralConfig::default()
        }),
    }
}

fn gof_setup(a: &GofArgs) -> Result<(FitResult, ResponseMatrix)> {
    let result = load_fit(&a.model)?;
    let data = load_data(&a.data, Some(result.spec.categories.clone()))?;
    Ok((result, data))
}

fn gof_config(a: &GofArgs, extra: serde_json::Value) -> serde_json::Value {
    let mut v = json!({
        "model": a.model,
        "data": a.data.data,
        "one_based": a.data.one_based,
        "classifier": classifier_kind(a),
        "seed": a.seed,
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
        obj.extend(more);
    }
    v
}

fn c2st_json(run: &C2stRun) -> serde_json::Value {
    json!({
        "acc": run.outcome.acc,
        "p_value": run.outcome.p_value,
        "delta": run.outcome.delta,
        "n_test": run.outcome.n_test,
    })
}

fn run_gof(test: &GofCommand) -> Result<()> {
    match test {
        GofCommand::C2st {
            common,
            delta,
            probabilities,
        } => {
            let (result, data) = gof_setup(common)?;
            let dir = output_dir(&common.out, "gof-c2st");
            let manifest = RunManifest::start(
                "gof c2st",
                args_vec(),
                gof_config(common, json!({ "delta": delta })),
                Some(common.seed),
            );
            let run = run_c2st(&result, &data, &classifier_kind(common), *delta, common.seed)?;
            let mut report = c2st_json(&run);
            report["classifier"] = json!(common.classifier.to_possible_value().map(|v| v.get_name().to_string()));
            let mut outputs = vec![dir.join("c2st.json")];
            write_json(&outputs[0], &report)?;
            if *probabilities {
                let mut w = String::from("pooled_row,label,probability\n");
                for ((i, l), p) in run
                    .split
                    .test_index
                    .iter()
                    .zip(&run.outcome.labels)
                    .zip(&run.outcome.probabilities)
                {
                    w.push_str(&format!("{i},{l},{p:?}\n"));
                }
                let path = dir.join("probabilities.csv");
                write_atomic(&path, w.as_bytes())?;
                outputs.push(path);
            }
            manifest.finish(&dir, &outputs)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        GofCommand::Rfi { common } => {
            let (result, data) = gof_setup(common)?;
            let dir = output_dir(&common.out, "gof-rfi");
            let manifest = RunManifest::start("gof rfi", args_vec(), gof_config(common, json!({})), Some(common.seed));
            let kind = classifier_kind(common);
            // Proposed and baseline tests use independent splits.
            let prop = run_c2st(&result, &data, &kind, 0.0, derive_seed(common.seed, &[0]))?;
            let baseline = zero_factor_mle(&data)?;
            let base = run_c2st(
                &baseline as &dyn SyntheticSource,
                &data,
                &kind,
                0.0,
                derive_seed(common.seed, &[1]),
            )?;
            let m_base = count_parameters(&ModelSpec::zero_factor(data.categories().to_vec())?);
            let out = rfi(
                prop.outcome.acc,
                base.outcome.acc,
                count_parameters(&result.spec),
                m_base,
            )?;
            let report = json!({
                "rfi": out.rfi,
                "acc_prop": out.acc_prop,
                "acc_base": out.acc_base,
                "m_prop": out.m_prop,
                "m_base": out.m_base,
                "proposed": c2st_json(&prop),
                "baseline": c2st_json(&base),
            });
            let path = dir.join("rfi.json");
            write_json(&path, &report)?;
            manifest.finish(&dir, &[path])?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        GofCommand::Pi { common, reps } => {
            let (result, data) = gof_setup(common)?;
            let dir = output_dir(&common.out, "gof-pi");
            let manifest = RunManifest::start(
                "gof pi",
                args_vec(),
                gof_config(common, json!({ "reps": reps })),
                Some(common.seed),
            );
            let run = run_c2st(&result, &data, &classifier_kind(common), 0.0, common.seed)?;
            let importance = run.permutation_importance(*reps, derive_seed(common.seed, &[9]))?;
            let report = json!({
                "acc": run.outcome.acc,
                "reps": reps,
                "importance": importance,
            });
            let path = dir.join("importance.json");
            write_json(&path, &report)?;
            manifest.finish(&dir, &[path])?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn run_experiment(a: &ExperimentArgs) -> Result<()> {
    let mut value: serde_json::Value = read_json(&a.config)?;
    let tag = match a.study {
        Study::Recovery => "recovery",
        Study::UniformCalibration => "uniform_calibration",
        Study::Misspecification => "misspecification",
    };
    match value.as_object_mut() {
        Some(obj) => {
            if let Some(existing) = obj.get("study").and_then(|s| s.as_str()) {
                if existing != tag {
                    return Err(IfaError::InvalidArgument(format!(
                        "config is for study '{existing}' but --study is '{tag}'"
                    )));
                }
            }
            obj.insert("study".into(), json!(tag));
        }
        None => return Err(IfaError::InvalidArgument("study config must be a JSON object".into())),
    }
    let config: StudyConfig = serde_json::from_value(value)?;
    config.validate()?;
    let dir = output_dir(&a.out, "experiment");
    let manifest = RunManifest::start(
        "experiment",
        args_vec(),
        json!({ "study": config, "jobs": a.jobs }),
        Some(config.seed()),
    );
    let report = run_study(&config, a.jobs)?;
    let json_path = dir.join("report.json");
    write_json(&json_path, &report)?;
    let csv_path = dir.join("report.csv");
    write_atomic(&csv_path, &write_long_csv(&report.long_rows())?)?;
    manifest.finish(&dir, &[json_path, csv_path])?;
    println!("{}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Gof { test } => run_gof(test),
        Command::Experiment(a) => run_experiment(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
