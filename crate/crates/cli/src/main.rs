//! `nonwoven`: simulate, build campaigns, train and evaluate surrogates,
//! explore the process space and serve the explorer API.
//!
//! Machine-readable results go to stdout or files, diagnostics to stderr.
//! Exit codes: 0 success, 1 validation, 2 runtime, 3 I/O.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use nonwoven::dataset::{
    expert_grid, grouped_split, latin_hypercube, read_csv, run_campaign, uniform_levels, write_atomic, CampaignDataset,
    CampaignPlan, CampaignStore, LaydownSimulator, RunOptions, Split,
};
use nonwoven::explore::{self, ExploreRequest, ObjectiveSpec, Strategy};
use nonwoven::homogeneity::{deposit_profile, render_image, BASE_RESOLUTION_MM};
use nonwoven::laydown::{deposit_sample, LaydownConfig};
use nonwoven::params::{ParamRanges, ProcessParams, SampleWindow};
use nonwoven::surrogates::{self, Family, FamilySpec, ModelSpec, Scaling};
use nonwoven::{Error, ErrorKind, Result};

use config::{merge, required};

#[derive(Parser)]
#[command(name = "nonwoven", version, about = "Fiber laydown simulation and surrogate-based process exploration")]
struct Cli {
    /// JSON config file; its section for the subcommand supplies defaults
    /// that explicit flags override
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one nonwoven and write its image and CV profile
    Simulate(SimulateArgs),
    /// Simulate a design of settings with replicates into a CSV campaign
    Campaign(CampaignArgs),
    /// Fit a surrogate on a campaign CSV
    Train(TrainArgs),
    /// Score a saved surrogate on one split of a campaign
    Evaluate(EvaluateArgs),
    /// Search the process space with a saved surrogate
    Explore(ExploreArgs),
    /// Run the explorer HTTP service
    Serve(ServeArgs),
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct SimulateArgs {
    /// Primary laydown standard deviation sigma1 [mm]
    #[arg(long, value_name = "MM")]
    sigma1: Option<f64>,
    /// Secondary laydown standard deviation sigma2 [mm]
    #[arg(long, value_name = "MM")]
    sigma2: Option<f64>,
    /// Noise amplitude A of the fiber path [dimensionless]
    #[arg(long = "A", value_name = "A")]
    #[serde(rename = "A")]
    a: Option<f64>,
    /// Belt-to-spinning speed ratio v [dimensionless]
    #[arg(long, value_name = "RATIO")]
    v: Option<f64>,
    /// Spinning positions per metre of cross direction n [1/m]
    #[arg(long, value_name = "PER_M")]
    n: Option<f64>,
    /// Point spacing along a fiber ds [mm]; omit for the simulator default
    #[arg(long, value_name = "MM")]
    ds: Option<f64>,
    /// Sample window MACHINExCROSS [mm] [default: 50x50]
    #[arg(long, value_name = "MMxMM")]
    window: Option<String>,
    /// Random seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for nonwoven.pgm (0.5 mm pixels) and profile.json
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct CampaignArgs {
    /// Design: `lhs` (Latin hypercube of --k settings) or `grid` (--levels) [default: lhs]
    #[arg(long)]
    design: Option<String>,
    /// Number of Latin hypercube settings [count]
    #[arg(long, value_name = "COUNT")]
    k: Option<usize>,
    /// Grid levels per parameter, five comma-separated counts (sigma1,sigma2,A,v,n)
    #[arg(long, value_name = "L1,L2,L3,L4,L5")]
    levels: Option<String>,
    /// Replicates per setting [count] [default: 5]
    #[arg(long, value_name = "COUNT")]
    replicates: Option<usize>,
    /// Sample window MACHINExCROSS [mm] [default: 50x50]
    #[arg(long, value_name = "MMxMM")]
    window: Option<String>,
    /// Campaign seed for the design and every replicate [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the grouped train/val/test split [default: 0]
    #[arg(long)]
    split_seed: Option<u64>,
    /// Settings simulated concurrently [threads] [default: all cores]
    #[arg(long, value_name = "THREADS")]
    workers: Option<usize>,
    /// Output directory for campaign.csv and manifest.json; an interrupted
    /// campaign in it is resumed
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct TrainArgs {
    /// Campaign CSV
    #[arg(long, value_name = "CSV")]
    data: Option<PathBuf>,
    /// Model family: linear, svr, polynomial, bayesian, random_forest, mlp [default: mlp]
    #[arg(long)]
    family: Option<String>,
    /// JSON model spec with hyperparameters; replaces --family defaults
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Input scaling: standard or log_standard [default: standard, or the spec's]
    #[arg(long)]
    input: Option<String>,
    /// Target scaling: standard or log_standard [default: standard, or the spec's]
    #[arg(long)]
    target: Option<String>,
    /// Training seed [default: 0, or the spec's]
    #[arg(long)]
    seed: Option<u64>,
    /// Split seed used when the CSV carries no split labels [default: 0]
    #[arg(long)]
    split_seed: Option<u64>,
    /// Model file to write
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Metrics JSON to write (train and validation reports) [default: stdout only]
    #[arg(long, value_name = "FILE")]
    metrics: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct EvaluateArgs {
    /// Model file
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Campaign CSV
    #[arg(long, value_name = "CSV")]
    data: Option<PathBuf>,
    /// Split to score: train, val or test [default: test]
    #[arg(long)]
    split: Option<String>,
    /// Split seed used when the CSV carries no split labels [default: 0]
    #[arg(long)]
    split_seed: Option<u64>,
    /// Output format: json or table [default: json]
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct ExploreArgs {
    /// Model file
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Strategy: grid, random or local [default: random]
    #[arg(long)]
    strategy: Option<String>,
    /// Maximum surrogate evaluations [count] [default: 1000]
    #[arg(long, value_name = "COUNT")]
    budget: Option<usize>,
    /// Seed of the random strategy [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Grid levels per parameter, five comma-separated counts [default: 5,5,5,5,5]
    #[arg(long, value_name = "L1,L2,L3,L4,L5")]
    levels: Option<String>,
    /// Local-search start sigma1,sigma2,A,v,n [mm,mm,-,-,1/m]
    #[arg(long, value_name = "S1,S2,A,V,N")]
    start: Option<String>,
    /// Objective weights of the seven resolutions 0.5..50 mm [default: all 1]
    #[arg(long, value_name = "W1,..,W7")]
    weights: Option<String>,
    /// Allow a local start outside the parameter ranges
    #[arg(long)]
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    extrapolate: bool,
    /// Number of ranked settings to print [count] [default: 10]
    #[arg(long, value_name = "COUNT")]
    top: Option<usize>,
}

#[derive(Args, Serialize, Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
struct ServeArgs {
    /// Model file; without it prediction endpoints answer 503
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Directory for candidates, job images and the event log [default: explorer-store]
    #[arg(long, value_name = "DIR")]
    store: Option<PathBuf>,
    /// Listen address [default: 127.0.0.1:8080]
    #[arg(long, value_name = "ADDR:PORT")]
    bind: Option<String>,
    /// Maximum queued validation simulations [count] [default: 16]
    #[arg(long, value_name = "COUNT")]
    queue_depth: Option<usize>,
    /// Web UI bundle served at /
    #[arg(long, value_name = "DIR")]
    static_dir: Option<PathBuf>,
    /// Window of validation simulations MACHINExCROSS [mm] [default: 50x50]
    #[arg(long, value_name = "MMxMM")]
    window: Option<String>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_list<T: std::str::FromStr, const N: usize>(s: &str, flag: &str) -> Result<[T; N]> {
    let items: Vec<T> = s
        .split(',')
        .map(|t| t.trim().parse::<T>().map_err(|_| invalid(format!("--{flag}: bad value {t:?}"))))
        .collect::<Result<_>>()?;
    items
        .try_into()
        .map_err(|v: Vec<T>| invalid(format!("--{flag}: expected {N} comma-separated values, got {}", v.len())))
}

fn window(s: Option<&str>) -> Result<SampleWindow> {
    s.map_or(Ok(SampleWindow::desk()), SampleWindow::parse)
}

/// Uses the split labels stored in the CSV, or derives them.
fn labelled(path: &Path, split_seed: u64) -> Result<CampaignDataset> {
    let mut ds = read_csv(path)?;
    if ds.rows.iter().any(|r| r.split.is_none()) {
        grouped_split(&mut ds, split_seed)?;
    }
    Ok(ds)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut p = ProcessParams::new(
        required(args.sigma1, "sigma1")?,
        required(args.sigma2, "sigma2")?,
        required(args.a, "A")?,
        required(args.v, "v")?,
        required(args.n, "n")?,
    )?;
    if let Some(ds) = args.ds {
        p = p.with_step_size(ds);
        p.validate()?;
    }
    let win = window(args.window.as_deref())?;
    let out = required(args.out, "out")?;
    let seed = args.seed.unwrap_or(0);
    std::fs::create_dir_all(&out)?;
    let dep = deposit_sample(&p, &win, seed, &LaydownConfig::default(), BASE_RESOLUTION_MM)?;
    let profile = deposit_profile(&dep)?;
    render_image(&dep.grid(BASE_RESOLUTION_MM)?, &out.join("nonwoven.pgm"))?;
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "params": p,
        "window": win,
        "seed": seed,
        "profile": profile,
    }))?;
    write_atomic(&out.join("profile.json"), json.as_bytes())?;
    println!("{json}");
    Ok(())
}

fn campaign(args: CampaignArgs) -> Result<()> {
    let ranges = ParamRanges::default();
    let seed = args.seed.unwrap_or(0);
    let design = args.design.as_deref().unwrap_or("lhs");
    let points = match design {
        "lhs" => latin_hypercube(&ranges, required(args.k, "k")?, seed)?,
        "grid" => {
            let levels: [usize; 5] = parse_list(&required(args.levels.clone(), "levels")?, "levels")?;
            expert_grid(&uniform_levels(&ranges, levels)?)?
        }
        other => return Err(invalid(format!("--design must be lhs or grid, got {other:?}"))),
    };
    let plan = CampaignPlan {
        points,
        window: window(args.window.as_deref())?,
        replicates: args.replicates.unwrap_or(5),
        seed,
        design: match design {
            "lhs" => format!("lhs k={} seed={seed}", args.k.unwrap_or_default()),
            _ => format!("grid levels={}", args.levels.unwrap_or_default()),
        },
    };
    let store = CampaignStore::new(required(args.out, "out")?);
    let options = RunOptions {
        workers: args.workers.unwrap_or(0),
        ..RunOptions::default()
    };
    eprintln!("simulating {} settings x {} replicates", plan.points.len(), plan.replicates);
    let mut ds = run_campaign(&LaydownSimulator::default(), &plan, Some(&store), options)?;
    grouped_split(&mut ds, args.split_seed.unwrap_or(0))?;
    ds.write_csv(&store.csv_path())?;
    let failed = ds.rows.iter().filter(|r| r.outcome.is_err()).count();
    print_json(&serde_json::json!({
        "rows": ds.rows.len(),
        "failed": failed,
        "csv": store.csv_path(),
        "manifest": store.manifest_path(),
    }))
}

fn scaling(s: &str, flag: &str) -> Result<Scaling> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| invalid(format!("--{flag} must be standard or log_standard, got {s:?}")))
}

fn model_spec(args: &TrainArgs) -> Result<ModelSpec> {
    let mut spec = match &args.spec {
        Some(path) => serde_json::from_str::<ModelSpec>(&std::fs::read_to_string(path)?)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?,
        None => {
            let family: Family = args.family.as_deref().unwrap_or("mlp").parse()?;
            ModelSpec::new(FamilySpec::default_for(family), 0)
        }
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(t) = &args.input {
        spec.input = scaling(t, "input")?;
    }
    if let Some(t) = &args.target {
        spec.target = scaling(t, "target")?;
    }
    Ok(spec)
}

fn train(args: TrainArgs) -> Result<()> {
    let spec = model_spec(&args)?;
    let ds = labelled(&required(args.data.clone(), "data")?, args.split_seed.unwrap_or(0))?;
    let out = required(args.out.clone(), "out")?;
    eprintln!("training {} on {} rows", spec.family(), ds.split_rows(Split::Train).len());
    let model = surrogates::train(&spec, &ds)?;
    surrogates::save(&model, &out)?;
    let metrics = serde_json::json!({
        "model": out,
        "spec": spec,
        "train": surrogates::evaluate(&model, &ds, Split::Train)?,
        "val": surrogates::evaluate(&model, &ds, Split::Val)?,
    });
    if let Some(path) = &args.metrics {
        write_atomic(path, serde_json::to_string_pretty(&metrics)?.as_bytes())?;
    }
    print_json(&metrics)
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let model = surrogates::load(&required(args.model, "model")?)?;
    let ds = labelled(&required(args.data, "data")?, args.split_seed.unwrap_or(0))?;
    let split: Split = args.split.as_deref().unwrap_or("test").parse()?;
    let report = surrogates::evaluate(&model, &ds, split)?;
    match args.format.as_deref().unwrap_or("json") {
        "json" => print_json(&report),
        "table" => {
            println!("{} on {} ({} rows)", report.family, report.split, report.rows);
            println!("{:<10} {:>10} {:>12} {:>8}", "output", "MAPE %", "MSE", "R2");
            for (name, s) in &report.per_resolution {
                println!("{name:<10} {:>10.3} {:>12.4e} {:>8.4}", s.mape * 100.0, s.mse, s.r2);
            }
            println!("{:<10} {:>10.3} {:>12.4e} {:>8.4}", "pooled", report.mape * 100.0, report.mse, report.r2);
            println!("train {:.3} s, predict {:.3} us/sample", report.train_seconds, report.predict_microseconds_per_sample);
            Ok(())
        }
        other => Err(invalid(format!("--format must be json or table, got {other:?}"))),
    }
}

fn explore_cmd(args: ExploreArgs) -> Result<()> {
    let model = surrogates::load(&required(args.model, "model")?)?;
    let strategy = match args.strategy.as_deref().unwrap_or("random") {
        "grid" => Strategy::Grid {
            levels: parse_list(args.levels.as_deref().unwrap_or("5,5,5,5,5"), "levels")?,
        },
        "random" => Strategy::Random {
            seed: args.seed.unwrap_or(0),
        },
        "local" => {
            let x: [f64; 5] = parse_list(&required(args.start, "start")?, "start")?;
            Strategy::Local {
                start: Some(ProcessParams::from_array(x)),
            }
        }
        other => return Err(invalid(format!("--strategy must be grid, random or local, got {other:?}"))),
    };
    let objective = match &args.weights {
        Some(w) => ObjectiveSpec {
            weights: parse_list(w, "weights")?,
        },
        None => ObjectiveSpec::default(),
    };
    let req = ExploreRequest {
        strategy,
        budget: args.budget.unwrap_or(1000),
        objective,
        extrapolate: args.extrapolate,
    };
    let mut result = explore::explore(&model, &ParamRanges::default(), &req)?;
    result.results.truncate(args.top.unwrap_or(10));
    print_json(&result)
}

fn serve(args: ServeArgs) -> Result<()> {
    let defaults = nonwoven_service::ServiceConfig::default();
    let cfg = nonwoven_service::ServiceConfig {
        model_path: args.model,
        store_dir: args.store.unwrap_or(defaults.store_dir),
        bind: match &args.bind {
            Some(b) => b.parse().map_err(|_| invalid(format!("--bind: bad address {b:?}")))?,
            None => defaults.bind,
        },
        queue_depth: args.queue_depth.unwrap_or(defaults.queue_depth),
        static_dir: args.static_dir,
        window: window(args.window.as_deref())?,
    };
    if cfg.queue_depth == 0 {
        return Err(invalid("--queue-depth must be at least 1"));
    }
    tokio::runtime::Runtime::new()?.block_on(nonwoven_service::serve(cfg))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Simulate(a) => simulate(merge(&a, cfg, "simulate")?),
        Command::Campaign(a) => campaign(merge(&a, cfg, "campaign")?),
        Command::Train(a) => train(merge(&a, cfg, "train")?),
        Command::Evaluate(a) => evaluate(merge(&a, cfg, "evaluate")?),
        Command::Explore(a) => explore_cmd(merge(&a, cfg, "explore")?),
        Command::Serve(a) => serve(merge(&a, cfg, "serve")?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 1,
                ErrorKind::Runtime => 2,
                ErrorKind::Io => 3,
            })
        }
    }
}
