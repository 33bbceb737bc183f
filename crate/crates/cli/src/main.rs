use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use volaforge::error::Error;
use volaforge::harness::{run_forecasts, ForecastTable};
use volaforge::pipeline::{self, RunConfig, SimulateSection};
use volaforge::sim::{JumpModel, SimConfig, VolModel};

/// Realized-volatility forecasting pipeline.
#[derive(Parser, Debug)]
#[command(name = "volaforge", version, about)]
struct Cli {
    /// Worker threads (default: number of logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log level filter, e.g. info or debug.
    #[arg(long, global = true, default_value = "warn")]
    log: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate intraday price paths and write realized measures and covariates.
    Simulate(SimulateArgs),
    /// Write the standardized design matrices.
    Features(Common),
    /// Produce out-of-sample forecasts.
    Forecast(ForecastArgs),
    /// Relative MSE, Diebold-Mariano tests, model confidence set and deciles.
    Evaluate(EvaluateArgs),
    /// ALE curves, variable importance and fitted-series ACF.
    #[command(alias = "explain")]
    Ale(Common),
    /// VaR by filtered historical simulation with coverage backtests.
    Var(VarArgs),
    /// Run every stage listed in the configuration.
    Run(Common),
}

/// Options shared by the commands that read a configuration.
#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding <asset>/realized.csv and covariate files.
    #[arg(long)]
    data: Option<PathBuf>,
    /// m_har or m_all.
    #[arg(long)]
    dataset: Option<String>,
    /// day, week or month.
    #[arg(long)]
    horizon: Option<String>,
    /// 70-10-20 or fixed-<n>.
    #[arg(long)]
    split: Option<String>,
    /// Comma-separated model ids, or "all".
    #[arg(long)]
    models: Option<String>,
    /// Output directory.
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Overrides VOLAFORGE_SEED and the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated asset names.
    #[arg(long, default_value = "SIM1,SIM2")]
    assets: String,
    #[arg(long, default_value_t = 1500)]
    days: usize,
    #[arg(long, default_value_t = 78)]
    n_per_day: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output data directory.
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    #[command(flatten)]
    common: Common,
    /// Forecast CSV to write (default <out-dir>/forecasts.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    forecasts: PathBuf,
    #[arg(long = "out-dir", default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct VarArgs {
    #[command(flatten)]
    common: Common,
    /// One-day forecast CSV.
    #[arg(long)]
    forecasts: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    /// Days of standardized residuals behind each VaR.
    #[arg(long)]
    window: Option<usize>,
}

fn base_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = base_config(common.config.as_deref())?;
    cfg.apply_env()?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.data {
        cfg.data_dir = Some(d.clone());
        cfg.simulate = None;
    }
    if let Some(v) = &common.dataset {
        cfg.dataset = v.clone();
    }
    if let Some(v) = &common.horizon {
        cfg.horizon = v.clone();
    }
    if let Some(v) = &common.split {
        cfg.split = v.clone();
    }
    if let Some(v) = &common.models {
        cfg.models = v.split(',').map(|s| s.trim().to_string()).collect();
    }
    if let Some(v) = &common.out_dir {
        cfg.output_dir = v.clone();
    }
    Ok(cfg)
}

fn only_stage(mut cfg: RunConfig, stage: &str) -> RunConfig {
    cfg.stages = vec![stage.to_string()];
    cfg
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

fn default_process(days: usize, n_per_day: usize) -> SimConfig {
    SimConfig {
        days,
        n_per_day,
        mu: 0.0,
        vol_model: VolModel::SquareRoot { kappa: 0.05, theta: 1e-4, xi: 0.002 },
        jump: Some(JumpModel { intensity: 0.05, size_std: 0.01 }),
        seed: 0,
        forced_jumps: Vec::new(),
        start_date: "2001-01-29".into(),
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate(a) => {
            let mut cfg = base_config(a.config.as_deref())?;
            cfg.apply_env()?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let section = cfg.simulate.clone().unwrap_or_else(|| SimulateSection {
                assets: a.assets.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
                process: default_process(a.days, a.n_per_day),
            });
            cfg.simulate = Some(section.clone());
            cfg.data_dir = None;
            let r = cfg.resolve()?;
            let assets = pipeline::simulate_data(&section, cfg.seed)?;
            pipeline::write_data(&assets, &a.out, &r.header())?;
            println!("{}", a.out.display());
        }
        Command::Features(c) => {
            let r = only_stage(apply(&c)?, "features").resolve()?;
            let assets = pipeline::obtain_data(&r)?;
            print_files(&pipeline::stage_features(&r, &assets)?);
        }
        Command::Forecast(f) => {
            let r = only_stage(apply(&f.common)?, "forecast").resolve()?;
            let assets = pipeline::obtain_data(&r)?;
            let table = run_forecasts(&assets, &r.models, r.dataset, r.target(), r.split, &r.harness())?;
            let out = f.out.unwrap_or_else(|| r.out("forecasts.csv"));
            if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            table.write_csv(&out, Some(&r.header()))?;
            if table.missing() > 0 {
                log::warn!("{} forecast cells are missing", table.missing());
            }
            println!("{}", out.display());
        }
        Command::Evaluate(e) => {
            let mut cfg = base_config(e.config.as_deref())?;
            cfg.apply_env()?;
            if let Some(s) = e.seed {
                cfg.seed = s;
            }
            if let Some(v) = e.level {
                cfg.evaluation.level = v;
            }
            if let Some(v) = e.reps {
                cfg.evaluation.bootstrap_reps = v;
            }
            if let Some(v) = e.benchmark {
                cfg.evaluation.benchmark = v;
            }
            let table = ForecastTable::read_csv(&e.forecasts)?;
            if let Some(rec) = table.records.first() {
                cfg.horizon = rec.horizon.to_string();
            }
            cfg.output_dir = e.out_dir.clone();
            cfg.stages = vec!["evaluate".into()];
            let r = cfg.resolve_with(false)?;
            fs::create_dir_all(&e.out_dir)?;
            pipeline::stage_evaluate(&r, &table)?;
            print_files(&["relmse.csv", "mcs.csv", "mcs_detail.csv"].map(|f| r.out(f)));
        }
        Command::Ale(c) => {
            let r = only_stage(apply(&c)?, "ale").resolve()?;
            let assets = pipeline::obtain_data(&r)?;
            pipeline::stage_ale(&r, &assets)?;
            println!("{}", r.out("ale").display());
        }
        Command::Var(v) => {
            let mut cfg = only_stage(apply(&v.common)?, "var");
            if let Some(a) = v.alpha {
                cfg.var.alpha = a;
            }
            if let Some(w) = v.window {
                cfg.var.window = Some(w);
            }
            let r = cfg.resolve()?;
            fs::create_dir_all(&r.config.output_dir)?;
            let assets = pipeline::obtain_data(&r)?;
            let table = ForecastTable::read_csv(&v.forecasts)?;
            pipeline::stage_var(&r, &assets, &table)?;
            println!("{}", r.out("var.csv").display());
        }
        Command::Run(c) => {
            let cfg = apply(&c)?;
            let summary = pipeline::run(&cfg)?;
            print_files(&summary.files);
            if summary.missing_forecasts > 0 {
                log::warn!("{} forecast cells are missing", summary.missing_forecasts);
            }
        }
    }
    Ok(())
}

/// Configuration and validation errors exit with 2, everything else with 1.
fn report(e: &Error) -> ExitCode {
    let (code, body) = match e {
        Error::UnknownModels { bad, roster } => {
            (2, json!({"error": "unknown_model", "message": e.to_string(), "unknown": bad, "valid_models": roster}))
        }
        Error::ConfigProblems(p) => (2, json!({"error": "invalid_config", "message": e.to_string(), "problems": p})),
        Error::Config(_) | Error::Parse { .. } => (2, json!({"error": "invalid_config", "message": e.to_string()})),
        _ => (1, json!({"error": "failed", "message": e.to_string()})),
    };
    eprintln!("{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp(None).init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
