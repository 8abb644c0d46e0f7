use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geokan::experiment::{
    count_table, exit_code, preset, run_experiment, Experiment, ExperimentConfig, RunSummary, EXIT_ABORTED,
};
use geokan::refsolve::{cache_dir_from_env, FieldCache};
use geokan::{Error, Result};

#[derive(Parser)]
#[command(name = "geokan", version, about = "Geometry-aware KAN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one benchmark target.
    Fit(RunArgs),
    /// Train a physics-informed model on a case study.
    Solve(RunArgs),
    /// Run the curve-fitting benchmark suite.
    Suite(SuiteArgs),
    /// Run derivative self-checks.
    Check(CheckArgs),
    /// Print parameter counts of a preset's models.
    Count {
        #[arg(long, default_value = "table2")]
        preset: String,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "config")]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory [default: runs/<config name>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SuiteArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Skip cells not started within this many seconds.
    #[arg(long)]
    time_budget: Option<f64>,
}

#[derive(Args)]
struct CheckArgs {
    /// Finite-difference check of every layer kind on every problem loss.
    #[arg(long)]
    gradients: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Fit,
    Solve,
    Suite,
}

fn load(args: &RunArgs, kind: Kind) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(name), _) => preset(name, args.model.as_deref())?,
        (None, Some(path)) => ExperimentConfig::from_path(path)?,
        (None, None) => return Err(Error::Config("either --preset or --config is required".into())),
    };
    let matches = matches!(
        (&cfg.experiment, kind),
        (Experiment::Fit { .. }, Kind::Fit) | (Experiment::Solve { .. }, Kind::Solve) | (Experiment::Suite { .. }, Kind::Suite)
    );
    if !matches {
        return Err(Error::Config(format!("'{}' is not a {} experiment", cfg.name, kind_name(kind))));
    }
    cfg.apply_overrides(args.seed, args.epochs)?;
    Ok(cfg)
}

fn kind_name(kind: Kind) -> &'static str {
    match kind {
        Kind::Fit => "fit",
        Kind::Solve => "solve",
        Kind::Suite => "suite",
    }
}

fn out_dir(out: &Option<PathBuf>, name: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| Path::new("runs").join(name))
}

fn execute(cfg: &ExperimentConfig, out: &Option<PathBuf>) -> Result<RunSummary> {
    let dir = out_dir(out, &cfg.name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let cache = cache_dir_from_env().map(FieldCache::new);
    let summary = run_experiment(cfg, &dir, cache.as_ref())?;
    for line in &summary.lines {
        println!("{line}");
    }
    println!("artifacts written to {}", dir.display());
    Ok(summary)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let summary = match cli.command {
        Command::Fit(args) => execute(&load(&args, Kind::Fit)?, &args.out)?,
        Command::Solve(args) => execute(&load(&args, Kind::Solve)?, &args.out)?,
        Command::Suite(args) => {
            let mut run = args.run;
            if run.preset.is_none() && run.config.is_none() {
                run.preset = Some("table2".into());
            }
            let mut cfg = load(&run, Kind::Suite)?;
            if let Experiment::Suite { suite } = &mut cfg.experiment {
                if let Some(w) = args.workers {
                    suite.workers = w;
                }
                if args.time_budget.is_some() {
                    suite.time_budget_s = args.time_budget;
                }
            }
            execute(&cfg, &run.out)?
        }
        Command::Check(args) => {
            if !args.gradients {
                return Err(Error::Config("nothing to check; pass --gradients".into()));
            }
            let cfg = ExperimentConfig {
                version: geokan::experiment::CONFIG_VERSION,
                name: "check".into(),
                experiment: Experiment::Check { seed: args.seed },
            };
            execute(&cfg, &args.out)?
        }
        Command::Count { preset } => {
            let rows = count_table(&preset)?;
            println!("{:<16} {:<52} {:>8}", "model", "architecture", "params");
            for r in rows {
                println!("{:<16} {:<52} {:>8}", r.model, r.architecture, r.params);
            }
            return Ok(ExitCode::SUCCESS);
        }
    };
    if summary.aborted.is_some() {
        return Ok(ExitCode::from(EXIT_ABORTED as u8));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
