//! Experiment configurations, presets and artifact export.
//!
//! An [`ExperimentConfig`] is either a built-in preset or a JSON file. It
//! describes one of four runs: a curve fit, a physics-informed solve, the
//! benchmark suite or a gradient check. [`run_experiment`] executes it and
//! writes every artifact to an output directory.

mod check;
mod presets;
mod solve;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use check::{gradient_checks, layer_kinds, small_problem, GradientCheck, FD_STEP};
pub use presets::{epochs, preset, solve_model, solve_model_names, PRESET_NAMES};
pub use solve::{helmholtz_metric_key, run_solve, solution_metrics, write_field_artifacts, SolveRun, DEFAULT_CHUNK};

use crate::bench::{self, BenchModel, SuiteConfig, Target};
use crate::error::{Error, Result};
use crate::layers::{count_params, Model, ModelSpec};
use crate::optim::{RunReport, TrainConfig};
use crate::physics::{ProblemId, ProblemSpec};
use crate::refsolve::FieldCache;

pub const CONFIG_VERSION: u32 = 1;

/// Process exit code for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for aborted training runs.
pub const EXIT_ABORTED: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub name: String,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Supervised fit of one benchmark target.
    Fit { model_name: String, model: ModelSpec, target: Target, samples: usize, train: TrainConfig },
    /// Physics-informed solve of one case study.
    Solve { model_name: String, model: ModelSpec, problem: ProblemSpec, train: TrainConfig },
    /// Every (model, target, seed) cell of the benchmark.
    Suite { suite: SuiteConfig },
    /// Finite-difference gradient checks of every layer kind.
    Check {
        #[serde(default)]
        seed: u64,
    },
}

impl ExperimentConfig {
    /// Reads a JSON config; parse failures are configuration errors.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version)));
        }
        if self.name.trim().is_empty() {
            return Err(Error::Config("config name is empty".into()));
        }
        let as_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        match &self.experiment {
            Experiment::Fit { model, samples, train, .. } => {
                model.validate().map_err(as_config)?;
                train.validate().map_err(as_config)?;
                if model.input_dim() != 1 || model.output_dim() != 1 {
                    return Err(Error::Config("curve fits need a 1→1 model".into()));
                }
                if *samples < 10 {
                    return Err(Error::Config(format!("{samples} samples is too few for a train/test split")));
                }
            }
            Experiment::Solve { model, problem, train, .. } => {
                model.validate().map_err(as_config)?;
                problem.validate().map_err(as_config)?;
                train.validate().map_err(as_config)?;
                if model.input_dim() != problem.input_dim() || model.output_dim() != problem.output_dim() {
                    return Err(Error::Config(format!(
                        "{} needs a {}→{} model",
                        problem.id.name(),
                        problem.input_dim(),
                        problem.output_dim()
                    )));
                }
            }
            Experiment::Suite { suite } => {
                suite.train.validate().map_err(as_config)?;
                if suite.models.is_empty() || suite.targets.is_empty() || suite.seeds.is_empty() {
                    return Err(Error::Config("suite needs at least one model, target and seed".into()));
                }
                if suite.samples < 10 {
                    return Err(Error::Config(format!("{} samples is too few for a train/test split", suite.samples)));
                }
            }
            Experiment::Check { .. } => {}
        }
        Ok(())
    }

    /// Applies command-line overrides. For the suite, a seed replaces the
    /// seed list.
    pub fn apply_overrides(&mut self, seed: Option<u64>, epochs: Option<usize>) -> Result<()> {
        match &mut self.experiment {
            Experiment::Fit { train, .. } | Experiment::Solve { train, .. } => {
                if let Some(s) = seed {
                    train.seed = s;
                }
                if let Some(e) = epochs {
                    train.epochs = e;
                }
            }
            Experiment::Suite { suite } => {
                if let Some(s) = seed {
                    suite.seeds = vec![s];
                }
                if let Some(e) = epochs {
                    suite.train.epochs = e;
                }
            }
            Experiment::Check { seed: s } => {
                if let Some(v) = seed {
                    *s = v;
                }
                if epochs.is_some() {
                    return Err(Error::Config("--epochs does not apply to gradient checks".into()));
                }
            }
        }
        self.validate()
    }
}

/// What a run produced.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub artifacts: Vec<PathBuf>,
    pub metrics: BTreeMap<String, f64>,
    /// Set when training stopped on a non-finite value; artifacts written
    /// up to that point are kept.
    pub aborted: Option<String>,
    /// Human-readable result lines.
    pub lines: Vec<String>,
}

/// Runs `config`, writing artifacts into `out_dir` (created if missing).
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, cache: Option<&FieldCache>) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let config_path = out_dir.join("config.json");
    config.write_json(&config_path)?;
    let mut summary = match &config.experiment {
        Experiment::Fit { model_name, model, target, samples, train } => {
            run_fit(config, model_name, model, *target, *samples, train, out_dir)?
        }
        Experiment::Solve { model_name, model, problem, train } => {
            run_solve_experiment(config, model_name, model, problem, train, out_dir, cache)?
        }
        Experiment::Suite { suite } => run_suite(suite, out_dir)?,
        Experiment::Check { seed } => run_check(*seed, out_dir)?,
    };
    summary.artifacts.insert(0, config_path);
    Ok(summary)
}

fn write_report(report: &RunReport, dir: &Path, summary: &mut RunSummary) -> Result<()> {
    let (json, loss) = (dir.join("report.json"), dir.join("loss.csv"));
    report.write_json(&json)?;
    report.write_loss_csv(&loss)?;
    summary.artifacts.extend([json, loss]);
    summary.metrics.clone_from(&report.test_metrics);
    summary.aborted.clone_from(&report.aborted);
    summary.lines.push(format!(
        "{} parameters, {} epochs, best loss {:.4e} at epoch {}",
        report.param_count, report.epochs_run, report.best_loss, report.best_epoch
    ));
    if let Some(reason) = &report.aborted {
        summary.lines.push(format!("training aborted: {reason}"));
    }
    Ok(())
}

fn run_fit(
    config: &ExperimentConfig,
    model_name: &str,
    spec: &ModelSpec,
    target: Target,
    samples: usize,
    train: &TrainConfig,
    dir: &Path,
) -> Result<RunSummary> {
    let data = bench::make_dataset(target, samples, train.seed)?;
    let mut fit = bench::fit_model(spec, &data, train)?;
    fit.outcome.report.spec = serde_json::to_value(config)?;
    let mut summary = RunSummary::default();
    write_report(&fit.outcome.report, dir, &mut summary)?;
    let pred = fit.model.eval_batch(&fit.outcome.params, &data.x)?;
    let mut split = vec!["train"; data.x.len()];
    for &i in &data.test {
        split[i] = "test";
    }
    let path = dir.join("prediction.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["x", "target", "prediction", "split"])?;
    for i in 0..data.x.len() {
        w.write_record([data.x[i].to_string(), data.y[i].to_string(), pred[i].to_string(), split[i].to_string()])?;
    }
    w.flush()?;
    summary.artifacts.push(path);
    summary.lines.push(format!(
        "{model_name} on {}: train MSE {:.4e}, test MSE {:.4e}",
        target.name(),
        fit.train_mse,
        fit.test_mse
    ));
    Ok(summary)
}

fn run_solve_experiment(
    config: &ExperimentConfig,
    model_name: &str,
    spec: &ModelSpec,
    problem: &ProblemSpec,
    train: &TrainConfig,
    dir: &Path,
    cache: Option<&FieldCache>,
) -> Result<RunSummary> {
    let mut run = run_solve(problem, spec, train, DEFAULT_CHUNK, cache)?;
    run.outcome.report.spec = serde_json::to_value(config)?;
    let mut summary = RunSummary::default();
    write_report(&run.outcome.report, dir, &mut summary)?;
    match write_field_artifacts(&run, &run.outcome.params, dir, DEFAULT_CHUNK) {
        Ok(paths) => summary.artifacts.extend(paths),
        Err(Error::Numeric(msg)) if run.outcome.aborted() => summary.lines.push(format!("field export skipped: {msg}")),
        Err(e) => return Err(e),
    }
    summary.lines.push(format!("{model_name} on {}", problem.id.name()));
    for (k, v) in &run.metrics {
        summary.lines.push(format!("  {k} = {v:.4e}"));
    }
    Ok(summary)
}

fn run_suite(suite: &SuiteConfig, dir: &Path) -> Result<RunSummary> {
    let results = bench::run_benchmark_suite(suite)?;
    let mut summary = RunSummary::default();
    let csv_path = dir.join("suite.csv");
    bench::write_suite_csv(&results, &csv_path)?;
    summary.artifacts.push(csv_path);

    let cells = dir.join("cells");
    std::fs::create_dir_all(&cells)?;
    for r in &results {
        if let Some(report) = &r.report {
            let path = cells.join(format!("{}_{}_seed{}.json", r.model.name(), r.target.name(), r.seed));
            report.write_json(&path)?;
            summary.artifacts.push(path);
        } else if let Some(e) = &r.error {
            summary.lines.push(format!("{} {} seed {}: {e}", r.model.name(), r.target.name(), r.seed));
        }
    }

    let medians = bench::median_test_mse(&results);
    let median_path = dir.join("median.csv");
    let mut w = csv::Writer::from_path(&median_path)?;
    w.write_record(["model", "target", "median_test_mse"])?;
    for ((m, t), v) in &medians {
        w.write_record([m.name().to_string(), t.name().to_string(), format!("{v:e}")])?;
        summary.metrics.insert(format!("{}/{}", m.name(), t.name()), *v);
    }
    w.flush()?;
    summary.artifacts.push(median_path);

    let failed = results.iter().filter(|r| !r.ok()).count();
    summary.lines.push(format!("{} cells, {failed} failed or skipped", results.len()));
    for t in &suite.targets {
        let row: Vec<String> = suite
            .models
            .iter()
            .map(|m| medians.get(&(*m, *t)).map_or("-".into(), |v| format!("{}={v:.3e}", m.name())))
            .collect();
        summary.lines.push(format!("{:<10} {}", t.name(), row.join("  ")));
    }
    Ok(summary)
}

fn run_check(seed: u64, dir: &Path) -> Result<RunSummary> {
    let rows = gradient_checks(seed)?;
    let mut summary = RunSummary::default();
    let path = dir.join("gradients.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["kind", "problem", "params", "rel_error"])?;
    for r in &rows {
        w.write_record([r.kind.to_string(), r.problem.to_string(), r.params.to_string(), format!("{:e}", r.rel_error)])?;
    }
    w.flush()?;
    summary.artifacts.push(path);
    let max = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    summary.metrics.insert("max_rel_error".into(), max);
    summary.lines.push(format!("max relative gradient error: {max:.3e} over {} checks", rows.len()));
    Ok(summary)
}

/// One row of a parameter-count table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountRow {
    pub model: String,
    pub architecture: String,
    pub params: usize,
}

/// Parameter counts of the models of preset `name`: the six benchmark
/// models for `table2` and the benchmark targets, the case-study models for
/// a problem.
pub fn count_table(name: &str) -> Result<Vec<CountRow>> {
    if name == "table2" || Target::parse(name).is_some() {
        return BenchModel::ALL
            .iter()
            .map(|m| {
                Ok(CountRow { model: m.name().into(), architecture: m.architecture().into(), params: count_params(&m.spec())? })
            })
            .collect();
    }
    let id = ProblemId::parse(name)
        .ok_or_else(|| Error::Config(format!("unknown preset '{name}'; available: {}", PRESET_NAMES.join(", "))))?;
    solve_model_names(id)
        .iter()
        .map(|m| {
            let spec = solve_model(id, m)?;
            let dims: Vec<String> = std::iter::once(spec.input_dim())
                .chain(spec.layers.iter().map(|l| l.d_out))
                .map(|d| d.to_string())
                .collect();
            let params = Model::new(spec)?.num_params();
            Ok(CountRow { model: (*m).into(), architecture: format!("[{}]", dims.join(",")), params })
        })
        .collect()
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::TrainingAborted { .. } => EXIT_ABORTED,
        _ => 1,
    }
}
