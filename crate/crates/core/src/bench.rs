//! Matched-capacity curve-fitting benchmark.
//!
//! Six closed-form targets on `[0, 1]`, a seeded 80/20 split and a suite
//! runner that trains every model on every target and seed with the same
//! AdamW configuration and early-stopping rule.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Channels, Tape};
use crate::basis::{Activation, BasisFamily, BsplineGrid};
use crate::error::{Error, Result};
use crate::layers::{LayerKind, Model, ModelSpec};
use crate::optim::{train, EarlyStop, Objective, RunReport, TrainConfig, TrainOutcome};
use crate::rng::{self, purpose};

/// Samples per dataset.
pub const DATASET_SIZE: usize = 1024;
/// Fraction of each dataset held out for testing.
pub const TEST_FRACTION: f64 = 0.2;
/// Points per tape when evaluating a fit loss.
const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Highfreq,
    Chirp,
    Step,
    Needle,
    Multiscale,
    Sawtooth,
}

impl Target {
    pub const ALL: [Target; 6] =
        [Target::Highfreq, Target::Chirp, Target::Step, Target::Needle, Target::Multiscale, Target::Sawtooth];

    pub fn name(self) -> &'static str {
        match self {
            Target::Highfreq => "highfreq",
            Target::Chirp => "chirp",
            Target::Step => "step",
            Target::Needle => "needle",
            Target::Multiscale => "multiscale",
            Target::Sawtooth => "sawtooth",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Target::Highfreq => (10.0 * PI * x).sin(),
            Target::Chirp => (2.0 * PI * (x + 12.0 * x * x)).sin(),
            Target::Step => {
                if x < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            Target::Needle => (-(x - 0.5).powi(2) / (2.0 * 0.01 * 0.01)).exp(),
            Target::Multiscale => (-(x - 0.5).powi(2) / 0.08).exp() * (30.0 * PI * x).sin(),
            Target::Sawtooth => 2.0 * (3.0 * x).fract() - 1.0,
        }
    }
}

pub fn target_eval(target: Target, x: f64) -> f64 {
    target.eval(x)
}

/// Samples of one target with a train/test partition of the indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub target: Target,
    pub seed: u64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        (idx.iter().map(|&i| self.x[i]).collect(), idx.iter().map(|&i| self.y[i]).collect())
    }

    pub fn train_xy(&self) -> (Vec<f64>, Vec<f64>) {
        self.gather(&self.train)
    }

    pub fn test_xy(&self) -> (Vec<f64>, Vec<f64>) {
        self.gather(&self.test)
    }
}

/// `n` uniform samples on `[0, 1]` with a seeded 80/20 split.
pub fn make_dataset(target: Target, n: usize, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::Config(format!("dataset needs at least 10 samples, got {n}")));
    }
    let mut rng = rng::stream(seed, purpose::DATASET);
    let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let y = x.iter().map(|&v| target.eval(v)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, purpose::SPLIT));
    let n_test = (TEST_FRACTION * n as f64).round() as usize;
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Dataset { target, seed, x, y, train, test })
}

/// The six matched-capacity architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchModel {
    Mlp,
    EfficientKan,
    GeokanGamma,
    GeokanNnmetric,
    LmkanWav,
    LmkanRbf,
}

impl BenchModel {
    pub const ALL: [BenchModel; 6] = [
        BenchModel::Mlp,
        BenchModel::EfficientKan,
        BenchModel::GeokanGamma,
        BenchModel::GeokanNnmetric,
        BenchModel::LmkanWav,
        BenchModel::LmkanRbf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchModel::Mlp => "mlp",
            BenchModel::EfficientKan => "efficient-kan",
            BenchModel::GeokanGamma => "geokan-gamma",
            BenchModel::GeokanNnmetric => "geokan-nnmetric",
            BenchModel::LmkanWav => "lmkan-wav",
            BenchModel::LmkanRbf => "lmkan-rbf",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    /// Architecture description used in count tables.
    pub fn architecture(self) -> &'static str {
        match self {
            BenchModel::Mlp => "width 140, depth 2",
            BenchModel::EfficientKan => "layers [1,57,57,1], grid 3, spline order 1",
            BenchModel::GeokanGamma => "width 90, depth 2, K 12",
            BenchModel::GeokanNnmetric => "width 38, depth 2, K 12, metric hidden 8",
            BenchModel::LmkanWav => "width 38, depth 2, K 12, metric hidden 8",
            BenchModel::LmkanRbf => "width 38, depth 2, K 12, metric hidden 8, gamma 2.0",
        }
    }

    pub fn spec(self) -> ModelSpec {
        let spec = match self {
            BenchModel::Mlp => ModelSpec::stack(&[1, 140, 140, 1], LayerKind::Linear),
            BenchModel::EfficientKan => ModelSpec::uniform(
                &[1, 57, 57, 1],
                LayerKind::EfficientKan { grid: BsplineGrid::new(3, 1), base_activation: Activation::Silu },
            ),
            BenchModel::GeokanGamma => ModelSpec::stack(&[1, 90, 90, 1], LayerKind::Gamma { k: 12 }),
            BenchModel::GeokanNnmetric => {
                ModelSpec::stack(&[1, 38, 38, 1], LayerKind::NnMetric { k: 12, metric_hidden: 8 })
            }
            BenchModel::LmkanWav => ModelSpec::stack(
                &[1, 38, 38, 1],
                LayerKind::LmKan { basis: BasisFamily::MexicanHat, k: 12, metric_hidden: 8 },
            ),
            BenchModel::LmkanRbf => ModelSpec::stack(
                &[1, 38, 38, 1],
                LayerKind::LmKan { basis: BasisFamily::GaussianRbf { gamma: 2.0 }, k: 12, metric_hidden: 8 },
            ),
        };
        spec.with_input_domain(vec![[0.0, 1.0]])
    }
}

/// Training configuration shared by every cell: AdamW at `lr = 1e-3`,
/// early stopping on test MSE with patience 2000, at most 30 000 epochs.
pub fn default_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 30_000,
        lr: 1e-3,
        early_stop: EarlyStop::Patience { patience: 2000, min_delta: 0.0 },
        log_every: 10,
        ..TrainConfig::default()
    }
}

/// Mean squared error of `model` on `(x, y)`.
pub fn mse(model: &Model, params: &[f64], x: &[f64], y: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for (xc, yc) in x.chunks(CHUNK).zip(y.chunks(CHUNK)) {
        let pred = model.eval_batch(params, xc)?;
        sum += pred.iter().zip(yc).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
    }
    Ok(sum / x.len() as f64)
}

/// Train MSE with gradient; monitors test MSE.
struct FitObjective<'a> {
    model: &'a Model,
    train: (Vec<f64>, Vec<f64>),
    test: (Vec<f64>, Vec<f64>),
    last_test: f64,
}

impl Objective for FitObjective<'_> {
    fn loss_and_grad(&mut self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (x, y) = (&self.train.0, &self.train.1);
        let scale = 1.0 / x.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        for (xc, yc) in x.chunks(CHUNK).zip(y.chunks(CHUNK)) {
            let mut t = Tape::new(params);
            let inp = t.input(xc, 1, Channels::Plain)?;
            let out = self.model.forward(&mut t, inp);
            let r = t.sub_target(out, yc.to_vec());
            let l = t.sum_squares(r, scale);
            loss += t.scalar(l);
            for (g, d) in grad.iter_mut().zip(&t.gradient(l)?.values) {
                *g += d;
            }
        }
        Ok((loss, grad))
    }

    fn monitor(&mut self, params: &[f64], _loss: f64) -> Result<f64> {
        self.last_test = mse(self.model, params, &self.test.0, &self.test.1)?;
        if !self.last_test.is_finite() {
            return Err(Error::Numeric("non-finite test MSE".into()));
        }
        Ok(self.last_test)
    }
}

/// Outcome of one (model, target, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: BenchModel,
    pub target: Target,
    pub seed: u64,
    pub params: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub epochs_run: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub report: Option<RunReport>,
}

impl CellResult {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    fn failed(model: BenchModel, target: Target, seed: u64, params: usize, error: String) -> Self {
        Self {
            model,
            target,
            seed,
            params,
            train_mse: f64::NAN,
            test_mse: f64::NAN,
            epochs_run: 0,
            error: Some(error),
            report: None,
        }
    }
}

/// A trained curve fit. After an abort, `params` are the last good
/// parameters and the MSEs are evaluated on them.
#[derive(Debug)]
pub struct FitRun {
    pub model: Model,
    pub outcome: TrainOutcome,
    pub train_mse: f64,
    pub test_mse: f64,
}

/// Trains an arbitrary architecture on `data` with the benchmark objective.
pub fn fit_model(spec: &ModelSpec, data: &Dataset, config: &TrainConfig) -> Result<FitRun> {
    let net = Model::new(spec.clone())?;
    if net.input_dim() != 1 || net.output_dim() != 1 {
        return Err(Error::Config(format!("curve fits need a 1→1 model, got {}→{}", net.input_dim(), net.output_dim())));
    }
    let mut cfg = config.clone();
    cfg.seed = data.seed;
    let init = net.init_params(data.seed).values;
    let mut obj = FitObjective { model: &net, train: data.train_xy(), test: data.test_xy(), last_test: f64::NAN };
    let mut outcome = train(init, &mut obj, &cfg)?;
    let train_mse = mse(&net, &outcome.params, &obj.train.0, &obj.train.1)?;
    let test_mse = mse(&net, &outcome.params, &obj.test.0, &obj.test.1)?;
    outcome.report.test_metrics.insert("train_mse".into(), train_mse);
    outcome.report.test_metrics.insert("test_mse".into(), test_mse);
    Ok(FitRun { model: net, outcome, train_mse, test_mse })
}

/// Trains `model` on one dataset; the reported MSEs belong to the
/// early-stopped (best test MSE) parameters.
pub fn run_cell(model: BenchModel, data: &Dataset, config: &TrainConfig) -> Result<CellResult> {
    let spec = model.spec();
    let mut fit = fit_model(&spec, data, config)?;
    if let Some(reason) = &fit.outcome.report.aborted {
        return Err(Error::TrainingAborted { epoch: fit.outcome.report.epochs_run, reason: reason.clone() });
    }
    fit.outcome.report.spec = serde_json::json!({
        "model": model.name(),
        "target": data.target.name(),
        "architecture": spec,
        "samples": data.x.len(),
        "train": config,
    });
    Ok(CellResult {
        model,
        target: data.target,
        seed: data.seed,
        params: fit.model.num_params(),
        train_mse: fit.train_mse,
        test_mse: fit.test_mse,
        epochs_run: fit.outcome.report.epochs_run,
        error: None,
        report: Some(fit.outcome.report),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub models: Vec<BenchModel>,
    pub targets: Vec<Target>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_train_config")]
    pub train: TrainConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Cells not started within this many seconds are recorded as skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_s: Option<f64>,
}

fn default_samples() -> usize {
    DATASET_SIZE
}

fn default_workers() -> usize {
    1
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            models: BenchModel::ALL.to_vec(),
            targets: Target::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            samples: DATASET_SIZE,
            train: default_train_config(),
            workers: 1,
            time_budget_s: None,
        }
    }
}

/// Runs every (model, target, seed) cell. Failing cells are recorded and
/// the suite continues; results are ordered by (model, target, seed)
/// regardless of worker scheduling.
pub fn run_benchmark_suite(config: &SuiteConfig) -> Result<Vec<CellResult>> {
    config.train.validate()?;
    if config.models.is_empty() || config.targets.is_empty() || config.seeds.is_empty() {
        return Err(Error::Config("suite needs at least one model, target and seed".into()));
    }
    let mut cells = Vec::new();
    for &m in &config.models {
        for &t in &config.targets {
            for &s in &config.seeds {
                cells.push((m, t, s));
            }
        }
    }
    let start = Instant::now();
    let queue = Mutex::new(cells.into_iter());
    let results = Mutex::new(Vec::new());
    let run_one = |(m, t, s): (BenchModel, Target, u64)| -> CellResult {
        let params = Model::new(m.spec()).map(|n| n.num_params()).unwrap_or(0);
        if let Some(budget) = config.time_budget_s {
            if start.elapsed().as_secs_f64() > budget {
                return CellResult::failed(m, t, s, params, format!("skipped: suite time budget of {budget} s exhausted"));
            }
        }
        make_dataset(t, config.samples, s)
            .and_then(|d| run_cell(m, &d, &config.train))
            .unwrap_or_else(|e| CellResult::failed(m, t, s, params, e.to_string()))
    };
    std::thread::scope(|scope| {
        for _ in 0..config.workers.max(1) {
            scope.spawn(|| loop {
                let Some(cell) = queue.lock().expect("queue lock").next() else { break };
                let r = run_one(cell);
                results.lock().expect("results lock").push(r);
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|r| (r.model, r.target, r.seed));
    Ok(results)
}

/// Writes `model,target,seed,params,train_mse,test_mse,epochs_run`.
pub fn write_suite_csv(results: &[CellResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "target", "seed", "params", "train_mse", "test_mse", "epochs_run"])?;
    for r in results {
        w.write_record([
            r.model.name().to_string(),
            r.target.name().to_string(),
            r.seed.to_string(),
            r.params.to_string(),
            format!("{:e}", r.train_mse),
            format!("{:e}", r.test_mse),
            r.epochs_run.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Median test MSE over seeds for every (model, target) with at least one
/// successful cell.
pub fn median_test_mse(results: &[CellResult]) -> BTreeMap<(BenchModel, Target), f64> {
    let mut groups: BTreeMap<(BenchModel, Target), Vec<f64>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.ok()) {
        groups.entry((r.model, r.target)).or_default().push(r.test_mse);
    }
    groups.into_iter().map(|(k, v)| (k, median(v))).collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::count_params;

    #[test]
    fn target_values() {
        assert!((Target::Highfreq.eval(0.05) - 1.0).abs() < 1e-15);
        assert_eq!(Target::Step.eval(0.25), -1.0);
        assert_eq!(Target::Step.eval(0.5), 1.0);
        assert_eq!(Target::Needle.eval(0.5), 1.0);
        assert_eq!(Target::Sawtooth.eval(0.0), -1.0);
        assert!((Target::Chirp.eval(0.5) - (2.0 * PI * 3.5).sin()).abs() < 1e-15);
        assert!((Target::Multiscale.eval(0.5) - (15.0 * PI).sin()).abs() < 1e-15);
    }

    #[test]
    fn targets_are_bounded() {
        for t in Target::ALL {
            for i in 0..=1000 {
                let y = t.eval(i as f64 / 1000.0);
                assert!(y.abs() <= 1.0 + 1e-12, "{} at {i}: {y}", t.name());
            }
        }
    }

    #[test]
    fn split_arithmetic() {
        let d = make_dataset(Target::Highfreq, 1000, 3).unwrap();
        assert_eq!((d.train.len(), d.test.len()), (800, 200));
        let mut all: Vec<usize> = d.train.iter().chain(&d.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert!(d.x.iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn datasets_are_seeded() {
        let a = make_dataset(Target::Chirp, DATASET_SIZE, 7).unwrap();
        assert_eq!(a, make_dataset(Target::Chirp, DATASET_SIZE, 7).unwrap());
        assert_ne!(a.test, make_dataset(Target::Chirp, DATASET_SIZE, 8).unwrap().test);
    }

    #[test]
    fn step_values_are_signs() {
        let d = make_dataset(Target::Step, 200, 0).unwrap();
        assert!(d.y.iter().all(|&y| y == 1.0 || y == -1.0));
    }

    #[test]
    fn tiny_dataset_rejected() {
        assert!(matches!(make_dataset(Target::Step, 9, 0), Err(Error::Config(_))));
    }

    #[test]
    fn matched_capacity() {
        for m in BenchModel::ALL {
            let n = count_params(&m.spec()).unwrap();
            assert!((19_000..=21_000).contains(&n), "{}: {n}", m.name());
        }
        assert_eq!(count_params(&BenchModel::Mlp.spec()).unwrap(), 20161);
        assert_eq!(count_params(&BenchModel::EfficientKan.spec()).unwrap(), 20178);
    }

    #[test]
    fn model_names_round_trip() {
        for m in BenchModel::ALL {
            assert_eq!(BenchModel::parse(m.name()), Some(m));
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.name()));
        }
        for t in Target::ALL {
            assert_eq!(Target::parse(t.name()), Some(t));
        }
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0]), 2.5);
    }

    fn quick() -> TrainConfig {
        TrainConfig { epochs: 30, lr: 1e-2, early_stop: EarlyStop::Patience { patience: 5, min_delta: 0.0 }, ..default_train_config() }
    }

    #[test]
    fn small_suite_is_ordered_and_complete() {
        let cfg = SuiteConfig {
            models: vec![BenchModel::LmkanRbf, BenchModel::Mlp],
            targets: vec![Target::Step, Target::Highfreq],
            seeds: vec![1, 0],
            samples: 40,
            train: quick(),
            workers: 2,
            time_budget_s: None,
        };
        let res = run_benchmark_suite(&cfg).unwrap();
        assert_eq!(res.len(), 8);
        let keys: Vec<_> = res.iter().map(|r| (r.model, r.target, r.seed)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        for r in &res {
            assert!(r.ok(), "{:?}", r.error);
            assert!(r.test_mse.is_finite() && r.epochs_run >= 1 && r.epochs_run <= 30);
            let rep = r.report.as_ref().unwrap();
            assert_eq!(rep.test_metrics["test_mse"], r.test_mse);
        }
        let serial = run_benchmark_suite(&SuiteConfig { workers: 1, ..cfg }).unwrap();
        let bits = |v: &[CellResult]| v.iter().map(|r| r.test_mse.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&res), bits(&serial));
    }

    #[test]
    fn best_epoch_params_are_reported() {
        let d = make_dataset(Target::Highfreq, 60, 0).unwrap();
        let r = run_cell(BenchModel::Mlp, &d, &quick()).unwrap();
        let rep = r.report.unwrap();
        assert!(rep.best_epoch >= 1 && rep.best_epoch <= rep.epochs_run);
        assert!(r.train_mse.is_finite());
    }

    #[test]
    fn exhausted_budget_skips_cells() {
        let cfg = SuiteConfig {
            models: vec![BenchModel::Mlp],
            targets: vec![Target::Step],
            seeds: vec![0],
            samples: 20,
            train: quick(),
            workers: 1,
            time_budget_s: Some(-1.0),
        };
        let res = run_benchmark_suite(&cfg).unwrap();
        assert!(!res[0].ok());
        assert!(res[0].test_mse.is_nan());
    }

    #[test]
    fn csv_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.csv");
        let d = make_dataset(Target::Step, 30, 0).unwrap();
        let r = run_cell(BenchModel::Mlp, &d, &quick()).unwrap();
        write_suite_csv(&[r], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "model,target,seed,params,train_mse,test_mse,epochs_run");
        assert!(lines.next().unwrap().starts_with("mlp,step,0,20161,"));
    }
}
