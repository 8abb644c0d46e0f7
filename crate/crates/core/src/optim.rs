//! AdamW and the deterministic full-batch training loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EarlyStop {
    Off,
    /// Stop once the monitored metric has not improved by more than
    /// `min_delta` for `patience` consecutive epochs.
    Patience { patience: usize, min_delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "defaults::beta1")]
    pub beta1: f64,
    #[serde(default = "defaults::beta2")]
    pub beta2: f64,
    #[serde(default = "defaults::adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::early_stop")]
    pub early_stop: EarlyStop,
    #[serde(default = "defaults::log_every")]
    pub log_every: usize,
}

mod defaults {
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn adam_eps() -> f64 {
        1e-8
    }
    pub fn weight_decay() -> f64 {
        1e-4
    }
    pub fn early_stop() -> super::EarlyStop {
        super::EarlyStop::Off
    }
    pub fn log_every() -> usize {
        1
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 1e-3,
            beta1: defaults::beta1(),
            beta2: defaults::beta2(),
            adam_eps: defaults::adam_eps(),
            weight_decay: defaults::weight_decay(),
            seed: 0,
            early_stop: EarlyStop::Off,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs >= 1
            && self.lr > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.adam_eps > 0.0
            && self.weight_decay >= 0.0
            && self.log_every >= 1;
        if !ok {
            return Err(Error::Config(format!("invalid training configuration: {self:?}")));
        }
        if let EarlyStop::Patience { patience, min_delta } = self.early_stop {
            if patience == 0 || !(min_delta >= 0.0) {
                return Err(Error::Config("early stopping needs patience >= 1 and min_delta >= 0".into()));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One AdamW update with decoupled weight decay and bias correction.
pub fn adamw_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "AdamW lengths differ: params {}, grad {}, state {}",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient component {i}")));
    }
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let decay = 1.0 - config.lr * config.weight_decay;
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] = params[i] * decay - config.lr * mhat / (vhat.sqrt() + config.adam_eps);
    }
    Ok(())
}

/// What the training loop optimises.
pub trait Objective {
    /// Loss and its parameter gradient.
    fn loss_and_grad(&mut self, params: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Metric used for early stopping (lower is better). Defaults to the
    /// training loss.
    fn monitor(&mut self, _params: &[f64], loss: f64) -> Result<f64> {
        Ok(loss)
    }
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn loss_and_grad(&mut self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(params)
    }
}

/// Summary of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub param_count: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub final_loss: f64,
    pub loss_trace: Vec<(usize, f64)>,
    #[serde(default)]
    pub test_metrics: BTreeMap<String, f64>,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    #[serde(default)]
    pub spec: serde_json::Value,
}

impl RunReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss"])?;
        for (e, l) in &self.loss_trace {
            w.write_record([e.to_string(), format!("{l:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parameters and report produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final parameters; with early stopping, those of the best epoch; after
    /// an abort, the last parameters that produced a finite loss.
    pub params: Vec<f64>,
    pub report: RunReport,
}

impl TrainOutcome {
    pub fn aborted(&self) -> bool {
        self.report.aborted.is_some()
    }
}

/// Full-batch AdamW from `init`.
///
/// The trace entry for epoch `e` is the loss of the parameters entering
/// that epoch's update. Non-finite losses, gradients or parameters stop the
/// run and return the last good parameters with `report.aborted` set.
pub fn train<O: Objective>(init: Vec<f64>, objective: &mut O, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let mut params = init;
    let mut state = AdamState::new(params.len());
    let mut trace = Vec::new();
    let mut best = (0usize, f64::INFINITY, params.clone());
    let mut best_loss = f64::INFINITY;
    let mut last_good = params.clone();
    let mut last_loss = f64::NAN;
    let mut aborted = None;
    let mut epochs_run = 0;
    let mut since_improvement = 0usize;

    for epoch in 1..=config.epochs {
        let (loss, grad) = match objective.loss_and_grad(&params) {
            Ok(v) => v,
            Err(Error::Numeric(msg)) => {
                aborted = Some(format!("epoch {epoch}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            aborted = Some(format!("epoch {epoch}: non-finite loss {loss}"));
            break;
        }
        epochs_run = epoch;
        last_good.copy_from_slice(&params);
        last_loss = loss;
        best_loss = best_loss.min(loss);
        if epoch % config.log_every == 0 || epoch == 1 || epoch == config.epochs {
            trace.push((epoch, loss));
        }

        let metric = objective.monitor(&params, loss)?;
        let improved = match config.early_stop {
            EarlyStop::Off => metric < best.1,
            EarlyStop::Patience { min_delta, .. } => metric < best.1 - min_delta,
        };
        if improved {
            best = (epoch, metric, params.clone());
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        if let EarlyStop::Patience { patience, .. } = config.early_stop {
            if since_improvement >= patience {
                if trace.last().map(|t| t.0) != Some(epoch) {
                    trace.push((epoch, loss));
                }
                break;
            }
        }
        if epoch == config.epochs {
            break;
        }
        if let Err(e) = adamw_step(&mut params, &grad, &mut state, config) {
            aborted = Some(format!("epoch {epoch}: {e}"));
            break;
        }
        if params.iter().any(|p| !p.is_finite()) {
            aborted = Some(format!("epoch {epoch}: parameter left the finite range"));
            break;
        }
    }
    // The last recorded entry is the final loss.
    if let Some(&(e, _)) = trace.last() {
        if e != epochs_run && epochs_run > 0 {
            trace.push((epochs_run, last_loss));
        }
    }

    let (out_params, best_epoch) = match (config.early_stop, &aborted) {
        (_, Some(_)) => (last_good, best.0),
        (EarlyStop::Patience { .. }, None) => (best.2, best.0),
        (EarlyStop::Off, None) => (params, best.0),
    };
    let report = RunReport {
        seed: config.seed,
        param_count: out_params.len(),
        epochs_run,
        best_epoch,
        best_loss,
        final_loss: last_loss,
        loss_trace: trace,
        test_metrics: BTreeMap::new(),
        wall_time_s: start.elapsed().as_secs_f64(),
        aborted,
        spec: serde_json::Value::Null,
    };
    Ok(TrainOutcome { params: out_params, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Channels, Tape};
    use crate::layers::{LayerSpec, Model, ModelSpec};

    fn cfg(epochs: usize, lr: f64, wd: f64) -> TrainConfig {
        TrainConfig { epochs, lr, weight_decay: wd, ..TrainConfig::default() }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.3, -2.0];
        let mut s = AdamState::new(2);
        adamw_step(&mut p, &[0.0, 0.0], &mut s, &cfg(1, 1e-3, 0.0)).unwrap();
        assert_eq!(p, vec![0.3, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![1.0, 1.0];
        let mut s = AdamState::new(2);
        adamw_step(&mut p, &[0.37, -12.0], &mut s, &cfg(1, 1e-3, 0.0)).unwrap();
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-10);
        assert!((p[1] - (1.0 + 1e-3)).abs() < 1e-10);
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        adamw_step(&mut p, &[0.0], &mut s, &cfg(1, 1e-3, 0.01)).unwrap();
        assert!((p[0] - (1.0 - 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        assert!(adamw_step(&mut p, &[f64::NAN], &mut s, &cfg(1, 1e-3, 0.0)).is_err());
    }

    fn linear_fit() -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        let model = Model::new(ModelSpec::new(vec![LayerSpec::linear(1, 1)])).unwrap();
        let xs: Vec<f64> = (0..20).map(|i| -1.0 + i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        move |p: &[f64]| {
            let mut t = Tape::new(p);
            let x = t.input(&xs, 1, Channels::Plain)?;
            let y = model.forward(&mut t, x);
            let r = t.sub_target(y, ys.clone());
            let l = t.sum_squares(r, 1.0 / xs.len() as f64);
            Ok((t.scalar(l), t.gradient(l)?.values))
        }
    }

    #[test]
    fn fits_a_line() {
        let mut obj = linear_fit();
        let out = train(vec![0.0, 0.0], &mut obj, &cfg(2000, 0.05, 0.0)).unwrap();
        assert!(out.report.final_loss < 1e-10, "{}", out.report.final_loss);
        assert!((out.params[0] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn traces_are_bit_identical() {
        let c = cfg(300, 0.01, 1e-4);
        let a = train(vec![0.1, 0.2], &mut linear_fit(), &c).unwrap();
        let b = train(vec![0.1, 0.2], &mut linear_fit(), &c).unwrap();
        let bits = |r: &RunReport| r.loss_trace.iter().map(|(e, l)| (*e, l.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a.report), bits(&b.report));
        assert_eq!(a.report.loss_trace.len(), 300);
        assert_eq!(a.report.loss_trace.last().unwrap().1, a.report.final_loss);
    }

    #[test]
    fn nan_aborts_with_last_good_params() {
        let mut calls = 0;
        let mut obj = |p: &[f64]| {
            calls += 1;
            let l = if calls > 5 { f64::NAN } else { p[0] * p[0] };
            Ok((l, vec![2.0 * p[0]]))
        };
        let out = train(vec![1.0], &mut obj, &cfg(100, 0.1, 0.0)).unwrap();
        assert!(out.aborted());
        assert_eq!(out.report.epochs_run, 5);
        assert!(out.params[0].is_finite() && out.params[0] < 1.0);
    }

    struct Plateau;
    impl Objective for Plateau {
        fn loss_and_grad(&mut self, p: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((p[0] * p[0], vec![2.0 * p[0]]))
        }
        fn monitor(&mut self, _p: &[f64], _loss: f64) -> Result<f64> {
            Ok(1.0)
        }
    }

    #[test]
    fn early_stopping_respects_patience() {
        let c = TrainConfig { early_stop: EarlyStop::Patience { patience: 10, min_delta: 0.0 }, ..cfg(1000, 0.01, 0.0) };
        let out = train(vec![1.0], &mut Plateau, &c).unwrap();
        assert_eq!(out.report.epochs_run, 11);
        assert_eq!(out.report.best_epoch, 1);
        assert_eq!(out.params, vec![1.0]);
    }

    #[test]
    fn running_best_is_monotone() {
        let out = train(vec![0.5, -0.5], &mut linear_fit(), &cfg(200, 0.02, 0.0)).unwrap();
        let mut best = f64::INFINITY;
        for &(_, l) in &out.report.loss_trace {
            let nb = best.min(l);
            assert!(nb <= best);
            best = nb;
        }
        assert_eq!(best, out.report.best_loss);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(cfg(0, 1e-3, 0.0).validate().is_err());
        assert!(TrainConfig { beta1: 1.0, ..TrainConfig::default() }.validate().is_err());
    }
}
