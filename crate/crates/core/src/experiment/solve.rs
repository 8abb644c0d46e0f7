//! Physics-informed training runs, accuracy metrics against the reference
//! solution and plot-ready field exports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::layers::{Model, ModelSpec};
use crate::optim::{train, TrainConfig, TrainOutcome};
use crate::physics::{
    compute_reference, evaluate_residuals, predict, sample_points, total_loss, Equation, ProblemSpec, Reference,
};
use crate::refsolve::FieldCache;

/// Points per tape for training and evaluation.
pub const DEFAULT_CHUNK: usize = 64;
/// Points per tape for value-only predictions.
const PREDICT_CHUNK: usize = 1024;

/// A trained PDE surrogate together with its reference.
#[derive(Debug)]
pub struct SolveRun {
    pub problem: ProblemSpec,
    pub model: Model,
    pub reference: Reference,
    pub outcome: TrainOutcome,
    pub metrics: BTreeMap<String, f64>,
}

/// Samples the collocation sets, trains `spec` on `problem` and evaluates
/// the final parameters against the reference solution.
pub fn run_solve(
    problem: &ProblemSpec,
    spec: &ModelSpec,
    config: &TrainConfig,
    chunk: usize,
    cache: Option<&FieldCache>,
) -> Result<SolveRun> {
    problem.validate()?;
    let model = Model::new(spec.clone())?;
    if model.input_dim() != problem.input_dim() || model.output_dim() != problem.output_dim() {
        return Err(Error::Config(format!(
            "{} needs a {}→{} model, got {}→{}",
            problem.id.name(),
            problem.input_dim(),
            problem.output_dim(),
            model.input_dim(),
            model.output_dim()
        )));
    }
    let reference = compute_reference(problem, cache)?;
    let colloc = sample_points(problem, config.seed, Some(&reference))?;
    let init = model.init_params(config.seed).values;
    let mut objective = |p: &[f64]| {
        let (rep, g) = total_loss(problem, &model, p, &colloc, chunk)?;
        Ok((rep.total, g.values))
    };
    let mut outcome = train(init, &mut objective, config)?;
    let mut metrics = BTreeMap::new();
    if !outcome.aborted() {
        let (rep, _) = total_loss(problem, &model, &outcome.params, &colloc, chunk)?;
        metrics.insert("loss_residual".into(), rep.residual);
        metrics.insert("loss_ic".into(), rep.ic);
        metrics.insert("loss_bc".into(), rep.bc);
        metrics.insert("loss_data".into(), rep.data);
        metrics.extend(solution_metrics(problem, &model, &outcome.params, &reference)?);
    }
    outcome.report.test_metrics = metrics.clone();
    Ok(SolveRun { problem: problem.clone(), model, reference, outcome, metrics })
}

/// Coordinates (coordinate-major) of every reference sample and, for the
/// wave problem, the wavelength of each block.
fn reference_coords(problem: &ProblemSpec, reference: &Reference) -> Result<Vec<f64>> {
    match (reference, &problem.equation) {
        (Reference::Field(f), _) => {
            let n = f.values.len();
            let mut c = Vec::with_capacity(2 * n);
            c.extend(f.t.iter().flat_map(|_| f.x.iter().copied()));
            c.extend(f.t.iter().flat_map(|&t| std::iter::repeat_n(t, f.nx())));
            Ok(c)
        }
        (Reference::Trajectory { t, .. }, _) => Ok(t.clone()),
        (Reference::Wave(w), Equation::Helmholtz { lambda_eval, .. }) => {
            let mut c: Vec<f64> = lambda_eval.iter().flat_map(|_| w.z.iter().copied()).collect();
            c.extend(lambda_eval.iter().flat_map(|&l| std::iter::repeat_n(l, w.z.len())));
            Ok(c)
        }
        _ => Err(Error::Config(format!("reference does not match problem {}", problem.id.name()))),
    }
}

/// Reference values laid out like [`predict`] output (`outputs × n`).
fn reference_values(problem: &ProblemSpec, reference: &Reference) -> Result<Vec<f64>> {
    match (reference, &problem.equation) {
        (Reference::Field(f), _) => Ok(f.values.clone()),
        (Reference::Trajectory { y, .. }, _) => Ok((0..3).flat_map(|c| y.iter().map(move |v| v[c])).collect()),
        (Reference::Wave(w), Equation::Helmholtz { lambda_eval, .. }) => {
            let mut u: Vec<Complex64> = Vec::with_capacity(lambda_eval.len() * w.z.len());
            for &l in lambda_eval {
                let sol = w.solve(l)?;
                u.extend(w.z.iter().map(|&z| sol.u(z)));
            }
            Ok(u.iter().map(|v| v.re).chain(u.iter().map(|v| v.im)).collect())
        }
        _ => Err(Error::Config(format!("reference does not match problem {}", problem.id.name()))),
    }
}

fn rel_l2(pred: &[f64], truth: &[f64]) -> f64 {
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    (num / den).sqrt()
}

fn max_abs_diff(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).fold(0.0, f64::max)
}

/// Accuracy of `params` against the reference:
/// `max_abs_error` and `rel_l2_error` on the full reference grid for the
/// parabolic problems, per-component maxima for the Lorenz trajectory, and
/// complex relative L2 errors per evaluation wavelength for Helmholtz.
pub fn solution_metrics(
    problem: &ProblemSpec,
    model: &Model,
    params: &[f64],
    reference: &Reference,
) -> Result<BTreeMap<String, f64>> {
    let coords = reference_coords(problem, reference)?;
    let pred = predict(model, params, &coords, PREDICT_CHUNK)?;
    let truth = reference_values(problem, reference)?;
    let mut m = BTreeMap::new();
    match &problem.equation {
        Equation::AllenCahn { .. } | Equation::Burgers { .. } => {
            m.insert("max_abs_error".into(), max_abs_diff(&pred, &truth));
            m.insert("rel_l2_error".into(), rel_l2(&pred, &truth));
        }
        Equation::Lorenz { .. } => {
            let n = truth.len() / 3;
            let mut overall: f64 = 0.0;
            for (c, name) in ["x", "y", "z"].iter().enumerate() {
                let e = max_abs_diff(&pred[c * n..(c + 1) * n], &truth[c * n..(c + 1) * n]);
                overall = overall.max(e);
                m.insert(format!("max_abs_error_{name}"), e);
            }
            m.insert("max_abs_error".into(), overall);
            m.insert("rel_l2_error".into(), rel_l2(&pred, &truth));
        }
        Equation::Helmholtz { lambda_eval, .. } => {
            let total = truth.len() / 2;
            let nz = total / lambda_eval.len();
            for (b, &l) in lambda_eval.iter().enumerate() {
                let span = |part: usize| part * total + b * nz..part * total + (b + 1) * nz;
                let (mut num, mut den) = (0.0, 0.0);
                for part in 0..2 {
                    for (p, t) in pred[span(part)].iter().zip(&truth[span(part)]) {
                        num += (p - t) * (p - t);
                        den += t * t;
                    }
                }
                m.insert(helmholtz_metric_key(l), (num / den).sqrt());
            }
        }
    }
    Ok(m)
}

/// Metric name of the complex relative L2 error at wavelength `lambda`.
pub fn helmholtz_metric_key(lambda: f64) -> String {
    format!("rel_l2_error_lambda_{lambda:.6}")
}

fn write_rows(path: &Path, header: &[&str], rows: usize, row: impl Fn(usize) -> Vec<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for i in 0..rows {
        w.write_record(row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `field.csv`, `error.csv` and `residual.csv` on the reference grid.
pub fn write_field_artifacts(run: &SolveRun, params: &[f64], dir: &Path, chunk: usize) -> Result<Vec<PathBuf>> {
    let problem = &run.problem;
    let coords = reference_coords(problem, &run.reference)?;
    let pred = predict(&run.model, params, &coords, PREDICT_CHUNK)?;
    let truth = reference_values(problem, &run.reference)?;
    let res = evaluate_residuals(problem, &run.model, params, &coords, chunk)?;
    let paths = [dir.join("field.csv"), dir.join("error.csv"), dir.join("residual.csv")];
    match &problem.equation {
        Equation::AllenCahn { .. } | Equation::Burgers { .. } => {
            let n = pred.len();
            let at = |i: usize| (coords[i], coords[n + i]);
            write_rows(&paths[0], &["x", "t", "value"], n, |i| vec![at(i).0, at(i).1, pred[i]])?;
            write_rows(&paths[1], &["x", "t", "abs_error"], n, |i| vec![at(i).0, at(i).1, (pred[i] - truth[i]).abs()])?;
            write_rows(&paths[2], &["x", "t", "residual"], n, |i| vec![at(i).0, at(i).1, res[0][i]])?;
        }
        Equation::Lorenz { .. } => {
            let n = coords.len();
            let comp = |v: &[f64], i: usize| [v[i], v[n + i], v[2 * n + i]];
            write_rows(&paths[0], &["t", "x", "y", "z"], n, |i| {
                let p = comp(&pred, i);
                vec![coords[i], p[0], p[1], p[2]]
            })?;
            write_rows(&paths[1], &["t", "abs_error_x", "abs_error_y", "abs_error_z"], n, |i| {
                let (p, t) = (comp(&pred, i), comp(&truth, i));
                vec![coords[i], (p[0] - t[0]).abs(), (p[1] - t[1]).abs(), (p[2] - t[2]).abs()]
            })?;
            write_rows(&paths[2], &["t", "r1", "r2", "r3"], n, |i| vec![coords[i], res[0][i], res[1][i], res[2][i]])?;
        }
        Equation::Helmholtz { .. } => {
            let n = coords.len() / 2;
            let at = |i: usize| (coords[i], coords[n + i]);
            write_rows(&paths[0], &["x", "t", "value", "value_im"], n, |i| vec![at(i).0, at(i).1, pred[i], pred[n + i]])?;
            write_rows(&paths[1], &["x", "t", "abs_error"], n, |i| {
                let d = Complex64::new(pred[i] - truth[i], pred[n + i] - truth[n + i]);
                vec![at(i).0, at(i).1, d.norm()]
            })?;
            write_rows(&paths[2], &["x", "t", "residual", "residual_im"], n, |i| {
                vec![at(i).0, at(i).1, res[0][i], res[1][i]]
            })?;
        }
    }
    Ok(paths.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisFamily;
    use crate::layers::LayerKind;
    use crate::experiment::check::small_problem;
    use crate::physics::ProblemId;

    fn tiny_model(p: &ProblemSpec) -> ModelSpec {
        let kind = LayerKind::LmKan { basis: BasisFamily::GaussianRbf { gamma: 1.0 }, k: 3, metric_hidden: 3 };
        ModelSpec::stack(&[p.input_dim(), 3, p.output_dim()], kind).with_input_domain(p.domain())
    }

    #[test]
    fn short_runs_produce_metrics_and_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        for id in ProblemId::ALL {
            let p = small_problem(id);
            let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
            let run = run_solve(&p, &tiny_model(&p), &cfg, 16, None).unwrap();
            assert_eq!(run.outcome.report.epochs_run, 5);
            assert!(run.metrics.contains_key("loss_residual"));
            let sub = dir.path().join(id.name());
            std::fs::create_dir_all(&sub).unwrap();
            let paths = write_field_artifacts(&run, &run.outcome.params, &sub, 16).unwrap();
            let field = std::fs::read_to_string(&paths[0]).unwrap();
            let rows = field.lines().count() - 1;
            let expected = match id {
                ProblemId::Lorenz => 41,
                ProblemId::Helmholtz => 3 * 33,
                _ => 65 * 65,
            };
            assert_eq!(rows, expected, "{id:?}");
            match id {
                ProblemId::Helmholtz => {
                    assert!(field.starts_with("x,t,value,value_im\n"));
                    assert!(run.metrics.contains_key(&helmholtz_metric_key(1.0 / 15.0)));
                }
                ProblemId::Lorenz => assert!(run.metrics.contains_key("max_abs_error_z")),
                _ => assert!(run.metrics["rel_l2_error"].is_finite()),
            }
        }
    }

    #[test]
    fn exact_reference_has_zero_error() {
        let p = small_problem(ProblemId::Burgers);
        let r = compute_reference(&p, None).unwrap();
        let truth = reference_values(&p, &r).unwrap();
        assert_eq!(rel_l2(&truth, &truth), 0.0);
        assert_eq!(max_abs_diff(&truth, &truth), 0.0);
        let coords = reference_coords(&p, &r).unwrap();
        assert_eq!(coords.len(), 2 * truth.len());
    }

    #[test]
    fn mismatched_model_is_config_error() {
        let p = small_problem(ProblemId::Lorenz);
        let wrong = tiny_model(&small_problem(ProblemId::Allen1));
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(matches!(run_solve(&p, &wrong, &cfg, 16, None), Err(Error::Config(_))));
    }
}
