use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::sampling::{CollocationSet, PointKind, PointSet};
use super::{Equation, ProblemSpec};
use crate::autodiff::{Channels, Gradient, NodeId, Tape};
use crate::error::{Error, Result};
use crate::layers::Model;

/// Unweighted loss terms and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub residual: f64,
    pub ic: f64,
    pub bc: f64,
    pub data: f64,
    pub total: f64,
}

/// Scalar nodes of one recorded loss.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub residual: NodeId,
    pub ic: Option<NodeId>,
    pub bc: Option<NodeId>,
    pub data: Option<NodeId>,
}

fn check_model(problem: &ProblemSpec, model: &Model) -> Result<()> {
    if model.input_dim() != problem.input_dim() || model.output_dim() != problem.output_dim() {
        return Err(Error::Dimension(format!(
            "{} needs a {}→{} model, got {}→{}",
            problem.id.name(),
            problem.input_dim(),
            problem.output_dim(),
            model.input_dim(),
            model.output_dim()
        )));
    }
    Ok(())
}

fn check_required(problem: &ProblemSpec, colloc: &CollocationSet) -> Result<()> {
    let missing = |what: &str| Err(Error::Config(format!("{} needs a non-empty {what} set", problem.id.name())));
    if colloc.residual.is_empty() {
        return missing("residual");
    }
    let needs_ic = !matches!(problem.equation, Equation::Helmholtz { .. });
    let needs_bc = !matches!(problem.equation, Equation::Lorenz { .. });
    if needs_ic && colloc.initial.as_ref().is_none_or(PointSet::is_empty) {
        return missing("initial");
    }
    if needs_bc && (colloc.boundary.is_empty() || colloc.boundary.iter().any(PointSet::is_empty)) {
        return missing("boundary");
    }
    Ok(())
}

/// Residual components at the points `coords` (coordinate-major), one
/// single-row plain node per component: one for the scalar PDEs, three for
/// the Lorenz system and `(Re, Im)` for Helmholtz.
pub fn residual_nodes(t: &mut Tape, problem: &ProblemSpec, model: &Model, coords: &[f64]) -> Result<Vec<NodeId>> {
    let dims = problem.input_dim();
    let n = coords.len() / dims;
    match &problem.equation {
        Equation::AllenCahn { nu, rate, .. } => {
            let x = t.input(coords, 2, Channels::Parabolic)?;
            let u = model.forward(t, x);
            let c = Channels::Parabolic;
            let (v, ut, uxx) = (t.channel(u, 0), t.channel(u, c.grad(1)), t.channel(u, c.hess(0, 0)));
            let v2 = t.mul(v, v);
            let v3 = t.mul(v2, v);
            let reaction = t.sub(v3, v);
            let reaction = t.scale(reaction, *rate);
            let diffusion = t.scale(uxx, -nu);
            let r = t.add(ut, reaction);
            Ok(vec![t.add(r, diffusion)])
        }
        Equation::Burgers { nu } => {
            let x = t.input(coords, 2, Channels::Parabolic)?;
            let u = model.forward(t, x);
            let c = Channels::Parabolic;
            let (v, ux, ut, uxx) =
                (t.channel(u, 0), t.channel(u, c.grad(0)), t.channel(u, c.grad(1)), t.channel(u, c.hess(0, 0)));
            let adv = t.mul(v, ux);
            let diffusion = t.scale(uxx, -nu);
            let r = t.add(ut, adv);
            Ok(vec![t.add(r, diffusion)])
        }
        Equation::Lorenz { sigma, rho, beta, .. } => {
            let x = t.input(coords, 1, Channels::D1)?;
            let y = model.forward(t, x);
            let mut v = [y; 3];
            let mut d = [y; 3];
            for c in 0..3 {
                let row = t.row(y, c);
                v[c] = t.channel(row, 0);
                d[c] = t.channel(row, 1);
            }
            // R1 = x' − σ(y − x)
            let dyx = t.sub(v[1], v[0]);
            let s = t.scale(dyx, *sigma);
            let r1 = t.sub(d[0], s);
            // R2 = y' − x(ρ − z) + y
            let xz = t.mul(v[0], v[2]);
            let rx = t.scale(v[0], *rho);
            let a = t.sub(d[1], rx);
            let a = t.add(a, xz);
            let r2 = t.add(a, v[1]);
            // R3 = z' − xy + βz
            let xy = t.mul(v[0], v[1]);
            let bz = t.scale(v[2], *beta);
            let b = t.sub(d[2], xy);
            let r3 = t.add(b, bz);
            Ok(vec![r1, r2, r3])
        }
        Equation::Helmholtz { profile, .. } => {
            let x = t.input_along(coords, 2, 0)?;
            let u = model.forward(t, x);
            let (mut ka, mut kb) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for p in 0..n {
                let (z, lambda) = (coords[p], coords[n + p]);
                let eps = profile.eps(z);
                let k0sq = (2.0 * PI / lambda).powi(2);
                ka.push(eps.re * k0sq);
                kb.push(eps.im * k0sq);
            }
            let (ur, ui) = (t.row(u, 0), t.row(u, 1));
            let (ur_v, ui_v) = (t.channel(ur, 0), t.channel(ui, 0));
            let hz = Channels::D1.hess(0, 0);
            let (ur_zz, ui_zz) = (t.channel(ur, hz), t.channel(ui, hz));
            let ar = t.mul_points(ur_v, ka.clone());
            let ai = t.mul_points(ui_v, ka);
            let br = t.mul_points(ur_v, kb.clone());
            let bi = t.mul_points(ui_v, kb);
            let re = t.add(ur_zz, ar);
            let re = t.sub(re, bi);
            let im = t.add(ui_zz, ai);
            let im = t.add(im, br);
            Ok(vec![re, im])
        }
    }
}

/// Robin boundary residuals `(Re, Im)` at `z ∈ {0, 1}` over the wavelengths
/// in `set`.
fn robin_nodes(t: &mut Tape, problem: &ProblemSpec, model: &Model, set: &PointSet) -> Result<[NodeId; 2]> {
    let Equation::Helmholtz { a_inc, .. } = &problem.equation else {
        return Err(Error::Config("Robin conditions only apply to the Helmholtz problem".into()));
    };
    let n = set.len();
    let left = set.kind == PointKind::RobinLeft;
    let k: Vec<f64> = (0..n)
        .map(|p| {
            let (km, kp) = problem.equation.exterior_wavenumbers(set.coord(1, p));
            if left {
                km
            } else {
                kp
            }
        })
        .collect();
    let x = t.input_along(&set.coords, 2, 0)?;
    let u = model.forward(t, x);
    let (ur, ui) = (t.row(u, 0), t.row(u, 1));
    let (ur_v, ui_v) = (t.channel(ur, 0), t.channel(ui, 0));
    let (ur_z, ui_z) = (t.channel(ur, 1), t.channel(ui, 1));
    let k_ur = t.mul_points(ur_v, k.clone());
    let k_ui = t.mul_points(ui_v, k.clone());
    if left {
        // u_z + i k u − 2 i k A
        let re = t.sub(ur_z, k_ui);
        let re = t.sub_target(re, k.iter().map(|k| -2.0 * k * a_inc[1]).collect());
        let im = t.add(ui_z, k_ur);
        let im = t.sub_target(im, k.iter().map(|k| 2.0 * k * a_inc[0]).collect());
        Ok([re, im])
    } else {
        // u_z − i k u
        Ok([t.add(ur_z, k_ui), t.sub(ui_z, k_ur)])
    }
}

/// Records `set.scale · Σ |·|²` for one point set.
fn record_term(t: &mut Tape, problem: &ProblemSpec, model: &Model, set: &PointSet) -> Result<NodeId> {
    let parts = match set.kind {
        PointKind::Residual => residual_nodes(t, problem, model, &set.coords)?,
        PointKind::RobinLeft | PointKind::RobinRight => robin_nodes(t, problem, model, set)?.to_vec(),
        PointKind::Initial | PointKind::Dirichlet | PointKind::Data => {
            let x = t.input(&set.coords, set.dims, Channels::Plain)?;
            let y = model.forward(t, x);
            vec![t.sub_target(y, set.targets.clone())]
        }
    };
    let all = if parts.len() == 1 { parts[0] } else { t.concat(&parts) };
    Ok(t.sum_squares(all, set.scale))
}

/// Records the full weighted loss of `colloc` on one tape.
pub fn record_loss(t: &mut Tape, problem: &ProblemSpec, model: &Model, colloc: &CollocationSet) -> Result<LossNodes> {
    check_model(problem, model)?;
    check_required(problem, colloc)?;
    let w = problem.weights;
    let residual = record_term(t, problem, model, &colloc.residual)?;
    let ic = colloc.initial.as_ref().map(|s| record_term(t, problem, model, s)).transpose()?;
    let bc = if colloc.boundary.is_empty() {
        None
    } else {
        let terms = colloc
            .boundary
            .iter()
            .map(|s| Ok((record_term(t, problem, model, s)?, 1.0)))
            .collect::<Result<Vec<_>>>()?;
        Some(t.weighted_sum(&terms))
    };
    let data = if colloc.data.is_empty() { None } else { Some(record_term(t, problem, model, &colloc.data)?) };
    let mut terms = vec![(residual, w.residual)];
    terms.extend(ic.map(|n| (n, w.ic)));
    terms.extend(bc.map(|n| (n, w.bc)));
    terms.extend(data.map(|n| (n, w.data)));
    let total = t.weighted_sum(&terms);
    Ok(LossNodes { total, residual, ic, bc, data })
}

/// Weighted loss and its parameter gradient. Point sets are processed in
/// chunks of at most `chunk` points on separate tapes and accumulated in a
/// fixed order, which bounds memory on large collocation grids.
pub fn total_loss(
    problem: &ProblemSpec,
    model: &Model,
    params: &[f64],
    colloc: &CollocationSet,
    chunk: usize,
) -> Result<(LossReport, Gradient)> {
    check_model(problem, model)?;
    check_required(problem, colloc)?;
    if params.len() != model.num_params() {
        return Err(Error::Dimension(format!("model has {} parameters, got {}", model.num_params(), params.len())));
    }
    let chunk = chunk.max(1);
    let w = problem.weights;
    let mut report = LossReport::default();
    let mut grad = Gradient::zeros(params.len());
    let mut sets: Vec<(&PointSet, f64)> = vec![(&colloc.residual, w.residual)];
    sets.extend(colloc.initial.iter().map(|s| (s, w.ic)));
    sets.extend(colloc.boundary.iter().map(|s| (s, w.bc)));
    if !colloc.data.is_empty() {
        sets.push((&colloc.data, w.data));
    }
    for (set, weight) in sets {
        let mut value = 0.0;
        let n = set.len();
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let part = if start == 0 && end == n { set.clone() } else { set.slice(start..end) };
            let mut t = Tape::new(params);
            let node = record_term(&mut t, problem, model, &part)?;
            value += t.scalar(node);
            if weight != 0.0 {
                let g = t.gradient(node)?;
                for (acc, gi) in grad.values.iter_mut().zip(&g.values) {
                    *acc += weight * gi;
                }
            }
            start = end;
        }
        let slot = match set.kind {
            PointKind::Residual => &mut report.residual,
            PointKind::Initial => &mut report.ic,
            PointKind::Dirichlet | PointKind::RobinLeft | PointKind::RobinRight => &mut report.bc,
            PointKind::Data => &mut report.data,
        };
        *slot += value;
    }
    report.total = w.residual * report.residual + w.ic * report.ic + w.bc * report.bc + w.data * report.data;
    Ok((report, grad))
}

/// Model outputs at `coords` (coordinate-major), laid out `outputs × n`,
/// evaluated in chunks.
pub fn predict(model: &Model, params: &[f64], coords: &[f64], chunk: usize) -> Result<Vec<f64>> {
    let dims = model.input_dim();
    let n = coords.len() / dims;
    let rows = model.output_dim();
    let mut out = vec![0.0; rows * n];
    for_chunks(coords, dims, chunk, |start, part| {
        let m = part.len() / dims;
        let y = model.eval_batch(params, part)?;
        for r in 0..rows {
            out[r * n + start..r * n + start + m].copy_from_slice(&y[r * m..(r + 1) * m]);
        }
        Ok(())
    })?;
    Ok(out)
}

/// Residual components at `coords`, one vector per component.
pub fn evaluate_residuals(
    problem: &ProblemSpec,
    model: &Model,
    params: &[f64],
    coords: &[f64],
    chunk: usize,
) -> Result<Vec<Vec<f64>>> {
    check_model(problem, model)?;
    let dims = problem.input_dim();
    if !coords.len().is_multiple_of(dims) {
        return Err(Error::Dimension(format!("{} coordinates for {dims} inputs", coords.len())));
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    for_chunks(coords, dims, chunk, |_, part| {
        let mut t = Tape::new(params);
        let nodes = residual_nodes(&mut t, problem, model, part)?;
        out.resize(nodes.len(), Vec::new());
        for (o, node) in out.iter_mut().zip(nodes) {
            o.extend_from_slice(t.value(node));
        }
        Ok(())
    })?;
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite residual".into()));
    }
    Ok(out)
}

/// Residual components at a single point.
pub fn pde_residual(problem: &ProblemSpec, model: &Model, params: &[f64], point: &[f64]) -> Result<Vec<f64>> {
    if point.len() != problem.input_dim() {
        return Err(Error::Dimension(format!("{} expects {} coordinates", problem.id.name(), problem.input_dim())));
    }
    let r = evaluate_residuals(problem, model, params, point, 1)?;
    Ok(r.into_iter().map(|c| c[0]).collect())
}

/// Calls `f(start, coords)` on consecutive chunks of at most `chunk` points.
fn for_chunks(
    coords: &[f64],
    dims: usize,
    chunk: usize,
    mut f: impl FnMut(usize, &[f64]) -> Result<()>,
) -> Result<()> {
    let n = coords.len() / dims;
    let chunk = chunk.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        if start == 0 && end == n {
            f(0, coords)?;
        } else {
            let part: Vec<f64> = (0..dims).flat_map(|i| coords[i * n + start..i * n + end].iter().copied()).collect();
            f(start, &part)?;
        }
        start = end;
    }
    Ok(())
}
