use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng as _;

use super::{Equation, ProblemId, ProblemSpec};
use crate::error::{Error, Result};
use crate::refsolve::{
    allen_cahn_imex, cached, linspace, solve_burgers_nu, solve_helmholtz_tmm, solve_lorenz, Field2D, FieldCache,
    LorenzParams, PermittivityProfile, TmmSolution,
};
use crate::rng::{self, purpose};

/// Role of a point set in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Residual,
    /// Value targets at `t = 0`.
    Initial,
    /// Dirichlet value targets on the boundary.
    Dirichlet,
    /// `u_z + i k₋ u = 2 i k₋ A` at `z = 0`.
    RobinLeft,
    /// `u_z − i k₊ u = 0` at `z = 1`.
    RobinRight,
    /// Supervised samples of the reference solution.
    Data,
}

/// Points given coordinate-major (`coords[i * n + p]`) with targets laid
/// out `outputs × n`. The term contributes `scale · Σ |·|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub kind: PointKind,
    pub dims: usize,
    pub coords: Vec<f64>,
    pub targets: Vec<f64>,
    pub scale: f64,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.coords.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coord(&self, i: usize, p: usize) -> f64 {
        self.coords[i * self.len() + p]
    }

    /// Coordinates of point `p`.
    pub fn point(&self, p: usize) -> Vec<f64> {
        (0..self.dims).map(|i| self.coord(i, p)).collect()
    }

    /// Points `range`, keeping the scale of the full set.
    pub fn slice(&self, range: std::ops::Range<usize>) -> PointSet {
        let n = self.len();
        let gather = |v: &[f64], rows: usize| {
            (0..rows).flat_map(|r| v[r * n + range.start..r * n + range.end].iter().copied()).collect::<Vec<_>>()
        };
        let rows_t = if n == 0 { 0 } else { self.targets.len() / n };
        PointSet {
            kind: self.kind,
            dims: self.dims,
            coords: gather(&self.coords, self.dims),
            targets: gather(&self.targets, rows_t),
            scale: self.scale,
        }
    }

    /// Reorders points by `perm` (a permutation of `0..len`).
    pub fn permuted(&self, perm: &[usize]) -> PointSet {
        let n = self.len();
        assert_eq!(perm.len(), n);
        let apply = |v: &[f64]| {
            let rows = if n == 0 { 0 } else { v.len() / n };
            (0..rows).flat_map(|r| perm.iter().map(move |&p| v[r * n + p])).collect::<Vec<_>>()
        };
        PointSet { coords: apply(&self.coords), targets: apply(&self.targets), ..self.clone() }
    }

    fn new(kind: PointKind, dims: usize, coords: Vec<f64>, targets: Vec<f64>, scale: f64) -> Self {
        Self { kind, dims, coords, targets, scale }
    }
}

/// All point sets of one problem. Sets not used by the problem are absent;
/// `data` is empty when the data fraction is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub residual: PointSet,
    pub initial: Option<PointSet>,
    pub boundary: Vec<PointSet>,
    pub data: PointSet,
}

impl CollocationSet {
    pub fn sets(&self) -> impl Iterator<Item = &PointSet> {
        std::iter::once(&self.residual).chain(self.initial.iter()).chain(self.boundary.iter()).chain([&self.data])
    }
}

/// Ground truth for a problem.
#[derive(Debug, Clone)]
pub enum Reference {
    /// Space-time field on the reference grid.
    Field(Field2D),
    /// Lorenz trajectory sampled at `t`, one `[x, y, z]` per time.
    Trajectory { t: Vec<f64>, y: Vec<[f64; 3]> },
    /// Helmholtz scattering, solved per wavelength on demand.
    Wave(WaveReference),
}

#[derive(Debug, Clone)]
pub struct WaveReference {
    pub profile: PermittivityProfile,
    pub a_inc: Complex64,
    pub k_minus: Option<f64>,
    pub k_plus: Option<f64>,
    /// Sample positions used for data assist and field comparisons.
    pub z: Vec<f64>,
}

impl WaveReference {
    pub fn solve(&self, lambda: f64) -> Result<TmmSolution> {
        let k0 = 2.0 * PI / lambda;
        solve_helmholtz_tmm(
            &self.profile,
            lambda,
            self.a_inc,
            self.k_minus.unwrap_or(k0),
            self.k_plus.unwrap_or(k0),
        )
    }
}

/// Computes (or loads from `cache`) the reference solution of `problem`.
pub fn compute_reference(problem: &ProblemSpec, cache: Option<&FieldCache>) -> Result<Reference> {
    problem.validate()?;
    let [n0, n1] = problem.reference_grid;
    match &problem.equation {
        Equation::AllenCahn { case, nu, rate } => {
            let key = format!("{}_nu{nu:e}_a{rate:e}_{n0}x{n1}", problem.id.name());
            let field = cached(cache, &key, || {
                let x = linspace(-1.0, 1.0, n0);
                let u0: Vec<f64> = x.iter().map(|&x| case.initial(x)).collect();
                let values = allen_cahn_imex(*nu, *rate, &u0, (-1.0, 1.0), 2.0 / (n0 - 1) as f64, n1)?;
                Field2D::new(problem.id.name(), x, linspace(0.0, 1.0, n1), values)
            })?;
            Ok(Reference::Field(field))
        }
        Equation::Burgers { nu } => {
            let key = format!("burgers_nu{nu:e}_{n0}x{n1}");
            Ok(Reference::Field(cached(cache, &key, || solve_burgers_nu(*nu, n0, n1))?))
        }
        Equation::Lorenz { sigma, rho, beta, t_end, initial } => {
            let t = linspace(0.0, *t_end, n0);
            let params = LorenzParams { sigma: *sigma, rho: *rho, beta: *beta };
            let tr = solve_lorenz(params, *initial, *t_end, &t)?;
            let y = tr.y.iter().map(|v| [v[0], v[1], v[2]]).collect();
            Ok(Reference::Trajectory { t, y })
        }
        Equation::Helmholtz { profile, a_inc, k_minus, k_plus, .. } => Ok(Reference::Wave(WaveReference {
            profile: profile.clone(),
            a_inc: Complex64::new(a_inc[0], a_inc[1]),
            k_minus: *k_minus,
            k_plus: *k_plus,
            z: linspace(0.0, 1.0, n0),
        })),
    }
}

/// Builds the collocation, initial, boundary and data sets of `problem`.
/// The residual, initial and boundary sets are deterministic grids; only
/// the data subsample depends on `seed`. `reference` is required when the
/// data fraction is positive.
pub fn sample_points(problem: &ProblemSpec, seed: u64, reference: Option<&Reference>) -> Result<CollocationSet> {
    problem.validate()?;
    let [dom_a, dom_b] = match problem.domain()[..] {
        [a] => [a, a],
        [a, b] => [a, b],
        _ => unreachable!("problems have one or two inputs"),
    };
    let (nx, nt) = (problem.n_x, problem.n_t);
    let mut residual = match problem.id {
        ProblemId::Lorenz => {
            let t = linspace(dom_a[0], dom_a[1], nt);
            PointSet::new(PointKind::Residual, 1, t, Vec::new(), 0.0)
        }
        _ => {
            let xs = linspace(dom_a[0], dom_a[1], nx);
            let ts = linspace(dom_b[0], dom_b[1], nt);
            let mut coords = Vec::with_capacity(2 * nx * nt);
            coords.extend(ts.iter().flat_map(|_| xs.iter().copied()));
            coords.extend(ts.iter().flat_map(|&t| std::iter::repeat_n(t, nx)));
            PointSet::new(PointKind::Residual, 2, coords, Vec::new(), 0.0)
        }
    };
    residual.scale = 1.0 / residual.len() as f64;

    let (initial, boundary) = match &problem.equation {
        Equation::AllenCahn { case, .. } => {
            let xs = linspace(-1.0, 1.0, problem.n_ic);
            let targets = xs.iter().map(|&x| case.initial(x)).collect();
            let ic = initial_set(xs, targets);
            (Some(ic), vec![dirichlet_set(problem.n_bc, [-1.0, 1.0], [-1.0, 1.0])])
        }
        Equation::Burgers { .. } => {
            let xs = linspace(0.0, 1.0, problem.n_ic);
            let targets = xs.iter().map(|&x| (PI * x).sin()).collect();
            (Some(initial_set(xs, targets)), vec![dirichlet_set(problem.n_bc, [0.0, 1.0], [0.0, 0.0])])
        }
        Equation::Lorenz { initial, .. } => {
            let coords = vec![0.0; problem.n_ic];
            let targets = initial.iter().flat_map(|&v| std::iter::repeat_n(v, problem.n_ic)).collect();
            (Some(PointSet::new(PointKind::Initial, 1, coords, targets, 1.0)), Vec::new())
        }
        Equation::Helmholtz { lambda_range, .. } => {
            let ls = linspace(lambda_range[0], lambda_range[1], problem.n_bc);
            let side = |kind, z: f64| {
                let mut coords = vec![z; ls.len()];
                coords.extend_from_slice(&ls);
                PointSet::new(kind, 2, coords, Vec::new(), 1.0 / ls.len() as f64)
            };
            (None, vec![side(PointKind::RobinLeft, 0.0), side(PointKind::RobinRight, 1.0)])
        }
    };

    let data = if problem.data_fraction > 0.0 {
        let reference =
            reference.ok_or_else(|| Error::Config("data assist requires a reference solution".into()))?;
        let mut rng = rng::stream(seed, purpose::DATA_ASSIST);
        data_set(problem, reference, &mut rng)?
    } else {
        PointSet::new(PointKind::Data, problem.input_dim(), Vec::new(), Vec::new(), 0.0)
    };
    if data.targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("reference data contains non-finite values".into()));
    }
    Ok(CollocationSet { residual, initial, boundary, data })
}

fn initial_set(xs: Vec<f64>, targets: Vec<f64>) -> PointSet {
    let n = xs.len();
    let mut coords = xs;
    coords.extend(std::iter::repeat_n(0.0, n));
    PointSet::new(PointKind::Initial, 2, coords, targets, 1.0 / n as f64)
}

/// `n` times on each of the two spatial endpoints `xs`, with values `vals`,
/// weighted `1/n` so both sides sum into one averaged term.
fn dirichlet_set(n: usize, xs: [f64; 2], vals: [f64; 2]) -> PointSet {
    let ts = linspace(0.0, 1.0, n);
    let mut coords: Vec<f64> = xs.iter().flat_map(|&x| std::iter::repeat_n(x, n)).collect();
    coords.extend(ts.iter().chain(ts.iter()));
    let targets = vals.iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
    PointSet::new(PointKind::Dirichlet, 2, coords, targets, 1.0 / n as f64)
}

fn fraction_of(frac: f64, total: usize) -> usize {
    ((frac * total as f64).round() as usize).clamp(1, total)
}

fn data_set(problem: &ProblemSpec, reference: &Reference, rng: &mut rng::Rng) -> Result<PointSet> {
    let frac = problem.data_fraction;
    let count = fraction_of(frac, problem.residual_count());
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    let mut targets: Vec<Vec<f64>> = vec![Vec::new(); problem.output_dim()];
    match (problem.id, reference) {
        (ProblemId::Burgers, Reference::Field(f)) => {
            let nx = f.nx();
            let slices = index::sample(rng, f.nt(), fraction_of(frac, f.nt())).into_vec();
            for it in slices {
                let row = f.row(it);
                let mut by_slope: Vec<usize> = (0..nx).collect();
                let slope = |i: usize| {
                    let (l, r) = (i.saturating_sub(1), (i + 1).min(nx - 1));
                    ((row[r] - row[l]) / (f.x[r] - f.x[l])).abs()
                };
                by_slope.sort_by(|&a, &b| slope(b).total_cmp(&slope(a)).then(a.cmp(&b)));
                let mut chosen: Vec<usize> = by_slope[..5.min(nx)].to_vec();
                let mut extra = 0;
                while extra < 5 && chosen.len() < nx {
                    let i = rng.gen_range(0..nx);
                    if !chosen.contains(&i) {
                        chosen.push(i);
                        extra += 1;
                    }
                }
                for ix in chosen {
                    xs.push(f.x[ix]);
                    ts.push(f.t[it]);
                    targets[0].push(row[ix]);
                }
            }
        }
        (ProblemId::Allen1 | ProblemId::Allen2, Reference::Field(f)) => {
            let total = f.values.len();
            for k in index::sample(rng, total, count.min(total)).into_vec() {
                let (it, ix) = (k / f.nx(), k % f.nx());
                xs.push(f.x[ix]);
                ts.push(f.t[it]);
                targets[0].push(f.values[k]);
            }
        }
        (ProblemId::Lorenz, Reference::Trajectory { t, y }) => {
            for k in index::sample(rng, t.len(), count.min(t.len())).into_vec() {
                xs.push(t[k]);
                for c in 0..3 {
                    targets[c].push(y[k][c]);
                }
            }
        }
        (ProblemId::Helmholtz, Reference::Wave(w)) => {
            let Equation::Helmholtz { lambda_range, .. } = &problem.equation else { unreachable!() };
            let lambdas = linspace(lambda_range[0], lambda_range[1], problem.n_t);
            let nz = w.z.len();
            let total = nz * lambdas.len();
            let mut picks = index::sample(rng, total, count.min(total)).into_vec();
            picks.sort_unstable();
            let mut current: Option<(usize, TmmSolution)> = None;
            for k in picks {
                let (il, iz) = (k / nz, k % nz);
                if current.as_ref().is_none_or(|(l, _)| *l != il) {
                    current = Some((il, w.solve(lambdas[il])?));
                }
                let u = current.as_ref().unwrap().1.u(w.z[iz]);
                xs.push(w.z[iz]);
                ts.push(lambdas[il]);
                targets[0].push(u.re);
                targets[1].push(u.im);
            }
        }
        _ => return Err(Error::Config(format!("reference does not match problem {}", problem.id.name()))),
    }
    let n = xs.len();
    let mut coords = xs;
    coords.extend(ts);
    Ok(PointSet::new(PointKind::Data, problem.input_dim(), coords, targets.concat(), 1.0 / n as f64))
}
