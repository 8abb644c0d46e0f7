use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{integrate_rk45, linspace, Field2D, Rk45Options};
use crate::error::{Error, Result};

pub const BURGERS_NU: f64 = 0.1;

/// Largest internal IMEX step for the Allen–Cahn solver.
const ALLEN_MAX_DT: f64 = 2.5e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllenCahnCase {
    One,
    Two,
}

impl AllenCahnCase {
    pub fn nu(self) -> f64 {
        match self {
            Self::One => 1e-3,
            Self::Two => 1e-4,
        }
    }

    /// Coefficient `a` of the reaction `a (u − u³)`.
    pub fn rate(self) -> f64 {
        match self {
            Self::One => 1.0,
            Self::Two => 5.0,
        }
    }

    pub fn initial(self, x: f64) -> f64 {
        match self {
            Self::One => 0.53 * x + 0.47 * (-1.5 * PI * x).sin(),
            Self::Two => x * x * (PI * x).cos(),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Self::One => "allen1",
            Self::Two => "allen2",
        }
    }
}

/// Allen–Cahn reference on `[-1, 1] × [0, 1]` with `u(±1, t) = ±1`.
pub fn solve_allen_cahn(case: AllenCahnCase, nx: usize, nt: usize) -> Result<Field2D> {
    if nx < 64 || nt < 64 {
        return Err(Error::Solver(format!("Allen–Cahn needs at least 64×64 points, got {nx}×{nt}")));
    }
    let x = linspace(-1.0, 1.0, nx);
    let u0: Vec<f64> = x.iter().map(|&x| case.initial(x)).collect();
    let values = allen_cahn_imex(case.nu(), case.rate(), &u0, (-1.0, 1.0), 2.0 / (nx - 1) as f64, nt)?;
    Field2D::new(case.id(), x, linspace(0.0, 1.0, nt), values)
}

/// Second-order IMEX (SBDF2) integration of `u_t = ν u_xx + a (u − u³)` on
/// a uniform grid with Dirichlet values `bc`, from `u0` over `t ∈ [0, 1]`.
/// Returns the `nt` equispaced output rows, time-major. The first output row
/// is `u0` as given; later rows carry the boundary values.
pub fn allen_cahn_imex(nu: f64, rate: f64, u0: &[f64], bc: (f64, f64), dx: f64, nt: usize) -> Result<Vec<f64>> {
    let nx = u0.len();
    if nx < 3 || nt < 2 {
        return Err(Error::Solver("grid too small".into()));
    }
    let dt_out = 1.0 / (nt - 1) as f64;
    let sub = (dt_out / ALLEN_MAX_DT).ceil().max(1.0) as usize;
    let dt = dt_out / sub as f64;
    let n = nx - 2;
    let r = nu * dt / (dx * dx);
    let reaction = |u: f64| rate * (u - u * u * u);

    let mut out = Vec::with_capacity(nx * nt);
    out.extend_from_slice(u0);
    let mut u: Vec<f64> = u0[1..nx - 1].to_vec();
    let mut u_prev = u.clone();
    let mut rhs = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut first = true;
    for _ in 1..nt {
        for _ in 0..sub {
            let next = if first {
                // IMEX Euler: (1 − dt ν L) u¹ = u⁰ + dt R(u⁰).
                for i in 0..n {
                    rhs[i] = u[i] + dt * reaction(u[i]);
                }
                rhs[0] += r * bc.0;
                rhs[n - 1] += r * bc.1;
                solve_toeplitz_tridiag(-r, 1.0 + 2.0 * r, &mut rhs, &mut scratch);
                first = false;
                rhs.clone()
            } else {
                // SBDF2: (3/2 − dt ν L) uⁿ⁺¹ = 2uⁿ − ½uⁿ⁻¹ + dt (2R(uⁿ) − R(uⁿ⁻¹)).
                for i in 0..n {
                    rhs[i] = 2.0 * u[i] - 0.5 * u_prev[i] + dt * (2.0 * reaction(u[i]) - reaction(u_prev[i]));
                }
                rhs[0] += r * bc.0;
                rhs[n - 1] += r * bc.1;
                solve_toeplitz_tridiag(-r, 1.5 + 2.0 * r, &mut rhs, &mut scratch);
                rhs.clone()
            };
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Solver("Allen–Cahn integration diverged; increase the resolution".into()));
            }
            u_prev = std::mem::replace(&mut u, next);
        }
        out.push(bc.0);
        out.extend_from_slice(&u);
        out.push(bc.1);
    }
    Ok(out)
}

/// Solves `T y = d` in place for the tridiagonal Toeplitz matrix with
/// off-diagonal `a` and diagonal `b` (Thomas algorithm).
fn solve_toeplitz_tridiag(a: f64, b: f64, d: &mut [f64], c: &mut [f64]) {
    let n = d.len();
    c[0] = a / b;
    d[0] /= b;
    for i in 1..n {
        let m = b - a * c[i - 1];
        c[i] = a / m;
        d[i] = (d[i] - a * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
}

/// Burgers reference on `[0, 1] × [0, 1]`, `u(x, 0) = sin(πx)`, homogeneous
/// Dirichlet data, ν = 0.1, by central-difference method of lines.
pub fn solve_burgers(nx: usize, nt: usize) -> Result<Field2D> {
    solve_burgers_nu(BURGERS_NU, nx, nt)
}

/// [`solve_burgers`] with viscosity `nu`.
pub fn solve_burgers_nu(nu: f64, nx: usize, nt: usize) -> Result<Field2D> {
    let x = linspace(0.0, 1.0, nx);
    let u0: Vec<f64> = x.iter().map(|&x| (PI * x).sin()).collect();
    let values = burgers_mol(nu, &u0, 1.0 / (nx - 1) as f64, nt)?;
    Field2D::new("burgers", x, linspace(0.0, 1.0, nt), values)
}

fn burgers_mol(nu: f64, u0: &[f64], dx: f64, nt: usize) -> Result<Vec<f64>> {
    let nx = u0.len();
    if nx < 3 || nt < 2 {
        return Err(Error::Solver("grid too small".into()));
    }
    let n = nx - 2;
    let inv2dx = 0.5 / dx;
    let invdx2 = 1.0 / (dx * dx);
    let rhs = move |_t: f64, u: &[f64], d: &mut [f64]| {
        for i in 0..n {
            let l = if i == 0 { 0.0 } else { u[i - 1] };
            let r = if i == n - 1 { 0.0 } else { u[i + 1] };
            d[i] = -u[i] * (r - l) * inv2dx + nu * (r - 2.0 * u[i] + l) * invdx2;
        }
    };
    let t_eval = linspace(0.0, 1.0, nt);
    let opts = Rk45Options { rtol: 1e-8, atol: 1e-10, ..Default::default() };
    let tr = integrate_rk45(rhs, &u0[1..nx - 1], (0.0, 1.0), &t_eval, &opts)?;
    let mut out = Vec::with_capacity(nx * nt);
    for (k, y) in tr.y.iter().enumerate() {
        if k == 0 {
            out.extend_from_slice(u0);
        } else {
            out.push(0.0);
            out.extend_from_slice(y);
            out.push(0.0);
        }
    }
    Ok(out)
}
