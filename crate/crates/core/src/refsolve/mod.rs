//! Classical reference solvers: adaptive Runge–Kutta, method-of-lines
//! parabolic solvers and the transfer-matrix Helmholtz solver.

mod cache;
mod helmholtz;
mod parabolic;
mod rk45;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{cache_dir_from_env, cached, Cacheable, FieldCache, Sidecar};
pub use helmholtz::{solve_helmholtz_fd, solve_helmholtz_tmm, PermittivityProfile, Segment, TmmSolution};
pub use parabolic::{allen_cahn_imex, solve_allen_cahn, solve_burgers, solve_burgers_nu, AllenCahnCase, BURGERS_NU};
pub use rk45::{integrate_rk45, Rk45Options, Trajectory};

/// Default reference resolution for the parabolic problems.
pub const REFERENCE_NX: usize = 512;
pub const REFERENCE_NT: usize = 2000;
/// Default Helmholtz sample count.
pub const REFERENCE_NZ: usize = 2048;

/// `n` equispaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// Real field on a space-time tensor grid, stored time-major:
/// `values[it * nx + ix]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub problem: String,
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub values: Vec<f64>,
}

impl Field2D {
    pub fn new(problem: impl Into<String>, x: Vec<f64>, t: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if !strictly_increasing(&x) || !strictly_increasing(&t) {
            return Err(Error::Solver("field grids must be strictly increasing".into()));
        }
        if values.len() != x.len() * t.len() {
            return Err(Error::Dimension(format!(
                "field has {} values for a {}×{} grid",
                values.len(),
                x.len(),
                t.len()
            )));
        }
        Ok(Self { problem: problem.into(), x, t, values })
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn nt(&self) -> usize {
        self.t.len()
    }

    pub fn at(&self, ix: usize, it: usize) -> f64 {
        self.values[it * self.x.len() + ix]
    }

    /// Spatial profile at time index `it`.
    pub fn row(&self, it: usize) -> &[f64] {
        let nx = self.x.len();
        &self.values[it * nx..(it + 1) * nx]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest difference to `fine` at the points shared by both grids,
    /// where `fine` is this grid refined by an integer factor in each axis.
    pub fn max_diff_nested(&self, fine: &Field2D) -> Result<f64> {
        let fx = refinement(&self.x, &fine.x)?;
        let ft = refinement(&self.t, &fine.t)?;
        let mut m = 0.0f64;
        for it in 0..self.nt() {
            for ix in 0..self.nx() {
                m = m.max((self.at(ix, it) - fine.at(ix * fx, it * ft)).abs());
            }
        }
        Ok(m)
    }
}

fn refinement(coarse: &[f64], fine: &[f64]) -> Result<usize> {
    let (nc, nf) = (coarse.len(), fine.len());
    if nc < 2 || (nf - 1) % (nc - 1) != 0 {
        return Err(Error::Dimension(format!("grid of {nf} points does not refine one of {nc}")));
    }
    Ok((nf - 1) / (nc - 1))
}

/// Complex field on a 1-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field1D {
    pub problem: String,
    pub z: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl Field1D {
    pub fn new(problem: impl Into<String>, z: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if !strictly_increasing(&z) {
            return Err(Error::Solver("field grid must be strictly increasing".into()));
        }
        if values.len() != z.len() {
            return Err(Error::Dimension(format!("field has {} values for {} points", values.len(), z.len())));
        }
        Ok(Self { problem: problem.into(), z, values })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// `‖self − other‖₂ / ‖other‖₂` over shared sample indices.
    pub fn relative_l2(&self, other: &Field1D) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::Dimension("fields sampled on different grids".into()));
        }
        let num: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = other.values.iter().map(|b| b.norm_sqr()).sum();
        Ok((num / den).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self { sigma: 10.0, rho: 15.0, beta: 8.0 / 3.0 }
    }
}

impl LorenzParams {
    pub fn rhs(&self, y: &[f64], d: &mut [f64]) {
        d[0] = self.sigma * (y[1] - y[0]);
        d[1] = y[0] * (self.rho - y[2]) - y[1];
        d[2] = y[0] * y[1] - self.beta * y[2];
    }
}

/// Lorenz trajectory from `y0` sampled at the sorted times `t_eval`.
pub fn solve_lorenz(params: LorenzParams, y0: [f64; 3], t_end: f64, t_eval: &[f64]) -> Result<Trajectory> {
    let opts = Rk45Options { rtol: 1e-10, atol: 1e-12, ..Default::default() };
    integrate_rk45(|_, y, d| params.rhs(y, d), &y0, (0.0, t_end), t_eval, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_endpoints() {
        let v = linspace(-1.0, 1.0, 5);
        assert_eq!(v, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(linspace(0.0, 1.0, 1), vec![0.0]);
    }

    #[test]
    fn field_shape_checked() {
        assert!(Field2D::new("p", vec![0.0, 1.0], vec![0.0], vec![1.0]).is_err());
        assert!(Field2D::new("p", vec![1.0, 0.0], vec![0.0], vec![1.0, 2.0]).is_err());
        let f = Field2D::new("p", vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.at(1, 1), 4.0);
        assert_eq!(f.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn nested_difference() {
        let c = Field2D::new("p", linspace(0.0, 1.0, 2), linspace(0.0, 1.0, 2), vec![0.0, 1.0, 2.0, 3.5]).unwrap();
        let mut vals = Vec::new();
        for it in 0..3 {
            for ix in 0..3 {
                vals.push(ix as f64 * 0.5 + it as f64);
            }
        }
        let f = Field2D::new("p", linspace(0.0, 1.0, 3), linspace(0.0, 1.0, 3), vals).unwrap();
        assert!((c.max_diff_nested(&f).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lorenz_settles_to_fixed_point() {
        let p = LorenzParams::default();
        let tr = solve_lorenz(p, [1.0, 1.0, 1.0], 20.0, &[20.0]).unwrap();
        let c = (p.beta * (p.rho - 1.0)).sqrt();
        let y = &tr.y[0];
        assert!((y[2] - 14.0).abs() < 1.0, "{y:?}");
        assert!((y[0].abs() - c).abs() < 1.0);
    }
}
