//! Physics-informed problem definitions.
//!
//! A [`ProblemSpec`] fixes the equation, its coefficients, the collocation
//! budget and the loss weights. [`sample_points`] turns it into concrete
//! point sets, and [`record_loss`] builds the weighted residual, initial,
//! boundary and data terms on a tape so that parameter gradients come from
//! the same reverse sweep as any other loss.

mod loss;
mod sampling;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refsolve::{AllenCahnCase, PermittivityProfile, REFERENCE_NT, REFERENCE_NX, REFERENCE_NZ};

pub use loss::{
    evaluate_residuals, pde_residual, predict, record_loss, residual_nodes, total_loss, LossNodes, LossReport,
};
pub use sampling::{compute_reference, sample_points, CollocationSet, PointKind, PointSet, Reference, WaveReference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemId {
    Allen1,
    Allen2,
    Burgers,
    Lorenz,
    Helmholtz,
}

impl ProblemId {
    pub const ALL: [ProblemId; 5] =
        [ProblemId::Allen1, ProblemId::Allen2, ProblemId::Burgers, ProblemId::Lorenz, ProblemId::Helmholtz];

    pub fn name(self) -> &'static str {
        match self {
            ProblemId::Allen1 => "allen1",
            ProblemId::Allen2 => "allen2",
            ProblemId::Burgers => "burgers",
            ProblemId::Lorenz => "lorenz",
            ProblemId::Helmholtz => "helmholtz",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

/// Governing equation and its coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "equation", rename_all = "snake_case")]
pub enum Equation {
    /// `u_t = ν u_xx + a (u − u³)` on `[-1, 1] × [0, 1]`, `u(±1, t) = ±1`.
    AllenCahn { case: AllenCahnCase, nu: f64, rate: f64 },
    /// `u_t + u u_x = ν u_xx` on `[0, 1] × [0, 1]`, `u(x, 0) = sin(πx)`.
    Burgers { nu: f64 },
    /// Lorenz system on `[0, t_end]`.
    Lorenz { sigma: f64, rho: f64, beta: f64, t_end: f64, initial: [f64; 3] },
    /// `u_zz + ε(z) (2π/λ)² u = 0` on `[0, 1]` with Robin radiation
    /// conditions, trained over a wavelength band. Exterior wavenumbers
    /// default to the vacuum value `2π/λ`.
    Helmholtz {
        profile: PermittivityProfile,
        lambda_range: [f64; 2],
        lambda_eval: Vec<f64>,
        a_inc: [f64; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_minus: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_plus: Option<f64>,
    },
}

impl Equation {
    /// Exterior wavenumbers `(k₋, k₊)` at wavelength `lambda`.
    pub fn exterior_wavenumbers(&self, lambda: f64) -> (f64, f64) {
        match self {
            Equation::Helmholtz { k_minus, k_plus, .. } => {
                let k0 = 2.0 * PI / lambda;
                (k_minus.unwrap_or(k0), k_plus.unwrap_or(k0))
            }
            _ => (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub residual: f64,
    pub ic: f64,
    pub bc: f64,
    pub data: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { residual: 1.0, ic: 1.0, bc: 1.0, data: 1.0 }
    }
}

/// One physics case study.
///
/// `n_x × n_t` is the residual collocation grid. For the Lorenz system only
/// `n_t` (time) is used; for Helmholtz `n_x` counts positions and `n_t`
/// wavelengths. `n_ic` initial points lie at `t = 0`; `n_bc` boundary
/// abscissae are used on each side (wavelengths for Helmholtz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: ProblemId,
    #[serde(flatten)]
    pub equation: Equation,
    pub n_x: usize,
    pub n_t: usize,
    pub n_ic: usize,
    pub n_bc: usize,
    pub data_fraction: f64,
    #[serde(default)]
    pub weights: LossWeights,
    /// Reference solution grid: `[nx, nt]` for the parabolic problems,
    /// `[samples, _]` for Lorenz and Helmholtz.
    pub reference_grid: [usize; 2],
}

impl ProblemSpec {
    pub fn preset(id: ProblemId) -> Self {
        let (equation, n_x, n_t, n_ic, n_bc, reference_grid) = match id {
            ProblemId::Allen1 | ProblemId::Allen2 => {
                let case = if id == ProblemId::Allen1 { AllenCahnCase::One } else { AllenCahnCase::Two };
                let eq = Equation::AllenCahn { case, nu: case.nu(), rate: case.rate() };
                (eq, 100, 100, 100, 100, [REFERENCE_NX, REFERENCE_NT])
            }
            ProblemId::Burgers => (Equation::Burgers { nu: 0.1 }, 100, 100, 100, 100, [REFERENCE_NX, REFERENCE_NT]),
            ProblemId::Lorenz => {
                let eq = Equation::Lorenz { sigma: 10.0, rho: 15.0, beta: 8.0 / 3.0, t_end: 20.0, initial: [1.0; 3] };
                (eq, 1, 100, 1, 0, [2001, 1])
            }
            ProblemId::Helmholtz => {
                let eq = Equation::Helmholtz {
                    profile: PermittivityProfile::default(),
                    lambda_range: [1.0 / 30.0, 1.0 / 10.0],
                    lambda_eval: vec![1.0 / 15.0, 1.0 / 20.0, 1.0 / 25.0],
                    a_inc: [1.0, 0.0],
                    k_minus: None,
                    k_plus: None,
                };
                (eq, 400, 16, 0, 16, [REFERENCE_NZ, 1])
            }
        };
        Self { id, equation, n_x, n_t, n_ic, n_bc, data_fraction: 0.1, weights: LossWeights::default(), reference_grid }
    }

    pub fn input_dim(&self) -> usize {
        match self.id {
            ProblemId::Lorenz => 1,
            _ => 2,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self.id {
            ProblemId::Lorenz => 3,
            ProblemId::Helmholtz => 2,
            _ => 1,
        }
    }

    /// Box of the model inputs: `(x, t)`, `(t)` or `(z, λ)`.
    pub fn domain(&self) -> Vec<[f64; 2]> {
        match &self.equation {
            Equation::AllenCahn { .. } => vec![[-1.0, 1.0], [0.0, 1.0]],
            Equation::Burgers { .. } => vec![[0.0, 1.0], [0.0, 1.0]],
            Equation::Lorenz { t_end, .. } => vec![[0.0, *t_end]],
            Equation::Helmholtz { lambda_range, .. } => vec![[0.0, 1.0], *lambda_range],
        }
    }

    pub fn residual_count(&self) -> usize {
        match self.id {
            ProblemId::Lorenz => self.n_t,
            _ => self.n_x * self.n_t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let consistent = matches!(
            (self.id, &self.equation),
            (ProblemId::Allen1, Equation::AllenCahn { case: AllenCahnCase::One, .. })
                | (ProblemId::Allen2, Equation::AllenCahn { case: AllenCahnCase::Two, .. })
                | (ProblemId::Burgers, Equation::Burgers { .. })
                | (ProblemId::Lorenz, Equation::Lorenz { .. })
                | (ProblemId::Helmholtz, Equation::Helmholtz { .. })
        );
        if !consistent {
            return Err(Error::Config(format!("equation does not match problem {}", self.id.name())));
        }
        let w = self.weights;
        if [w.residual, w.ic, w.bc, w.data].iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.data_fraction) {
            return Err(Error::Config(format!("data fraction {} outside [0, 1]", self.data_fraction)));
        }
        let needs = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Config(format!("{} needs {name} >= 1", self.id.name())))
            } else {
                Ok(())
            }
        };
        needs("n_t", self.n_t)?;
        needs("n_x", self.n_x)?;
        match &self.equation {
            Equation::AllenCahn { nu, .. } | Equation::Burgers { nu } => {
                needs("n_ic", self.n_ic)?;
                needs("n_bc", self.n_bc)?;
                if !(*nu > 0.0) {
                    return Err(Error::Config("viscosity must be positive".into()));
                }
                if self.reference_grid[0] < 64 || self.reference_grid[1] < 64 {
                    return Err(Error::Config("reference grid must be at least 64×64".into()));
                }
            }
            Equation::Lorenz { t_end, .. } => {
                needs("n_ic", self.n_ic)?;
                if !(*t_end > 0.0) {
                    return Err(Error::Config("t_end must be positive".into()));
                }
                needs("reference samples", self.reference_grid[0].saturating_sub(1))?;
            }
            Equation::Helmholtz { profile, lambda_range, lambda_eval, .. } => {
                needs("n_bc", self.n_bc)?;
                profile.validate()?;
                let [lo, hi] = *lambda_range;
                if !(lo > 0.0 && hi > lo) {
                    return Err(Error::Config(format!("invalid wavelength range {lambda_range:?}")));
                }
                if lambda_eval.iter().any(|l| !(lo..=hi).contains(l)) {
                    return Err(Error::Config("evaluation wavelengths must lie in the training range".into()));
                }
                needs("reference samples", self.reference_grid[0].saturating_sub(1))?;
            }
        }
        Ok(())
    }
}
