//! Second-order Taylor jets with respect to at most two input coordinates.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::primitive::Primitive;
use crate::error::{Error, Result};

/// Value, gradient and Hessian of a scalar with respect to the network inputs.
///
/// Storage is fixed at two coordinates; entries beyond `dim` stay zero.
/// `hess` is written symmetrically by every operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
    dim: usize,
}

impl Jet {
    pub fn constant(value: f64, dim: usize) -> Self {
        debug_assert!(dim <= 2);
        Self { value, grad: [0.0; 2], hess: [[0.0; 2]; 2], dim }
    }

    /// Coordinate `i` of a `dim`-dimensional input seeded at `value`.
    pub fn variable(value: f64, i: usize, dim: usize) -> Self {
        let mut j = Self::constant(value, dim);
        j.grad[i] = 1.0;
        j
    }

    pub fn from_parts(value: f64, grad: &[f64], hess: &[[f64; 2]]) -> Self {
        let dim = grad.len();
        let mut j = Self::constant(value, dim);
        for a in 0..dim {
            j.grad[a] = grad[a];
            for b in 0..dim {
                j.hess[a][b] = hess[a][b];
            }
        }
        j
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Chain rule for `f(self)` given `[f, f', f'']` at `self.value`.
    pub fn chain(self, f: [f64; 3]) -> Self {
        let mut out = Self::constant(f[0], self.dim);
        for a in 0..self.dim {
            out.grad[a] = f[1] * self.grad[a];
            for b in 0..self.dim {
                out.hess[a][b] = f[2] * self.grad[a] * self.grad[b] + f[1] * self.hess[a][b];
            }
        }
        out
    }

    pub fn apply(self, p: Primitive) -> Self {
        let d = p.derivs(self.value, 2);
        self.chain([d[0], d[1], d[2]])
    }

    pub fn tanh(self) -> Self {
        self.apply(Primitive::Tanh)
    }
    pub fn silu(self) -> Self {
        self.apply(Primitive::Silu)
    }
    pub fn softplus(self) -> Self {
        self.apply(Primitive::Softplus)
    }
    pub fn exp(self) -> Self {
        self.apply(Primitive::Exp)
    }
    pub fn sin(self) -> Self {
        self.apply(Primitive::Sin)
    }
    pub fn cos(self) -> Self {
        self.apply(Primitive::Cos)
    }
    pub fn sqrt(self) -> Self {
        self.apply(Primitive::Sqrt)
    }
    pub fn ln(self) -> Self {
        self.apply(Primitive::Ln)
    }
    pub fn mexican_hat(self) -> Self {
        self.apply(Primitive::MexicanHat)
    }
    pub fn gaussian(self, gamma: f64) -> Self {
        self.apply(Primitive::Gaussian { gamma })
    }

    pub fn scale(self, c: f64) -> Self {
        let mut out = self;
        out.value *= c;
        for a in 0..2 {
            out.grad[a] *= c;
            for b in 0..2 {
                out.hess[a][b] *= c;
            }
        }
        out
    }

    fn zip(self, rhs: Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let dim = self.dim.max(rhs.dim);
        let mut out = Self::constant(f(self.value, rhs.value), dim);
        for a in 0..2 {
            out.grad[a] = f(self.grad[a], rhs.grad[a]);
            for b in 0..2 {
                out.hess[a][b] = f(self.hess[a][b], rhs.hess[a][b]);
            }
        }
        out
    }
}

/// Seed the input coordinates `x` as independent jet variables.
pub fn seed_inputs(x: &[f64]) -> Result<Vec<Jet>> {
    let d = x.len();
    if !(1..=2).contains(&d) {
        return Err(Error::Dimension(format!("jets support 1 or 2 inputs, got {d}")));
    }
    Ok(x.iter().enumerate().map(|(i, &v)| Jet::variable(v, i, d)).collect())
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        self.zip(rhs, |a, b| a + b)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        self.zip(rhs, |a, b| a - b)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let dim = self.dim.max(rhs.dim);
        let mut out = Self::constant(self.value * rhs.value, dim);
        for a in 0..2 {
            out.grad[a] = self.grad[a] * rhs.value + self.value * rhs.grad[a];
            for b in 0..2 {
                out.hess[a][b] = self.hess[a][b] * rhs.value
                    + self.grad[a] * rhs.grad[b]
                    + self.grad[b] * rhs.grad[a]
                    + self.value * rhs.hess[a][b];
            }
        }
        out
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        let v = rhs.value;
        let inv = rhs.chain([1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v)]);
        self * inv
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.value += rhs;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: f64) -> Jet {
        self.value -= rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        rhs.scale(self)
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, rhs: f64) -> Jet {
        self.scale(1.0 / rhs)
    }
}
