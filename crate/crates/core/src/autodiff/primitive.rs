//! Elementwise primitives with closed-form derivatives up to third order.
//!
//! Third derivatives are needed because the reverse sweep differentiates the
//! Hessian channel of a jet, which already contains `f''`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Tanh,
    Sigmoid,
    Silu,
    Softplus,
    Exp,
    Sin,
    Cos,
    Sqrt,
    Ln,
    Square,
    Cube,
    /// `(1 - r²) exp(-r²/2)`.
    MexicanHat,
    /// `exp(-γ r²)`.
    Gaussian { gamma: f64 },
    /// `d/dr exp(-r²/2) = -r exp(-r²/2)`.
    GaussianSlope,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe `log(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl Primitive {
    /// `[f, f', f'', f''']` at `x`; entries above `order` are left at zero.
    #[inline(always)]
    pub fn derivs(self, x: f64, order: usize) -> [f64; 4] {
        let mut d = [0.0; 4];
        match self {
            Primitive::Tanh => {
                let t = x.tanh();
                let s = 1.0 - t * t;
                d = [t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)];
            }
            Primitive::Sigmoid => {
                let s = sigmoid(x);
                let s1 = s * (1.0 - s);
                d = [s, s1, s1 * (1.0 - 2.0 * s), s1 * (1.0 - 6.0 * s + 6.0 * s * s)];
            }
            Primitive::Silu => {
                let s = sigmoid(x);
                if order == 0 {
                    d[0] = x * s;
                } else {
                    let s1 = s * (1.0 - s);
                    let s2 = s1 * (1.0 - 2.0 * s);
                    let s3 = s1 * (1.0 - 6.0 * s + 6.0 * s * s);
                    d = [x * s, s + x * s1, 2.0 * s1 + x * s2, 3.0 * s2 + x * s3];
                }
            }
            Primitive::Softplus => {
                let s = sigmoid(x);
                let s1 = s * (1.0 - s);
                d = [softplus(x), s, s1, s1 * (1.0 - 2.0 * s)];
            }
            Primitive::Exp => {
                let e = x.exp();
                d = [e; 4];
            }
            Primitive::Sin => {
                let (s, c) = x.sin_cos();
                d = [s, c, -s, -c];
            }
            Primitive::Cos => {
                let (s, c) = x.sin_cos();
                d = [c, -s, -c, s];
            }
            Primitive::Sqrt => {
                let r = x.sqrt();
                d = [r, 0.5 / r, -0.25 / (r * x), 0.375 / (r * x * x)];
            }
            Primitive::Ln => {
                let inv = 1.0 / x;
                d = [x.ln(), inv, -inv * inv, 2.0 * inv * inv * inv];
            }
            Primitive::Square => d = [x * x, 2.0 * x, 2.0, 0.0],
            Primitive::Cube => d = [x * x * x, 3.0 * x * x, 6.0 * x, 6.0],
            Primitive::MexicanHat => {
                let r2 = x * x;
                let e = (-0.5 * r2).exp();
                d = [
                    (1.0 - r2) * e,
                    x * (r2 - 3.0) * e,
                    (-r2 * r2 + 6.0 * r2 - 3.0) * e,
                    x * (r2 * r2 - 10.0 * r2 + 15.0) * e,
                ];
            }
            Primitive::Gaussian { gamma } => {
                let e = (-gamma * x * x).exp();
                let g2 = gamma * gamma;
                d = [
                    e,
                    -2.0 * gamma * x * e,
                    (4.0 * g2 * x * x - 2.0 * gamma) * e,
                    (-8.0 * g2 * gamma * x * x * x + 12.0 * g2 * x) * e,
                ];
            }
            Primitive::GaussianSlope => {
                let r2 = x * x;
                let e = (-0.5 * r2).exp();
                d = [
                    -x * e,
                    (r2 - 1.0) * e,
                    x * (3.0 - r2) * e,
                    (r2 * r2 - 6.0 * r2 + 3.0) * e,
                ];
            }
        }
        match order {
            0 => (d[1], d[2], d[3]) = (0.0, 0.0, 0.0),
            1 => (d[2], d[3]) = (0.0, 0.0),
            2 => d[3] = 0.0,
            _ => {}
        }
        d
    }

    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Primitive::Tanh => x.tanh(),
            Primitive::Exp => x.exp(),
            Primitive::Sin => x.sin(),
            Primitive::Cos => x.cos(),
            Primitive::Softplus => softplus(x),
            _ => self.derivs(x, 0)[0],
        }
    }

    /// Whether the primitive is only defined for positive arguments.
    pub fn needs_positive(self) -> bool {
        matches!(self, Primitive::Sqrt | Primitive::Ln)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Primitive; 14] = [
        Primitive::Tanh,
        Primitive::Sigmoid,
        Primitive::Silu,
        Primitive::Softplus,
        Primitive::Exp,
        Primitive::Sin,
        Primitive::Cos,
        Primitive::Sqrt,
        Primitive::Ln,
        Primitive::Square,
        Primitive::Cube,
        Primitive::MexicanHat,
        Primitive::Gaussian { gamma: 2.0 },
        Primitive::GaussianSlope,
    ];

    #[test]
    fn derivative_tables_match_finite_differences() {
        let h = 1e-4;
        for p in ALL {
            for i in 0..50 {
                let mut x = -2.0 + 4.0 * (i as f64 + 0.37) / 50.0;
                if p.needs_positive() {
                    x = x.abs() + 0.3;
                }
                let d = p.derivs(x, 3);
                let dp = p.derivs(x + h, 3);
                let dm = p.derivs(x - h, 3);
                for k in 0..3 {
                    let fd = (dp[k] - dm[k]) / (2.0 * h);
                    let err = (fd - d[k + 1]).abs() / d[k + 1].abs().max(1.0);
                    assert!(err < 1e-6, "{p:?} order {} at {x}: {fd} vs {}", k + 1, d[k + 1]);
                }
            }
        }
    }

    #[test]
    fn softplus_is_overflow_safe() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(softplus_inv(0.25)) - 0.25).abs() < 1e-14);
    }
}
