//! Univariate basis families and activations.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet, Primitive};
use crate::error::{Error, Result};

/// Largest supported spline order.
pub const MAX_SPLINE_ORDER: usize = 7;

/// Uniform B-spline grid on `[lo, hi]`, extended by `order` knots on each side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsplineGrid {
    pub grid_size: usize,
    pub order: usize,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
}

fn default_lo() -> f64 {
    -1.0
}

fn default_hi() -> f64 {
    1.0
}

impl BsplineGrid {
    pub fn new(grid_size: usize, order: usize) -> Self {
        Self { grid_size, order, lo: -1.0, hi: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 1 {
            return Err(Error::Spec("spline grid_size must be at least 1".into()));
        }
        if self.order > MAX_SPLINE_ORDER {
            return Err(Error::Spec(format!("spline order {} exceeds {MAX_SPLINE_ORDER}", self.order)));
        }
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Spec(format!("invalid spline range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn num_bases(&self) -> usize {
        self.grid_size + self.order
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.grid_size as f64
    }

    /// Extended knot vector `t_j = lo + (j - order) h`.
    pub fn knots(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.grid_size + 2 * self.order + 1)
            .map(|j| self.lo + (j as f64 - self.order as f64) * h)
            .collect()
    }

    /// All basis values at `x` (clamped into the range).
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut d = vec![[0.0; 4]; self.num_bases()];
        self.eval_with_derivs(x, 0, &mut d);
        d.iter().map(|v| v[0]).collect()
    }

    /// Writes `[B_j, B_j', B_j'', B_j''']` for every basis, computing
    /// derivatives up to `deriv_order` (the rest stay zero).
    ///
    /// Inputs outside the range are clamped and their derivatives are zero.
    pub fn eval_with_derivs(&self, x: f64, deriv_order: usize, out: &mut [[f64; 4]]) {
        let p = self.order;
        let nb = self.num_bases();
        debug_assert_eq!(out.len(), nb);
        let h = self.spacing();
        let clamped = x < self.lo || x > self.hi;
        let x = x.clamp(self.lo, self.hi);
        let t = |j: usize| self.lo + (j as f64 - p as f64) * h;

        // Span index m with t_m <= x < t_{m+1}; x == hi falls in the first
        // extension interval, which is inside the extended knot vector.
        let m = (p + (((x - self.lo) / h).floor().max(0.0) as usize).min(self.grid_size))
            .min(self.grid_size + 2 * p - 1);
        // level[q][i] holds B_{m-q+i, q}(x), the only degree-q bases nonzero on the span.
        let mut level = [[0.0f64; MAX_SPLINE_ORDER + 1]; MAX_SPLINE_ORDER + 1];
        level[0][0] = 1.0;
        for q in 1..=p {
            let qh = q as f64 * h;
            for i in 0..=q {
                let j = m + i - q;
                let mut v = 0.0;
                if i >= 1 {
                    v += (x - t(j)) / qh * level[q - 1][i - 1];
                }
                if i < q {
                    v += (t(j + q + 1) - x) / qh * level[q - 1][i];
                }
                level[q][i] = v;
            }
        }
        let at = |q: usize, j: usize| -> f64 {
            if j + q < m || j > m {
                0.0
            } else {
                level[q][j + q - m]
            }
        };
        for o in out.iter_mut() {
            *o = [0.0; 4];
        }
        for j in (m - p)..=m.min(nb - 1) {
            let o = &mut out[j];
            o[0] = at(p, j);
            if clamped {
                continue;
            }
            for k in 1..=deriv_order.min(3).min(p) {
                // Uniform knots: D^k B_{j,p} = h^{-k} Σ_i (-1)^i C(k,i) B_{j+i,p-k}.
                let mut s = 0.0;
                let mut binom = 1.0;
                for i in 0..=k {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    s += sign * binom * at(p - k, j + i);
                    binom = binom * (k - i) as f64 / (i + 1) as f64;
                }
                o[k] = s / h.powi(k as i32);
            }
        }
    }
}

/// Basis dictionary used by a layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BasisFamily {
    #[serde(rename = "bspline")]
    BSpline(BsplineGrid),
    MexicanHat,
    GaussianRbf { gamma: f64 },
    Fourier { k: usize, omega: f64 },
}

impl BasisFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BasisFamily::BSpline(g) => g.validate(),
            BasisFamily::MexicanHat => Ok(()),
            BasisFamily::GaussianRbf { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            BasisFamily::GaussianRbf { gamma } => Err(Error::Spec(format!("RBF gamma must be positive, got {gamma}"))),
            BasisFamily::Fourier { k, omega } if k >= 1 && omega > 0.0 && omega.is_finite() => Ok(()),
            BasisFamily::Fourier { k, omega } => {
                Err(Error::Spec(format!("Fourier basis needs k >= 1 and omega > 0, got k={k}, omega={omega}")))
            }
        }
    }

    /// Localised atom profile `ψ(r)`, if the family has one.
    pub fn atom_primitive(&self) -> Option<Primitive> {
        match *self {
            BasisFamily::MexicanHat => Some(Primitive::MexicanHat),
            BasisFamily::GaussianRbf { gamma } => Some(Primitive::Gaussian { gamma }),
            _ => None,
        }
    }
}

/// Evaluates the family at `r`.
///
/// Localised atoms return one value. Fourier returns
/// `[cos(ωr), sin(ωr), cos(2ωr), sin(2ωr), …]` up to harmonic `k`, and
/// B-splines return every basis function of the grid.
pub fn eval_atom(family: &BasisFamily, r: f64) -> Vec<f64> {
    match *family {
        BasisFamily::MexicanHat | BasisFamily::GaussianRbf { .. } => {
            vec![family.atom_primitive().expect("localised atom").eval(r)]
        }
        BasisFamily::Fourier { k, omega } => (1..=k)
            .flat_map(|h| {
                let a = h as f64 * omega * r;
                [a.cos(), a.sin()]
            })
            .collect(),
        BasisFamily::BSpline(g) => g.eval(r),
    }
}

/// Jet version of [`eval_atom`].
pub fn eval_atom_jet(family: &BasisFamily, r: Jet) -> Vec<Jet> {
    match *family {
        BasisFamily::MexicanHat | BasisFamily::GaussianRbf { .. } => {
            vec![r.apply(family.atom_primitive().expect("localised atom"))]
        }
        BasisFamily::Fourier { k, omega } => (1..=k)
            .flat_map(|h| {
                let a = r.scale(h as f64 * omega);
                [a.cos(), a.sin()]
            })
            .collect(),
        BasisFamily::BSpline(g) => {
            let mut d = vec![[0.0; 4]; g.num_bases()];
            g.eval_with_derivs(r.value, 2, &mut d);
            d.iter().map(|v| r.chain([v[0], v[1], v[2]])).collect()
        }
    }
}

/// B-spline basis values at `x`.
pub fn bspline_bases(x: f64, grid: &BsplineGrid) -> Vec<f64> {
    grid.eval(x)
}

/// Pointwise activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Silu,
    Softplus,
    Sin,
}

impl Activation {
    pub fn primitive(self) -> Primitive {
        match self {
            Activation::Tanh => Primitive::Tanh,
            Activation::Silu => Primitive::Silu,
            Activation::Softplus => Primitive::Softplus,
            Activation::Sin => Primitive::Sin,
        }
    }
}

pub fn activation(kind: Activation, x: f64) -> f64 {
    kind.primitive().eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook recursive Cox–de Boor over an explicit knot vector.
    fn naive(knots: &[f64], j: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            return if knots[j] <= x && x < knots[j + 1] { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[j + p] - knots[j];
        if d1 > 0.0 {
            v += (x - knots[j]) / d1 * naive(knots, j, p - 1, x);
        }
        let d2 = knots[j + p + 1] - knots[j + 1];
        if d2 > 0.0 {
            v += (knots[j + p + 1] - x) / d2 * naive(knots, j + 1, p - 1, x);
        }
        v
    }

    #[test]
    fn mexican_hat_values() {
        assert_eq!(eval_atom(&BasisFamily::MexicanHat, 0.0), vec![1.0]);
        assert_eq!(eval_atom(&BasisFamily::MexicanHat, 1.0)[0], 0.0);
        assert_eq!(eval_atom(&BasisFamily::MexicanHat, -1.0)[0], 0.0);
        let v = eval_atom(&BasisFamily::MexicanHat, 2.0)[0];
        assert!((v + 3.0 * (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_and_fourier_values() {
        let g = eval_atom(&BasisFamily::GaussianRbf { gamma: 2.0 }, 1.0)[0];
        assert!((g - 0.135335283236613).abs() < 1e-12);
        let f = eval_atom(&BasisFamily::Fourier { k: 1, omega: 1.0 }, 0.0);
        assert_eq!(f, vec![1.0, 0.0]);
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(activation(Activation::Tanh, 0.0), 0.0);
        assert_eq!(activation(Activation::Silu, 0.0), 0.0);
        assert!((activation(Activation::Softplus, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn hat_at_interior_knot() {
        let g = BsplineGrid::new(3, 1);
        let b = bspline_bases(-1.0 / 3.0, &g);
        assert_eq!(b.len(), 4);
        // Bases are hats centred on -1, -1/3, 1/3, 1.
        assert!((b[1] - 1.0).abs() < 1e-12);
        assert!(b[0].abs() < 1e-12 && b[2].abs() < 1e-12 && b[3].abs() < 1e-12);
    }

    #[test]
    fn cubic_matches_naive_recursion() {
        let g = BsplineGrid::new(5, 3);
        let knots = g.knots();
        let b = bspline_bases(0.37, &g);
        for (j, v) in b.iter().enumerate() {
            assert!((v - naive(&knots, j, 3, 0.37)).abs() < 1e-14, "basis {j}");
        }
    }

    #[test]
    fn clamped_outside_range() {
        let g = BsplineGrid::new(4, 2);
        assert_eq!(bspline_bases(3.0, &g), bspline_bases(1.0, &g));
        assert_eq!(bspline_bases(-7.0, &g), bspline_bases(-1.0, &g));
        let mut d = vec![[0.0; 4]; g.num_bases()];
        g.eval_with_derivs(3.0, 3, &mut d);
        assert!(d.iter().all(|v| v[1] == 0.0 && v[2] == 0.0));
    }

    #[test]
    fn spline_derivatives_match_finite_differences() {
        let g = BsplineGrid::new(5, 3);
        let h = 1e-5;
        for &x in &[-0.83, -0.1, 0.37, 0.71] {
            let mut d = vec![[0.0; 4]; g.num_bases()];
            g.eval_with_derivs(x, 3, &mut d);
            let (up, dn) = (g.eval(x + h), g.eval(x - h));
            let mut du = vec![[0.0; 4]; g.num_bases()];
            let mut dd = vec![[0.0; 4]; g.num_bases()];
            g.eval_with_derivs(x + h, 3, &mut du);
            g.eval_with_derivs(x - h, 3, &mut dd);
            for j in 0..g.num_bases() {
                assert!((d[j][1] - (up[j] - dn[j]) / (2.0 * h)).abs() < 1e-7);
                assert!((d[j][2] - (du[j][1] - dd[j][1]) / (2.0 * h)).abs() < 1e-6);
                assert!((d[j][3] - (du[j][2] - dd[j][2]) / (2.0 * h)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn family_validation() {
        assert!(BasisFamily::GaussianRbf { gamma: 0.0 }.validate().is_err());
        assert!(BasisFamily::Fourier { k: 0, omega: 1.0 }.validate().is_err());
        assert!(BasisFamily::BSpline(BsplineGrid::new(0, 1)).validate().is_err());
        assert!(BasisFamily::BSpline(BsplineGrid::new(5, 3)).validate().is_ok());
    }

    #[test]
    fn serde_round_trip() {
        for f in [
            BasisFamily::MexicanHat,
            BasisFamily::GaussianRbf { gamma: 2.5 },
            BasisFamily::Fourier { k: 16, omega: std::f64::consts::PI },
            BasisFamily::BSpline(BsplineGrid::new(3, 1)),
        ] {
            let s = serde_json::to_string(&f).unwrap();
            assert_eq!(serde_json::from_str::<BasisFamily>(&s).unwrap(), f);
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(grid in 1usize..12, order in 0usize..5, x in -0.999f64..0.999) {
            let g = BsplineGrid::new(grid, order);
            let s: f64 = bspline_bases(x, &g).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn symmetries(r in -5.0f64..5.0) {
            let mh = |r| eval_atom(&BasisFamily::MexicanHat, r)[0];
            let rbf = |r| eval_atom(&BasisFamily::GaussianRbf { gamma: 1.3 }, r)[0];
            let fo = |r| eval_atom(&BasisFamily::Fourier { k: 2, omega: 1.7 }, r);
            prop_assert_eq!(mh(r), mh(-r));
            prop_assert_eq!(rbf(r), rbf(-r));
            let (a, b) = (fo(r), fo(-r));
            prop_assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] + b[1]).abs() < 1e-15);
        }

        #[test]
        fn matches_naive_anywhere(grid in 1usize..8, order in 0usize..4, x in -0.999f64..0.999) {
            let g = BsplineGrid::new(grid, order);
            let knots = g.knots();
            for (j, v) in bspline_bases(x, &g).iter().enumerate() {
                prop_assert!((v - naive(&knots, j, order, x)).abs() < 1e-12);
            }
        }
    }
}
