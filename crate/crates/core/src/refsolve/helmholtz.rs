use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{linspace, Field1D};
use crate::error::{Error, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// One constant-permittivity slab `[z_lo, z_hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub z_lo: f64,
    pub z_hi: f64,
    pub eps_re: f64,
    pub eps_im: f64,
}

impl Segment {
    pub fn eps(&self) -> Complex64 {
        Complex64::new(self.eps_re, self.eps_im)
    }
}

/// Piecewise-constant relative permittivity covering `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermittivityProfile {
    pub segments: Vec<Segment>,
}

impl Default for PermittivityProfile {
    /// Vacuum with a lossy dielectric slab `ε = 2.25 + 0.05i` on `[0.3, 0.7]`.
    fn default() -> Self {
        Self {
            segments: vec![
                Segment { z_lo: 0.0, z_hi: 0.3, eps_re: 1.0, eps_im: 0.0 },
                Segment { z_lo: 0.3, z_hi: 0.7, eps_re: 2.25, eps_im: 0.05 },
                Segment { z_lo: 0.7, z_hi: 1.0, eps_re: 1.0, eps_im: 0.0 },
            ],
        }
    }
}

impl PermittivityProfile {
    pub fn homogeneous(eps: Complex64) -> Self {
        Self { segments: vec![Segment { z_lo: 0.0, z_hi: 1.0, eps_re: eps.re, eps_im: eps.im }] }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.segments;
        if s.is_empty() {
            return Err(Error::Config("permittivity profile has no segments".into()));
        }
        let tol = 1e-12;
        if s[0].z_lo.abs() > tol || (s[s.len() - 1].z_hi - 1.0).abs() > tol {
            return Err(Error::Config("permittivity segments must cover [0, 1]".into()));
        }
        for seg in s {
            if !(seg.z_hi > seg.z_lo) || !(seg.eps_re > 0.0) || !seg.eps_im.is_finite() {
                return Err(Error::Config(format!("invalid permittivity segment {seg:?}")));
            }
        }
        if s.windows(2).any(|w| (w[0].z_hi - w[1].z_lo).abs() > tol) {
            return Err(Error::Config("permittivity segments must be contiguous".into()));
        }
        Ok(())
    }

    /// Index of the segment containing `z`; interfaces belong to the right.
    pub fn segment_index(&self, z: f64) -> usize {
        self.segments.iter().position(|s| z < s.z_hi).unwrap_or(self.segments.len() - 1)
    }

    pub fn eps(&self, z: f64) -> Complex64 {
        self.segments[self.segment_index(z)].eps()
    }

    /// `k²(z) = ε(z) (2π/λ)²`.
    pub fn k_squared(&self, z: f64, lambda: f64) -> Complex64 {
        self.eps(z) * (2.0 * PI / lambda).powi(2)
    }

    /// Interface positions strictly inside `(0, 1)`.
    pub fn interfaces(&self) -> Vec<f64> {
        self.segments[..self.segments.len() - 1].iter().map(|s| s.z_hi).collect()
    }
}

/// Exact piecewise plane-wave solution.
#[derive(Debug, Clone)]
pub struct TmmSolution {
    profile: PermittivityProfile,
    wavenumbers: Vec<Complex64>,
    /// `(u, u_z)` at the left edge of each segment.
    states: Vec<[Complex64; 2]>,
    a_inc: Complex64,
    k_minus: f64,
    k_plus: f64,
}

fn propagate(k: Complex64, d: f64, s: [Complex64; 2]) -> [Complex64; 2] {
    let (c, sn) = ((k * d).cos(), (k * d).sin());
    [c * s[0] + sn / k * s[1], -k * sn * s[0] + c * s[1]]
}

/// Transfer-matrix solution of `u_zz + k²(z) u = 0` on `[0, 1]` with
/// `u_z + i k₋ u = 2 i k₋ A` at `z = 0` and `u_z − i k₊ u = 0` at `z = 1`.
pub fn solve_helmholtz_tmm(
    profile: &PermittivityProfile,
    lambda: f64,
    a_inc: Complex64,
    k_minus: f64,
    k_plus: f64,
) -> Result<TmmSolution> {
    profile.validate()?;
    if !(lambda > 0.0) || !(k_minus > 0.0) || !(k_plus > 0.0) {
        return Err(Error::Config("wavelength and exterior wavenumbers must be positive".into()));
    }
    let k0 = 2.0 * PI / lambda;
    let wavenumbers: Vec<Complex64> = profile.segments.iter().map(|s| s.eps().sqrt() * k0).collect();
    // Outgoing wave at z = 1 with unit amplitude, carried back to z = 0.
    let n = profile.segments.len();
    let mut states = vec![[Complex64::new(0.0, 0.0); 2]; n];
    let mut s = [Complex64::new(1.0, 0.0), I * k_plus];
    for j in (0..n).rev() {
        let seg = &profile.segments[j];
        s = propagate(wavenumbers[j], -(seg.z_hi - seg.z_lo), s);
        states[j] = s;
    }
    let denom = s[1] + I * k_minus * s[0];
    let scale = s[0].norm() * k_minus + s[1].norm();
    if !(denom.norm() > 1e-13 * scale) || !denom.is_finite() {
        return Err(Error::Numeric("singular transfer matrix for this profile and wavelength".into()));
    }
    let c = 2.0 * I * k_minus * a_inc / denom;
    for st in &mut states {
        st[0] *= c;
        st[1] *= c;
    }
    Ok(TmmSolution { profile: profile.clone(), wavenumbers, states, a_inc, k_minus, k_plus })
}

impl TmmSolution {
    /// `(u(z), u_z(z))`.
    pub fn eval(&self, z: f64) -> [Complex64; 2] {
        let j = self.profile.segment_index(z);
        propagate(self.wavenumbers[j], z - self.profile.segments[j].z_lo, self.states[j])
    }

    pub fn u(&self, z: f64) -> Complex64 {
        self.eval(z)[0]
    }

    /// Field on `n` equispaced samples of `[0, 1]`.
    pub fn sample(&self, n: usize) -> Result<Field1D> {
        let z = linspace(0.0, 1.0, n);
        let values = z.iter().map(|&z| self.u(z)).collect();
        Field1D::new("helmholtz", z, values)
    }

    /// Reflected amplitude `r` in `u = A e^{ik₋z} + r e^{−ik₋z}` left of 0.
    pub fn reflection(&self) -> Complex64 {
        self.u(0.0) - self.a_inc
    }

    /// Transmitted amplitude `u(1)`.
    pub fn transmission(&self) -> Complex64 {
        self.u(1.0)
    }

    pub fn reflectance(&self) -> f64 {
        self.reflection().norm_sqr() / self.a_inc.norm_sqr()
    }

    pub fn transmittance(&self) -> f64 {
        self.k_plus / self.k_minus * self.transmission().norm_sqr() / self.a_inc.norm_sqr()
    }
}

/// Second-order finite-difference solve of the same boundary-value problem
/// on `n_intervals` uniform cells, with ghost-point Robin conditions and
/// `k²` averaged across interfaces that fall on nodes.
pub fn solve_helmholtz_fd(
    profile: &PermittivityProfile,
    lambda: f64,
    a_inc: Complex64,
    k_minus: f64,
    k_plus: f64,
    n_intervals: usize,
) -> Result<Field1D> {
    profile.validate()?;
    if n_intervals < 2 {
        return Err(Error::Solver("finite-difference solve needs at least two cells".into()));
    }
    let n = n_intervals + 1;
    let h = 1.0 / n_intervals as f64;
    let z = linspace(0.0, 1.0, n);
    let k2 = |zj: f64| -> Complex64 {
        let on_interface = profile.interfaces().iter().any(|&zi| (zi - zj).abs() < 1e-9 * h);
        if on_interface {
            0.5 * (profile.k_squared(zj - 0.5 * h, lambda) + profile.k_squared(zj + 0.5 * h, lambda))
        } else {
            profile.k_squared(zj, lambda)
        }
    };
    let one = Complex64::new(1.0, 0.0);
    let mut lower = vec![one; n];
    let mut upper = vec![one; n];
    let mut diag: Vec<Complex64> = z.iter().map(|&zj| k2(zj) * h * h - 2.0).collect();
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    diag[0] += 2.0 * h * I * k_minus;
    upper[0] = 2.0 * one;
    rhs[0] = 4.0 * h * I * k_minus * a_inc;
    diag[n - 1] += 2.0 * h * I * k_plus;
    lower[n - 1] = 2.0 * one;
    // Thomas elimination.
    for j in 1..n {
        let m = lower[j] / diag[j - 1];
        diag[j] -= m * upper[j - 1];
        rhs[j] = rhs[j] - m * rhs[j - 1];
    }
    let mut u = vec![Complex64::new(0.0, 0.0); n];
    u[n - 1] = rhs[n - 1] / diag[n - 1];
    for j in (0..n - 1).rev() {
        u[j] = (rhs[j] - upper[j] * u[j + 1]) / diag[j];
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("finite-difference Helmholtz solve broke down".into()));
    }
    Field1D::new("helmholtz", z, u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(lambda: f64) -> f64 {
        2.0 * PI / lambda
    }

    fn default_solution(lambda: f64) -> TmmSolution {
        solve_helmholtz_tmm(&PermittivityProfile::default(), lambda, 1.0.into(), k(lambda), k(lambda)).unwrap()
    }

    #[test]
    fn vacuum_is_a_plane_wave() {
        let l = 1.0 / 15.0;
        let s = solve_helmholtz_tmm(&PermittivityProfile::homogeneous(1.0.into()), l, 1.0.into(), k(l), k(l)).unwrap();
        for i in 0..=100 {
            let z = i as f64 / 100.0;
            let u = s.u(z);
            assert!((u - (I * k(l) * z).exp()).norm() < 1e-12, "z={z}");
            assert!((u.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn boundary_conditions_hold() {
        let l = 1.0 / 20.0;
        let s = default_solution(l);
        let [u0, du0] = s.eval(0.0);
        let [u1, du1] = s.eval(1.0);
        let km = k(l);
        assert!((du0 + I * km * u0 - 2.0 * I * km).norm() < 1e-12 * km);
        assert!((du1 - I * km * u1).norm() < 1e-12 * km);
    }

    #[test]
    fn lossless_slab_conserves_energy() {
        let mut p = PermittivityProfile::default();
        p.segments[1].eps_im = 0.0;
        for l in [1.0 / 10.0, 1.0 / 15.0, 1.0 / 27.0] {
            let s = solve_helmholtz_tmm(&p, l, 1.0.into(), k(l), k(l)).unwrap();
            assert!((s.reflectance() + s.transmittance() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lossy_slab_absorbs() {
        let s = default_solution(1.0 / 15.0);
        assert!(s.reflectance() + s.transmittance() < 1.0);
    }

    #[test]
    fn continuity_across_interfaces() {
        let s = default_solution(1.0 / 15.0);
        for zi in [0.3, 0.7] {
            let a = s.eval(zi - 1e-12);
            let b = s.eval(zi);
            assert!((a[0] - b[0]).norm() < 1e-8);
            assert!((a[1] - b[1]).norm() < 1e-6 * k(1.0 / 15.0));
        }
    }

    #[test]
    fn matches_finite_differences() {
        let l = 1.0 / 15.0;
        let tmm = default_solution(l).sample(2001).unwrap();
        let fd = solve_helmholtz_fd(&PermittivityProfile::default(), l, 1.0.into(), k(l), k(l), 200_000).unwrap();
        let stride = 100;
        let fd_sub = Field1D::new("h", tmm.z.clone(), (0..2001).map(|i| fd.values[i * stride]).collect()).unwrap();
        let e = fd_sub.relative_l2(&tmm).unwrap();
        assert!(e <= 1e-4, "relative L2 {e}");
    }

    /// Largest `|u_zz + k² u|` on the 2048-sample grid, with `u_zz` from the
    /// sixth-order central stencil, skipping points whose stencil straddles
    /// an interface.
    fn sampled_residual(p: &PermittivityProfile, l: f64) -> (f64, f64) {
        const W: [f64; 7] = [1.0 / 90.0, -3.0 / 20.0, 1.5, -49.0 / 18.0, 1.5, -3.0 / 20.0, 1.0 / 90.0];
        let s = solve_helmholtz_tmm(p, l, 1.0.into(), k(l), k(l)).unwrap();
        let f = s.sample(2048).unwrap();
        let h = f.z[1] - f.z[0];
        let mut worst = 0.0f64;
        for j in 3..f.z.len() - 3 {
            if p.interfaces().iter().any(|&zi| (f.z[j] - zi).abs() < 4.0 * h) {
                continue;
            }
            let d2: Complex64 = (0..7).map(|m| W[m] * f.values[j + m - 3]).sum::<Complex64>() / (h * h);
            worst = worst.max((d2 + p.k_squared(f.z[j], l) * f.values[j]).norm());
        }
        (worst, f.max_abs())
    }

    #[test]
    fn sampled_residual_is_small() {
        for l in [1.0, 0.25, 0.1] {
            let (r, m) = sampled_residual(&PermittivityProfile::default(), l);
            assert!(r <= 1e-6 * m, "lambda {l}: residual {r}");
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn residual_small_for_random_profiles(
            cuts in proptest::collection::vec(0.05f64..0.95, 1..4),
            eps in proptest::collection::vec((1.0f64..4.0, 0.0f64..0.2), 4),
            l in 0.1f64..1.0,
        ) {
            let mut cuts = cuts;
            cuts.sort_by(f64::total_cmp);
            cuts.dedup_by(|a, b| (*a - *b).abs() < 0.02);
            let mut edges = vec![0.0];
            edges.extend(cuts);
            edges.push(1.0);
            let segments = edges
                .windows(2)
                .zip(&eps)
                .map(|(w, &(re, im))| Segment { z_lo: w[0], z_hi: w[1], eps_re: re, eps_im: im })
                .collect();
            let p = PermittivityProfile { segments };
            let (r, m) = sampled_residual(&p, l);
            proptest::prop_assert!(r <= 1e-6 * m, "residual {}", r);
        }
    }

    #[test]
    fn profile_validation() {
        let mut p = PermittivityProfile::default();
        p.segments[1].z_lo = 0.35;
        assert!(p.validate().is_err());
        let mut p = PermittivityProfile::default();
        p.segments[1].eps_re = -1.0;
        assert!(p.validate().is_err());
        assert!(PermittivityProfile { segments: vec![] }.validate().is_err());
    }

    #[test]
    fn eps_lookup() {
        let p = PermittivityProfile::default();
        assert_eq!(p.eps(0.1), Complex64::new(1.0, 0.0));
        assert_eq!(p.eps(0.3), Complex64::new(2.25, 0.05));
        assert_eq!(p.eps(1.0), Complex64::new(1.0, 0.0));
    }
}
