//! Dormand–Prince 5(4) with the standard embedded error estimate and a
//! fourth-order continuous extension for dense output.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    -71.0 / 57600.0,
    0.0,
    71.0 / 16695.0,
    -71.0 / 1920.0,
    17253.0 / 339200.0,
    -22.0 / 525.0,
    1.0 / 40.0,
];
/// Dense-output polynomial coefficients: `y(t0 + θh) = y0 + h Σ_s k_s Σ_j P[s][j] θ^{j+1}`.
const P: [[f64; 4]; 7] = [
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
    [0.0; 4],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk45Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub first_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-10, first_step: None, max_steps: 10_000_000 }
    }
}

/// Solution samples: `y[i]` is the state at `t[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
}

struct Stepper<'a, F> {
    f: &'a mut F,
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
}

impl<F: FnMut(f64, &[f64], &mut [f64])> Stepper<'_, F> {
    /// One trial step from `(t, y)`; `k[0]` must hold `f(t, y)`. Writes the
    /// fifth-order solution to `y_new` and returns the error estimate
    /// vector in `err`. `k[6]` ends up as `f(t + h, y_new)`.
    fn step(&mut self, t: f64, y: &[f64], h: f64, y_new: &mut [f64], err: &mut [f64]) {
        let n = y.len();
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, a) in A[s][..s].iter().enumerate() {
                    acc += a * self.k[j][i];
                }
                self.ytmp[i] = y[i] + h * acc;
            }
            (self.f)(t + C[s] * h, &self.ytmp, &mut self.k[s]);
        }
        // The seventh stage is evaluated at the fifth-order solution.
        y_new.copy_from_slice(&self.ytmp);
        for i in 0..n {
            let mut e = 0.0;
            for s in 0..7 {
                e += E[s] * self.k[s][i];
            }
            err[i] = h * e;
        }
    }

    fn dense(&self, y0: &[f64], h: f64, theta: f64, out: &mut [f64]) {
        let pw = [theta, theta * theta, theta.powi(3), theta.powi(4)];
        for i in 0..y0.len() {
            let mut acc = 0.0;
            for s in 0..7 {
                let q = P[s][0] * pw[0] + P[s][1] * pw[1] + P[s][2] * pw[2] + P[s][3] * pw[3];
                acc += self.k[s][i] * q;
            }
            out[i] = y0[i] + h * acc;
        }
    }
}

fn error_norm(err: &[f64], y: &[f64], y_new: &[f64], opts: &Rk45Options) -> f64 {
    let mut s = 0.0;
    for i in 0..err.len() {
        let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
        s += (err[i] / sc).powi(2);
    }
    (s / err.len().max(1) as f64).sqrt()
}

/// Integrates `y' = f(t, y)` over `t_span`, sampling the solution at the
/// sorted times `t_eval` by dense output. With an empty `t_eval` every
/// accepted step is returned.
pub fn integrate_rk45<F>(
    mut f: F,
    y0: &[f64],
    t_span: (f64, f64),
    t_eval: &[f64],
    opts: &Rk45Options,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let (t0, t1) = t_span;
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::Solver("rtol and atol must be positive".into()));
    }
    if !(t1 > t0) {
        return Err(Error::Solver(format!("empty time span [{t0}, {t1}]")));
    }
    if t_eval.windows(2).any(|w| w[1] < w[0]) || t_eval.iter().any(|&t| t < t0 || t > t1) {
        return Err(Error::Solver("t_eval must be sorted and inside the time span".into()));
    }
    let n = y0.len();
    let mut stepper = Stepper { f: &mut f, k: std::array::from_fn(|_| vec![0.0; n]), ytmp: vec![0.0; n] };
    let mut y = y0.to_vec();
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut t = t0;
    (stepper.f)(t, &y, &mut stepper.k[0]);
    check_finite(&stepper.k[0], t)?;

    let mut h = match opts.first_step {
        Some(h) => h.min(t1 - t0),
        None => initial_step(&mut stepper, t0, &y, t1 - t0, opts),
    };
    let mut out = Trajectory { t: Vec::new(), y: Vec::new(), accepted: 0, rejected: 0 };
    let mut next = 0;
    while next < t_eval.len() && t_eval[next] <= t0 {
        out.t.push(t_eval[next]);
        out.y.push(y.clone());
        next += 1;
    }

    while t < t1 {
        if out.accepted + out.rejected >= opts.max_steps {
            return Err(Error::Solver(format!("step budget exhausted at t = {t}")));
        }
        let h_min = 16.0 * f64::EPSILON * t.abs().max(1e-300);
        if h < h_min {
            return Err(Error::Solver(format!("step size underflow at t = {t}; the problem is likely stiff")));
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        stepper.step(t, &y, h, &mut y_new, &mut err);
        let en = error_norm(&err, &y, &y_new, opts);
        if !en.is_finite() {
            out.rejected += 1;
            h *= 0.2;
            continue;
        }
        if en <= 1.0 {
            let t_new = if last { t1 } else { t + h };
            while next < t_eval.len() && t_eval[next] <= t_new {
                let mut ys = vec![0.0; n];
                if t_eval[next] == t_new {
                    ys.copy_from_slice(&y_new);
                } else {
                    stepper.dense(&y, h, (t_eval[next] - t) / h, &mut ys);
                }
                out.t.push(t_eval[next]);
                out.y.push(ys);
                next += 1;
            }
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            let (first, rest) = stepper.k.split_at_mut(1);
            first[0].copy_from_slice(&rest[5]);
            check_finite(&stepper.k[0], t)?;
            out.accepted += 1;
            if t_eval.is_empty() {
                out.t.push(t);
                out.y.push(y.clone());
            }
            let factor = if en == 0.0 { 10.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 10.0) };
            h *= factor;
        } else {
            out.rejected += 1;
            h *= (0.9 * en.powf(-0.2)).max(0.2);
        }
    }
    Ok(out)
}

fn check_finite(v: &[f64], t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Solver(format!("non-finite right-hand side at t = {t}")))
    }
}

fn initial_step<F: FnMut(f64, &[f64], &mut [f64])>(
    s: &mut Stepper<'_, F>,
    t0: f64,
    y0: &[f64],
    span: f64,
    opts: &Rk45Options,
) -> f64 {
    let n = y0.len().max(1) as f64;
    let scale: Vec<f64> = y0.iter().map(|y| opts.atol + opts.rtol * y.abs()).collect();
    let norm = |v: &[f64]| (v.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n).sqrt();
    let d0 = norm(y0);
    let d1 = norm(&s.k[0]);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(&s.k[0]).map(|(y, k)| y + h0 * k).collect();
    let mut f1 = vec![0.0; y0.len()];
    (s.f)(t0 + h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(&s.k[0]).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lorenz(s: f64, r: f64, b: f64) -> impl FnMut(f64, &[f64], &mut [f64]) {
        move |_t, y, d| {
            d[0] = s * (y[1] - y[0]);
            d[1] = y[0] * (r - y[2]) - y[1];
            d[2] = y[0] * y[1] - b * y[2];
        }
    }

    #[test]
    fn exponential_growth() {
        let o = Rk45Options { rtol: 1e-8, atol: 1e-12, ..Default::default() };
        let tr = integrate_rk45(|_, y, d| d[0] = y[0], &[1.0], (0.0, 1.0), &[1.0], &o).unwrap();
        let e = std::f64::consts::E;
        assert!((tr.y[0][0] - e).abs() <= 10.0 * 1e-8 * e);
    }

    #[test]
    fn dense_output_is_accurate() {
        let o = Rk45Options { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        let ts: Vec<f64> = (0..=50).map(|i| i as f64 * 0.1).collect();
        let tr = integrate_rk45(|_, y, d| d[0] = -y[0], &[1.0], (0.0, 5.0), &ts, &o).unwrap();
        assert_eq!(tr.t, ts);
        for (t, y) in tr.t.iter().zip(&tr.y) {
            assert!((y[0] - (-t).exp()).abs() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn lorenz_fixed_point_is_kept() {
        let (s, r, b): (f64, f64, f64) = (10.0, 15.0, 8.0 / 3.0);
        let c = (b * (r - 1.0)).sqrt();
        let y0 = [c, c, r - 1.0];
        let o = Rk45Options::default();
        let tr = integrate_rk45(lorenz(s, r, b), &y0, (0.0, 20.0), &[20.0], &o).unwrap();
        for i in 0..3 {
            assert!((tr.y[0][i] - y0[i]).abs() <= 1e-9, "{:?}", tr.y[0]);
        }
    }

    #[test]
    fn lorenz_self_convergence() {
        let run = |rtol: f64| {
            let o = Rk45Options { rtol, atol: rtol * 1e-2, ..Default::default() };
            integrate_rk45(lorenz(10.0, 15.0, 8.0 / 3.0), &[1.0, 1.0, 1.0], (0.0, 20.0), &[20.0], &o).unwrap()
        };
        let a = run(1e-9);
        let b = run(1e-11);
        for i in 0..3 {
            assert!((a.y[0][i] - b.y[0][i]).abs() <= 1e-5);
        }
    }

    #[test]
    fn fifth_order_with_fixed_steps() {
        // One DP5 pass with n equal steps on y' = -y.
        let run = |n: usize| {
            let h = 1.0 / n as f64;
            let mut f = |_t: f64, y: &[f64], d: &mut [f64]| d[0] = -y[0];
            let mut s = Stepper { f: &mut f, k: std::array::from_fn(|_| vec![0.0]), ytmp: vec![0.0] };
            let mut y = vec![1.0];
            let mut yn = vec![0.0];
            let mut err = vec![0.0];
            for i in 0..n {
                (s.f)(i as f64 * h, &y, &mut s.k[0]);
                s.step(i as f64 * h, &y, h, &mut yn, &mut err);
                y.copy_from_slice(&yn);
            }
            (y[0] - (-1.0f64).exp()).abs()
        };
        let ratio = run(4) / run(8);
        let order = ratio.log2();
        assert!((4.6..5.6).contains(&order), "observed order {order}");
    }

    #[test]
    fn error_scales_with_tolerance() {
        let err = |rtol: f64| {
            let o = Rk45Options { rtol, atol: rtol, ..Default::default() };
            let tr = integrate_rk45(|_, y, d| d[0] = -y[0], &[1.0], (0.0, 2.0), &[2.0], &o).unwrap();
            (tr.y[0][0] - (-2.0f64).exp()).abs()
        };
        assert!(err(1e-10) < err(1e-6));
        assert!(err(1e-10) < 1e-9);
    }

    #[test]
    fn stiff_blowup_reports_error() {
        let o = Rk45Options { max_steps: 1000, ..Default::default() };
        let r = integrate_rk45(|_, y, d| d[0] = y[0] * y[0], &[1.0], (0.0, 2.0), &[], &o);
        assert!(matches!(r, Err(Error::Solver(_))));
    }

    #[test]
    fn rejects_bad_tolerances() {
        let o = Rk45Options { rtol: 0.0, ..Default::default() };
        assert!(integrate_rk45(|_, _, d| d[0] = 0.0, &[1.0], (0.0, 1.0), &[], &o).is_err());
    }
}
