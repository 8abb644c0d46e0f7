//! Learned diagonal metrics, the metric warp, volume and γ features.
//!
//! Each construction exists twice: a scalar [`Jet`] form used for single
//! points and as an independent reference, and a tape form that evaluates a
//! whole batch of points and supports parameter gradients.

use crate::autodiff::{softplus, Jet, NodeId, Primitive, Tape};
use crate::error::{Error, Result};

/// Floor added to the softplus output of the neural metric.
pub const METRIC_FLOOR: f64 = 1e-4;

/// Parameter layout of the metric network `d → m → m → d`
/// (Linear, SiLU, Linear, SiLU, Linear, softplus + floor).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricNet {
    pub offset: usize,
    pub d: usize,
    pub m: usize,
}

impl MetricNet {
    pub fn param_count(d: usize, m: usize) -> usize {
        (d * m + m) + (m * m + m) + (m * d + d)
    }

    pub fn len(&self) -> usize {
        Self::param_count(self.d, self.m)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn w1(&self) -> usize {
        self.offset
    }
    pub fn b1(&self) -> usize {
        self.w1() + self.d * self.m
    }
    pub fn w2(&self) -> usize {
        self.b1() + self.m
    }
    pub fn b2(&self) -> usize {
        self.w2() + self.m * self.m
    }
    pub fn w3(&self) -> usize {
        self.b2() + self.m
    }
    pub fn b3(&self) -> usize {
        self.w3() + self.m * self.d
    }
}

fn dense_jet(params: &[f64], w: usize, b: usize, x: &[Jet], n_out: usize) -> Vec<Jet> {
    let dim = x[0].dim();
    (0..n_out)
        .map(|o| {
            x.iter().enumerate().fold(Jet::constant(params[b + o], dim), |acc, (i, xi)| {
                acc + *xi * params[w + o * x.len() + i]
            })
        })
        .collect()
}

/// `g_i = softplus(MetricNet_i(h)) + ε` for a single point.
pub fn neural_metric(params: &[f64], net: &MetricNet, h: &[Jet]) -> Result<Vec<Jet>> {
    if h.len() != net.d {
        return Err(Error::Dimension(format!("metric expects {} inputs, got {}", net.d, h.len())));
    }
    let a1: Vec<Jet> = dense_jet(params, net.w1(), net.b1(), h, net.m).into_iter().map(Jet::silu).collect();
    let a2: Vec<Jet> = dense_jet(params, net.w2(), net.b2(), &a1, net.m).into_iter().map(Jet::silu).collect();
    Ok(dense_jet(params, net.w3(), net.b3(), &a2, net.d)
        .into_iter()
        .map(|z| z.softplus() + METRIC_FLOOR)
        .collect())
}

/// Batched neural metric; `h` has `net.d` rows and the result has the same shape.
pub fn neural_metric_tape(t: &mut Tape, net: &MetricNet, h: NodeId) -> NodeId {
    let z1 = t.linear(h, net.w1(), Some(net.b1()), net.m);
    let a1 = t.unary(z1, Primitive::Silu);
    let z2 = t.linear(a1, net.w2(), Some(net.b2()), net.m);
    let a2 = t.unary(z2, Primitive::Silu);
    let z3 = t.linear(a2, net.w3(), Some(net.b3()), net.d);
    let g = t.unary(z3, Primitive::Softplus);
    t.shift(g, METRIC_FLOOR)
}

/// Warped coordinates `ξ_i = h_i √g_i` and log-volume `v = Σ log g_i`.
pub fn warp_and_volume(h: &[Jet], g: &[Jet]) -> Result<(Vec<Jet>, Jet)> {
    if h.len() != g.len() || h.is_empty() {
        return Err(Error::Dimension(format!("warp needs matching h ({}) and g ({})", h.len(), g.len())));
    }
    if let Some(bad) = g.iter().find(|gi| !(gi.value > 0.0)) {
        return Err(Error::Numeric(format!("metric positivity violated: g = {}", bad.value)));
    }
    let xi = h.iter().zip(g).map(|(hi, gi)| *hi * gi.sqrt()).collect();
    let v = g.iter().skip(1).fold(g[0].ln(), |acc, gi| acc + gi.ln());
    Ok((xi, v))
}

/// Batched warp: returns `(ξ, v)` with `v` a single row.
pub fn warp_and_volume_tape(t: &mut Tape, h: NodeId, g: NodeId) -> (NodeId, NodeId) {
    let root = t.unary(g, Primitive::Sqrt);
    let xi = t.mul(h, root);
    let logs = t.unary(g, Primitive::Ln);
    let v = t.sum_rows(logs);
    (xi, v)
}

/// Parameter layout of the separable log-metric
/// `log g_i(u) = Σ_k c_{i,k} exp(-(u - μ_{i,k})² / (2 w_{i,k}²))`:
/// coefficients `c`, centres `μ` and width logits (`w = softplus`), each `d × K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeparableMetric {
    pub offset: usize,
    pub d: usize,
    pub k: usize,
}

impl SeparableMetric {
    pub fn param_count(d: usize, k: usize) -> usize {
        3 * d * k
    }

    pub fn coeffs(&self) -> usize {
        self.offset
    }
    pub fn centers(&self) -> usize {
        self.offset + self.d * self.k
    }
    pub fn width_logits(&self) -> usize {
        self.offset + 2 * self.d * self.k
    }
}

/// `(g_i, γ_i)` for one coordinate, with `γ_i = ½ Σ_k c_k ρ_k'(u)` in closed form.
pub fn separable_metric(c: &[f64], centers: &[f64], widths: &[f64], u: Jet) -> (Jet, Jet) {
    let dim = u.dim();
    let mut log_g = Jet::constant(0.0, dim);
    let mut gamma = Jet::constant(0.0, dim);
    for ((&ck, &mu), &w) in c.iter().zip(centers).zip(widths) {
        let r = (u - mu) * (1.0 / w);
        log_g = log_g + r.apply(Primitive::Gaussian { gamma: 0.5 }) * ck;
        gamma = gamma + r.apply(Primitive::GaussianSlope) * (0.5 * ck / w);
    }
    (log_g.exp(), gamma)
}

/// Batched separable metric: returns `(log g, γ)`, each with `d` rows.
pub fn separable_metric_tape(t: &mut Tape, sm: &SeparableMetric, u: NodeId) -> (NodeId, NodeId) {
    let r = t.atoms(u, sm.centers(), sm.width_logits(), sm.k);
    let rho = t.unary(r, Primitive::Gaussian { gamma: 0.5 });
    let log_g = t.group_dot(rho, sm.coeffs(), sm.k, None, 1.0);
    let slope = t.unary(r, Primitive::GaussianSlope);
    let gamma = t.group_dot(slope, sm.coeffs(), sm.k, Some(sm.width_logits()), 0.5);
    (log_g, gamma)
}

/// Widths `softplus(logit)` of a separable metric for coordinate `i`.
pub fn separable_widths(params: &[f64], sm: &SeparableMetric, i: usize) -> Vec<f64> {
    let off = sm.width_logits() + i * sm.k;
    params[off..off + sm.k].iter().map(|&l| softplus(l)).collect()
}
