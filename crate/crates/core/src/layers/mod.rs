//! Layer kinds, model assembly, parameter layout and initialisation.
//!
//! A [`Model`] is a validated [`ModelSpec`] with every parameter block
//! assigned an offset in one flat vector. Forward passes are recorded on a
//! [`Tape`], so the same code serves batched training, jets for residuals,
//! and single-point evaluation.

mod spec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus_inv, Channels, Jet, NodeId, Primitive, Tape};
use crate::basis::BasisFamily;
use crate::error::{Error, Result};
use crate::geometry::{
    neural_metric_tape, separable_metric_tape, warp_and_volume_tape, MetricNet, SeparableMetric,
};
use crate::rng::{self, purpose};

pub use spec::{count_params, LayerKind, LayerSpec, ModelSpec};

/// Named contiguous block of the parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Flat parameter vector with named per-layer slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub slices: Vec<ParamSlice>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.slices.iter().find(|s| s.name == name).map(|s| &self.values[s.offset..s.offset + s.len])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.slices.iter().find(|s| s.name == name)?.clone();
        Some(&mut self.values[s.offset..s.offset + s.len])
    }
}

#[derive(Debug, Clone)]
struct LayerLayout {
    spec: LayerSpec,
    blocks: Vec<(&'static str, usize, usize)>,
}

impl LayerLayout {
    fn at(&self, name: &str) -> usize {
        self.blocks.iter().find(|b| b.0 == name).map(|b| b.1).expect("known parameter block")
    }
}

/// Validated model with its parameter layout.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<LayerLayout>,
    len: usize,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut offset = 0;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let mut blocks = Vec::new();
            for (name, len) in l.blocks() {
                blocks.push((name, offset, len));
                offset += len;
            }
            layers.push(LayerLayout { spec: *l, blocks });
        }
        Ok(Self { spec, layers, len: offset })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.len
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Empty store with the named slices of this layout.
    pub fn zero_params(&self) -> ParamStore {
        let slices = self
            .layers
            .iter()
            .enumerate()
            .flat_map(|(n, l)| {
                l.blocks.iter().map(move |&(name, offset, len)| ParamSlice { name: format!("layer{n}.{name}"), offset, len })
            })
            .collect();
        ParamStore { values: vec![0.0; self.len], slices }
    }

    /// Deterministic initialisation from `seed`.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut store = self.zero_params();
        let mut rng = rng::stream(seed, purpose::INIT);
        let p = &mut store.values;
        for layer in &self.layers {
            let (i, o) = (layer.spec.d_in, layer.spec.d_out);
            match layer.spec.kind {
                LayerKind::Linear => xavier(&mut rng, &mut p[layer.at("weight")..][..o * i], i, o),
                LayerKind::EfficientKan { grid, .. } => {
                    xavier(&mut rng, &mut p[layer.at("base_weight")..][..o * i], i, o);
                    xavier(&mut rng, &mut p[layer.at("spline_coeff")..][..o * i * grid.num_bases()], i, o);
                    p[layer.at("spline_scaler")..][..o * i].fill(1.0);
                }
                LayerKind::WavKan => {
                    xavier(&mut rng, &mut p[layer.at("weight")..][..o * i], i, o);
                    for v in &mut p[layer.at("translation")..][..i * o] {
                        *v = rng.gen_range(-1.0..1.0);
                    }
                    p[layer.at("scale_logit")..][..i * o].fill(softplus_inv(1.0));
                }
                LayerKind::NnMetric { k, metric_hidden } | LayerKind::LmKan { k, metric_hidden, .. } => {
                    let net = MetricNet { offset: layer.at("metric"), d: i, m: metric_hidden };
                    xavier(&mut rng, &mut p[net.w1()..][..metric_hidden * i], i, metric_hidden);
                    xavier(&mut rng, &mut p[net.w2()..][..metric_hidden * metric_hidden], metric_hidden, metric_hidden);
                    init_atom_bank(&mut p[layer.at("atom_center")..][..2 * i * k], i, k, 1.0, 2.0 / k as f64);
                    let features = layer.blocks.iter().find(|b| b.0 == "mix_weight").map(|b| b.2 / o).unwrap();
                    xavier(&mut rng, &mut p[layer.at("mix_weight")..][..o * features], features, o);
                }
                LayerKind::Gamma { k } => {
                    let sm = SeparableMetric { offset: layer.at("log_metric"), d: i, k };
                    let spacing = if k > 1 { 4.0 / (k - 1) as f64 } else { 4.0 };
                    init_atom_bank(&mut p[sm.centers()..][..2 * i * k], i, k, 2.0, spacing);
                    p[layer.at("alpha")..][..i].fill(1.0);
                    xavier(&mut rng, &mut p[layer.at("mix_weight")..][..o * 2 * i], 2 * i, o);
                }
            }
        }
        store
    }

    /// Records the forward pass for a batch whose input node has
    /// `input_dim` rows, returning the `output_dim`-row output node.
    pub fn forward(&self, t: &mut Tape, x: NodeId) -> NodeId {
        assert_eq!(t.rows(x), self.input_dim(), "model input rows");
        let mut h = match &self.spec.input_domain {
            Some(dom) => {
                let scale = dom.iter().map(|[lo, hi]| 2.0 / (hi - lo)).collect();
                let shift = dom.iter().map(|[lo, hi]| -(hi + lo) / (hi - lo)).collect();
                t.row_affine(x, scale, shift)
            }
            None => x,
        };
        let last = self.layers.len() - 1;
        for (n, layer) in self.layers.iter().enumerate() {
            h = layer_tape(t, layer, h);
            if n < last {
                h = t.unary(h, self.spec.hidden_activation.primitive());
            }
        }
        h
    }

    /// Output jets for one input point given as jets.
    pub fn forward_jets(&self, params: &[f64], x: &[Jet]) -> Result<Vec<Jet>> {
        self.check_len(params)?;
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!("model expects {} inputs, got {}", self.input_dim(), x.len())));
        }
        let mut t = Tape::new(params);
        let xn = t.jets(x)?;
        let y = self.forward(&mut t, xn);
        Ok((0..self.output_dim()).map(|r| t.jet(y, r, 0)).collect())
    }

    /// Plain outputs for `n` points given coordinate-major, laid out
    /// `output × n`.
    pub fn eval_batch(&self, params: &[f64], coords: &[f64]) -> Result<Vec<f64>> {
        self.check_len(params)?;
        let mut t = Tape::new(params);
        let xn = t.input(coords, self.input_dim(), Channels::Plain)?;
        let y = self.forward(&mut t, xn);
        Ok(t.value(y).to_vec())
    }

    fn check_len(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.len {
            return Err(Error::Dimension(format!("model has {} parameters, got {}", self.len, params.len())));
        }
        Ok(())
    }
}

fn xavier(rng: &mut rng::Rng, w: &mut [f64], fan_in: usize, fan_out: usize) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in w {
        *v = rng.gen_range(-a..a);
    }
}

/// Centres on a uniform grid over `[-half_width, half_width]` followed by
/// scale logits giving scale `s`.
fn init_atom_bank(bank: &mut [f64], d: usize, k: usize, half_width: f64, s: f64) {
    let (centers, logits) = bank.split_at_mut(d * k);
    for i in 0..d {
        for j in 0..k {
            centers[i * k + j] = if k > 1 { -half_width + 2.0 * half_width * j as f64 / (k - 1) as f64 } else { 0.0 };
        }
    }
    logits.fill(softplus_inv(s));
}

fn layer_tape(t: &mut Tape, layer: &LayerLayout, x: NodeId) -> NodeId {
    let (d_in, d_out) = (layer.spec.d_in, layer.spec.d_out);
    match layer.spec.kind {
        LayerKind::Linear => t.linear(x, layer.at("weight"), Some(layer.at("bias")), d_out),
        LayerKind::EfficientKan { grid, base_activation } => {
            let base = t.unary(x, base_activation.primitive());
            let base = t.linear(base, layer.at("base_weight"), None, d_out);
            let bases = t.bspline(x, grid);
            let spline =
                t.spline_mix(bases, layer.at("spline_coeff"), layer.at("spline_scaler"), grid.num_bases(), d_out);
            t.add(base, spline)
        }
        LayerKind::WavKan => {
            let r = t.atoms(x, layer.at("translation"), layer.at("scale_logit"), d_out);
            let psi = t.unary(r, Primitive::MexicanHat);
            t.edge_sum(psi, layer.at("weight"), Some(layer.at("bias")), d_out)
        }
        LayerKind::NnMetric { k, metric_hidden } => {
            metric_layer(t, layer, x, BasisFamily::MexicanHat, k, metric_hidden)
        }
        LayerKind::LmKan { basis, k, metric_hidden } => metric_layer(t, layer, x, basis, k, metric_hidden),
        LayerKind::Gamma { k } => {
            let sm = SeparableMetric { offset: layer.at("log_metric"), d: d_in, k };
            let (log_g, gamma) = separable_metric_tape(t, &sm, x);
            let half = t.scale(log_g, 0.5);
            let q = t.unary(half, Primitive::Exp);
            let xi = t.mul(x, q);
            let sigma = t.unary(x, Primitive::Silu);
            let a = t.group_dot(xi, layer.at("alpha"), 1, None, 1.0);
            let b = t.group_dot(gamma, layer.at("beta"), 1, None, 1.0);
            let c = t.group_dot(q, layer.at("delta"), 1, None, 1.0);
            let geo = t.add(a, b);
            let geo = t.add(geo, c);
            let features = t.concat(&[sigma, geo]);
            t.linear(features, layer.at("mix_weight"), Some(layer.at("mix_bias")), d_out)
        }
    }
}

fn metric_layer(t: &mut Tape, layer: &LayerLayout, x: NodeId, basis: BasisFamily, k: usize, m: usize) -> NodeId {
    let net = MetricNet { offset: layer.at("metric"), d: layer.spec.d_in, m };
    let g = neural_metric_tape(t, &net, x);
    let (xi, v) = warp_and_volume_tape(t, x, g);
    let features = match basis {
        BasisFamily::Fourier { omega, .. } => {
            let phase = t.harmonics(xi, k, omega);
            let c = t.unary(phase, Primitive::Cos);
            let s = t.unary(phase, Primitive::Sin);
            t.concat(&[c, s, v])
        }
        _ => {
            let r = t.atoms(xi, layer.at("atom_center"), layer.at("atom_scale_logit"), k);
            let eta = t.unary(r, basis.atom_primitive().expect("localised basis"));
            t.concat(&[eta, v])
        }
    };
    t.linear(features, layer.at("mix_weight"), Some(layer.at("mix_bias")), layer.spec.d_out)
}

/// Pre-activation output of a single layer at one point.
pub fn layer_forward(spec: &LayerSpec, params: &[f64], h: &[Jet]) -> Result<Vec<Jet>> {
    spec.validate()?;
    if h.len() != spec.d_in {
        return Err(Error::Spec(format!("layer expects {} inputs, got {}", spec.d_in, h.len())));
    }
    Model::new(ModelSpec::new(vec![*spec]))?.forward_jets(params, h)
}

/// Model output at one point.
pub fn model_forward(spec: &ModelSpec, params: &ParamStore, x: &[Jet]) -> Result<Vec<Jet>> {
    Model::new(spec.clone())?.forward_jets(&params.values, x)
}

/// Deterministic initial parameters for `spec`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamStore> {
    Ok(Model::new(spec.clone())?.init_params(seed))
}

#[cfg(test)]
mod tests;
