use serde::{Deserialize, Serialize};

use crate::basis::{Activation, BasisFamily, BsplineGrid};
use crate::error::{Error, Result};
use crate::geometry::{MetricNet, SeparableMetric};

/// Layer family and its kind-specific hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// Affine map `W h + b`; used for MLP layers and readouts.
    #[serde(alias = "mlp")]
    Linear,
    /// Spline edges plus a base-activation path, no bias.
    EfficientKan { grid: BsplineGrid, base_activation: Activation },
    /// One Mexican-hat atom per edge with amplitude, translation and scale.
    WavKan,
    /// Neural metric, Mexican-hat atoms in warped coordinates, volume feature.
    NnMetric { k: usize, metric_hidden: usize },
    /// Separable RBF log-metric with explicit geometric features.
    Gamma { k: usize },
    /// Neural metric with a selectable post-warp dictionary.
    LmKan { basis: BasisFamily, k: usize, metric_hidden: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub d_in: usize,
    pub d_out: usize,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn linear(d_in: usize, d_out: usize) -> Self {
        Self { d_in, d_out, kind: LayerKind::Linear }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 {
            return Err(Error::Spec(format!("layer dimensions must be positive, got {}→{}", self.d_in, self.d_out)));
        }
        match self.kind {
            LayerKind::Linear | LayerKind::WavKan => Ok(()),
            LayerKind::EfficientKan { grid, .. } => grid.validate(),
            LayerKind::NnMetric { k, metric_hidden } => {
                positive("k", k)?;
                positive("metric_hidden", metric_hidden)
            }
            LayerKind::Gamma { k } => positive("k", k),
            LayerKind::LmKan { basis, k, metric_hidden } => {
                positive("k", k)?;
                positive("metric_hidden", metric_hidden)?;
                basis.validate()?;
                match basis {
                    BasisFamily::MexicanHat | BasisFamily::GaussianRbf { .. } => Ok(()),
                    BasisFamily::Fourier { k: kf, .. } if kf == k => Ok(()),
                    BasisFamily::Fourier { k: kf, .. } => {
                        Err(Error::Spec(format!("Fourier harmonics {kf} differ from layer k {k}")))
                    }
                    BasisFamily::BSpline(_) => Err(Error::Spec("LM-KAN layers do not take a B-spline basis".into())),
                }
            }
        }
    }

    /// Named parameter blocks `(name, length)` in storage order.
    pub fn blocks(&self) -> Vec<(&'static str, usize)> {
        let (i, o) = (self.d_in, self.d_out);
        match self.kind {
            LayerKind::Linear => vec![("weight", o * i), ("bias", o)],
            LayerKind::EfficientKan { grid, .. } => vec![
                ("base_weight", o * i),
                ("spline_coeff", o * i * grid.num_bases()),
                ("spline_scaler", o * i),
            ],
            LayerKind::WavKan => vec![("weight", o * i), ("translation", i * o), ("scale_logit", i * o), ("bias", o)],
            LayerKind::NnMetric { k, metric_hidden } => vec![
                ("metric", MetricNet::param_count(i, metric_hidden)),
                ("atom_center", i * k),
                ("atom_scale_logit", i * k),
                ("mix_weight", o * (i * k + 1)),
                ("mix_bias", o),
            ],
            LayerKind::LmKan { basis, k, metric_hidden } => {
                let features = match basis {
                    BasisFamily::Fourier { .. } => 2 * i * k + 1,
                    _ => i * k + 1,
                };
                vec![
                    ("metric", MetricNet::param_count(i, metric_hidden)),
                    ("atom_center", i * k),
                    ("atom_scale_logit", i * k),
                    ("mix_weight", o * features),
                    ("mix_bias", o),
                ]
            }
            LayerKind::Gamma { k } => vec![
                ("log_metric", SeparableMetric::param_count(i, k)),
                ("alpha", i),
                ("beta", i),
                ("delta", i),
                ("mix_weight", o * 2 * i),
                ("mix_bias", o),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.1).sum()
    }
}

fn positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::Spec(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

fn default_activation() -> Activation {
    Activation::Tanh
}

/// Stack of layers with a hidden activation between consecutive layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_activation")]
    pub hidden_activation: Activation,
    /// Physical input box mapped affinely onto `[-1, 1]` before the first layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_domain: Option<Vec<[f64; 2]>>,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        Self { layers, hidden_activation: Activation::Tanh, input_domain: None }
    }

    pub fn with_input_domain(mut self, domain: Vec<[f64; 2]>) -> Self {
        self.input_domain = Some(domain);
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.d_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.d_out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Spec("model needs at least one layer".into()));
        }
        for (n, l) in self.layers.iter().enumerate() {
            l.validate().map_err(|e| Error::Spec(format!("layer {n}: {e}")))?;
        }
        for (n, w) in self.layers.windows(2).enumerate() {
            if w[0].d_out != w[1].d_in {
                return Err(Error::Spec(format!(
                    "layer {n} outputs {} features but layer {} expects {}",
                    w[0].d_out,
                    n + 1,
                    w[1].d_in
                )));
            }
        }
        if let Some(dom) = &self.input_domain {
            if dom.len() != self.input_dim() {
                return Err(Error::Spec(format!(
                    "input_domain has {} intervals for {} inputs",
                    dom.len(),
                    self.input_dim()
                )));
            }
            if let Some(bad) = dom.iter().find(|[lo, hi]| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
                return Err(Error::Spec(format!("invalid input interval {bad:?}")));
            }
        }
        Ok(())
    }

    /// Hidden layers of one kind between `dims`, closed by a linear readout.
    pub fn stack(dims: &[usize], kind: LayerKind) -> Self {
        let n = dims.len();
        assert!(n >= 2);
        let mut layers: Vec<LayerSpec> = dims[..n - 1]
            .windows(2)
            .map(|w| LayerSpec { d_in: w[0], d_out: w[1], kind })
            .collect();
        layers.push(LayerSpec::linear(dims[n - 2], dims[n - 1]));
        Self::new(layers)
    }

    /// Every layer of one kind, including the last (KAN-style networks).
    pub fn uniform(dims: &[usize], kind: LayerKind) -> Self {
        Self::new(dims.windows(2).map(|w| LayerSpec { d_in: w[0], d_out: w[1], kind }).collect())
    }
}

/// Exact number of trainable scalars of a model.
pub fn count_params(spec: &ModelSpec) -> Result<usize> {
    spec.validate()?;
    Ok(spec.layers.iter().map(LayerSpec::param_count).sum())
}
