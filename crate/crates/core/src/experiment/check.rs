//! Finite-difference verification of loss gradients for every layer kind.

use std::f64::consts::PI;

use serde::Serialize;

use crate::autodiff::fd_check;
use crate::basis::{Activation, BasisFamily, BsplineGrid};
use crate::error::Result;
use crate::layers::{LayerKind, Model, ModelSpec};
use crate::physics::{compute_reference, sample_points, total_loss, ProblemId, ProblemSpec};

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-6;

/// One (layer kind, problem) comparison.
#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub kind: &'static str,
    pub problem: &'static str,
    pub params: usize,
    pub rel_error: f64,
}

/// Every layer kind with small sizes.
pub fn layer_kinds() -> Vec<(&'static str, LayerKind)> {
    let lm = |basis| LayerKind::LmKan { basis, k: 3, metric_hidden: 3 };
    vec![
        ("mlp", LayerKind::Linear),
        ("efficient_kan", LayerKind::EfficientKan { grid: BsplineGrid::new(3, 3), base_activation: Activation::Silu }),
        ("wavkan", LayerKind::WavKan),
        ("nnmetric", LayerKind::NnMetric { k: 3, metric_hidden: 3 }),
        ("gamma", LayerKind::Gamma { k: 3 }),
        ("lmkan_wav", lm(BasisFamily::MexicanHat)),
        ("lmkan_rbf", lm(BasisFamily::GaussianRbf { gamma: 1.5 })),
        ("lmkan_fourier", LayerKind::LmKan { basis: BasisFamily::Fourier { k: 3, omega: PI }, k: 3, metric_hidden: 3 }),
    ]
}

/// A copy of the `id` preset with collocation sets and reference grids
/// small enough for finite differences.
pub fn small_problem(id: ProblemId) -> ProblemSpec {
    let mut p = ProblemSpec::preset(id);
    match id {
        ProblemId::Lorenz => {
            p.n_t = 9;
            p.reference_grid = [41, 1];
        }
        ProblemId::Helmholtz => {
            p.n_x = 8;
            p.n_t = 3;
            p.n_bc = 3;
            p.reference_grid = [33, 1];
        }
        _ => {
            p.n_x = 6;
            p.n_t = 5;
            p.n_ic = 6;
            p.n_bc = 5;
            p.reference_grid = [65, 65];
        }
    }
    p
}

/// Compares analytic and central-difference gradients of the full
/// physics-informed loss (residual, initial, boundary and data terms) for
/// every layer kind on every problem.
pub fn gradient_checks(seed: u64) -> Result<Vec<GradientCheck>> {
    let mut rows = Vec::new();
    for id in ProblemId::ALL {
        let problem = small_problem(id);
        let reference = compute_reference(&problem, None)?;
        let colloc = sample_points(&problem, seed, Some(&reference))?;
        for (name, kind) in layer_kinds() {
            let spec = ModelSpec::uniform(&[problem.input_dim(), 3, problem.output_dim()], kind)
                .with_input_domain(problem.domain());
            let model = Model::new(spec)?;
            let params = model.init_params(seed).values;
            let rel_error = fd_check(
                |q| {
                    let (rep, g) = total_loss(&problem, &model, q, &colloc, 16)?;
                    Ok((rep.total, g.values))
                },
                &params,
                FD_STEP,
            )?;
            rows.push(GradientCheck { kind: name, problem: id.name(), params: params.len(), rel_error });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_on_every_problem_passes() {
        let rows = gradient_checks(0).unwrap();
        assert_eq!(rows.len(), 8 * 5);
        for r in &rows {
            assert!(r.rel_error <= 1e-5, "{} on {}: {}", r.kind, r.problem, r.rel_error);
        }
    }
}
