//! Embedded experiment presets.

use std::f64::consts::PI;

use super::{Experiment, ExperimentConfig, CONFIG_VERSION};
use crate::basis::{Activation, BasisFamily, BsplineGrid};
use crate::bench::{self, BenchModel, SuiteConfig, Target, DATASET_SIZE};
use crate::error::{Error, Result};
use crate::layers::{LayerKind, ModelSpec};
use crate::optim::TrainConfig;
use crate::physics::{ProblemId, ProblemSpec};

/// Every preset name accepted by [`preset`].
pub const PRESET_NAMES: [&str; 12] = [
    "table2",
    "allen1",
    "allen2",
    "burgers",
    "lorenz",
    "helmholtz",
    "highfreq",
    "chirp",
    "step",
    "needle",
    "multiscale",
    "sawtooth",
];

/// Model names available for a PDE problem; the first is the default.
pub fn solve_model_names(id: ProblemId) -> &'static [&'static str] {
    match id {
        ProblemId::Allen1 | ProblemId::Burgers | ProblemId::Lorenz => &["lmkan", "pikan"],
        ProblemId::Allen2 => &["lmkan", "lmkan-wav", "pikan"],
        ProblemId::Helmholtz => &["lmkan", "pikan"],
    }
}

pub fn epochs(id: ProblemId) -> usize {
    match id {
        ProblemId::Allen1 | ProblemId::Lorenz | ProblemId::Helmholtz => 10_000,
        ProblemId::Allen2 => 20_000,
        ProblemId::Burgers => 5_000,
    }
}

fn rbf(gamma: f64, k: usize, m: usize) -> LayerKind {
    LayerKind::LmKan { basis: BasisFamily::GaussianRbf { gamma }, k, metric_hidden: m }
}

fn efficient(activation: Activation) -> LayerKind {
    LayerKind::EfficientKan { grid: BsplineGrid::new(5, 3), base_activation: activation }
}

/// Architecture of model `name` for problem `id`, including the input box.
pub fn solve_model(id: ProblemId, name: &str) -> Result<ModelSpec> {
    let name = match name {
        "lmkan-rbf" | "lmkan-fourier" => "lmkan",
        other => other,
    };
    let spec = match (id, name) {
        (ProblemId::Allen1 | ProblemId::Allen2, "lmkan") => ModelSpec::stack(&[2, 5, 5, 1], rbf(2.0, 7, 9)),
        (ProblemId::Allen2, "lmkan-wav") => ModelSpec::stack(
            &[2, 5, 5, 1],
            LayerKind::LmKan { basis: BasisFamily::MexicanHat, k: 7, metric_hidden: 9 },
        ),
        (ProblemId::Allen1 | ProblemId::Allen2, "pikan") => ModelSpec::uniform(&[2, 12, 8, 12, 1], efficient(Activation::Sin)),
        (ProblemId::Burgers, "lmkan") => ModelSpec::stack(&[2, 8, 8, 1], rbf(2.5, 8, 9)),
        (ProblemId::Burgers, "pikan") => ModelSpec::uniform(&[2, 8, 4, 1], efficient(Activation::Sin)),
        (ProblemId::Lorenz, "lmkan") => ModelSpec::stack(&[1, 4, 4, 4, 3], rbf(0.5, 5, 9)),
        (ProblemId::Lorenz, "pikan") => ModelSpec::uniform(&[1, 8, 16, 3], LayerKind::WavKan),
        (ProblemId::Helmholtz, "lmkan") => ModelSpec::stack(
            &[2, 4, 4, 2],
            LayerKind::LmKan { basis: BasisFamily::Fourier { k: 16, omega: PI }, k: 16, metric_hidden: 18 },
        ),
        (ProblemId::Helmholtz, "pikan") => ModelSpec::uniform(&[2, 12, 12, 2], efficient(Activation::Silu)),
        _ => {
            return Err(Error::Config(format!(
                "unknown model '{name}' for {}; available: {}",
                id.name(),
                solve_model_names(id).join(", ")
            )))
        }
    };
    Ok(spec.with_input_domain(ProblemSpec::preset(id).domain()))
}

/// Preset configuration `name`, optionally selecting a model.
pub fn preset(name: &str, model: Option<&str>) -> Result<ExperimentConfig> {
    if name == "table2" {
        let mut suite = SuiteConfig::default();
        if let Some(m) = model {
            let m = BenchModel::parse(m).ok_or_else(|| unknown_bench_model(m))?;
            suite.models = vec![m];
        }
        return Ok(ExperimentConfig { version: CONFIG_VERSION, name: name.into(), experiment: Experiment::Suite { suite } });
    }
    if let Some(id) = ProblemId::parse(name) {
        let model_name = model.unwrap_or(solve_model_names(id)[0]).to_string();
        let spec = solve_model(id, &model_name)?;
        let train = TrainConfig { epochs: epochs(id), lr: 1e-3, log_every: 10, ..TrainConfig::default() };
        return Ok(ExperimentConfig {
            version: CONFIG_VERSION,
            name: format!("{name}-{model_name}"),
            experiment: Experiment::Solve { model_name, model: spec, problem: ProblemSpec::preset(id), train },
        });
    }
    if let Some(target) = Target::parse(name) {
        let m = match model {
            Some(m) => BenchModel::parse(m).ok_or_else(|| unknown_bench_model(m))?,
            None => BenchModel::GeokanNnmetric,
        };
        return Ok(ExperimentConfig {
            version: CONFIG_VERSION,
            name: format!("{name}-{}", m.name()),
            experiment: Experiment::Fit {
                model_name: m.name().into(),
                model: m.spec(),
                target,
                samples: DATASET_SIZE,
                train: bench::default_train_config(),
            },
        });
    }
    Err(Error::Config(format!("unknown preset '{name}'; available: {}", PRESET_NAMES.join(", "))))
}

fn unknown_bench_model(name: &str) -> Error {
    let names: Vec<_> = BenchModel::ALL.iter().map(|m| m.name()).collect();
    Error::Config(format!("unknown benchmark model '{name}'; available: {}", names.join(", ")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::count_params;

    #[test]
    fn every_preset_builds() {
        for name in PRESET_NAMES {
            let cfg = preset(name, None).unwrap();
            cfg.validate().unwrap();
        }
        for id in ProblemId::ALL {
            for m in solve_model_names(id) {
                preset(id.name(), Some(m)).unwrap().validate().unwrap();
            }
        }
    }

    #[test]
    fn case_study_architectures() {
        let count = |id, m| count_params(&solve_model(id, m).unwrap()).unwrap();
        assert_eq!(count(ProblemId::Allen1, "pikan"), 2280);
        assert_eq!(count(ProblemId::Allen1, "lmkan"), 700);
        assert_eq!(count(ProblemId::Helmholtz, "pikan"), 1920);
        assert_eq!(count(ProblemId::Helmholtz, "lmkan"), 1928);
        assert_eq!(count(ProblemId::Burgers, "lmkan"), 1229);
        assert_eq!(count(ProblemId::Lorenz, "lmkan"), 777);
    }

    #[test]
    fn unknown_names_are_config_errors() {
        assert!(matches!(preset("allen3", None), Err(Error::Config(_))));
        assert!(matches!(preset("burgers", Some("lmkan-wav")), Err(Error::Config(_))));
        assert!(matches!(preset("table2", Some("resnet")), Err(Error::Config(_))));
    }

    #[test]
    fn model_flag_selects_suite_row() {
        let cfg = preset("table2", Some("mlp")).unwrap();
        match cfg.experiment {
            Experiment::Suite { suite } => assert_eq!(suite.models, vec![BenchModel::Mlp]),
            _ => panic!("table2 is a suite"),
        }
    }
}
