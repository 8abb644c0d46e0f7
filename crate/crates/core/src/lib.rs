//! Geometry-aware Kolmogorov–Arnold networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: second-order input jets and a batched reverse-mode tape.
//! - [`basis`]: B-splines, wavelet/RBF/Fourier atoms and activations.
//! - [`geometry`]: learned diagonal metrics, warps, volume and γ features.
//! - [`layers`]: every layer kind, model assembly and parameter accounting.
//! - [`optim`]: AdamW and the deterministic full-batch training loop.
//! - [`refsolve`]: RK45, method-of-lines and transfer-matrix reference solvers.
//! - [`physics`]: physics-informed residuals and losses for the case studies.
//! - [`bench`]: the matched-capacity curve-fitting benchmark.
//! - [`experiment`]: presets, config files and artifact export used by the CLI.

pub mod autodiff;
pub mod basis;
pub mod bench;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod layers;
pub mod optim;
pub mod physics;
pub mod refsolve;
pub mod rng;

pub use error::{Error, Result};
