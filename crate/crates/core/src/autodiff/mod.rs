//! Differentiation engine.
//!
//! Input derivatives (`u_x`, `u_t`, `u_xx`, ...) are carried forward as
//! second-order [`Jet`]s. Parameter gradients come from a reverse sweep over a
//! [`Tape`] whose nodes hold *batches* of jets: one row per feature, one
//! column per collocation point and jet channel. Batching keeps every layer a
//! handful of dense kernels regardless of the number of points.

mod fdcheck;
mod jet;
mod primitive;
mod tape;

pub use fdcheck::{central_difference_gradient, fd_check};
pub use jet::{seed_inputs, Jet};
pub use primitive::{softplus, softplus_inv, Primitive};
pub use tape::{Channels, Gradient, NodeId, Tape};
