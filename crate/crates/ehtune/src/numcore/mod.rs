//! Dense f32 tensors with define-by-run reverse-mode autodiff.
//!
//! The [`Graph`] is rebuilt for every forward pass; [`Tensor`] is a plain
//! value type. Reductions and matmul inner loops accumulate in f64 so that
//! finite-difference gradient checks stay meaningful in f32.

mod gradcheck;
mod graph;
mod store;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use store::ParamStore;
pub use tensor::Tensor;
