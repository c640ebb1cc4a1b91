//! Dense-tensor reverse-mode differentiation and its finite-difference
//! oracle.

mod gradcheck;
mod graph;
mod params;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Elementwise, Gradients, Graph, Var};
pub use params::ParamStore;

