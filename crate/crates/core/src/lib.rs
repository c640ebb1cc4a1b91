//! Zero-shot skeleton action recognition with evolving spatial and temporal
//! micro-prototypes.

pub mod alignment;
pub mod autodiff;
pub mod checkpoint;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod nn;
pub mod semantics;
pub mod spatial;
pub mod synth;
pub mod temporal;
pub mod tensor;
pub mod types;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub use types::{ClassId, Real, Stream};
