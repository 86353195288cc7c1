//! Dense `f64` tensors with tape-based reverse-mode differentiation.

pub mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use params::{Bound, ParamId, ParamStore};
pub use tape::{broadcast_shape, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: dimension mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: numeric domain violation ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
}
