//! Dense tensors with a tape-based reverse-mode differentiator, an Adam
//! optimizer, and a central-difference gradient checker.
//!
//! Everything is generic over [`Element`]. Models train in `f32`; gradient
//! verification instantiates the same operations in `f64`, where central
//! differences are accurate enough to compare against at tight tolerances.

mod adam;
mod conv;
mod element;
mod gemm;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use element::Element;
pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use params::ParamSet;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
}

pub type Result<T, E = NumericsError> = std::result::Result<T, E>;
