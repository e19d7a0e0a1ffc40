//! Disentanglement bottlenecks: instance normalization with adaptive
//! re-styling, and (sliced) vector quantization with stop-gradient losses
//! and a straight-through estimator.
//!
//! Quantizers come in two forms. [`vq_quantize`] and [`sliced_vq_quantize`]
//! work on plain tensors and serve inference and evaluation;
//! [`quantize_on_tape`] records the same computation on a [`Tape`] for
//! training.
//!
//! [`Tape`]: crate::numerics::Tape

mod codes;
mod norm;
mod vq;

pub use codes::{read_code_file, write_code_file, CodeSequence};
pub use norm::{adain, channel_stats, instance_norm, AdainParams, InConfig};
pub use vq::{
    nearest_code, quantize_on_tape, quantize_with_indices, slice_feature, sliced_vq_quantize,
    straight_through, vq_loss, vq_loss_terms, vq_quantize, Codebook, QuantizeResult, SlicedCodebook,
    TapeQuantization, VqLossTerms, DEFAULT_BETA,
};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum BottleneckError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite input at frame {frame}")]
    NonFinite { frame: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = BottleneckError> = std::result::Result<T, E>;
