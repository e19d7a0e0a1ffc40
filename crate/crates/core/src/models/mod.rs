//! The two auto-encoders: a convolutional content encoder, an optional
//! speaker encoder with AdaIN (IN-WAE) or a sliced vector quantizer
//! (SVQ-WAE), and a feature-domain decoder conditioned on a speaker
//! embedding. Also training, checkpoints, encoding and conversion.

mod checkpoint;
mod config;
mod model;
mod network;
mod speakers;
mod train;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{
    DecoderConfig, EncoderConfig, ModelConfig, QuantizerConfig, SpeakerEncoderConfig, Variant,
    DEFAULT_HIDDEN, FEATURE_DIM, FEATURE_RATE_HZ, SEGMENT_FRAMES,
};
pub use model::{Model, ModelGradCheck, Representation, StepStats};
pub use network::Layer;
pub use speakers::SpeakerMap;
pub use train::{train, CodebookUsage, TrainingSet};

use thiserror::Error;

use crate::bottlenecks::BottleneckError;
use crate::features::FeatureError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unknown speaker {0}")]
    UnknownSpeaker(String),
    #[error("numerical failure: {0}")]
    NonFinite(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Bottleneck(#[from] BottleneckError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
