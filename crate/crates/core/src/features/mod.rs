//! Acoustic front end: PCM ingestion, 13-coefficient MFCCs at a 10 ms hop,
//! regression deltas, corpus-level mean/variance normalization, and
//! fixed-length segmenting into model inputs.

mod cmvn;
mod deltas;
mod io;
mod mfcc;
mod segment;
mod wav;

pub use cmvn::{apply_cmvn, compute_cmvn, invert_cmvn, CmvnStats, STD_FLOOR};
pub use deltas::add_deltas;
pub use io::{read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use mfcc::{mfcc, MfccConfig};
pub use segment::{segment, Segmentation};
pub use wav::{read_wav, write_wav, AudioClip};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("unsupported audio format: {0}")]
    Format(String),
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("clip has {samples} samples, shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("malformed feature file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FeatureError> = std::result::Result<T, E>;

pub const DELTA_WINDOW: usize = 2;

/// MFCCs plus deltas and delta-deltas, 39 columns at 100 Hz, before CMVN.
pub fn extract(clip: &AudioClip, utterance_id: &str, cfg: &MfccConfig) -> Result<FeatureSequence> {
    add_deltas(&mfcc::mfcc_with_id(clip, cfg, utterance_id)?, DELTA_WINDOW)
}

/// Per-utterance matrix of frames, `[n_frames × dim]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<f32>,
    dim: usize,
    pub frame_rate_hz: f32,
    pub utterance_id: String,
}

impl FeatureSequence {
    pub fn new(
        utterance_id: impl Into<String>,
        frames: Vec<f32>,
        dim: usize,
        frame_rate_hz: f32,
    ) -> Result<Self> {
        if dim == 0 || frames.len() % dim != 0 {
            return Err(FeatureError::Dimension {
                expected: dim,
                got: frames.len(),
            });
        }
        if let Some(bad) = frames.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::InvalidAudio(format!(
                "non-finite feature value at flat index {bad}"
            )));
        }
        Ok(Self {
            frames,
            dim,
            frame_rate_hz,
            utterance_id: utterance_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len() / self.dim
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.frames
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.frames.chunks(self.dim)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames() as f64 / self.frame_rate_hz as f64
    }
}
