use serde::{Deserialize, Serialize};

use crate::bottlenecks::{InConfig, DEFAULT_BETA};
use crate::numerics::AdamConfig;

use super::{ModelError, Result};

pub const FEATURE_DIM: usize = 39;
pub const SEGMENT_FRAMES: usize = 32;
pub const FEATURE_RATE_HZ: f64 = 100.0;
pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    InWae,
    SvqWae,
}

impl Variant {
    pub fn tag(self) -> u8 {
        match self {
            Variant::InWae => 1,
            Variant::SvqWae => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Variant::InWae),
            2 => Some(Variant::SvqWae),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::InWae => "in-wae",
            Variant::SvqWae => "svq-wae",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "in" | "in-wae" | "in_wae" => Some(Variant::InWae),
            "svq" | "svq-wae" | "svq_wae" => Some(Variant::SvqWae),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_dim: usize,
    pub hidden_channels: usize,
    /// 1 → 50 Hz latent, 2 → 25 Hz.
    pub n_downsample: usize,
    pub latent_dim: usize,
    pub with_in: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEncoderConfig {
    pub n_conv: usize,
    pub channels: usize,
    pub speaker_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub out_dim: usize,
    pub n_upsample: usize,
    pub hidden_channels: usize,
    pub speaker_embedding_dim: usize,
    pub n_speakers: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub codebook_size: usize,
    pub n_slices: usize,
    pub beta: f64,
    /// Amplitude of the uniform noise added to sampled initial rows.
    pub init_jitter: f64,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            codebook_size: 128,
            n_slices: 4,
            beta: DEFAULT_BETA,
            init_jitter: 1e-3,
        }
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder: EncoderConfig,
    pub speaker_encoder: SpeakerEncoderConfig,
    pub decoder: DecoderConfig,
    pub quantizer: QuantizerConfig,
    pub norm: InConfig,
    pub adam: AdamConfig,
    pub batch_size: usize,
}

impl ModelConfig {
    /// Defaults for `variant` with the given width, latent rate and speaker
    /// count; every sub-config is derived from these.
    pub fn new(variant: Variant, hidden: usize, n_downsample: usize, n_speakers: usize) -> Self {
        let latent = 64;
        Self {
            variant,
            encoder: EncoderConfig {
                in_dim: FEATURE_DIM,
                hidden_channels: hidden,
                n_downsample,
                latent_dim: latent,
                with_in: variant == Variant::InWae,
            },
            speaker_encoder: SpeakerEncoderConfig {
                n_conv: 3,
                channels: hidden,
                speaker_dim: 64,
            },
            decoder: DecoderConfig {
                out_dim: FEATURE_DIM,
                n_upsample: n_downsample,
                hidden_channels: hidden,
                speaker_embedding_dim: 16,
                n_speakers,
            },
            quantizer: QuantizerConfig::default(),
            norm: InConfig::default(),
            adam: AdamConfig::default(),
            batch_size: 10,
        }
    }

    pub fn latent_rate_hz(&self) -> f64 {
        FEATURE_RATE_HZ / (1usize << self.encoder.n_downsample) as f64
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.encoder.n_downsample
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        let e = &self.encoder;
        if !(1..=2).contains(&e.n_downsample) {
            return bad(format!("n_downsample must be 1 or 2, got {}", e.n_downsample));
        }
        if self.decoder.n_upsample != e.n_downsample {
            return bad("decoder n_upsample must equal encoder n_downsample".into());
        }
        if e.with_in != (self.variant == Variant::InWae) {
            return bad("instance normalization belongs to the IN-WAE variant only".into());
        }
        if self.speaker_encoder.n_conv != 3 {
            return bad(format!("speaker encoder has 3 convolutions, got {}", self.speaker_encoder.n_conv));
        }
        for (name, v) in [
            ("in_dim", e.in_dim),
            ("hidden_channels", e.hidden_channels),
            ("latent_dim", e.latent_dim),
            ("speaker channels", self.speaker_encoder.channels),
            ("speaker_dim", self.speaker_encoder.speaker_dim),
            ("decoder hidden_channels", self.decoder.hidden_channels),
            ("speaker_embedding_dim", self.decoder.speaker_embedding_dim),
            ("n_speakers", self.decoder.n_speakers),
            ("codebook_size", self.quantizer.codebook_size),
            ("n_slices", self.quantizer.n_slices),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.decoder.out_dim != e.in_dim {
            return bad("decoder out_dim must equal encoder in_dim".into());
        }
        if e.latent_dim % self.quantizer.n_slices != 0 {
            return bad(format!(
                "latent_dim {} is not divisible into {} slices",
                e.latent_dim, self.quantizer.n_slices
            ));
        }
        if !(self.quantizer.beta >= 0.0) {
            return bad("beta must be ≥ 0".into());
        }
        self.norm
            .validate()
            .map_err(|e| ModelError::Config(e.to_string()))?;
        Ok(())
    }
}
