use std::path::Path;

use serde::{Deserialize, Serialize};
use zvq_core::bottlenecks::write_code_file;
use zvq_core::features::write_features;
use zvq_core::models::{Model, Representation, Variant};

use crate::corpus::{load_feature_dir, par_map};
use crate::error::Failure;
use crate::{Context, Format};

pub const SIDECAR: &str = "encode.json";

/// Written next to the encoded files so evaluation knows how to read them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeInfo {
    pub variant: String,
    pub format: String,
    pub frame_rate_hz: f64,
    pub dim: usize,
    pub codebook_size: Option<usize>,
    pub n_slices: Option<usize>,
    pub checkpoint_step: u64,
    pub utterances: usize,
}

pub fn run(ctx: &Context, checkpoint: &Path, features: &Path, format: Format) -> Result<(), Failure> {
    let model = Model::load(checkpoint)?;
    let variant = model.variant();
    let format = match (format, variant) {
        (Format::Auto, Variant::SvqWae) | (Format::Codes, Variant::SvqWae) => "codes",
        (Format::Auto, Variant::InWae) | (Format::Features, Variant::InWae) => "features",
        (Format::Codes, Variant::InWae) => {
            return Err(Failure::Usage("an in-wae checkpoint has no discrete codes; use --format features".into()))
        }
        (Format::Features, Variant::SvqWae) => {
            return Err(Failure::Usage("an svq-wae checkpoint emits codes; use --format codes".into()))
        }
    };
    let out = ctx.out()?;
    super::create_dir(out)?;
    let utts = load_feature_dir(features).map_err(Failure::Data)?;

    let results = par_map(&utts, ctx.jobs, |(e, f)| -> Result<(), Failure> {
        match model.encode_utterance(f)? {
            Representation::Codes(c) => write_code_file(out.join(format!("{}.codes", e.utterance_id)), &[c])
                .map_err(|err| Failure::Data(err.into())),
            Representation::Continuous(z) => write_features(out.join(format!("{}.zvqf", e.utterance_id)), &z)
                .map_err(|err| Failure::Data(err.into())),
        }
    });
    results.into_iter().collect::<Result<Vec<()>, Failure>>()?;

    let cfg = model.config();
    let svq = variant == Variant::SvqWae;
    let info = EncodeInfo {
        variant: variant.name().into(),
        format: format.into(),
        frame_rate_hz: cfg.latent_rate_hz(),
        dim: cfg.encoder.latent_dim,
        codebook_size: svq.then_some(cfg.quantizer.codebook_size),
        n_slices: svq.then_some(cfg.quantizer.n_slices),
        checkpoint_step: model.step(),
        utterances: utts.len(),
    };
    let text = serde_json::to_string_pretty(&info).expect("info serializes") + "\n";
    super::write(&out.join(SIDECAR), text)?;
    log::info!("encoded {} utterances as {format} into {}", utts.len(), out.display());
    Ok(())
}
