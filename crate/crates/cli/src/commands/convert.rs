use std::path::{Path, PathBuf};

use zvq_core::features::write_features;
use zvq_core::models::{Model, SpeakerMap};

use crate::corpus::{load_feature_dir, SPEAKERS_FILE};
use crate::error::Failure;
use crate::Context;

/// `speakers.json` next to the checkpoint or one directory up.
fn find_speaker_map(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint
        .ancestors()
        .skip(1)
        .take(2)
        .map(|d| d.join(SPEAKERS_FILE))
        .find(|p| p.is_file())
}

pub fn run(
    ctx: &Context,
    checkpoint: &Path,
    features: &Path,
    utterance: &str,
    target_speaker: &str,
    speakers: Option<&Path>,
) -> Result<(), Failure> {
    let model = Model::load(checkpoint)?;
    let map_path = match speakers {
        Some(p) => p.to_path_buf(),
        None => find_speaker_map(checkpoint).ok_or_else(|| {
            Failure::data(format!(
                "no {SPEAKERS_FILE} next to {}; pass --speakers",
                checkpoint.display()
            ))
        })?,
    };
    let map = SpeakerMap::load(&map_path)?;
    let target = map.id(target_speaker).map_err(|_| {
        let known: Vec<&str> = map.names().collect();
        Failure::Usage(format!("unknown speaker `{target_speaker}`; known speakers: {}", known.join(", ")))
    })?;

    let utts = load_feature_dir(features).map_err(Failure::Data)?;
    let (_, source) = utts
        .iter()
        .find(|(e, _)| e.utterance_id == utterance)
        .ok_or_else(|| Failure::data(format!("utterance `{utterance}` is not in {}", features.display())))?;
    let converted = model.convert(source, target)?;

    let out = ctx.out()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        super::create_dir(dir)?;
    }
    write_features(out, &converted).map_err(|e| Failure::Data(e.into()))?;
    log::info!(
        "converted {utterance} to {target_speaker}: {} frames written to {}",
        converted.n_frames(),
        out.display()
    );
    Ok(())
}
