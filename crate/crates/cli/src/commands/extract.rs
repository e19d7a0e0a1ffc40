use std::path::Path;

use anyhow::Context as _;
use zvq_core::features::{apply_cmvn, compute_cmvn, extract, read_wav, write_features, FeatureSequence};
use zvq_core::models::SpeakerMap;

use crate::corpus::{manifest_text, par_map, read_manifest, Entry, CMVN_FILE, FEATURE_INDEX, SPEAKERS_FILE};
use crate::error::Failure;
use crate::Context;

pub fn run(ctx: &Context, manifest: &Path) -> Result<(), Failure> {
    let entries = read_manifest(manifest).map_err(Failure::Data)?;
    let out = ctx.out()?;
    super::create_dir(out)?;
    let mfcc = ctx.config.features;
    let results = par_map(&entries, ctx.jobs, |e: &Entry| {
        read_wav(&e.path)
            .and_then(|clip| extract(&clip, &e.utterance_id, &mfcc))
            .with_context(|| format!("{} ({})", e.utterance_id, e.path.display()))
    });
    let mut ok: Vec<(Entry, FeatureSequence)> = Vec::new();
    let mut failed = 0;
    for (e, r) in entries.iter().zip(results) {
        match r {
            Ok(f) => ok.push((e.clone(), f)),
            Err(err) => {
                log::error!("skipping {err:#}");
                failed += 1;
            }
        }
    }
    if ok.is_empty() {
        return Err(Failure::data("no utterance in the manifest could be processed"));
    }

    // statistics come from the training utterances when there are any
    let training: Vec<FeatureSequence> = ok.iter().filter(|(e, _)| e.role.is_training()).map(|(_, f)| f.clone()).collect();
    let pool = if training.is_empty() { ok.iter().map(|(_, f)| f.clone()).collect() } else { training };
    let stats = compute_cmvn(&pool).context("computing CMVN statistics").map_err(Failure::Data)?;

    let written = par_map(&ok, ctx.jobs, |(e, f)| -> anyhow::Result<Entry> {
        let path = out.join(format!("{}.zvqf", e.utterance_id));
        write_features(&path, &apply_cmvn(f, &stats)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(Entry { path, ..e.clone() })
    })
    .into_iter()
    .collect::<anyhow::Result<Vec<Entry>>>()
    .map_err(Failure::Data)?;

    let stats_json = serde_json::to_string_pretty(&stats).expect("stats serialize") + "\n";
    super::write(&out.join(CMVN_FILE), stats_json)?;
    let names: Vec<&str> = {
        let train: Vec<&str> = written.iter().filter(|e| e.role.is_training()).map(|e| e.speaker.as_str()).collect();
        if train.is_empty() { written.iter().map(|e| e.speaker.as_str()).collect() } else { train }
    };
    super::write(&out.join(SPEAKERS_FILE), SpeakerMap::from_names(names).to_json())?;
    super::write(&out.join(FEATURE_INDEX), manifest_text(&written, out))?;
    log::info!("extracted {} of {} utterances into {}", written.len(), entries.len(), out.display());
    if failed > 0 {
        return Err(Failure::data(format!("{failed} of {} utterances failed", entries.len())));
    }
    Ok(())
}
