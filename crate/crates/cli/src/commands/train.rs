use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context as _;
use serde_json::json;
use zvq_core::models::{train, CodebookUsage, Model, SpeakerMap, TrainingSet, Variant};

use crate::corpus::{load_feature_dir, SPEAKERS_FILE};
use crate::error::Failure;
use crate::Context;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const MODEL_FILE: &str = "model.zvqm";

pub fn run(ctx: &Context, features: &Path, resume: Option<&Path>) -> Result<(), Failure> {
    let out = ctx.out()?;
    let ckpt_dir = out.join("checkpoints");
    super::create_dir(&ckpt_dir)?;
    let utts = load_feature_dir(features).map_err(Failure::Data)?;
    let speakers = SpeakerMap::load(features.join(SPEAKERS_FILE))?;

    let mut training = Vec::new();
    for (e, f) in utts.iter().filter(|(e, _)| e.role.is_training()) {
        let id = speakers.id(&e.speaker)?;
        training.push((e, f, id));
    }
    if training.is_empty() {
        return Err(Failure::data(format!("{} has no training utterances", features.display())));
    }
    let data = TrainingSet::from_sequences(training.iter().map(|(_, f, id)| (*f, *id)))?;

    let mut wanted = ctx.config.model;
    wanted.decoder.n_speakers = speakers.len();
    let mut model = match resume {
        Some(path) => {
            let m = Model::load(path)?;
            if *m.config() != wanted {
                return Err(Failure::Usage(format!(
                    "checkpoint {} was trained with a different model configuration",
                    path.display()
                )));
            }
            if m.seed() != ctx.config.seed {
                return Err(Failure::Usage(format!(
                    "checkpoint {} was trained with seed {}, not {}",
                    path.display(),
                    m.seed(),
                    ctx.config.seed
                )));
            }
            log::info!("resuming from {} at step {}", path.display(), m.step());
            m
        }
        None => Model::new(wanted, ctx.config.seed)?,
    };

    let mut resolved = ctx.config.clone();
    resolved.model = wanted;
    super::write(&out.join("config.ini"), resolved.to_ini())?;
    super::write(&out.join(SPEAKERS_FILE), speakers.to_json())?;

    let mut log_file = open_log(&out.join(LOG_FILE), model.step()).map_err(Failure::Data)?;

    // first training utterance per speaker, in utterance-id order
    let mut refs: Vec<Option<&zvq_core::features::FeatureSequence>> = vec![None; speakers.len()];
    let mut ordered = training.clone();
    ordered.sort_by(|a, b| a.0.utterance_id.cmp(&b.0.utterance_id));
    for (_, f, id) in ordered {
        refs[id].get_or_insert(f);
    }

    let t = ctx.config.train;
    let q = wanted.quantizer;
    let mut usage = CodebookUsage::new(q.n_slices, q.codebook_size, t.usage_window as usize);
    log::info!(
        "training {} on {} segments from {} utterances, steps {}..{}",
        wanted.variant.name(),
        data.len(),
        training.len(),
        model.step(),
        t.steps
    );
    let mut on_step = |m: &Model, s: &zvq_core::models::StepStats| -> zvq_core::models::Result<()> {
        if (s.step - 1) % t.usage_window == 0 {
            usage.reset();
        }
        if let Some(idx) = &s.indices {
            usage.record(idx);
        }
        if s.step % t.log_every == 0 || s.step == t.steps {
            let u = (m.variant() == Variant::SvqWae).then(|| usage.fraction());
            let line = json!({
                "step": s.step,
                "recon_loss": s.recon_loss,
                "vq_loss": s.vq_loss,
                "codebook_usage": u,
            });
            writeln!(log_file, "{line}").and_then(|_| log_file.flush())?;
            log::debug!("{line}");
        }
        Ok(())
    };
    loop {
        let next = ((model.step() / t.checkpoint_every + 1) * t.checkpoint_every).min(t.steps);
        if next > model.step() {
            train(&mut model, &data, next, &mut on_step).map_err(|e| {
                log::error!("training stopped at step {}; the last checkpoint is kept", model.step());
                Failure::from(e)
            })?;
        }
        if wanted.variant == Variant::InWae {
            for (id, f) in refs.iter().enumerate() {
                if let Some(f) = f {
                    model.set_speaker_reference(id, f)?;
                }
            }
        }
        let step_path = ckpt_dir.join(format!("step_{:06}.zvqm", model.step()));
        model.save(&step_path)?;
        model.save(out.join(MODEL_FILE))?;
        log::info!("saved {}", step_path.display());
        if model.step() >= t.steps {
            break;
        }
    }
    Ok(())
}

fn open_log(path: &Path, keep_through: u64) -> anyhow::Result<BufWriter<File>> {
    let kept = if keep_through > 0 && path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        text.lines()
            .filter(|l| {
                serde_json::from_str::<serde_json::Value>(l)
                    .ok()
                    .and_then(|v| v["step"].as_u64())
                    .is_some_and(|s| s <= keep_through)
            })
            .map(|l| format!("{l}\n"))
            .collect()
    } else {
        String::new()
    };
    fs::write(path, kept).with_context(|| format!("writing {}", path.display()))?;
    let f = OpenOptions::new().append(true).open(path)?;
    Ok(BufWriter::new(f))
}
