use zvq_core::synth::{write_corpus, SynthConfig};

use crate::error::Failure;
use crate::Context;

pub fn run(ctx: &Context) -> Result<(), Failure> {
    let out = ctx.out()?;
    super::create_dir(out)?;
    let cfg = SynthConfig {
        seed: ctx.config.seed,
        ..ctx.config.synth
    };
    let files = write_corpus(&cfg, out).map_err(|e| Failure::Data(anyhow::Error::new(e).context(format!("writing corpus to {}", out.display()))))?;
    log::info!(
        "wrote {} utterances, {} and {}",
        files.wavs.len(),
        files.manifest.display(),
        files.items.display()
    );
    Ok(())
}
