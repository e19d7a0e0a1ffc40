use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde_json::json;
use zvq_core::bottlenecks::{read_code_file, CodeSequence};
use zvq_core::eval::{
    abx_score, bitrate, build_abx_items, codes_to_frames, read_item_file, AbxConfig, MetricReport, SymbolStream,
};
use zvq_core::features::{read_features, FeatureSequence};

use super::encode::{EncodeInfo, SIDECAR};
use crate::error::Failure;
use crate::{Context, EvalKind};

/// Per-utterance representations found in an input directory.
enum Inputs {
    Codes { seqs: Vec<CodeSequence>, rate_hz: f64, k: usize },
    Frames(Vec<FeatureSequence>),
}

impl Inputs {
    fn len(&self) -> usize {
        match self {
            Inputs::Codes { seqs, .. } => seqs.len(),
            Inputs::Frames(f) => f.len(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Inputs::Codes { .. } => "codes",
            Inputs::Frames(_) => "features",
        }
    }
}

fn files_with_ext(dir: &Path, ext: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for e in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == ext) {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

fn load_inputs(dir: &Path) -> anyhow::Result<Inputs> {
    let sidecar = dir.join(SIDECAR);
    let info: Option<EncodeInfo> = if sidecar.is_file() {
        let text = std::fs::read_to_string(&sidecar).with_context(|| format!("reading {}", sidecar.display()))?;
        Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", sidecar.display()))?)
    } else {
        None
    };
    let inputs = match info {
        Some(i) if i.format == "codes" => {
            let k = i
                .codebook_size
                .with_context(|| format!("{} lists codes without a codebook size", sidecar.display()))?;
            let mut seqs = Vec::new();
            for p in files_with_ext(dir, "codes")? {
                seqs.extend(read_code_file(&p).with_context(|| format!("reading {}", p.display()))?);
            }
            seqs.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));
            Inputs::Codes { seqs, rate_hz: i.frame_rate_hz, k }
        }
        _ => Inputs::Frames(
            files_with_ext(dir, "zvqf")?
                .iter()
                .map(|p| read_features(p).with_context(|| format!("reading {}", p.display())))
                .collect::<anyhow::Result<_>>()?,
        ),
    };
    if inputs.len() == 0 {
        anyhow::bail!("{} holds no .codes or .zvqf files", dir.display());
    }
    Ok(inputs)
}

pub fn run(ctx: &Context, kind: EvalKind, inputs: &Path, items: Option<&Path>) -> Result<(), Failure> {
    let out = ctx.out()?;
    let reps = load_inputs(inputs).map_err(Failure::Data)?;
    let report = match kind {
        EvalKind::Bitrate => {
            let streams = match &reps {
                Inputs::Codes { seqs, rate_hz, .. } => {
                    seqs.iter().map(|s| SymbolStream::from_codes(s, *rate_hz)).collect::<Result<Vec<_>, _>>()
                }
                Inputs::Frames(f) => f.iter().map(SymbolStream::from_frames).collect(),
            }
            .map_err(|e| Failure::Data(e.into()))?;
            let value = bitrate(&streams).map_err(|e| Failure::Data(e.into()))?;
            MetricReport {
                metric: "bitrate".into(),
                value,
                n_items: streams.len(),
                n_triples: None,
                config: json!({ "inputs": reps.kind() }),
                seed: ctx.config.seed,
                details: Some(json!({
                    "symbols": streams.iter().map(|s| s.symbols.len()).sum::<usize>(),
                    "duration_s": streams.iter().map(|s| s.duration_s).sum::<f64>(),
                })),
            }
        }
        EvalKind::Abx => {
            let items = items.ok_or_else(|| Failure::Usage("eval abx needs --items".into()))?;
            let specs = read_item_file(items).map_err(|e| Failure::Data(e.into()))?;
            let frames: BTreeMap<String, FeatureSequence> = match &reps {
                Inputs::Codes { seqs, rate_hz, k } => seqs
                    .iter()
                    .map(|s| codes_to_frames(s, *k, *rate_hz).map(|f| (s.utterance_id.clone(), f)))
                    .collect::<Result<_, _>>()
                    .map_err(|e| Failure::Data(e.into()))?,
                Inputs::Frames(f) => f.iter().map(|f| (f.utterance_id.clone(), f.clone())).collect(),
            };
            let abx_items = build_abx_items(&specs, &frames).map_err(|e| Failure::Data(e.into()))?;
            let e = ctx.config.eval;
            let cfg = AbxConfig {
                mode: e.mode,
                metric: e.metric,
                max_triples_per_cell: e.max_triples_per_cell,
                seed: ctx.config.seed,
                jobs: ctx.jobs,
            };
            let r = abx_score(&abx_items, &cfg).map_err(|e| Failure::Data(e.into()))?;
            for s in &r.skipped {
                log::warn!("skipped {s}");
            }
            MetricReport {
                metric: "abx".into(),
                value: r.error_rate,
                n_items: abx_items.len(),
                n_triples: Some(r.n_triples),
                config: json!({
                    "inputs": reps.kind(),
                    "mode": cfg.mode,
                    "metric": cfg.metric,
                    "max_triples_per_cell": cfg.max_triples_per_cell,
                }),
                seed: ctx.config.seed,
                details: Some(json!({
                    "per_category": r.per_category,
                    "skipped": r.skipped,
                    "zero_norm_pairs": r.zero_norm_pairs,
                })),
            }
        }
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        super::create_dir(dir)?;
    }
    super::write(out, report.to_json())?;
    println!("{} {:.6}", report.metric, report.value);
    Ok(())
}
