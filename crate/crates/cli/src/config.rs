//! Run configuration: built-in defaults, then an INI file, then
//! `ZVQ_<SECTION>_<KEY>` environment variables, then command-line flags.
//!
//! ```ini
//! [model]
//! variant = svq
//! hidden = 128
//! [train]
//! steps = 20000
//! ```

use std::fmt::{Display, Write as _};
use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use zvq_core::eval::{AbxMode, FrameMetric};
use zvq_core::features::MfccConfig;
use zvq_core::models::{ModelConfig, Variant, DEFAULT_HIDDEN};
use zvq_core::synth::SynthConfig;

use crate::error::Failure;

pub const ENV_PREFIX: &str = "ZVQ_";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub usage_window: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            checkpoint_every: 1000,
            log_every: 10,
            usage_window: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub mode: AbxMode,
    pub metric: FrameMetric,
    pub max_triples_per_cell: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: AbxMode::AcrossTalker,
            metric: FrameMetric::Cosine,
            max_triples_per_cell: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub features: MfccConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            features: MfccConfig::default(),
            model: ModelConfig::new(Variant::SvqWae, DEFAULT_HIDDEN, 2, 1),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e: T::Err| format!("`{value}`: {e}"))
}

impl RunConfig {
    /// Every (section, key) with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let m = &self.model;
        let f = &self.features;
        let t = &self.train;
        let s = &self.synth;
        let mode = match self.eval.mode {
            AbxMode::WithinTalker => "within",
            AbxMode::AcrossTalker => "across",
        };
        let metric = match self.eval.metric {
            FrameMetric::Cosine => "cosine",
            FrameMetric::Angular => "angular",
        };
        vec![
            ("run", "seed", self.seed.to_string()),
            ("features", "win_ms", f.win_ms.to_string()),
            ("features", "hop_ms", f.hop_ms.to_string()),
            ("features", "n_mels", f.n_mels.to_string()),
            ("features", "preemphasis", f.preemphasis.to_string()),
            ("features", "log_floor", f.log_floor.to_string()),
            ("model", "variant", m.variant.name().to_string()),
            ("model", "hidden", m.encoder.hidden_channels.to_string()),
            ("model", "n_downsample", m.encoder.n_downsample.to_string()),
            ("model", "latent_dim", m.encoder.latent_dim.to_string()),
            ("model", "speaker_channels", m.speaker_encoder.channels.to_string()),
            ("model", "speaker_dim", m.speaker_encoder.speaker_dim.to_string()),
            ("model", "speaker_embedding_dim", m.decoder.speaker_embedding_dim.to_string()),
            ("model", "codebook_size", m.quantizer.codebook_size.to_string()),
            ("model", "n_slices", m.quantizer.n_slices.to_string()),
            ("model", "beta", m.quantizer.beta.to_string()),
            ("model", "init_jitter", m.quantizer.init_jitter.to_string()),
            ("model", "in_epsilon", m.norm.epsilon.to_string()),
            ("model", "per_instance_stats", m.norm.per_instance_stats.to_string()),
            ("train", "steps", t.steps.to_string()),
            ("train", "batch_size", m.batch_size.to_string()),
            ("train", "learning_rate", m.adam.learning_rate.to_string()),
            ("train", "adam_beta1", m.adam.beta1.to_string()),
            ("train", "adam_beta2", m.adam.beta2.to_string()),
            ("train", "adam_epsilon", m.adam.epsilon.to_string()),
            ("train", "checkpoint_every", t.checkpoint_every.to_string()),
            ("train", "log_every", t.log_every.to_string()),
            ("train", "usage_window", t.usage_window.to_string()),
            ("eval", "mode", mode.to_string()),
            ("eval", "metric", metric.to_string()),
            ("eval", "max_triples_per_cell", self.eval.max_triples_per_cell.to_string()),
            ("synth", "n_speakers", s.n_speakers.to_string()),
            ("synth", "n_phone_classes", s.n_phone_classes.to_string()),
            ("synth", "utterances_per_speaker", s.utterances_per_speaker.to_string()),
            ("synth", "sample_rate_hz", s.sample_rate_hz.to_string()),
            ("synth", "min_phones", s.min_phones.to_string()),
            ("synth", "max_phones", s.max_phones.to_string()),
            ("synth", "min_phone_ms", s.min_phone_ms.to_string()),
            ("synth", "max_phone_ms", s.max_phone_ms.to_string()),
        ]
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        let m = &mut self.model;
        match (section, key) {
            ("run", "seed") => self.seed = parse(value)?,
            ("features", "win_ms") => self.features.win_ms = parse(value)?,
            ("features", "hop_ms") => self.features.hop_ms = parse(value)?,
            ("features", "n_mels") => self.features.n_mels = parse(value)?,
            ("features", "preemphasis") => self.features.preemphasis = parse(value)?,
            ("features", "log_floor") => self.features.log_floor = parse(value)?,
            ("model", "variant") => {
                let v = Variant::parse(value.trim()).ok_or_else(|| format!("`{value}` is not `in` or `svq`"))?;
                m.variant = v;
                m.encoder.with_in = v == Variant::InWae;
            }
            ("model", "hidden") => {
                let h = parse(value)?;
                m.encoder.hidden_channels = h;
                m.speaker_encoder.channels = h;
                m.decoder.hidden_channels = h;
            }
            ("model", "n_downsample") => {
                let n = parse(value)?;
                m.encoder.n_downsample = n;
                m.decoder.n_upsample = n;
            }
            ("model", "latent_dim") => m.encoder.latent_dim = parse(value)?,
            ("model", "speaker_channels") => m.speaker_encoder.channels = parse(value)?,
            ("model", "speaker_dim") => m.speaker_encoder.speaker_dim = parse(value)?,
            ("model", "speaker_embedding_dim") => m.decoder.speaker_embedding_dim = parse(value)?,
            ("model", "codebook_size") => m.quantizer.codebook_size = parse(value)?,
            ("model", "n_slices") => m.quantizer.n_slices = parse(value)?,
            ("model", "beta") => m.quantizer.beta = parse(value)?,
            ("model", "init_jitter") => m.quantizer.init_jitter = parse(value)?,
            ("model", "in_epsilon") => m.norm.epsilon = parse(value)?,
            ("model", "per_instance_stats") => m.norm.per_instance_stats = parse(value)?,
            ("train", "steps") => self.train.steps = parse(value)?,
            ("train", "batch_size") => m.batch_size = parse(value)?,
            ("train", "learning_rate") => m.adam.learning_rate = parse(value)?,
            ("train", "adam_beta1") => m.adam.beta1 = parse(value)?,
            ("train", "adam_beta2") => m.adam.beta2 = parse(value)?,
            ("train", "adam_epsilon") => m.adam.epsilon = parse(value)?,
            ("train", "checkpoint_every") => self.train.checkpoint_every = parse(value)?,
            ("train", "log_every") => self.train.log_every = parse(value)?,
            ("train", "usage_window") => self.train.usage_window = parse(value)?,
            ("eval", "mode") => {
                self.eval.mode = AbxMode::parse(value.trim()).ok_or_else(|| format!("`{value}` is not `within` or `across`"))?
            }
            ("eval", "metric") => {
                self.eval.metric =
                    FrameMetric::parse(value.trim()).ok_or_else(|| format!("`{value}` is not `cosine` or `angular`"))?
            }
            ("eval", "max_triples_per_cell") => self.eval.max_triples_per_cell = parse(value)?,
            ("synth", "n_speakers") => self.synth.n_speakers = parse(value)?,
            ("synth", "n_phone_classes") => self.synth.n_phone_classes = parse(value)?,
            ("synth", "utterances_per_speaker") => self.synth.utterances_per_speaker = parse(value)?,
            ("synth", "sample_rate_hz") => self.synth.sample_rate_hz = parse(value)?,
            ("synth", "min_phones") => self.synth.min_phones = parse(value)?,
            ("synth", "max_phones") => self.synth.max_phones = parse(value)?,
            ("synth", "min_phone_ms") => self.synth.min_phone_ms = parse(value)?,
            ("synth", "max_phone_ms") => self.synth.max_phone_ms = parse(value)?,
            _ => return Err(format!("unknown key `{key}` in section [{section}]")),
        }
        Ok(())
    }

    pub fn apply_ini(&mut self, text: &str, origin: &str) -> Result<(), Failure> {
        let ini = Ini::load_from_str(text).map_err(|e| Failure::Usage(format!("{origin}: {e}")))?;
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                let Some(section) = section else {
                    return Err(Failure::Usage(format!("{origin}: key `{key}` appears before any [section]")));
                };
                self.set(section, key, value)
                    .map_err(|e| Failure::Usage(format!("{origin}: [{section}] {key}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), Failure> {
        let known: Vec<(&str, &str)> = self.entries().iter().map(|(s, k, _)| (*s, *k)).collect();
        let mut sorted: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        sorted.sort();
        for (name, value) in sorted {
            let rest = &name[ENV_PREFIX.len()..];
            let hit = known
                .iter()
                .find(|(s, k)| rest.eq_ignore_ascii_case(&format!("{s}_{k}")));
            match hit {
                Some(&(s, k)) => self
                    .set(s, k, &value)
                    .map_err(|e| Failure::Usage(format!("environment {name}: {e}")))?,
                // ZVQ_LOG and friends belong to other layers
                None if rest.eq_ignore_ascii_case("log") => {}
                None => return Err(Failure::Usage(format!("environment variable {name} matches no config key"))),
            }
        }
        Ok(())
    }

    /// Defaults, then `path`, then the process environment.
    pub fn resolve(path: Option<&Path>) -> Result<Self, Failure> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
            cfg.apply_ini(&text, &p.display().to_string())?;
        }
        cfg.apply_env(std::env::vars())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let mut probe = self.model;
        probe.decoder.n_speakers = probe.decoder.n_speakers.max(1);
        probe.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        let f = &self.features;
        if !(f.win_ms > 0.0 && f.hop_ms > 0.0 && f.n_mels >= f.n_ceps) {
            return Err(Failure::Usage("features need positive win_ms/hop_ms and n_mels ≥ 13".into()));
        }
        if self.train.checkpoint_every == 0 || self.train.log_every == 0 || self.train.usage_window == 0 {
            return Err(Failure::Usage("checkpoint_every, log_every and usage_window must be at least 1".into()));
        }
        let s = &self.synth;
        if s.n_speakers == 0 || s.n_phone_classes < 2 || s.utterances_per_speaker == 0 || s.min_phones == 0
            || s.max_phones < s.min_phones || !(s.min_phone_ms > 0.0 && s.max_phone_ms >= s.min_phone_ms)
        {
            return Err(Failure::Usage("synth settings are inconsistent".into()));
        }
        Ok(())
    }

    pub fn to_ini(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, value) in self.entries() {
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                writeln!(out, "[{section}]").expect("string write");
                current = section;
            }
            writeln!(out, "{key} = {value}").expect("string write");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_ini() {
        let mut cfg = RunConfig::default();
        cfg.set("model", "variant", "in").unwrap();
        cfg.set("model", "hidden", "48").unwrap();
        cfg.set("eval", "mode", "within").unwrap();
        let mut back = RunConfig::default();
        back.apply_ini(&cfg.to_ini(), "test").unwrap();
        assert_eq!(back, cfg);
        assert!(back.model.encoder.with_in);
        assert_eq!(back.model.decoder.hidden_channels, 48);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply_ini("[model]\nwidth = 3\n", "x"), Err(Failure::Usage(_))));
        assert!(cfg.apply_ini("[nope]\nseed = 3\n", "x").is_err());
        assert!(cfg.apply_ini("seed = 3\n", "x").is_err());
        assert!(cfg.apply_ini("[train]\nsteps = many\n", "x").is_err());
        assert!(cfg.apply_env([("ZVQ_TRAIN_STPES".to_string(), "3".to_string())]).is_err());
    }

    #[test]
    fn environment_overrides_file() {
        let mut cfg = RunConfig::default();
        cfg.apply_ini("[train]\nsteps = 50\n", "x").unwrap();
        cfg.apply_env([
            ("ZVQ_TRAIN_STEPS".to_string(), "70".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.train.steps, 70);
    }
}
