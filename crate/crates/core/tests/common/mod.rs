#![allow(dead_code)]

use zvq_core::features::{apply_cmvn, compute_cmvn, extract, FeatureSequence, MfccConfig};
use zvq_core::synth::{synthesize, SynthConfig, SynthUtterance};

/// CMVN'd 39-dim features of a synthetic corpus, with speaker indices.
pub struct SynthFeatures {
    pub utterances: Vec<SynthUtterance>,
    pub features: Vec<FeatureSequence>,
    pub speakers: Vec<usize>,
}

pub fn synth_features(cfg: &SynthConfig) -> SynthFeatures {
    let utterances = synthesize(cfg).unwrap();
    let mfcc = MfccConfig::default();
    let raw: Vec<FeatureSequence> = utterances.iter().map(|u| extract(&u.audio, &u.id, &mfcc).unwrap()).collect();
    let stats = compute_cmvn(&raw).unwrap();
    let features = raw.iter().map(|f| apply_cmvn(f, &stats).unwrap()).collect();
    let speakers = utterances
        .iter()
        .map(|u| u.speaker.trim_start_matches("spk").parse().unwrap())
        .collect();
    SynthFeatures {
        utterances,
        features,
        speakers,
    }
}
