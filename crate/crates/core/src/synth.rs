//! Synthetic "speech" corpora for desk-scale experiments.
//!
//! Each phone class is a harmonic source shaped by three class-specific
//! formant resonances. Each speaker has a fixed pitch and spectral tilt.
//! Utterances are random phone sequences framed by short silences.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{write_wav, AudioClip, FeatureError, MfccConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub n_phone_classes: usize,
    pub utterances_per_speaker: usize,
    pub sample_rate_hz: u32,
    pub min_phones: usize,
    pub max_phones: usize,
    pub min_phone_ms: f64,
    pub max_phone_ms: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 2,
            n_phone_classes: 5,
            utterances_per_speaker: 20,
            sample_rate_hz: 16000,
            min_phones: 5,
            max_phones: 10,
            min_phone_ms: 80.0,
            max_phone_ms: 200.0,
            seed: 0,
        }
    }
}

/// One phone occurrence, in samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PhoneSpan {
    pub phone: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub speaker: String,
    pub phones: Vec<PhoneSpan>,
    pub audio: AudioClip,
}

/// Paths written by [`write_corpus`].
#[derive(Clone, Debug)]
pub struct CorpusFiles {
    pub manifest: PathBuf,
    pub items: PathBuf,
    pub wavs: Vec<PathBuf>,
}

struct PhoneTemplate {
    formants: [f64; 3],
    bandwidths: [f64; 3],
}

struct Voice {
    pitch_hz: f64,
    tilt: f64,
}

pub fn phone_name(p: usize) -> String {
    format!("ph{p}")
}

pub fn speaker_name(s: usize) -> String {
    format!("spk{s}")
}

fn templates(n: usize, rng: &mut ChaCha8Rng) -> Vec<PhoneTemplate> {
    // spread first and second formants over a grid so classes stay apart
    (0..n)
        .map(|p| {
            let u = (p as f64 + 0.5) / n as f64;
            let f1 = 300.0 + 600.0 * u + rng.gen_range(-30.0..30.0);
            let f2 = 2400.0 - 1400.0 * ((p * 3 % n) as f64 + 0.5) / n as f64 + rng.gen_range(-60.0..60.0);
            let f3 = 2600.0 + 800.0 * ((p * 2 % n) as f64 + 0.5) / n as f64;
            PhoneTemplate {
                formants: [f1, f2, f3],
                bandwidths: [80.0, 120.0, 180.0],
            }
        })
        .collect()
}

fn voices(n: usize) -> Vec<Voice> {
    (0..n)
        .map(|s| {
            let u = if n == 1 { 0.0 } else { s as f64 / (n - 1) as f64 };
            Voice {
                pitch_hz: 110.0 + 90.0 * u,
                tilt: 0.4 + 0.8 * u,
            }
        })
        .collect()
}

fn envelope(f: f64, t: &PhoneTemplate, v: &Voice) -> f64 {
    let resonance: f64 = t
        .formants
        .iter()
        .zip(&t.bandwidths)
        .map(|(&fc, &bw)| 1.0 / (1.0 + ((f - fc) / bw).powi(2)))
        .sum();
    resonance * (f / 500.0).max(0.2).powf(-v.tilt)
}

fn render_phone(t: &PhoneTemplate, v: &Voice, n: usize, sr: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let pitch = v.pitch_hz * (1.0 + rng.gen_range(-0.02..0.02));
    let mut out = vec![0.0; n];
    let mut k = 1;
    while (k as f64) * pitch < 0.45 * sr {
        let f = k as f64 * pitch;
        let a = envelope(f, t, v);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let w = 2.0 * PI * f / sr;
        for (i, o) in out.iter_mut().enumerate() {
            *o += a * (w * i as f64 + phase).sin();
        }
        k += 1;
    }
    // 5 ms raised-cosine ramps avoid clicks at phone boundaries
    let ramp = ((0.005 * sr) as usize).min(n / 2);
    for i in 0..ramp {
        let g = 0.5 - 0.5 * (PI * i as f64 / ramp as f64).cos();
        out[i] *= g;
        out[n - 1 - i] *= g;
    }
    out
}

/// Renders the whole corpus in memory. Same config, same samples.
pub fn synthesize(cfg: &SynthConfig) -> Result<Vec<SynthUtterance>, FeatureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phones = templates(cfg.n_phone_classes.max(1), &mut rng);
    let speakers = voices(cfg.n_speakers.max(1));
    let sr = cfg.sample_rate_hz as f64;
    let silence = (0.05 * sr) as usize;
    let mut out = Vec::with_capacity(cfg.n_speakers * cfg.utterances_per_speaker);
    for (s, voice) in speakers.iter().enumerate().take(cfg.n_speakers) {
        for u in 0..cfg.utterances_per_speaker {
            let n_phones = rng.gen_range(cfg.min_phones..=cfg.max_phones.max(cfg.min_phones));
            let mut samples = vec![0.0f64; silence];
            let mut spans = Vec::with_capacity(n_phones);
            for _ in 0..n_phones {
                let p = rng.gen_range(0..cfg.n_phone_classes);
                let ms = rng.gen_range(cfg.min_phone_ms..=cfg.max_phone_ms);
                let n = (ms / 1000.0 * sr) as usize;
                let start = samples.len();
                samples.extend(render_phone(&phones[p], voice, n, sr, &mut rng));
                spans.push(PhoneSpan {
                    phone: p,
                    start,
                    end: samples.len(),
                });
            }
            samples.extend(std::iter::repeat(0.0).take(silence));
            let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            let noise = 1e-4;
            let scaled: Vec<f32> = samples
                .iter()
                .map(|v| (0.5 * v / peak + rng.gen_range(-noise..noise)) as f32)
                .collect();
            out.push(SynthUtterance {
                id: format!("{}_utt{u:03}", speaker_name(s)),
                speaker: speaker_name(s),
                phones: spans,
                audio: AudioClip::new(scaled, cfg.sample_rate_hz)?,
            });
        }
    }
    Ok(out)
}

/// Frame range `[start, end)` whose analysis-window centres fall inside
/// the sample span, clipped to the utterance's frame count.
pub fn span_frames(span: &PhoneSpan, n_samples: usize, sample_rate_hz: u32, mfcc: &MfccConfig) -> (usize, usize) {
    let win = mfcc.window_samples(sample_rate_hz) as f64;
    let hop = mfcc.hop_samples(sample_rate_hz) as f64;
    let n_frames = mfcc.frame_count(n_samples, sample_rate_hz);
    let first = |sample: usize| (((sample as f64 - win / 2.0) / hop).ceil().max(0.0) as usize).min(n_frames);
    (first(span.start), first(span.end))
}

/// Item-file lines `utterance start_frame end_frame category talker`, one
/// per phone with at least one frame. `end_frame` is exclusive.
pub fn item_lines(utts: &[SynthUtterance], mfcc: &MfccConfig) -> String {
    let mut out = String::new();
    for u in utts {
        for span in &u.phones {
            let (a, b) = span_frames(span, u.audio.samples().len(), u.audio.sample_rate_hz(), mfcc);
            if b > a {
                writeln!(out, "{} {a} {b} {} {}", u.id, phone_name(span.phone), u.speaker).expect("string write");
            }
        }
    }
    out
}

/// Writes `wav/<id>.wav`, `manifest.tsv` and `items.txt` under `dir`.
pub fn write_corpus(cfg: &SynthConfig, dir: &Path) -> Result<CorpusFiles, FeatureError> {
    let utts = synthesize(cfg)?;
    let wav_dir = dir.join("wav");
    std::fs::create_dir_all(&wav_dir)?;
    let mut manifest = String::new();
    let mut wavs = Vec::with_capacity(utts.len());
    for u in &utts {
        let path = wav_dir.join(format!("{}.wav", u.id));
        write_wav(&path, &u.audio)?;
        writeln!(manifest, "{}\twav/{}.wav\t{}", u.id, u.id, u.speaker).expect("string write");
        wavs.push(path);
    }
    let manifest_path = dir.join("manifest.tsv");
    std::fs::write(&manifest_path, manifest)?;
    let items = dir.join("items.txt");
    std::fs::write(&items, item_lines(&utts, &MfccConfig::default()))?;
    Ok(CorpusFiles {
        manifest: manifest_path,
        items,
        wavs,
    })
}
