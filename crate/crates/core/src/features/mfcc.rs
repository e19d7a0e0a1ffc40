use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{AudioClip, FeatureError, FeatureSequence, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfccConfig {
    pub win_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub n_ceps: usize,
    pub preemphasis: f64,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            win_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 40,
            n_ceps: 13,
            preemphasis: 0.97,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn window_samples(&self, sample_rate_hz: u32) -> usize {
        (sample_rate_hz as f64 * self.win_ms / 1000.0).round() as usize
    }

    pub fn hop_samples(&self, sample_rate_hz: u32) -> usize {
        (sample_rate_hz as f64 * self.hop_ms / 1000.0).round() as usize
    }

    pub fn frame_rate_hz(&self) -> f64 {
        1000.0 / self.hop_ms
    }

    /// `floor((n − win)/hop) + 1`, or 0 when the clip is shorter than a window.
    pub fn frame_count(&self, n_samples: usize, sample_rate_hz: u32) -> usize {
        let win = self.window_samples(sample_rate_hz);
        let hop = self.hop_samples(sample_rate_hz);
        if n_samples < win {
            0
        } else {
            (n_samples - win) / hop + 1
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters spaced evenly on the mel scale between 0 Hz and Nyquist,
/// evaluated at FFT bin centre frequencies. `[n_mels × (n_fft/2 + 1)]`.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate_hz: u32) -> Vec<Vec<f64>> {
    let nyquist = sample_rate_hz as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let n_bins = n_fft / 2 + 1;
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate_hz as f64 / n_fft as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II basis rows for the first `n_ceps` coefficients.
fn dct_basis(n_ceps: usize, n_mels: usize) -> Vec<Vec<f64>> {
    (0..n_ceps)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n_mels as f64).sqrt()
            } else {
                (2.0 / n_mels as f64).sqrt()
            };
            (0..n_mels)
                .map(|m| scale * (PI * k as f64 * (m as f64 + 0.5) / n_mels as f64).cos())
                .collect()
        })
        .collect()
}

/// Pre-emphasis, Hamming window, power spectrum, mel filterbank, log, DCT-II.
/// Keeps the first `n_ceps` coefficients, c0 included.
pub fn mfcc(clip: &AudioClip, cfg: &MfccConfig) -> Result<FeatureSequence> {
    mfcc_with_id(clip, cfg, "")
}

pub(crate) fn mfcc_with_id(clip: &AudioClip, cfg: &MfccConfig, id: &str) -> Result<FeatureSequence> {
    let sr = clip.sample_rate_hz();
    let win = cfg.window_samples(sr);
    let hop = cfg.hop_samples(sr);
    let x = clip.samples();
    if win == 0 || hop == 0 || x.len() < win {
        return Err(FeatureError::TooShort {
            samples: x.len(),
            window: win,
        });
    }
    let n_frames = cfg.frame_count(x.len(), sr);
    let n_fft = win.next_power_of_two();

    let emphasized: Vec<f64> = (0..x.len())
        .map(|i| {
            let prev = if i == 0 { 0.0 } else { x[i - 1] as f64 };
            x[i] as f64 - cfg.preemphasis * prev
        })
        .collect();
    let hamming: Vec<f64> = (0..win)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (win - 1).max(1) as f64).cos())
        .collect();
    let bank = mel_filterbank(cfg.n_mels, n_fft, sr);
    let dct = dct_basis(cfg.n_ceps, cfg.n_mels);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0f64; n_fft / 2 + 1];
    let mut log_mel = vec![0.0f64; cfg.n_mels];
    let mut out = Vec::with_capacity(n_frames * cfg.n_ceps);
    for f in 0..n_frames {
        let start = f * hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < win {
                Complex::new(emphasized[start + i] * hamming[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for (lm, filt) in log_mel.iter_mut().zip(&bank) {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            *lm = e.max(cfg.log_floor).ln();
        }
        for basis in &dct {
            out.push(basis.iter().zip(&log_mel).map(|(b, l)| b * l).sum::<f64>() as f32);
        }
    }
    FeatureSequence::new(id, out, cfg.n_ceps, cfg.frame_rate_hz() as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize, amp: f32) -> AudioClip {
        let s = (0..n)
            .map(|i| {
                let t = i as f32 / 16000.0;
                amp * ((2.0 * std::f32::consts::PI * 440.0 * t).sin() * 0.6
                    + (2.0 * std::f32::consts::PI * 1300.0 * t).sin() * 0.3)
            })
            .collect();
        AudioClip::new(s, 16000).unwrap()
    }

    #[test]
    fn one_second_gives_98_frames() {
        let f = mfcc(&tone(16000, 0.4), &MfccConfig::default()).unwrap();
        assert_eq!(f.n_frames(), 98);
        assert_eq!(f.dim(), 13);
        assert_eq!(f.frame_rate_hz, 100.0);
    }

    #[test]
    fn silence_frames_are_identical() {
        let clip = AudioClip::new(vec![0.0; 4000], 16000).unwrap();
        let f = mfcc(&clip, &MfccConfig::default()).unwrap();
        let first = f.frame(0).to_vec();
        assert!(f.rows().all(|r| r == first.as_slice()));
    }

    #[test]
    fn global_gain_shifts_only_c0() {
        let cfg = MfccConfig::default();
        let a = mfcc(&tone(8000, 0.2), &cfg).unwrap();
        let b = mfcc(&tone(8000, 0.4), &cfg).unwrap();
        // power scales by 4, every log-mel energy moves by ln 4, and the
        // orthonormal DCT maps a constant offset to c0 alone: √M·ln 4
        let want = (cfg.n_mels as f64).sqrt() * 4f64.ln();
        for t in 0..a.n_frames() {
            let (ra, rb) = (a.frame(t), b.frame(t));
            assert!(((rb[0] - ra[0]) as f64 - want).abs() < 1e-3);
            for k in 1..13 {
                assert!((rb[k] - ra[k]).abs() < 1e-3, "frame {t} c{k}");
            }
        }
    }

    #[test]
    fn shorter_than_window_is_rejected() {
        let clip = AudioClip::new(vec![0.0; 399], 16000).unwrap();
        assert!(matches!(
            mfcc(&clip, &MfccConfig::default()),
            Err(FeatureError::TooShort { samples: 399, window: 400 })
        ));
    }

    #[test]
    fn other_sample_rates_window_by_milliseconds() {
        let clip = AudioClip::new(vec![0.01; 8000], 8000).unwrap();
        let f = mfcc(&clip, &MfccConfig::default()).unwrap();
        // 200-sample window, 80-sample hop
        assert_eq!(f.n_frames(), (8000 - 200) / 80 + 1);
    }

    #[test]
    fn filterbank_rows_are_nonnegative_and_nonempty() {
        for row in mel_filterbank(40, 512, 16000) {
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().any(|&w| w > 0.0));
        }
    }
}
