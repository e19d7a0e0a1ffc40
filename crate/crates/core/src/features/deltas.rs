use super::{FeatureError, FeatureSequence, Result};

/// Regression deltas over `±window` frames with edge replication.
fn regression(frames: &[f32], n: usize, dim: usize, window: usize) -> Vec<f32> {
    let denom: f64 = 2.0 * (1..=window).map(|k| (k * k) as f64).sum::<f64>();
    let at = |t: isize, d: usize| -> f64 {
        let t = t.clamp(0, n as isize - 1) as usize;
        frames[t * dim + d] as f64
    };
    let mut out = vec![0.0f32; n * dim];
    for t in 0..n {
        for d in 0..dim {
            let num: f64 = (1..=window)
                .map(|k| k as f64 * (at(t as isize + k as isize, d) - at(t as isize - k as isize, d)))
                .sum();
            out[t * dim + d] = (num / denom) as f32;
        }
    }
    out
}

/// Appends first and second derivatives: `[c | Δc | ΔΔc]`, 13 → 39 columns.
pub fn add_deltas(feat: &FeatureSequence, window: usize) -> Result<FeatureSequence> {
    if feat.dim() != 13 {
        return Err(FeatureError::Dimension {
            expected: 13,
            got: feat.dim(),
        });
    }
    let (n, dim) = (feat.n_frames(), feat.dim());
    let d1 = regression(feat.data(), n, dim, window);
    let d2 = regression(&d1, n, dim, window);
    let mut out = Vec::with_capacity(n * dim * 3);
    for t in 0..n {
        out.extend_from_slice(feat.frame(t));
        out.extend_from_slice(&d1[t * dim..(t + 1) * dim]);
        out.extend_from_slice(&d2[t * dim..(t + 1) * dim]);
    }
    FeatureSequence::new(feat.utterance_id.clone(), out, dim * 3, feat.frame_rate_hz)
}
