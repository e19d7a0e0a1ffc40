use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameMetric {
    /// `1 − cos(a, b)`
    #[default]
    Cosine,
    /// `arccos(cos(a, b)) / π`
    Angular,
}

impl FrameMetric {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cosine" => Some(Self::Cosine),
            "angular" => Some(Self::Angular),
            _ => None,
        }
    }
}

/// Frame distance and whether a zero-norm frame forced it to 1.
pub fn frame_distance(a: &[f32], b: &[f32], metric: FrameMetric) -> (f64, bool) {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return (1.0, true);
    }
    let cos = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    let d = match metric {
        FrameMetric::Cosine => 1.0 - cos,
        FrameMetric::Angular => cos.acos() / std::f64::consts::PI,
    };
    (d, false)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dtw {
    /// Cost of the cheapest monotone alignment divided by its length.
    pub distance: f64,
    pub path_len: usize,
    /// Frame pairs in the distance matrix that involved a zero-norm frame.
    pub zero_norm_pairs: usize,
}

/// Symmetric DTW (diagonal, up and right steps) between row-major frame
/// matrices `a: [T_a × dim]` and `b: [T_b × dim]`.
pub fn dtw_distance(a: &[f32], b: &[f32], dim: usize, metric: FrameMetric) -> Result<Dtw> {
    if dim == 0 || a.len() % dim != 0 || b.len() % dim != 0 {
        return Err(EvalError::Invalid(format!(
            "frame matrices of {} and {} values do not split into {dim}-dim frames",
            a.len(),
            b.len()
        )));
    }
    let (ta, tb) = (a.len() / dim, b.len() / dim);
    if ta == 0 || tb == 0 {
        return Err(EvalError::Invalid("DTW needs at least one frame on each side".into()));
    }
    let mut zero_norm_pairs = 0;
    // (cost, length) of the best path into each cell, row by row
    let mut prev: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); tb];
    let mut cur: Vec<(f64, usize)> = vec![(f64::INFINITY, 0); tb];
    for i in 0..ta {
        let fa = &a[i * dim..(i + 1) * dim];
        for j in 0..tb {
            let (d, zero) = frame_distance(fa, &b[j * dim..(j + 1) * dim], metric);
            zero_norm_pairs += zero as usize;
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, 0);
                let candidates = [
                    (i > 0 && j > 0).then(|| prev[j - 1]),
                    (i > 0).then(|| prev[j]),
                    (j > 0).then(|| cur[j - 1]),
                ];
                for c in candidates.into_iter().flatten() {
                    if c.0 < best.0 || (c.0 == best.0 && c.1 < best.1) {
                        best = c;
                    }
                }
                best
            };
            cur[j] = (best.0 + d, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, len) = prev[tb - 1];
    Ok(Dtw {
        distance: cost / len as f64,
        path_len: len,
        zero_norm_pairs,
    })
}
