use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureSequence, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension corpus statistics; serialized as `{mean, std, frame_count}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmvnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub frame_count: u64,
}

/// Population mean and standard deviation over every frame of the corpus.
pub fn compute_cmvn(corpus: &[FeatureSequence]) -> Result<CmvnStats> {
    let first = corpus.first().ok_or(FeatureError::EmptyCorpus)?;
    let dim = first.dim();
    let mut sum = vec![0.0f64; dim];
    let mut count = 0u64;
    for seq in corpus {
        if seq.dim() != dim {
            return Err(FeatureError::Dimension {
                expected: dim,
                got: seq.dim(),
            });
        }
        for row in seq.rows() {
            sum.iter_mut().zip(row).for_each(|(s, &v)| *s += v as f64);
        }
        count += seq.n_frames() as u64;
    }
    if count < 2 {
        return Err(FeatureError::EmptyCorpus);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; dim];
    for seq in corpus {
        for row in seq.rows() {
            for ((s, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
    }
    let std = sq
        .iter()
        .map(|s| (s / count as f64).sqrt().max(STD_FLOOR))
        .collect();
    Ok(CmvnStats {
        mean,
        std,
        frame_count: count,
    })
}

fn map_frames(
    feat: &FeatureSequence,
    stats: &CmvnStats,
    f: impl Fn(f64, f64, f64) -> f64,
) -> Result<FeatureSequence> {
    if stats.mean.len() != feat.dim() || stats.std.len() != feat.dim() {
        return Err(FeatureError::Dimension {
            expected: stats.mean.len(),
            got: feat.dim(),
        });
    }
    let dim = feat.dim();
    let data = feat
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| f(v as f64, stats.mean[i % dim], stats.std[i % dim]) as f32)
        .collect();
    FeatureSequence::new(feat.utterance_id.clone(), data, dim, feat.frame_rate_hz)
}

/// `(x − mean) / std` per dimension.
pub fn apply_cmvn(feat: &FeatureSequence, stats: &CmvnStats) -> Result<FeatureSequence> {
    map_frames(feat, stats, |v, m, s| (v - m) / s)
}

/// `x·std + mean`, the inverse of [`apply_cmvn`].
pub fn invert_cmvn(feat: &FeatureSequence, stats: &CmvnStats) -> Result<FeatureSequence> {
    map_frames(feat, stats, |v, m, s| v * s + m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(id: &str, dim: usize, data: Vec<f32>) -> FeatureSequence {
        FeatureSequence::new(id, data, dim, 100.0).unwrap()
    }

    #[test]
    fn two_point_statistics() {
        let s = compute_cmvn(&[seq("a", 1, vec![0.0, 2.0])]).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.std, vec![1.0]);
        assert_eq!(s.frame_count, 2);
    }

    #[test]
    fn identical_frames_hit_the_floor() {
        let s = compute_cmvn(&[seq("a", 2, vec![3.0, -1.0, 3.0, -1.0, 3.0, -1.0])]).unwrap();
        assert_eq!(s.std, vec![STD_FLOOR, STD_FLOOR]);
    }

    #[test]
    fn statistics_ignore_utterance_order() {
        let a = seq("a", 2, vec![0.5, 1.0, 2.0, -3.0]);
        let b = seq("b", 2, vec![7.0, 0.25, -1.5, 4.0, 0.0, 0.0]);
        let s1 = compute_cmvn(&[a.clone(), b.clone()]).unwrap();
        let s2 = compute_cmvn(&[b, a]).unwrap();
        for (x, y) in s1.mean.iter().zip(&s2.mean).chain(s1.std.iter().zip(&s2.std)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_and_mismatched_inputs_are_rejected() {
        assert!(matches!(compute_cmvn(&[]), Err(FeatureError::EmptyCorpus)));
        assert!(compute_cmvn(&[seq("a", 1, vec![1.0])]).is_err());
        let s = compute_cmvn(&[seq("a", 1, vec![0.0, 2.0])]).unwrap();
        assert!(apply_cmvn(&seq("b", 2, vec![0.0, 0.0]), &s).is_err());
    }

    #[test]
    fn unit_stats_are_identity_and_inverse_round_trips() {
        let f = seq("a", 3, vec![0.5, -2.0, 9.0, 1.0, 1.0, 1.0]);
        let id = CmvnStats {
            mean: vec![0.0; 3],
            std: vec![1.0; 3],
            frame_count: 2,
        };
        assert_eq!(apply_cmvn(&f, &id).unwrap(), f);
        let s = compute_cmvn(&[f.clone()]).unwrap();
        let back = invert_cmvn(&apply_cmvn(&f, &s).unwrap(), &s).unwrap();
        for (a, b) in back.data().iter().zip(f.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
