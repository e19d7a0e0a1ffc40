use crate::numerics::Tensor;

use super::FeatureSequence;

/// Fixed-length windows cut from one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    /// Each `[1, dim, len_frames]`, channel-major.
    pub segments: Vec<Tensor>,
    pub dropped_frames: usize,
    pub warning: Option<String>,
}

/// Cuts `[len_frames]`-frame windows every `hop_frames`; the trailing
/// remainder is dropped.
pub fn segment(feat: &FeatureSequence, len_frames: usize, hop_frames: usize) -> Segmentation {
    let n = feat.n_frames();
    let dim = feat.dim();
    if len_frames == 0 || hop_frames == 0 || n < len_frames {
        let warning = format!(
            "utterance `{}` has {n} frames, fewer than one {len_frames}-frame segment",
            feat.utterance_id
        );
        log::warn!("{warning}");
        return Segmentation {
            segments: Vec::new(),
            dropped_frames: n,
            warning: Some(warning),
        };
    }
    let count = (n - len_frames) / hop_frames + 1;
    let segments = (0..count)
        .map(|s| {
            let start = s * hop_frames;
            let mut data = vec![0.0f32; dim * len_frames];
            for t in 0..len_frames {
                for (d, &v) in feat.frame(start + t).iter().enumerate() {
                    data[d * len_frames + t] = v;
                }
            }
            Tensor::new(vec![1, dim, len_frames], data).expect("segment shape")
        })
        .collect();
    let covered = (count - 1) * hop_frames + len_frames;
    Segmentation {
        segments,
        dropped_frames: n - covered,
        warning: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(n: usize) -> FeatureSequence {
        let data = (0..n * 39).map(|i| i as f32).collect();
        FeatureSequence::new("u", data, 39, 100.0).unwrap()
    }

    #[test]
    fn ninety_eight_frames_give_three_segments() {
        let s = segment(&seq(98), 32, 32);
        assert_eq!(s.segments.len(), 3);
        assert_eq!(s.dropped_frames, 2);
        assert!(s.warning.is_none());
        assert_eq!(s.segments[0].shape(), &[1, 39, 32]);
    }

    #[test]
    fn exact_length_is_one_transposed_segment() {
        let f = seq(32);
        let s = segment(&f, 32, 32);
        assert_eq!(s.segments.len(), 1);
        let t = &s.segments[0];
        for frame in 0..32 {
            for d in 0..39 {
                assert_eq!(t.data()[d * 32 + frame], f.frame(frame)[d]);
            }
        }
    }

    #[test]
    fn short_utterance_yields_warning_and_nothing() {
        let s = segment(&seq(31), 32, 32);
        assert!(s.segments.is_empty());
        assert!(s.warning.is_some());
    }

    #[test]
    fn overlapping_hop() {
        let s = segment(&seq(48), 32, 8);
        assert_eq!(s.segments.len(), 3);
        assert_eq!(s.dropped_frames, 0);
    }
}
