use std::collections::BTreeMap;
use std::path::Path;

use crate::bottlenecks::CodeSequence;
use crate::features::FeatureSequence;

use super::abx::AbxItem;
use super::{EvalError, Result};

/// Frame rate that item-file boundaries are expressed in.
pub const ITEM_FRAME_RATE_HZ: f64 = 100.0;

/// `utterance_id start_frame end_frame category talker`, end exclusive,
/// frames at 100 Hz.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemSpec {
    pub utterance_id: String,
    pub start: usize,
    pub end: usize,
    pub category: String,
    pub talker: String,
}

impl ItemSpec {
    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let parse_err = |reason: String| EvalError::Parse { line: line_no, reason };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [utt, start, end, category, talker] = fields[..] else {
            return Err(parse_err(format!("expected 5 fields, found {}", fields.len())));
        };
        let num = |s: &str| s.parse::<usize>().map_err(|e| parse_err(format!("bad frame index `{s}`: {e}")));
        let (start, end) = (num(start)?, num(end)?);
        if end <= start {
            return Err(parse_err(format!("end frame {end} is not after start frame {start}")));
        }
        Ok(Self {
            utterance_id: utt.into(),
            start,
            end,
            category: category.into(),
            talker: talker.into(),
        })
    }

    /// The item's frame range in a representation at `rate_hz`, clipped to
    /// `n_frames` and never empty.
    pub fn frames_at(&self, rate_hz: f64, n_frames: usize) -> (usize, usize) {
        let r = rate_hz / ITEM_FRAME_RATE_HZ;
        let last = n_frames.saturating_sub(1);
        let start = ((self.start as f64 * r).floor() as usize).min(last);
        let end = ((self.end as f64 * r).ceil() as usize).clamp(start + 1, n_frames.max(start + 1));
        (start, end)
    }
}

/// Reads an item file; blank lines and `#` comments are skipped.
pub fn read_item_file(path: impl AsRef<Path>) -> Result<Vec<ItemSpec>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| ItemSpec::parse_line(l, i + 1))
        .collect()
}

/// Cuts each item out of its utterance's representation.
pub fn build_abx_items(specs: &[ItemSpec], reps: &BTreeMap<String, FeatureSequence>) -> Result<Vec<AbxItem>> {
    specs
        .iter()
        .map(|s| {
            let rep = reps.get(&s.utterance_id).ok_or_else(|| {
                EvalError::Invalid(format!("no representation for utterance `{}`", s.utterance_id))
            })?;
            let (a, b) = s.frames_at(rep.frame_rate_hz as f64, rep.n_frames());
            let d = rep.dim();
            AbxItem::new(rep.data()[a * d..b * d].to_vec(), d, s.category.clone(), s.talker.clone())
        })
        .collect()
}

/// One-hot rows per slice, concatenated: `N·K` columns at `rate_hz`.
pub fn codes_to_frames(codes: &CodeSequence, k: usize, rate_hz: f64) -> Result<FeatureSequence> {
    let n = codes.frames.first().map_or(0, Vec::len);
    if n == 0 || k == 0 {
        return Err(EvalError::Invalid(format!("code sequence `{}` is empty", codes.utterance_id)));
    }
    let mut out = vec![0.0f32; codes.frames.len() * n * k];
    for (t, tuple) in codes.frames.iter().enumerate() {
        if tuple.len() != n {
            return Err(EvalError::Invalid(format!("ragged code tuple at frame {t}")));
        }
        for (s, &i) in tuple.iter().enumerate() {
            if i >= k {
                return Err(EvalError::Invalid(format!("code {i} at frame {t} is outside [0, {k})")));
            }
            out[(t * n + s) * k + i] = 1.0;
        }
    }
    FeatureSequence::new(codes.utterance_id.clone(), out, n * k, rate_hz as f32)
        .map_err(|e| EvalError::Invalid(e.to_string()))
}
