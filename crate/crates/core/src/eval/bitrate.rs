use std::collections::BTreeMap;

use crate::bottlenecks::CodeSequence;
use crate::features::FeatureSequence;

use super::{EvalError, Result};

/// Opaque symbol identity. Code tuples keep their indices; continuous
/// frames are keyed by the exact bit patterns of their values.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolKey(pub Vec<u32>);

impl SymbolKey {
    pub fn from_indices(indices: &[usize]) -> Self {
        Self(indices.iter().map(|&i| i as u32).collect())
    }

    pub fn from_frame(frame: &[f32]) -> Self {
        Self(frame.iter().map(|v| v.to_bits()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolStream {
    pub symbols: Vec<SymbolKey>,
    pub duration_s: f64,
}

impl SymbolStream {
    pub fn new(symbols: Vec<SymbolKey>, duration_s: f64) -> Result<Self> {
        if symbols.is_empty() {
            return Err(EvalError::Invalid("symbol stream is empty".into()));
        }
        if !(duration_s > 0.0) || !duration_s.is_finite() {
            return Err(EvalError::Invalid(format!("stream duration must be positive, got {duration_s}")));
        }
        Ok(Self { symbols, duration_s })
    }

    /// One symbol per code tuple at `rate_hz` tuples per second.
    pub fn from_codes(codes: &CodeSequence, rate_hz: f64) -> Result<Self> {
        let symbols = codes.frames.iter().map(|t| SymbolKey::from_indices(t)).collect::<Vec<_>>();
        let n = symbols.len() as f64;
        Self::new(symbols, n / rate_hz)
    }

    /// One symbol per distinct frame vector.
    pub fn from_frames(feat: &FeatureSequence) -> Result<Self> {
        Self::new(feat.rows().map(SymbolKey::from_frame).collect(), feat.duration_s())
    }
}

/// Symbols per second times the empirical entropy (bits) of the pooled
/// symbol distribution.
pub fn bitrate(streams: &[SymbolStream]) -> Result<f64> {
    if streams.is_empty() {
        return Err(EvalError::Invalid("no symbol streams".into()));
    }
    let mut counts: BTreeMap<&SymbolKey, u64> = BTreeMap::new();
    let mut duration = 0.0;
    for s in streams {
        if !(s.duration_s > 0.0) {
            return Err(EvalError::Invalid(format!("stream duration must be positive, got {}", s.duration_s)));
        }
        duration += s.duration_s;
        for k in &s.symbols {
            *counts.entry(k).or_default() += 1;
        }
    }
    let n: u64 = counts.values().sum();
    if n == 0 {
        return Err(EvalError::Invalid("no symbols".into()));
    }
    // sum in count order so relabeling cannot change the rounding
    let mut c: Vec<u64> = counts.into_values().collect();
    c.sort_unstable();
    let nf = n as f64;
    let entropy: f64 = c
        .iter()
        .map(|&k| {
            let p = k as f64 / nf;
            -p * p.log2()
        })
        .sum();
    Ok(nf / duration * entropy.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(ids: &[usize], secs: f64) -> SymbolStream {
        SymbolStream::new(ids.iter().map(|&i| SymbolKey::from_indices(&[i])).collect(), secs).unwrap()
    }

    #[test]
    fn rejects_degenerate_streams() {
        assert!(SymbolStream::new(vec![], 1.0).is_err());
        assert!(SymbolStream::new(vec![SymbolKey(vec![0])], 0.0).is_err());
        assert!(bitrate(&[]).is_err());
        let bad = SymbolStream {
            symbols: vec![SymbolKey(vec![0])],
            duration_s: 0.0,
        };
        assert!(bitrate(&[bad]).is_err());
    }

    #[test]
    fn pools_streams() {
        // two streams each with one symbol type, distinct between them: H = 1 bit
        let r = bitrate(&[stream(&[0; 10], 1.0), stream(&[1; 10], 1.0)]).unwrap();
        assert!((r - 10.0).abs() < 1e-12);
    }
}
