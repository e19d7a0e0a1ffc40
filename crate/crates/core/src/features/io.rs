//! Binary feature files.
//!
//! Layout, all little-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `ZVQF` |
//! | 4 | `u32` version (1) |
//! | 4 | `u32` dim |
//! | 4 | `u32` n_frames |
//! | 4 | `f32` frame rate in Hz |
//! | 4·dim·n_frames | `f32` values, row-major |
//!
//! The utterance id is the file stem.

use std::path::Path;

use super::{FeatureError, FeatureSequence, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"ZVQF";
pub const FEATURE_VERSION: u32 = 1;

pub fn write_features(path: impl AsRef<Path>, feat: &FeatureSequence) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + feat.data().len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(feat.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(feat.n_frames() as u32).to_le_bytes());
    buf.extend_from_slice(&feat.frame_rate_hz.to_le_bytes());
    for v in feat.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    if bytes.len() < 20 || &bytes[..4] != FEATURE_MAGIC {
        return Err(FeatureError::Malformed(format!("{}: bad magic", path.display())));
    }
    let version = u32_at(&bytes, 4);
    if version != FEATURE_VERSION {
        return Err(FeatureError::Malformed(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let dim = u32_at(&bytes, 8) as usize;
    let n = u32_at(&bytes, 12) as usize;
    let rate = f32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes"));
    let body = &bytes[20..];
    if body.len() != dim * n * 4 {
        return Err(FeatureError::Malformed(format!(
            "{}: header promises {n}×{dim} values, body has {} bytes",
            path.display(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureSequence::new(id, data, dim, rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("utt1.zvqf");
        let f = FeatureSequence::new("utt1", vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, 100.0).unwrap();
        write_features(&p, &f).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"ZVQF");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &100f32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 24);
        assert_eq!(read_features(&p).unwrap(), f);
    }

    #[test]
    fn truncated_body_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.zvqf");
        let f = FeatureSequence::new("x", vec![1.0; 6], 3, 100.0).unwrap();
        write_features(&p, &f).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 1);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_features(&p), Err(FeatureError::Malformed(_))));
    }
}
