//! Text code files: one line per utterance,
//! `utterance_id i,j,… i,j,… …` with one comma-joined index tuple per
//! latent frame.

use std::fmt::Write as _;
use std::path::Path;

use super::{BottleneckError, Result};

/// Discrete index tuples emitted for one utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodeSequence {
    pub utterance_id: String,
    pub frames: Vec<Vec<usize>>,
}

impl CodeSequence {
    pub fn to_line(&self) -> String {
        let mut line = self.utterance_id.clone();
        for f in &self.frames {
            line.push(' ');
            for (i, k) in f.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                write!(line, "{k}").expect("string write");
            }
        }
        line
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let err = |reason: String| BottleneckError::Parse {
            line: line_no,
            reason,
        };
        let mut fields = line.split_whitespace();
        let id = fields.next().ok_or_else(|| err("empty line".into()))?;
        let mut frames = Vec::new();
        let mut width = None;
        for field in fields {
            let tuple = field
                .split(',')
                .map(|s| s.parse::<usize>().map_err(|e| err(format!("`{s}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            match width {
                None => width = Some(tuple.len()),
                Some(w) if w != tuple.len() => {
                    return Err(err(format!("tuple `{field}` has {} entries, expected {w}", tuple.len())))
                }
                _ => {}
            }
            frames.push(tuple);
        }
        Ok(Self {
            utterance_id: id.to_string(),
            frames,
        })
    }
}

pub fn write_code_file(path: impl AsRef<Path>, seqs: &[CodeSequence]) -> Result<()> {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&s.to_line());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_code_file(path: impl AsRef<Path>) -> Result<Vec<CodeSequence>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| CodeSequence::parse_line(l, i + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let s = CodeSequence {
            utterance_id: "u1".into(),
            frames: vec![vec![3, 0], vec![12, 7]],
        };
        assert_eq!(s.to_line(), "u1 3,0 12,7");
        assert_eq!(CodeSequence::parse_line("u1 3,0 12,7", 1).unwrap(), s);
        let single = CodeSequence::parse_line("u2 4 5 6", 1).unwrap();
        assert_eq!(single.frames, vec![vec![4], vec![5], vec![6]]);
        assert_eq!(single.to_line(), "u2 4 5 6");
    }

    #[test]
    fn ragged_and_bad_tokens_fail() {
        assert!(CodeSequence::parse_line("u 1,2 3", 4).is_err());
        assert!(matches!(
            CodeSequence::parse_line("u 1,x", 9),
            Err(BottleneckError::Parse { line: 9, .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("codes.txt");
        let seqs = vec![
            CodeSequence {
                utterance_id: "a".into(),
                frames: vec![vec![1], vec![2]],
            },
            CodeSequence {
                utterance_id: "b".into(),
                frames: vec![vec![0]],
            },
        ];
        write_code_file(&p, &seqs).unwrap();
        assert_eq!(read_code_file(&p).unwrap(), seqs);
    }
}
