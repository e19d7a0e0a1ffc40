//! Manifests and the on-disk layout shared by the commands.
//!
//! A feature directory holds `features.tsv` (`utterance_id<TAB>file<TAB>speaker<TAB>role`),
//! one `<utterance_id>.zvqf` per utterance, `cmvn.json` and `speakers.json`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use zvq_core::features::{read_features, FeatureSequence};

pub const FEATURE_INDEX: &str = "features.tsv";
pub const CMVN_FILE: &str = "cmvn.json";
pub const SPEAKERS_FILE: &str = "speakers.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    TrainUnit,
    TrainVoice,
    Test,
}

impl Role {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train_unit" => Some(Role::TrainUnit),
            "train_voice" => Some(Role::TrainVoice),
            "test" => Some(Role::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::TrainUnit => "train_unit",
            Role::TrainVoice => "train_voice",
            Role::Test => "test",
        }
    }

    pub fn is_training(self) -> bool {
        self != Role::Test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub utterance_id: String,
    pub path: PathBuf,
    pub speaker: String,
    pub role: Role,
}

/// Parses `utterance_id<TAB>path<TAB>speaker[<TAB>role]` lines. Relative
/// paths resolve against `base`. The role defaults to `train_unit`.
pub fn parse_manifest(text: &str, base: &Path) -> anyhow::Result<Vec<Entry>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            bail!("manifest line {n}: expected 3 or 4 tab-separated fields, found {}", fields.len());
        }
        let id = fields[0].trim();
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            bail!("manifest line {n}: `{id}` is not a usable utterance id");
        }
        if !seen.insert(id.to_string()) {
            bail!("manifest line {n}: duplicate utterance id `{id}`");
        }
        let speaker = fields[2].trim();
        if speaker.is_empty() {
            bail!("manifest line {n}: empty speaker name");
        }
        let role = match fields.get(3) {
            None => Role::TrainUnit,
            Some(r) => Role::parse(r.trim()).with_context(|| format!("manifest line {n}: unknown role `{r}`"))?,
        };
        out.push(Entry {
            utterance_id: id.into(),
            path: base.join(fields[1].trim()),
            speaker: speaker.into(),
            role,
        });
    }
    if out.is_empty() {
        bail!("empty manifest");
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> anyhow::Result<Vec<Entry>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base).with_context(|| path.display().to_string())
}

pub fn manifest_text(entries: &[Entry], base: &Path) -> String {
    let mut s = String::new();
    for e in entries {
        let p = e.path.strip_prefix(base).unwrap_or(&e.path);
        writeln!(s, "{}\t{}\t{}\t{}", e.utterance_id, p.display(), e.speaker, e.role.name()).expect("string write");
    }
    s
}

/// Entries of a feature directory, with every feature file loaded.
pub fn load_feature_dir(dir: &Path) -> anyhow::Result<Vec<(Entry, FeatureSequence)>> {
    let entries = read_manifest(&dir.join(FEATURE_INDEX))?;
    entries
        .into_iter()
        .map(|e| {
            let mut f = read_features(&e.path).with_context(|| format!("reading {}", e.path.display()))?;
            f.utterance_id = e.utterance_id.clone();
            Ok((e, f))
        })
        .collect()
}

/// Maps `f` over `items` on up to `jobs` threads; results keep input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_rules() {
        let base = Path::new("/data");
        let e = parse_manifest("a\twav/a.wav\tspk1\nb\t/abs/b.wav\tspk2\ttest\n", base).unwrap();
        assert_eq!(e[0].path, PathBuf::from("/data/wav/a.wav"));
        assert_eq!(e[1].path, PathBuf::from("/abs/b.wav"));
        assert_eq!((e[0].role, e[1].role), (Role::TrainUnit, Role::Test));
        assert_eq!(parse_manifest("\n# only a comment\n", base).unwrap_err().to_string(), "empty manifest");
        assert!(parse_manifest("a\tx\ts\na\ty\ts\n", base).is_err());
        assert!(parse_manifest("a x s\n", base).is_err());
        assert!(parse_manifest("../a\tx\ts\n", base).is_err());
        assert!(parse_manifest("a\tx\ts\tdev\n", base).is_err());
    }

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<usize> = (0..37).collect();
        assert_eq!(par_map(&v, 4, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
