use std::collections::BTreeMap;
use std::path::Path;

use super::{ModelError, Result};

/// Speaker name → integer id, stored as a JSON object.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpeakerMap {
    ids: BTreeMap<String, usize>,
}

impl SpeakerMap {
    /// Ids assigned in sorted name order.
    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Self {
        let mut sorted: Vec<&str> = names.into_iter().collect();
        sorted.sort_unstable();
        sorted.dedup();
        Self {
            ids: sorted.into_iter().enumerate().map(|(i, n)| (n.to_string(), i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.ids.get(name).copied().ok_or_else(|| {
            let known: Vec<&str> = self.ids.keys().map(String::as_str).collect();
            ModelError::UnknownSpeaker(format!("`{name}`; known speakers: {}", known.join(", ")))
        })
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.ids.iter().find(|(_, &i)| i == id).map(|(n, _)| n.as_str())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.ids.keys().map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.ids).expect("map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ids: BTreeMap<String, usize> = serde_json::from_str(text)?;
        let mut seen: Vec<usize> = ids.values().copied().collect();
        seen.sort_unstable();
        if seen.iter().enumerate().any(|(i, &v)| i != v) {
            return Err(ModelError::Config("speaker ids must be 0..n without gaps".into()));
        }
        Ok(Self { ids })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_follow_sorted_names() {
        let m = SpeakerMap::from_names(["bob", "alice", "bob"]);
        assert_eq!(m.id("alice").unwrap(), 0);
        assert_eq!(m.id("bob").unwrap(), 1);
        assert_eq!(m.name(1), Some("bob"));
        let err = m.id("carol").unwrap_err().to_string();
        assert!(err.contains("alice, bob"), "{err}");
        assert_eq!(SpeakerMap::from_json(&m.to_json()).unwrap(), m);
        assert!(SpeakerMap::from_json(r#"{"a": 0, "b": 2}"#).is_err());
    }
}
