use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmEntry {
    pub name: String,
    /// Average cost per query, in the same abstract dollar units for every
    /// entry.
    pub cost: f64,
}

/// Ordered pool of candidate LLMs. Position in the catalog is the
/// satellite index everywhere else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LlmEntry>", into = "Vec<LlmEntry>")]
pub struct LlmCatalog {
    entries: Vec<LlmEntry>,
}

impl TryFrom<Vec<LlmEntry>> for LlmCatalog {
    type Error = Error;

    fn try_from(entries: Vec<LlmEntry>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<LlmCatalog> for Vec<LlmEntry> {
    fn from(c: LlmCatalog) -> Self {
        c.entries
    }
}

impl LlmCatalog {
    pub fn new(entries: Vec<LlmEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("catalog is empty".into()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Validation(format!("duplicate LLM name {:?}", e.name)));
            }
            if !(e.cost.is_finite() && e.cost >= 0.0) {
                return Err(Error::Validation(format!(
                    "LLM {:?} has invalid cost {}",
                    e.name, e.cost
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(name, cost)| LlmEntry {
                    name: name.into(),
                    cost,
                })
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.entries)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LlmEntry] {
        &self.entries
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].name
    }

    pub fn cost(&self, i: usize) -> f64 {
        self.entries[i].cost
    }

    pub fn costs(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.cost).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Catalog restricted to `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let entries = indices
            .iter()
            .map(|&i| {
                self.entries
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Index(format!("LLM {i} of {}", self.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    /// SHA-256 over names and exact cost bits, in order. Any reordering,
    /// renaming or repricing changes the hash.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update((e.name.len() as u64).to_le_bytes());
            h.update(e.name.as_bytes());
            h.update(e.cost.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_bad_costs() {
        assert!(LlmCatalog::from_pairs([("a", 1.0), ("a", 2.0)]).is_err());
        assert!(LlmCatalog::from_pairs([("a", -1.0)]).is_err());
        assert!(LlmCatalog::from_pairs([("a", f64::NAN)]).is_err());
        assert!(LlmCatalog::from_pairs(Vec::<(&str, f64)>::new()).is_err());
    }

    #[test]
    fn hash_tracks_order() {
        let a = LlmCatalog::from_pairs([("x", 1.0), ("y", 2.0)]).unwrap();
        let b = LlmCatalog::from_pairs([("y", 2.0), ("x", 1.0)]).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
    }

    #[test]
    fn json_shape_is_a_plain_array() {
        let c = LlmCatalog::from_pairs([("x", 0.5)]).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(text, r#"[{"name":"x","cost":0.5}]"#);
        let back: LlmCatalog = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<LlmCatalog>(r#"[{"name":"x","cost":-1}]"#).is_err());
    }
}
