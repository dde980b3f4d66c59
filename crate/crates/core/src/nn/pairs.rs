//! Labelled image pairs, stored as JSON lines:
//!
//! ```text
//! {"a":"storm_01.png","b":"storm_07.png","label":1}
//! ```
//!
//! Paths are relative to the image directory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::Label;
use super::NnError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pair {
    pub a: String,
    pub b: String,
    pub label: Label,
}

impl Pair {
    pub fn new(a: impl Into<String>, b: impl Into<String>, label: Label) -> Self {
        Pair {
            a: a.into(),
            b: b.into(),
            label,
        }
    }

    /// One JSON object, no trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("pair serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn parse(text: &str) -> Result<Self, NnError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let pair: Pair = serde_json::from_str(line)
                .map_err(|e| NnError::Format(format!("pair line {}: {e}", i + 1)))?;
            pairs.push(pair);
        }
        Ok(PairSet { pairs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| NnError::io(path, e))?;
        PairSet::parse(&text)
    }

    pub fn to_jsonl(&self) -> String {
        self.pairs
            .iter()
            .map(|p| p.to_json_line() + "\n")
            .collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
