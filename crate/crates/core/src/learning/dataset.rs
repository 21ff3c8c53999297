//! Labeled sequences stored as JSON lines.
//!
//! The first line is a header carrying the schema tag, the number of states
//! and the node-feature width; every following line is one example with
//! fields `features`, `labels` and an optional `global` vector.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{Labeling, Layout};
use crate::error::{Error, Result};

pub const DATASET_SCHEMA: &str = "bethe.dataset/v1";

/// Inputs for one sequence: a feature vector per position and an optional
/// sequence-level vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub nodes: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<Vec<f64>>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Features,
    pub labels: Labeling,
}

impl Example {
    pub fn layout(&self, k: usize) -> Result<Layout> {
        Layout::new(self.labels.len(), k)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    num_states: usize,
    feature_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct Record {
    features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    global: Option<Vec<f64>>,
    labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    num_states: usize,
    feature_dim: usize,
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(num_states: usize, feature_dim: usize, examples: Vec<Example>) -> Result<Self> {
        if num_states < 2 {
            return Err(Error::InvalidParameter("a dataset needs at least 2 states".into()));
        }
        let global_dim = examples
            .iter()
            .find_map(|ex| ex.features.global.as_ref().map(Vec::len));
        for (index, ex) in examples.iter().enumerate() {
            Self::check_example(ex, num_states, feature_dim, global_dim)
                .map_err(|e| e.at_example(index))?;
        }
        Ok(Dataset {
            num_states,
            feature_dim,
            examples,
        })
    }

    fn check_example(ex: &Example, k: usize, d: usize, global_dim: Option<usize>) -> Result<()> {
        if ex.labels.is_empty() {
            return Err(Error::InvalidParameter("empty labeling".into()));
        }
        ex.labels.check(Layout::new(ex.labels.len(), k)?)?;
        crate::error::ensure_len("feature rows", ex.labels.len(), ex.features.nodes.len())?;
        for row in &ex.features.nodes {
            crate::error::ensure_len("node features", d, row.len())?;
        }
        if let (Some(g), Some(expected)) = (&ex.features.global, global_dim) {
            crate::error::ensure_len("global features", expected, g.len())?;
        }
        let values = ex.features.nodes.iter().flatten().chain(ex.features.global.iter().flatten());
        if values.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features".into()));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Width of the sequence-level features, if the examples carry them.
    pub fn global_dim(&self) -> Option<usize> {
        self.examples
            .iter()
            .find_map(|ex| ex.features.global.as_ref().map(Vec::len))
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            num_states: self.num_states,
            feature_dim: self.feature_dim,
            examples: self.examples[range].to_vec(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            schema: DATASET_SCHEMA.into(),
            num_states: self.num_states,
            feature_dim: self.feature_dim,
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for ex in &self.examples {
            let record = Record {
                features: ex.features.nodes.clone(),
                global: ex.features.global.clone(),
                labels: ex.labels.as_slice().to_vec(),
            };
            writeln!(out, "{}", serde_json::to_string(&record)?)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Schema {
                expected: DATASET_SCHEMA.into(),
                found: "empty file".into(),
            })??;
        let header: Header = serde_json::from_str(&first)?;
        if header.schema != DATASET_SCHEMA {
            return Err(Error::Schema {
                expected: DATASET_SCHEMA.into(),
                found: header.schema,
            });
        }
        let mut examples = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line)?;
            examples.push(Example {
                features: Features {
                    nodes: record.features,
                    global: record.global,
                },
                labels: Labeling::new(record.labels),
            });
        }
        Dataset::new(header.num_states, header.feature_dim, examples)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_jsonl(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(BufReader::new(std::fs::File::open(path)?))
    }

    /// Hex SHA-256 of the serialized dataset.
    pub fn content_hash(&self) -> Result<String> {
        let text = self.to_jsonl()?;
        Ok(hex_digest(text.as_bytes()))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let ex = |labels: Vec<usize>| Example {
            features: Features {
                nodes: labels.iter().map(|&l| vec![l as f64, 1.0]).collect(),
                global: None,
            },
            labels: Labeling::new(labels),
        };
        Dataset::new(3, 2, vec![ex(vec![0, 1, 2]), ex(vec![2, 2])]).unwrap()
    }

    #[test]
    fn jsonl_round_trip() {
        let d = tiny();
        let text = d.to_jsonl().unwrap();
        assert!(text.lines().next().unwrap().contains(DATASET_SCHEMA));
        assert_eq!(text.lines().count(), 3);
        let back = Dataset::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.content_hash().unwrap(), d.content_hash().unwrap());
    }

    #[test]
    fn rejects_bad_rows() {
        let bad = Example {
            features: Features {
                nodes: vec![vec![0.0, 1.0]],
                global: None,
            },
            labels: Labeling::new(vec![3]),
        };
        assert!(matches!(
            Dataset::new(3, 2, vec![bad]),
            Err(Error::Example { index: 0, .. })
        ));
        let text = "{\"schema\":\"other\",\"num_states\":2,\"feature_dim\":1}\n";
        assert!(matches!(Dataset::read_jsonl(text.as_bytes()), Err(Error::Schema { .. })));
    }
}
