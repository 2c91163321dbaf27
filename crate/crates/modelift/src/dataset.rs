//! Labeled sample sets, stored as plain JSON.
//!
//! ```json
//! {
//!   "num_classes": 4,
//!   "samples": [ {"input": [0.1, 0.9, …], "label": 2}, … ]
//! }
//! ```
//!
//! Inputs are flat row-major buffers; the consuming graph's input spec
//! supplies the shape.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(num_classes: usize) -> Self {
        Self { num_classes, samples: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Labels must fit `num_classes` and every input must have the same
    /// nonzero length.
    pub fn check(&self) -> Result<(), DatasetError> {
        if self.num_classes == 0 {
            return Err(DatasetError::Invalid("num_classes must be at least 1".into()));
        }
        let width = self.samples.first().map(|s| s.input.len());
        for (i, s) in self.samples.iter().enumerate() {
            if s.label >= self.num_classes {
                return Err(DatasetError::Invalid(format!(
                    "sample {i}: label {} out of range for {} classes",
                    s.label, self.num_classes
                )));
            }
            if s.input.is_empty() || Some(s.input.len()) != width {
                return Err(DatasetError::Invalid(format!(
                    "sample {i}: input length {} differs from first sample's {}",
                    s.input.len(),
                    width.unwrap_or(0)
                )));
            }
        }
        Ok(())
    }

    pub fn parse(json: &str) -> Result<Self, DatasetError> {
        let d: Dataset = serde_json::from_str(json)?;
        d.check()?;
        Ok(d)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        self.check()?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_json() {
        let d = Dataset {
            num_classes: 3,
            samples: vec![
                Sample { input: vec![0.0, 0.5], label: 0 },
                Sample { input: vec![1.0, 0.25], label: 2 },
            ],
        };
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(Dataset::parse(&text).unwrap(), d);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let err = Dataset::parse(r#"{"num_classes": 2, "samples": [{"input": [1.0], "label": 2}]}"#)
            .unwrap_err();
        assert!(matches!(err, DatasetError::Invalid(_)), "{err}");
    }

    #[test]
    fn ragged_inputs_are_rejected() {
        let err = Dataset::parse(
            r#"{"num_classes": 2, "samples": [
                {"input": [1.0, 2.0], "label": 0},
                {"input": [1.0], "label": 1}
            ]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, DatasetError::Invalid(_)), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err =
            Dataset::parse(r#"{"num_classes": 2, "samples": [], "classes": ["a", "b"]}"#).unwrap_err();
        assert!(matches!(err, DatasetError::Parse(_)), "{err}");
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.json");
        let d = Dataset {
            num_classes: 2,
            samples: vec![Sample { input: vec![0.125, 0.875, 0.5], label: 1 }],
        };
        d.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), d);
    }
}
