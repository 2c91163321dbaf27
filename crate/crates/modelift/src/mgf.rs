//! MGF — the Model Graph Format.
//!
//! MGF is a plain JSON document describing one [`Graph`]: metadata, tensor
//! specs, constant data as numeric arrays, a node list, and (optionally)
//! recorded reference traces. Version 1 is the only version. Unknown
//! top-level keys are rejected rather than ignored so that typos
//! (`"constant"` for `"constants"`) surface at load time instead of as
//! silently-missing weights.

use crate::graph::{ConstTensor, Graph, Node, TensorSpec, TraceRecord, ValidationError};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MgfError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported format_version {0} (this build reads version {FORMAT_VERSION})")]
    Version(u32),
    #[error("invalid graph: {0}")]
    Validation(#[from] ValidationError),
}

/// Serialized form of a [`Graph`]. Field order here fixes the key order in
/// saved files.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MgfDoc {
    format_version: u32,
    name: String,
    inputs: Vec<TensorSpec>,
    outputs: Vec<String>,
    #[serde(default)]
    constants: Vec<ConstTensor>,
    nodes: Vec<Node>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reference_traces: Option<Vec<TraceRecord>>,
}

impl From<&Graph> for MgfDoc {
    fn from(g: &Graph) -> Self {
        MgfDoc {
            format_version: FORMAT_VERSION,
            name: g.name.clone(),
            inputs: g.inputs.clone(),
            outputs: g.outputs.clone(),
            constants: g.constants.clone(),
            nodes: g.nodes.clone(),
            reference_traces: g.traces.clone(),
        }
    }
}

impl TryFrom<MgfDoc> for Graph {
    type Error = MgfError;

    fn try_from(doc: MgfDoc) -> Result<Self, MgfError> {
        if doc.format_version != FORMAT_VERSION {
            return Err(MgfError::Version(doc.format_version));
        }
        let graph = Graph {
            name: doc.name,
            inputs: doc.inputs,
            outputs: doc.outputs,
            constants: doc.constants,
            nodes: doc.nodes,
            traces: doc.reference_traces,
        };
        graph.check()?;
        Ok(graph)
    }
}

/// Parses and validates an MGF document from a JSON string.
pub fn parse_mgf(json: &str) -> Result<Graph, MgfError> {
    let doc: MgfDoc = serde_json::from_str(json)?;
    Graph::try_from(doc)
}

/// Serializes a graph as pretty-printed MGF JSON.
pub fn to_mgf_string(graph: &Graph) -> String {
    // MgfDoc contains only serializable primitives; this cannot fail.
    serde_json::to_string_pretty(&MgfDoc::from(graph)).expect("MGF serialization")
}

pub fn load_mgf(path: impl AsRef<Path>) -> Result<Graph, MgfError> {
    parse_mgf(&std::fs::read_to_string(path)?)
}

pub fn save_mgf(graph: &Graph, path: impl AsRef<Path>) -> Result<(), MgfError> {
    let mut text = to_mgf_string(graph);
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::DType;
    use crate::graph::Node;

    fn sample() -> Graph {
        let mut g = Graph::new("sample");
        g.inputs.push(TensorSpec {
            name: "x".into(),
            dtype: DType::Float32,
            shape: vec![1, 3],
        });
        g.constants.push(
            ConstTensor::new("w", DType::Uint8, vec![1, 3], vec![1.0, 2.0, 3.0])
                .with_quant(0.1, 3),
        );
        g.nodes.push(Node::new("DequantizeLinear", "dq", vec!["w"], vec!["w_f"]));
        g.nodes.push(Node::new("Add", "add", vec!["x", "w_f"], vec!["y"]));
        g.outputs.push("y".into());
        g
    }

    #[test]
    fn round_trip_identity() {
        let g = sample();
        let text = to_mgf_string(&g);
        let back = parse_mgf(&text).unwrap();
        assert_eq!(g, back);
        // and a second trip is byte-identical
        assert_eq!(text, to_mgf_string(&back));
    }

    #[test]
    fn unknown_top_level_key_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&to_mgf_string(&sample())).unwrap();
        v["constant"] = serde_json::json!([]);
        let err = parse_mgf(&v.to_string()).unwrap_err();
        assert!(matches!(err, MgfError::Parse(_)), "{err}");
    }

    #[test]
    fn wrong_version_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&to_mgf_string(&sample())).unwrap();
        v["format_version"] = serde_json::json!(2);
        assert!(matches!(parse_mgf(&v.to_string()), Err(MgfError::Version(2))));
    }

    #[test]
    fn undefined_reference_rejected_at_load() {
        let mut g = sample();
        g.nodes[1].inputs[1] = "w_typo".into();
        let text = to_mgf_string(&g); // serializer does not validate
        match parse_mgf(&text) {
            Err(MgfError::Validation(ValidationError::UndefinedValue { value, .. })) => {
                assert_eq!(value, "w_typo")
            }
            other => panic!("expected UndefinedValue, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn float_data_survives_json() {
        // 0.1 is not exactly representable; the f32-rounded value must come
        // back bit-for-bit through JSON
        let mut g = Graph::new("precision");
        g.inputs.push(TensorSpec {
            name: "x".into(),
            dtype: DType::Float32,
            shape: vec![1],
        });
        let v = 0.1f32 as f64;
        g.constants.push(ConstTensor::new("c", DType::Float32, vec![1], vec![v]));
        g.nodes.push(Node::new("Add", "a", vec!["x", "c"], vec!["y"]));
        g.outputs.push("y".into());
        let back = parse_mgf(&to_mgf_string(&g)).unwrap();
        assert_eq!(back.constant("c").unwrap().data[0].to_bits(), v.to_bits());
    }

    #[test]
    fn save_and_load_via_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mgf.json");
        let g = sample();
        save_mgf(&g, &path).unwrap();
        assert_eq!(load_mgf(&path).unwrap(), g);
    }
}
