//! The computation-graph data model.
//!
//! A [`Graph`] is a DAG of operator [`Node`]s over named values. Values are
//! produced by graph inputs, stored constants, or node outputs
//! (single-assignment). Graphs are immutable once loaded; every pass takes a
//! graph by reference and returns a new one.

use crate::dtype::{DType, QuantParams};
use crate::tensor::numel;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;
use thiserror::Error;

/// Name, dtype and shape of a graph input (or of a constant, via
/// [`ConstTensor::spec`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

/// A stored weight: flat row-major data plus optional quantization params.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantParams>,
}

impl ConstTensor {
    pub fn new(name: impl Into<String>, dtype: DType, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            dtype,
            shape,
            data,
            quant: None,
        }
    }

    pub fn with_quant(mut self, scale: f64, zero_point: i64) -> Self {
        self.quant = Some(QuantParams::new(scale, zero_point));
        self
    }

    pub fn spec(&self) -> TensorSpec {
        TensorSpec {
            name: self.name.clone(),
            dtype: self.dtype,
            shape: self.shape.clone(),
        }
    }
}

/// Node attribute: a number, a string, or a flat numeric list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Num(f64),
    Str(String),
    List(Vec<f64>),
}

impl AttrValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            AttrValue::Num(v) if v.fract() == 0.0 => Some(*v as i64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_i64_list(&self) -> Option<Vec<i64>> {
        match self {
            AttrValue::List(v) if v.iter().all(|x| x.fract() == 0.0) => {
                Some(v.iter().map(|x| *x as i64).collect())
            }
            _ => None,
        }
    }

    pub fn as_f64_list(&self) -> Option<Vec<f64>> {
        match self {
            AttrValue::List(v) => Some(v.clone()),
            _ => None,
        }
    }
}

impl From<f64> for AttrValue {
    fn from(v: f64) -> Self {
        AttrValue::Num(v)
    }
}

impl From<i64> for AttrValue {
    fn from(v: i64) -> Self {
        AttrValue::Num(v as f64)
    }
}

impl From<&str> for AttrValue {
    fn from(v: &str) -> Self {
        AttrValue::Str(v.to_string())
    }
}

impl From<Vec<i64>> for AttrValue {
    fn from(v: Vec<i64>) -> Self {
        AttrValue::List(v.into_iter().map(|x| x as f64).collect())
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

/// One operator application: named inputs in, named outputs out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub op_type: String,
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: Attrs,
}

impl Node {
    pub fn new(
        op_type: impl Into<String>,
        name: impl Into<String>,
        inputs: Vec<&str>,
        outputs: Vec<&str>,
    ) -> Self {
        Self {
            op_type: op_type.into(),
            name: name.into(),
            inputs: inputs.into_iter().map(String::from).collect(),
            outputs: outputs.into_iter().map(String::from).collect(),
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<AttrValue>) -> Self {
        self.attributes.insert(key.to_string(), value.into());
        self
    }
}

/// A recorded input/output pair from the source model, used as the
/// functional-equivalence oracle when matching unknown operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub inputs: BTreeMap<String, Vec<f64>>,
    pub outputs: BTreeMap<String, Vec<f64>>,
}

/// A directed acyclic computation graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    pub name: String,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<String>,
    pub constants: Vec<ConstTensor>,
    pub nodes: Vec<Node>,
    pub traces: Option<Vec<TraceRecord>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("cycle among nodes [{}] involving values [{}]", nodes.join(", "), values.join(", "))]
pub struct CycleError {
    pub nodes: Vec<String>,
    pub values: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("value \"{0}\" is produced more than once")]
    DuplicateValue(String),
    #[error("node \"{node}\" references undefined value \"{value}\"")]
    UndefinedValue { node: String, value: String },
    #[error("graph output \"{0}\" is not produced by any node, constant or input")]
    UndefinedOutput(String),
    #[error("node \"{0}\" has an empty name or no outputs")]
    MalformedNode(String),
    #[error("duplicate node name \"{0}\"")]
    DuplicateNode(String),
    #[error("constant \"{name}\": shape {shape:?} holds {expected} elements, data has {got}")]
    ConstDataLength {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("constant \"{name}\": value {value} is not representable as {dtype}")]
    ConstValueRange {
        name: String,
        value: f64,
        dtype: DType,
    },
    #[error("\"{name}\": quantization scale must be > 0, got {scale}")]
    BadQuantScale { name: String, scale: f64 },
    #[error("\"{name}\": zero point {zero_point} outside {dtype} range")]
    BadZeroPoint {
        name: String,
        zero_point: i64,
        dtype: DType,
    },
    #[error("\"{name}\": shape contains a zero dimension")]
    ZeroDim { name: String },
    #[error("integer constant \"{name}\" feeds arithmetic node \"{node}\" without quantization parameters")]
    MissingQuant { name: String, node: String },
    #[error("trace record {index}: key set does not match graph {kind}s ({detail})")]
    BadTrace {
        index: usize,
        kind: String,
        detail: String,
    },
    #[error(transparent)]
    Cycle(#[from] CycleError),
}

/// Operators whose integer operands must carry quantization parameters.
const ARITHMETIC_OPS: &[&str] = &[
    "Conv2D",
    "Gemm",
    "FullyConnected",
    "Add",
    "Sub",
    "Mul",
    "Div",
];

impl Graph {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn constant(&self, name: &str) -> Option<&ConstTensor> {
        self.constants.iter().find(|c| c.name == name)
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// The node producing `value`, if any.
    pub fn producer(&self, value: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.outputs.iter().any(|o| o == value))
    }

    pub fn is_constant_value(&self, value: &str) -> bool {
        self.constants.iter().any(|c| c.name == value)
    }

    pub fn is_input_value(&self, value: &str) -> bool {
        self.inputs.iter().any(|i| i.name == value)
    }

    /// All value names alive in the graph (inputs, constants, node outputs).
    pub fn value_names(&self) -> BTreeSet<String> {
        let mut names: BTreeSet<String> = self.inputs.iter().map(|i| i.name.clone()).collect();
        names.extend(self.constants.iter().map(|c| c.name.clone()));
        names.extend(self.nodes.iter().flat_map(|n| n.outputs.iter().cloned()));
        names
    }

    /// Checks every structural invariant: single assignment, resolvable
    /// references, positive shapes, representable constant data, sane
    /// quantization parameters, acyclicity, and trace conformance.
    pub fn check(&self) -> Result<(), ValidationError> {
        let mut produced: BTreeSet<&str> = BTreeSet::new();
        for spec in &self.inputs {
            if !produced.insert(&spec.name) {
                return Err(ValidationError::DuplicateValue(spec.name.clone()));
            }
            if spec.shape.contains(&0) {
                return Err(ValidationError::ZeroDim {
                    name: spec.name.clone(),
                });
            }
        }
        for c in &self.constants {
            if !produced.insert(&c.name) {
                return Err(ValidationError::DuplicateValue(c.name.clone()));
            }
            self.check_constant(c)?;
        }
        let mut node_names: BTreeSet<&str> = BTreeSet::new();
        for node in &self.nodes {
            if node.name.is_empty() || node.outputs.is_empty() {
                return Err(ValidationError::MalformedNode(node.name.clone()));
            }
            if !node_names.insert(&node.name) {
                return Err(ValidationError::DuplicateNode(node.name.clone()));
            }
            for out in &node.outputs {
                if !produced.insert(out) {
                    return Err(ValidationError::DuplicateValue(out.clone()));
                }
            }
        }
        for node in &self.nodes {
            for input in &node.inputs {
                if !produced.contains(input.as_str()) {
                    return Err(ValidationError::UndefinedValue {
                        node: node.name.clone(),
                        value: input.clone(),
                    });
                }
            }
        }
        for out in &self.outputs {
            if !produced.contains(out.as_str()) {
                return Err(ValidationError::UndefinedOutput(out.clone()));
            }
        }
        // integer weights feeding arithmetic must carry quant params
        for node in &self.nodes {
            if ARITHMETIC_OPS.contains(&node.op_type.as_str()) {
                for input in &node.inputs {
                    if let Some(c) = self.constant(input) {
                        if matches!(c.dtype, DType::Uint8 | DType::Int8) && c.quant.is_none() {
                            return Err(ValidationError::MissingQuant {
                                name: c.name.clone(),
                                node: node.name.clone(),
                            });
                        }
                    }
                }
            }
        }
        self.topo_order()?;
        self.check_traces()?;
        Ok(())
    }

    fn check_constant(&self, c: &ConstTensor) -> Result<(), ValidationError> {
        if c.shape.contains(&0) {
            return Err(ValidationError::ZeroDim {
                name: c.name.clone(),
            });
        }
        let expected = numel(&c.shape);
        if c.data.len() != expected {
            return Err(ValidationError::ConstDataLength {
                name: c.name.clone(),
                shape: c.shape.clone(),
                expected,
                got: c.data.len(),
            });
        }
        for &v in &c.data {
            if !c.dtype.contains(v) {
                return Err(ValidationError::ConstValueRange {
                    name: c.name.clone(),
                    value: v,
                    dtype: c.dtype,
                });
            }
        }
        if let Some(q) = &c.quant {
            if !(q.scale > 0.0 && q.scale.is_finite()) {
                return Err(ValidationError::BadQuantScale {
                    name: c.name.clone(),
                    scale: q.scale,
                });
            }
            if let Some((lo, hi)) = c.dtype.integer_range() {
                let zp = q.zero_point as f64;
                if zp < lo || zp > hi {
                    return Err(ValidationError::BadZeroPoint {
                        name: c.name.clone(),
                        zero_point: q.zero_point,
                        dtype: c.dtype,
                    });
                }
            }
        }
        Ok(())
    }

    fn check_traces(&self) -> Result<(), ValidationError> {
        let Some(traces) = &self.traces else {
            return Ok(());
        };
        let input_names: BTreeSet<&str> = self.inputs.iter().map(|s| s.name.as_str()).collect();
        let output_names: BTreeSet<&str> = self.outputs.iter().map(|s| s.as_str()).collect();
        for (index, tr) in traces.iter().enumerate() {
            let got_in: BTreeSet<&str> = tr.inputs.keys().map(|s| s.as_str()).collect();
            if got_in != input_names {
                return Err(ValidationError::BadTrace {
                    index,
                    kind: "input".into(),
                    detail: format!("expected {:?}, got {:?}", input_names, got_in),
                });
            }
            let got_out: BTreeSet<&str> = tr.outputs.keys().map(|s| s.as_str()).collect();
            if got_out != output_names {
                return Err(ValidationError::BadTrace {
                    index,
                    kind: "output".into(),
                    detail: format!("expected {:?}, got {:?}", output_names, got_out),
                });
            }
            for spec in &self.inputs {
                let arr = &tr.inputs[&spec.name];
                if arr.len() != numel(&spec.shape) {
                    return Err(ValidationError::BadTrace {
                        index,
                        kind: "input".into(),
                        detail: format!(
                            "\"{}\" has {} elements, spec {:?} wants {}",
                            spec.name,
                            arr.len(),
                            spec.shape,
                            numel(&spec.shape)
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Indices of `self.nodes` in dependency order.
    ///
    /// Deterministic: when several nodes are ready, the lexicographically
    /// smallest node name runs first.
    pub fn topo_order(&self) -> Result<Vec<usize>, CycleError> {
        // producer value -> consumer node indices
        let mut consumers: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        let mut pending: Vec<usize> = Vec::with_capacity(self.nodes.len());
        let ambient: BTreeSet<&str> = self
            .inputs
            .iter()
            .map(|i| i.name.as_str())
            .chain(self.constants.iter().map(|c| c.name.as_str()))
            .collect();
        let produced_by_node: BTreeMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| n.outputs.iter().map(move |o| (o.as_str(), i)))
            .collect();

        for (i, node) in self.nodes.iter().enumerate() {
            let mut missing = 0;
            for input in &node.inputs {
                if ambient.contains(input.as_str()) {
                    continue;
                }
                if produced_by_node.contains_key(input.as_str()) {
                    consumers.entry(input.as_str()).or_default().push(i);
                    missing += 1;
                }
                // unresolved names are a validation error, not a cycle
            }
            pending.push(missing);
        }

        let mut ready: BinaryHeap<Reverse<(&str, usize)>> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| pending[*i] == 0)
            .map(|(i, n)| Reverse((n.name.as_str(), i)))
            .collect();

        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse((_, i))) = ready.pop() {
            order.push(i);
            for out in &self.nodes[i].outputs {
                for &j in consumers.get(out.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
                    pending[j] -= 1;
                    if pending[j] == 0 {
                        ready.push(Reverse((self.nodes[j].name.as_str(), j)));
                    }
                }
            }
        }

        if order.len() != self.nodes.len() {
            let seen: BTreeSet<usize> = order.iter().copied().collect();
            let stuck: Vec<&Node> = self
                .nodes
                .iter()
                .enumerate()
                .filter(|(i, _)| !seen.contains(i))
                .map(|(_, n)| n)
                .collect();
            let values = stuck
                .iter()
                .flat_map(|n| n.inputs.iter())
                .filter(|v| {
                    produced_by_node.contains_key(v.as_str())
                        && !stuck.iter().all(|n| !n.outputs.contains(v))
                })
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            return Err(CycleError {
                nodes: stuck.iter().map(|n| n.name.clone()).collect(),
                values,
            });
        }
        Ok(order)
    }

    /// Nodes in dependency order (see [`Graph::topo_order`]).
    pub fn topo_sort(&self) -> Result<Vec<&Node>, CycleError> {
        Ok(self.topo_order()?.into_iter().map(|i| &self.nodes[i]).collect())
    }
}
