//! Issue taxonomy: why a graph is not (yet) debuggable.
//!
//! [`validate`] classifies every node into at most one of the three
//! transformability categories — redundant structure around constants,
//! operators that need lowering, operators with no kernel at all — plus an
//! independent specification category for attribute and input-order
//! anomalies. The rewrite passes each resolve one category; an empty
//! classification means the graph is already debuggable.

use crate::graph::{Graph, Node};
use crate::kernels::KernelRegistry;
use crate::rules::RuleSet;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCategory {
    /// Redundant constant-fed structure (e.g. a dequantize branch over stored
    /// weights) that folding removes.
    StructureMismatch,
    /// Operator exists but in a non-debuggable form; the translation table
    /// lowers it to basic differentiable nodes.
    OperatorMismatch,
    /// Operator is neither executable nor translatable; only auto-matching
    /// can recover it.
    OperatorNotSupported,
    /// Attribute defaults, negative axes, input ordering, or parameter-range
    /// anomalies; the normalization pass canonicalizes them.
    SpecificationMismatch,
}

impl std::fmt::Display for IssueCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            IssueCategory::StructureMismatch => "STRUCTURE_MISMATCH",
            IssueCategory::OperatorMismatch => "OPERATOR_MISMATCH",
            IssueCategory::OperatorNotSupported => "OPERATOR_NOT_SUPPORTED",
            IssueCategory::SpecificationMismatch => "SPECIFICATION_MISMATCH",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueRecord {
    pub category: IssueCategory,
    pub node_name: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_by: Option<String>,
}

impl IssueRecord {
    pub fn new(category: IssueCategory, node: &str, detail: impl Into<String>) -> Self {
        Self {
            category,
            node_name: node.to_string(),
            detail: detail.into(),
            resolved_by: None,
        }
    }

    pub fn resolved(mut self, pass: &str) -> Self {
        self.resolved_by = Some(pass.to_string());
        self
    }
}

/// Attribute/ordering anomalies of one node per the normalization table.
/// Returned as human-readable fragments; empty means canonical.
pub fn spec_anomalies(node: &Node, rules: &RuleSet) -> Vec<String> {
    let mut found = Vec::new();
    if let Some(rule) = rules.normalization_for(&node.op_type) {
        for key in rule.defaults.keys() {
            if !node.attributes.contains_key(key) {
                found.push(format!("missing attribute \"{key}\""));
            }
        }
        for (dst, src) in &rule.copy_defaults {
            if !node.attributes.contains_key(dst) && node.attributes.contains_key(src) {
                found.push(format!("missing attribute \"{dst}\" (defaults to \"{src}\")"));
            }
        }
        for key in &rule.axis_attrs {
            if let Some(v) = node.attributes.get(key).and_then(|v| v.as_i64()) {
                if v < 0 {
                    found.push(format!("negative axis {v} in \"{key}\""));
                }
            }
        }
    }
    if node.op_type == "Resize" {
        if let Some(mode) = node.attributes.get("mode").and_then(|v| v.as_str()) {
            if mode != "nearest" && mode != "linear" {
                found.push(format!("unsupported interpolation mode \"{mode}\""));
            }
        }
    }
    if node.attributes.contains_key("input_order") {
        found.push("non-canonical input order".to_string());
    }
    found
}

/// Classifies every node of the graph against the default rule tables.
pub fn validate(graph: &Graph) -> Vec<IssueRecord> {
    validate_with(graph, RuleSet::builtin(), KernelRegistry::builtin())
}

/// Classification logic:
/// 1. prune-list op whose inputs are all constants → `STRUCTURE_MISMATCH`;
/// 2. otherwise an op in the translation table → `OPERATOR_MISMATCH`;
/// 3. otherwise an op in neither the kernel registry nor the translation
///    table → `OPERATOR_NOT_SUPPORTED`;
/// 4. independently, attribute/ordering anomalies → one
///    `SPECIFICATION_MISMATCH` per node listing every anomaly.
///
/// Pure and idempotent; at most one record per category per node.
pub fn validate_with(graph: &Graph, rules: &RuleSet, registry: &KernelRegistry) -> Vec<IssueRecord> {
    let mut issues = Vec::new();
    for node in &graph.nodes {
        let const_fed = !node.inputs.is_empty()
            && node.inputs.iter().all(|i| graph.is_constant_value(i));
        if rules.is_prunable(&node.op_type) && const_fed {
            issues.push(IssueRecord::new(
                IssueCategory::StructureMismatch,
                &node.name,
                format!("constant-fed \"{}\" is removable by folding", node.op_type),
            ));
        } else if rules.translation_for(&node.op_type).is_some() {
            issues.push(IssueRecord::new(
                IssueCategory::OperatorMismatch,
                &node.name,
                format!("\"{}\" must be lowered to basic operators", node.op_type),
            ));
        } else if !registry.contains(&node.op_type) {
            issues.push(IssueRecord::new(
                IssueCategory::OperatorNotSupported,
                &node.name,
                format!("operator \"{}\" has no registered kernel", node.op_type),
            ));
        }
        let anomalies = spec_anomalies(node, rules);
        if !anomalies.is_empty() {
            issues.push(IssueRecord::new(
                IssueCategory::SpecificationMismatch,
                &node.name,
                anomalies.join("; "),
            ));
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::DType;
    use crate::graph::{ConstTensor, Node, TensorSpec};

    fn float_input(name: &str, shape: Vec<usize>) -> TensorSpec {
        TensorSpec {
            name: name.into(),
            dtype: DType::Float32,
            shape,
        }
    }

    #[test]
    fn supported_graph_yields_no_issues() {
        let mut g = Graph::new("clean");
        g.inputs.push(float_input("x", vec![1, 1, 4, 4]));
        g.constants.push(ConstTensor::new(
            "w",
            DType::Float32,
            vec![1, 1, 2, 2],
            vec![1.0; 4],
        ));
        g.nodes.push(
            Node::new("Conv2D", "conv", vec!["x", "w"], vec!["h"])
                .with_attr("strides", vec![1i64, 1])
                .with_attr("pads", vec![0i64, 0, 0, 0])
                .with_attr("dilations", vec![1i64, 1]),
        );
        g.nodes.push(Node::new("Relu", "act", vec!["h"], vec!["y"]));
        g.outputs.push("y".into());
        assert!(validate(&g).is_empty());
        // idempotent / pure
        assert_eq!(validate(&g), validate(&g));
    }

    #[test]
    fn constant_fed_dequantize_is_structure_mismatch() {
        let mut g = Graph::new("fig5b");
        g.inputs.push(float_input("x", vec![1, 2]));
        g.constants
            .push(ConstTensor::new("w_q", DType::Uint8, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        g.constants
            .push(ConstTensor::new("w_s", DType::Float32, vec![1], vec![0.1]));
        g.constants
            .push(ConstTensor::new("w_z", DType::Float32, vec![1], vec![3.0]));
        g.nodes.push(Node::new(
            "DequantizeLinear",
            "deq_w",
            vec!["w_q", "w_s", "w_z"],
            vec!["w_f"],
        ));
        g.nodes
            .push(Node::new("FullyConnected", "fc", vec!["x", "w_f"], vec!["y"]));
        g.outputs.push("y".into());
        let issues = validate(&g);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].category, IssueCategory::StructureMismatch);
        assert_eq!(issues[0].node_name, "deq_w");
    }

    #[test]
    fn activation_quantize_is_operator_mismatch() {
        let mut g = Graph::new("qdq");
        g.inputs.push(float_input("x", vec![1, 4]));
        g.constants
            .push(ConstTensor::new("s", DType::Float32, vec![1], vec![0.1]));
        g.constants
            .push(ConstTensor::new("z", DType::Float32, vec![1], vec![0.0]));
        g.nodes
            .push(Node::new("QuantizeLinear", "q", vec!["x", "s", "z"], vec!["y"]));
        g.outputs.push("y".into());
        let issues = validate(&g);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].category, IssueCategory::OperatorMismatch);
    }

    #[test]
    fn custom_op_is_not_supported() {
        let mut g = Graph::new("custom");
        g.inputs.push(float_input("x", vec![1, 4]));
        g.nodes
            .push(Node::new("TFL_L2_NORMALIZATION", "n", vec!["x"], vec!["y"]));
        g.outputs.push("y".into());
        let issues = validate(&g);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].category, IssueCategory::OperatorNotSupported);
        assert!(issues[0].detail.contains("TFL_L2_NORMALIZATION"));
    }

    #[test]
    fn attribute_anomalies_are_specification_mismatch() {
        let mut g = Graph::new("attrs");
        g.inputs.push(float_input("x", vec![1, 1, 4, 4]));
        g.constants.push(ConstTensor::new(
            "w",
            DType::Float32,
            vec![1, 1, 2, 2],
            vec![1.0; 4],
        ));
        // Conv2D with no attributes at all: three missing defaults, one record
        g.nodes.push(Node::new("Conv2D", "conv", vec!["x", "w"], vec!["h"]));
        g.nodes
            .push(Node::new("Softmax", "sm", vec!["h"], vec!["y"]).with_attr("axis", -1i64));
        g.outputs.push("y".into());
        let issues = validate(&g);
        assert_eq!(issues.len(), 2);
        assert!(issues
            .iter()
            .all(|i| i.category == IssueCategory::SpecificationMismatch));
        assert!(issues[0].detail.contains("strides"));
        assert!(issues[1].detail.contains("negative axis"));
    }

    #[test]
    fn category_serializes_screaming_snake() {
        let rec = IssueRecord::new(IssueCategory::OperatorNotSupported, "n", "d");
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"OPERATOR_NOT_SUPPORTED\""));
    }
}
