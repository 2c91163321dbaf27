//! Rule tables driving the rewrite passes.
//!
//! The prune list, translation templates, supported-operator list L and the
//! attribute-normalization table are data, not code: a default set ships embedded
//! in the binary (`data/rules.json`) and an alternate set can be loaded from
//! disk (CLI `--rules` flag or the `MODELIFT_RULES` directory).

use crate::graph::{AttrValue, Attrs};
use crate::kernels::KernelRegistry;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

const BUILTIN_RULES: &str = include_str!("../data/rules.json");

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid rule table: {0}")]
    Invalid(String),
}

/// One node of a translation template.
///
/// Input/output entries are references: `$inN` / `$outN` bind to the source
/// node's canonical inputs and outputs, `%name` introduces a subgraph-local
/// temporary, and `$attr:KEY` materializes the source node's attribute `KEY`
/// as a new scalar constant.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TemplateNode {
    pub op_type: String,
    /// Suffix for the expanded node's name: `{source_node}/{name}`.
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: Attrs,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TranslationRule {
    pub source: String,
    pub template: Vec<TemplateNode>,
}

/// Canonicalization entry for one operator: attributes to fill when missing
/// (`defaults` literally, `copy_defaults` from a sibling attribute) and
/// attributes holding axes that must be rewritten to non-negative form.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NormalizeRule {
    pub op: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub defaults: BTreeMap<String, AttrValue>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub copy_defaults: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub axis_attrs: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RuleSet {
    /// Op types eligible for constant folding.
    pub prune: Vec<String>,
    pub translate: Vec<TranslationRule>,
    /// The supported-operator list L: the differentiable target vocabulary.
    pub supported: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub normalize: Vec<NormalizeRule>,
}

impl RuleSet {
    /// The embedded default tables.
    pub fn builtin() -> &'static RuleSet {
        static RULES: OnceLock<RuleSet> = OnceLock::new();
        RULES.get_or_init(|| {
            let rules: RuleSet = serde_json::from_str(BUILTIN_RULES).expect("embedded rules.json");
            rules.check(KernelRegistry::builtin()).expect("embedded rules.json consistency");
            rules
        })
    }

    pub fn from_str_checked(json: &str) -> Result<RuleSet, RuleError> {
        let rules: RuleSet = serde_json::from_str(json)?;
        rules.check(KernelRegistry::builtin())?;
        Ok(rules)
    }

    /// Loads `path` directly when it is a file, or `path/rules.json` when it
    /// is a directory (the `MODELIFT_RULES` convention).
    pub fn from_path(path: impl AsRef<Path>) -> Result<RuleSet, RuleError> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join("rules.json") } else { path.to_path_buf() };
        Self::from_str_checked(&std::fs::read_to_string(file)?)
    }

    pub fn is_prunable(&self, op_type: &str) -> bool {
        self.prune.iter().any(|p| p == op_type)
    }

    pub fn is_supported(&self, op_type: &str) -> bool {
        self.supported.iter().any(|p| p == op_type)
    }

    pub fn translation_for(&self, op_type: &str) -> Option<&TranslationRule> {
        self.translate.iter().find(|r| r.source == op_type)
    }

    pub fn normalization_for(&self, op_type: &str) -> Option<&NormalizeRule> {
        self.normalize.iter().find(|r| r.op == op_type)
    }

    /// Cross-checks the tables against a kernel registry: prunable and
    /// supported ops must be executable, templates must expand to supported
    /// kernels and wire `$out0`.
    pub fn check(&self, registry: &KernelRegistry) -> Result<(), RuleError> {
        for op in &self.prune {
            if !registry.contains(op) {
                return Err(RuleError::Invalid(format!(
                    "prune list entry \"{op}\" has no registered kernel (folding needs execution)"
                )));
            }
        }
        for op in &self.supported {
            if !registry.contains(op) {
                return Err(RuleError::Invalid(format!(
                    "supported list entry \"{op}\" has no registered kernel"
                )));
            }
        }
        for rule in &self.translate {
            if rule.template.is_empty() {
                return Err(RuleError::Invalid(format!(
                    "translation rule for \"{}\" has an empty template",
                    rule.source
                )));
            }
            let mut produces_out0 = false;
            for tn in &rule.template {
                if !self.is_supported(&tn.op_type) {
                    return Err(RuleError::Invalid(format!(
                        "translation rule for \"{}\" emits \"{}\", which is not in the supported list",
                        rule.source, tn.op_type
                    )));
                }
                produces_out0 |= tn.outputs.iter().any(|o| o == "$out0");
            }
            if !produces_out0 {
                return Err(RuleError::Invalid(format!(
                    "translation rule for \"{}\" never produces $out0",
                    rule.source
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_rules_are_consistent() {
        let rules = RuleSet::builtin();
        assert_eq!(rules.supported.len(), 20);
        assert!(rules.is_prunable("DequantizeLinear"));
        assert!(rules.is_prunable("Cast"));
        assert!(rules.translation_for("QuantizeLinear").is_some());
        assert!(rules.translation_for("DequantizeLinear").is_some());
        assert!(!rules.is_supported("QuantizeLinear"));
        assert!(!rules.is_supported("ArgMax"));
        assert!(rules.is_supported("LpNormalization"));
        assert!(rules.normalization_for("Conv2D").is_some());
    }

    #[test]
    fn bad_tables_are_rejected() {
        let json = r#"{"prune": ["NoSuchOp"], "translate": [], "supported": []}"#;
        assert!(matches!(RuleSet::from_str_checked(json), Err(RuleError::Invalid(_))));
        let json = r#"{"prune": [], "translate": [
            {"source": "X", "template": [
                {"op_type": "Relu", "name": "r", "inputs": ["$in0"], "outputs": ["%t"]}
            ]}], "supported": ["Relu"]}"#;
        // template never wires $out0
        assert!(matches!(RuleSet::from_str_checked(json), Err(RuleError::Invalid(_))));
    }

    #[test]
    fn round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.json");
        std::fs::write(&path, BUILTIN_RULES).unwrap();
        // file path and directory path both resolve
        let a = RuleSet::from_path(&path).unwrap();
        let b = RuleSet::from_path(dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(&a, RuleSet::builtin());
    }
}
