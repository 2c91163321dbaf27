//! Translation pass: lower semantically-equivalent-but-differently-spelled
//! operators onto the supported vocabulary by template expansion.
//!
//! Each rule in the table maps a source op_type to a small subgraph written
//! against placeholder names:
//!
//! * `$inN`  — the source node's N-th canonical input
//! * `$outN` — the source node's N-th output
//! * `%tmp`  — a fresh subgraph-local value, materialized as
//!   `{node.name}/tmp` (uniquified on collision)
//! * `$attr:KEY` — the source node's numeric attribute `KEY`, materialized
//!   as a new scalar float constant
//!
//! The canonical pair shipped in the builtin table rewrites quantization:
//! `QuantizeLinear(x, s, z)` becomes `Clip(Add(Div(x, s), z), 0, 255)` —
//! the affine map kept in float so gradients flow — and
//! `DequantizeLinear(x, s, z)` becomes `Mul(Sub(x, z), s)`.

use crate::dtype::DType;
use crate::graph::{ConstTensor, Graph, Node, ValidationError};
use crate::interp::{canonical_inputs, EvalError};
use crate::issues::{IssueCategory, IssueRecord};
use crate::rules::RuleSet;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template for \"{node}\" references {placeholder} but the node has {count} inputs")]
    MissingInput {
        node: String,
        placeholder: String,
        count: usize,
    },
    #[error("template for \"{node}\" references {placeholder} but the node has {count} outputs")]
    MissingOutput {
        node: String,
        placeholder: String,
        count: usize,
    },
    #[error("template for \"{node}\" needs numeric attribute \"{attr}\", which is absent")]
    MissingAttr { node: String, attr: String },
    #[error("node \"{node}\": {source}")]
    Inputs {
        node: String,
        #[source]
        source: EvalError,
    },
    #[error("expansion produced an invalid graph: {0}")]
    Check(#[from] ValidationError),
}

/// Rewrites every node that has a translation rule. Returns the new graph and
/// one resolved OPERATOR_MISMATCH record per expanded node.
pub fn translate_pass(
    graph: &Graph,
    rules: &RuleSet,
) -> Result<(Graph, Vec<IssueRecord>), TemplateError> {
    let mut g = graph.clone();
    let mut issues = Vec::new();
    let mut used = g.value_names();

    let mut idx = 0;
    while idx < g.nodes.len() {
        let Some(rule) = rules.translation_for(&g.nodes[idx].op_type) else {
            idx += 1;
            continue;
        };
        let rule = rule.clone();
        let node = g.nodes.remove(idx);
        let canonical: Vec<String> = canonical_inputs(&node)
            .map_err(|e| TemplateError::Inputs {
                node: node.name.clone(),
                source: e,
            })?
            .into_iter()
            .map(String::from)
            .collect();

        // First bind every %tmp and $attr:KEY the template mentions so all
        // references within the expansion agree on the chosen fresh names.
        let mut locals: std::collections::BTreeMap<String, String> = Default::default();
        let mut new_consts: Vec<ConstTensor> = Vec::new();
        for t in &rule.template {
            for token in t.inputs.iter().chain(t.outputs.iter()) {
                if let Some(tmp) = token.strip_prefix('%') {
                    locals
                        .entry(token.clone())
                        .or_insert_with(|| fresh_name(&node.name, tmp, &mut used));
                } else if let Some(key) = token.strip_prefix("$attr:") {
                    if locals.contains_key(token) {
                        continue;
                    }
                    let value = node
                        .attributes
                        .get(key)
                        .and_then(|a| a.as_f64())
                        .ok_or_else(|| TemplateError::MissingAttr {
                            node: node.name.clone(),
                            attr: key.to_string(),
                        })?;
                    let cname = fresh_name(&node.name, key, &mut used);
                    new_consts.push(ConstTensor::new(cname.clone(), DType::Float32, vec![1], vec![value]));
                    locals.insert(token.clone(), cname);
                }
            }
        }

        let resolve = |token: &str| -> Result<String, TemplateError> {
            if let Some(bound) = locals.get(token) {
                return Ok(bound.clone());
            }
            if let Some(n) = token.strip_prefix("$in") {
                if let Ok(n) = n.parse::<usize>() {
                    return canonical.get(n).cloned().ok_or_else(|| TemplateError::MissingInput {
                        node: node.name.clone(),
                        placeholder: token.to_string(),
                        count: canonical.len(),
                    });
                }
            }
            if let Some(n) = token.strip_prefix("$out") {
                if let Ok(n) = n.parse::<usize>() {
                    return node.outputs.get(n).cloned().ok_or_else(|| {
                        TemplateError::MissingOutput {
                            node: node.name.clone(),
                            placeholder: token.to_string(),
                            count: node.outputs.len(),
                        }
                    });
                }
            }
            // Bare names pass through so templates may reference graph values
            // directly (useful in handwritten custom tables).
            Ok(token.to_string())
        };

        let mut expansion = Vec::with_capacity(rule.template.len());
        for t in &rule.template {
            let inputs = t.inputs.iter().map(|s| resolve(s)).collect::<Result<Vec<_>, _>>()?;
            let outputs = t.outputs.iter().map(|s| resolve(s)).collect::<Result<Vec<_>, _>>()?;
            expansion.push(Node {
                op_type: t.op_type.clone(),
                name: fresh_name(&node.name, &t.name, &mut used),
                inputs,
                outputs,
                attributes: t.attributes.clone(),
            });
        }

        let count = expansion.len();
        g.constants.extend(new_consts);
        g.nodes.splice(idx..idx, expansion);
        issues.push(
            IssueRecord::new(
                IssueCategory::OperatorMismatch,
                &node.name,
                format!(
                    "\"{}\" lowered to [{}] via translation table",
                    node.op_type,
                    rule.template
                        .iter()
                        .map(|t| t.op_type.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            )
            .resolved("translate"),
        );
        idx += count;
    }

    g.check()?;
    Ok((g, issues))
}

/// Returns `{base}/{suffix}`, appending `.1`, `.2`, … until the name is
/// unused, and marks it used.
fn fresh_name(base: &str, suffix: &str, used: &mut BTreeSet<String>) -> String {
    let mut candidate = format!("{base}/{suffix}");
    let mut k = 0;
    while used.contains(&candidate) {
        k += 1;
        candidate = format!("{base}/{suffix}.{k}");
    }
    used.insert(candidate.clone());
    candidate
}
