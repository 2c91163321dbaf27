//! Specification-normalization pass: rewrite nodes into the canonical
//! attribute form the exporter should have produced.
//!
//! Four families of fixes, all semantics-preserving (the interpreter applies
//! the same conventions implicitly, so evaluation before and after is
//! bit-identical):
//!
//! * fill missing attributes with their defaults (`strides`, `pads`, Gemm
//!   scalars, …), including copied defaults such as pool `strides` ←
//!   `kernel_shape`;
//! * rewrite negative axes to explicit non-negative form, using ranks
//!   inferred by probing the graph once with seeded random inputs;
//! * replace unsupported `Resize` interpolation modes with `"linear"`;
//! * inline `input_order` markers by physically reordering node inputs.

use crate::graph::{AttrValue, Graph};
use crate::interp::{canonical_inputs, evaluate_all_with, probe_inputs};
use crate::kernels::KernelRegistry;
use crate::issues::{IssueCategory, IssueRecord};
use crate::rules::RuleSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Canonicalizes every node covered by the normalization table. Returns the
/// rewritten graph and one resolved SPECIFICATION_MISMATCH record per
/// corrected node, listing everything that was fixed on it.
///
/// Rank-dependent fixes (negative axes) need one probe evaluation; when the
/// graph cannot be evaluated — e.g. it still contains unregistered custom
/// operators — those fixes are skipped and the anomaly is left for the final
/// validation to report.
pub fn normalize_pass(graph: &Graph, rules: &RuleSet) -> (Graph, Vec<IssueRecord>) {
    let mut g = graph.clone();
    let mut fixes: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut note = |name: &str, what: String| fixes.entry(name.to_string()).or_default().push(what);

    // Ordering and mode fixes first: they are what can stop the probe
    // evaluation used for rank inference below.
    for node in g.nodes.iter_mut() {
        if node.attributes.contains_key("input_order") {
            if let Ok(names) = canonical_inputs(node) {
                let reordered: Vec<String> = names.into_iter().map(String::from).collect();
                node.inputs = reordered;
                node.attributes.remove("input_order");
                note(&node.name, "inlined non-canonical input order".to_string());
            }
        }
        if node.op_type == "Resize" {
            if let Some(mode) = node.attributes.get("mode").and_then(|v| v.as_str()) {
                if mode != "nearest" && mode != "linear" {
                    let detail = format!("replaced interpolation mode \"{mode}\" with \"linear\"");
                    node.attributes.insert("mode".into(), AttrValue::from("linear"));
                    note(&node.name, detail);
                }
            }
        }
    }

    let probe = probe_inputs(&g, &mut ChaCha8Rng::seed_from_u64(0));
    let ranks: Option<BTreeMap<String, usize>> =
        evaluate_all_with(&g, &probe, KernelRegistry::builtin())
            .ok()
            .map(|values| values.into_iter().map(|(k, v)| (k, v.rank())).collect());

    for node in g.nodes.iter_mut() {
        let Some(rule) = rules.normalization_for(&node.op_type) else {
            continue;
        };
        for (key, value) in &rule.defaults {
            if !node.attributes.contains_key(key) {
                node.attributes.insert(key.clone(), value.clone());
                note(&node.name, format!("filled default \"{key}\""));
            }
        }
        for (dst, src) in &rule.copy_defaults {
            if !node.attributes.contains_key(dst) {
                if let Some(value) = node.attributes.get(src).cloned() {
                    node.attributes.insert(dst.clone(), value);
                    note(&node.name, format!("filled \"{dst}\" from \"{src}\""));
                }
            }
        }
        for key in &rule.axis_attrs {
            let Some(axis) = node.attributes.get(key).and_then(|v| v.as_i64()) else {
                continue;
            };
            if axis >= 0 {
                continue;
            }
            let anchor = canonical_inputs(node)
                .ok()
                .and_then(|names| names.first().map(|s| s.to_string()))
                .or_else(|| node.inputs.first().cloned());
            let rank = anchor
                .and_then(|name| ranks.as_ref().and_then(|r| r.get(&name).copied()));
            if let Some(rank) = rank {
                let fixed = axis + rank as i64;
                if (0..rank as i64).contains(&fixed) {
                    node.attributes.insert(key.clone(), AttrValue::from(fixed));
                    note(&node.name, format!("rewrote axis {axis} in \"{key}\" to {fixed}"));
                }
            }
        }
    }

    let issues = fixes
        .into_iter()
        .map(|(name, what)| {
            IssueRecord::new(IssueCategory::SpecificationMismatch, &name, what.join("; "))
                .resolved("normalize")
        })
        .collect();
    (g, issues)
}
