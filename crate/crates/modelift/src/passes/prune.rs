//! Pruning pass: constant-fold the redundant structure compiled graphs carry
//! around stored weights.
//!
//! Any node whose op_type is on the prune list and whose inputs are all
//! constants is executed once through the interpreter and replaced by a
//! constant holding its result — the dequantize-weights branch
//! `(x − y₀) × y′` being the canonical case. Folding repeats to fixpoint so
//! chains (Transpose over a folded Dequantize, …) collapse fully; constants
//! that end up unreferenced are dropped.

use crate::graph::{ConstTensor, Graph};
use crate::interp::{canonical_inputs, materialize_constant, EvalError};
use crate::issues::{IssueCategory, IssueRecord};
use crate::kernels::KernelRegistry;
use crate::rules::RuleSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FoldError {
    #[error("folding node \"{node}\" failed: {source}")]
    Eval {
        node: String,
        #[source]
        source: EvalError,
    },
    #[error("folding node \"{node}\": kernel produced {got} outputs, node declares {want}")]
    Arity { node: String, got: usize, want: usize },
}

/// Runs the pruning pass with the given rule table. Returns the rewritten
/// graph and one resolved STRUCTURE_MISMATCH record per folded node.
pub fn prune_pass(graph: &Graph, rules: &RuleSet) -> Result<(Graph, Vec<IssueRecord>), FoldError> {
    let registry = KernelRegistry::builtin();
    let mut g = graph.clone();
    let mut issues = Vec::new();

    loop {
        let target = g.nodes.iter().position(|n| {
            rules.is_prunable(&n.op_type)
                && !n.inputs.is_empty()
                && n.inputs.iter().all(|i| g.is_constant_value(i))
        });
        let Some(idx) = target else { break };
        let node = g.nodes[idx].clone();

        let names = canonical_inputs(&node).map_err(|e| FoldError::Eval {
            node: node.name.clone(),
            source: e,
        })?;
        let mut args = Vec::with_capacity(names.len());
        for name in names {
            let c = g.constant(name).expect("checked constant-fed above");
            args.push(materialize_constant(c).map_err(|e| FoldError::Eval {
                node: node.name.clone(),
                source: e,
            })?);
        }
        let arg_refs: Vec<&_> = args.iter().collect();
        let kernel = registry
            .get(&node.op_type)
            .expect("rule table check guarantees prunable kernels exist");
        let outs = kernel(&arg_refs, &node.attributes).map_err(|e| FoldError::Eval {
            node: node.name.clone(),
            source: EvalError::Kernel {
                node: node.name.clone(),
                source: e,
            },
        })?;
        if outs.len() != node.outputs.len() {
            return Err(FoldError::Arity {
                node: node.name.clone(),
                got: outs.len(),
                want: node.outputs.len(),
            });
        }

        g.nodes.remove(idx);
        for (name, value) in node.outputs.iter().zip(outs) {
            g.constants.push(ConstTensor::new(
                name.clone(),
                value.dtype,
                value.shape,
                value.data,
            ));
        }
        issues.push(
            IssueRecord::new(
                IssueCategory::StructureMismatch,
                &node.name,
                format!(
                    "constant-fed \"{}\" folded into constant \"{}\"",
                    node.op_type,
                    node.outputs.join("\", \"")
                ),
            )
            .resolved("prune"),
        );
    }

    drop_dead_constants(&mut g);
    Ok((g, issues))
}

/// Removes constants no node input and no graph output references.
fn drop_dead_constants(g: &mut Graph) {
    let live: std::collections::BTreeSet<&str> = g
        .nodes
        .iter()
        .flat_map(|n| n.inputs.iter())
        .chain(g.outputs.iter())
        .map(String::as_str)
        .collect();
    g.constants.retain(|c| live.contains(c.name.as_str()));
}
