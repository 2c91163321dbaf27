//! Graph rewrite passes and the transformation driver.
//!
//! The driver runs the full repair pipeline over an extracted model:
//!
//! 1. **census** — classify every node's issues ([`crate::issues::validate_with`]);
//! 2. **prune** — fold constant-fed redundant structure ([`prune_pass`]);
//! 3. **translate** — lower translatable operators by template ([`translate_pass`]);
//! 4. **auto-match** — resolve leftover custom operators by name similarity
//!    plus functional validation ([`auto_match_pass`]);
//! 5. **normalize** — canonicalize attributes and input order ([`normalize_pass`]);
//! 6. **final validation** — the transform succeeded iff nothing is left.

pub mod auto_match;
pub mod normalize;
pub mod prune;
pub mod similarity;
pub mod translate;

pub use auto_match::{auto_match_pass, MatchConfig, Substitution};
pub use normalize::normalize_pass;
pub use prune::{prune_pass, FoldError};
pub use similarity::dice_similarity;
pub use translate::{translate_pass, TemplateError};

use crate::graph::Graph;
use crate::issues::{validate_with, IssueRecord};
use crate::kernels::KernelRegistry;
use crate::rules::RuleSet;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error(transparent)]
    Fold(#[from] FoldError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// What the driver found and did. `issues` holds one record per detected
/// problem, with `resolved_by` naming the pass that repaired it (unresolved
/// records keep `None`); `substitutions` lists the operator replacements the
/// auto-matcher committed. `success` means the final validation came back
/// clean.
#[derive(Debug, Clone, Serialize)]
pub struct TransformReport {
    pub success: bool,
    pub issues: Vec<IssueRecord>,
    pub substitutions: Vec<Substitution>,
}

/// Runs the whole pipeline. Always returns the rewritten graph, even when
/// some issues could not be resolved — `report.success` tells them apart.
///
/// The auto-matcher's candidate vocabulary is taken from `rules.supported`,
/// overriding whatever `cfg.supported` holds, so a custom rule table steers
/// every pass consistently.
pub fn transform(
    graph: &Graph,
    rules: &RuleSet,
    cfg: &MatchConfig,
) -> Result<(Graph, TransformReport), TransformError> {
    let registry = KernelRegistry::builtin();
    let census = validate_with(graph, rules, registry);

    let (g, prune_issues) = prune_pass(graph, rules)?;
    let (g, translate_issues) = translate_pass(&g, rules)?;
    let effective = MatchConfig {
        supported: rules.supported.clone(),
        ..cfg.clone()
    };
    let (g, match_issues, substitutions) = auto_match_pass(&g, &effective);
    let (g, norm_issues) = normalize_pass(&g, rules);

    let final_issues = validate_with(&g, rules, registry);
    let success = final_issues.is_empty();

    // Merge: pass records supersede their census counterpart (same node and
    // category) in place; records for problems only discovered mid-pipeline
    // are appended; anything the final validation still reports and nobody
    // claimed is appended unresolved.
    let mut issues = census;
    let from_passes = prune_issues
        .into_iter()
        .chain(translate_issues)
        .chain(match_issues)
        .chain(norm_issues);
    for record in from_passes {
        match issues
            .iter_mut()
            .find(|i| i.node_name == record.node_name && i.category == record.category)
        {
            Some(slot) => *slot = record,
            None => issues.push(record),
        }
    }
    for record in final_issues {
        let known = issues
            .iter()
            .any(|i| i.node_name == record.node_name && i.category == record.category);
        if !known {
            issues.push(record);
        }
    }

    Ok((g, TransformReport { success, issues, substitutions }))
}
