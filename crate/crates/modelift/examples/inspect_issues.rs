//! Classifies why an on-device model is not debuggable: every node lands in
//! at most one transformability category (redundant structure, operator
//! needing lowering, operator with no kernel) plus an independent
//! specification category for attribute anomalies.
//!
//! Run with: cargo run --example inspect_issues

use modelift::fixtures;
use modelift::issues::validate;

fn main() {
    for graph in [fixtures::quantized_mlp(), fixtures::l2norm_graph()] {
        println!("model \"{}\" ({} nodes)", graph.name, graph.nodes.len());
        let issues = validate(&graph);
        if issues.is_empty() {
            println!("  debuggable: no issues\n");
            continue;
        }
        for issue in &issues {
            println!(
                "  [{}] node \"{}\": {}",
                issue.category, issue.node_name, issue.detail
            );
        }
        println!();
    }

    // a graph that comes back clean
    let transformed = modelift::transform(
        &fixtures::quantized_mlp(),
        modelift::rules::RuleSet::builtin(),
        &modelift::MatchConfig::default(),
    )
    .expect("transform")
    .0;
    println!(
        "after transform, \"{}\" reports {} issue(s)",
        transformed.name,
        validate(&transformed).len()
    );
}
