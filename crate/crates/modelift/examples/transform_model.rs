//! The full rewrite pipeline on the quantized MLP fixture: constant-fed
//! dequantize chains fold away, the activation quantize/dequantize pair
//! lowers to plain arithmetic, and the report accounts for every issue.
//!
//! Run with: cargo run --example transform_model

use modelift::fixtures;
use modelift::rules::RuleSet;
use modelift::MatchConfig;

fn main() {
    let original = fixtures::quantized_mlp();
    println!("before ({} nodes):", original.nodes.len());
    for node in &original.nodes {
        println!("  {:<18} {}", node.op_type, node.name);
    }

    let (transformed, report) =
        modelift::transform(&original, RuleSet::builtin(), &MatchConfig::default())
            .expect("transform");

    println!("\nafter ({} nodes):", transformed.nodes.len());
    for node in &transformed.nodes {
        println!("  {:<18} {}", node.op_type, node.name);
    }

    println!("\nreport: success = {}", report.success);
    for issue in &report.issues {
        println!(
            "  [{}] {} — {} (resolved by: {})",
            issue.category,
            issue.node_name,
            issue.detail,
            issue.resolved_by.as_deref().unwrap_or("nobody")
        );
    }
}
