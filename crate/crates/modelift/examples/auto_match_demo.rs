//! Auto-matching an unknown operator: rank builtin kernels by Dice string
//! similarity, then accept the first candidate whose outputs stay within α
//! of the recorded reference traces.
//!
//! Run with: cargo run --example auto_match_demo

use modelift::fixtures;
use modelift::kernels::KernelRegistry;
use modelift::passes::{auto_match_pass, dice_similarity, MatchConfig};

fn main() {
    let graph = fixtures::l2norm_graph();
    let custom = &graph.nodes[0].op_type;
    println!("unknown operator: {custom}\n");

    let mut ranked: Vec<(f64, &str)> = KernelRegistry::builtin()
        .names()
        .into_iter()
        .map(|name| (dice_similarity(custom, name), name))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    println!("top candidates by Dice similarity:");
    for (score, name) in ranked.iter().take(5) {
        println!("  {score:.4}  {name}");
    }

    for alpha in [0.1, 0.0] {
        let cfg = MatchConfig {
            alpha,
            ..MatchConfig::default()
        };
        let (_, issues, subs) = auto_match_pass(&graph, &cfg);
        match subs.first() {
            Some(sub) => println!(
                "\nα = {alpha}: {} → {} (similarity {:.4}, trace distance {:.2e})",
                sub.old_op, sub.new_op, sub.similarity, sub.distance
            ),
            None => println!(
                "\nα = {alpha}: unresolved — {}",
                issues
                    .first()
                    .map(|i| i.detail.as_str())
                    .unwrap_or("no record")
            ),
        }
    }

    // sweep the threshold over the ten-graph suite
    println!("\ncustom-op suite resolution by α:");
    let suite = fixtures::custom_op_suite();
    for alpha in [0.0, 0.001, 0.01, 0.1, 100.0] {
        let cfg = MatchConfig {
            alpha,
            ..MatchConfig::default()
        };
        let resolved = suite
            .iter()
            .filter(|g| {
                let (_, issues, _) = auto_match_pass(g, &cfg);
                issues.iter().all(|i| i.resolved_by.is_some())
            })
            .count();
        println!("  α = {alpha:<7} resolved {resolved}/{}", suite.len());
    }
}
