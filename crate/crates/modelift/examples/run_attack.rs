//! White-box attack protocol on the blobs benchmark: transform the
//! quantized classifier into a differentiable graph, then sweep BIM and PGD
//! over three ℓ₂ budgets and report fooling rates.
//!
//! Run with: cargo run --release --example run_attack

use modelift::attack::{fooling_rate, suggested_step_size, AttackConfig, AttackMethod};
use modelift::fixtures;
use modelift::rules::RuleSet;
use modelift::MatchConfig;
use std::time::Instant;

fn main() {
    let (quantized, dataset) = fixtures::blobs();
    println!(
        "blobs benchmark: {} samples, {} classes, input dim {}",
        dataset.samples.len(),
        dataset.num_classes,
        quantized.inputs[0].shape.iter().product::<usize>()
    );

    // the shipped graph is quantized and therefore not differentiable;
    // transform it first
    let (model, report) =
        modelift::transform(&quantized, RuleSet::builtin(), &MatchConfig::default())
            .expect("transform blobs fixture");
    assert!(report.success, "fixture must transform cleanly");
    println!(
        "transformed: {} issues resolved, {} nodes remain\n",
        report.issues.len(),
        model.nodes.len()
    );

    println!("{:<8} {:>8} {:>10} {:>6} {:>6} {:>14}", "method", "l2", "step", "m", "n", "fooling_rate");
    for method in [AttackMethod::Bim, AttackMethod::Pgd] {
        for budget in [0.01, 0.1, 1.0] {
            let cfg = AttackConfig {
                method,
                l2_budget: budget,
                steps: 400,
                step_size: suggested_step_size(budget),
                seed: 0,
                ..AttackConfig::default()
            };
            let start = Instant::now();
            let report = fooling_rate(&model, &dataset, &cfg, false).expect("attack run");
            println!(
                "{:<8} {:>8} {:>10} {:>6} {:>6} {:>13.4} ({:.1?})",
                format!("{method:?}"),
                budget,
                cfg.step_size,
                report.m,
                report.n,
                report.fooling_rate,
                start.elapsed()
            );
        }
    }

    // targeted attacks push toward (label + 1) mod num_classes
    let cfg = AttackConfig {
        method: AttackMethod::Pgd,
        l2_budget: 1.0,
        steps: 400,
        step_size: 0.04,
        seed: 0,
        ..AttackConfig::default()
    };
    let start = Instant::now();
    let targeted = fooling_rate(&model, &dataset, &cfg, true).expect("targeted attack run");
    println!(
        "\ntargeted PGD at l2=1.0: {}/{} reach their target class (p={:.4}, {:.1?})",
        targeted.n,
        targeted.m,
        targeted.fooling_rate,
        start.elapsed()
    );
}
