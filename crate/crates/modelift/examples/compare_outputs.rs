//! Output-equivalence metrics between a model and its transformed version:
//! range-scaled mean and max differences over seeded random probes, plus
//! top-1 agreement on a labeled dataset.
//!
//! Run with: cargo run --example compare_outputs

use modelift::equivalence::{agreement_rate, compare_models};
use modelift::fixtures;
use modelift::rules::RuleSet;
use modelift::MatchConfig;

fn main() {
    let original = fixtures::quantized_mlp();
    let (transformed, _) =
        modelift::transform(&original, RuleSet::builtin(), &MatchConfig::default())
            .expect("transform");

    let diff = compare_models(&original, &transformed, 100, 0).expect("compare");
    println!("quantized_mlp vs transformed ({} probes):", diff.probes);
    println!("  scaled mean diff: {:.3e}", diff.mean_scaled);
    println!("  scaled max diff:  {:.3e}", diff.max_scaled);
    for (name, output) in &diff.outputs {
        println!(
            "  output \"{name}\": mean {:.3e}, max {:.3e}, range r = {:.3}",
            output.mean_scaled, output.max_scaled, output.range_r
        );
    }

    // the same comparison against itself is exactly zero
    let zero = compare_models(&original, &original, 16, 0).expect("compare");
    println!("\nself-comparison: mean {} max {}", zero.mean_scaled, zero.max_scaled);

    // prediction-level agreement on the blobs benchmark
    let (blobs_model, blobs_data) = fixtures::blobs();
    let (blobs_transformed, _) =
        modelift::transform(&blobs_model, RuleSet::builtin(), &MatchConfig::default())
            .expect("transform blobs");
    let agreement = agreement_rate(&blobs_model, &blobs_transformed, &blobs_data)
        .expect("agreement");
    println!(
        "\nblobs: accuracy {:.4} (original) vs {:.4} (transformed), delta {:.4}, \
         prediction agreement {:.4}",
        agreement.accuracy_ref,
        agreement.accuracy_test,
        agreement.accuracy_delta,
        agreement.prediction_agreement
    );
}
