//! Writes the bundled fixture models and datasets to disk so the CLI can be
//! exercised on real files.
//!
//! Run with: cargo run --example generate_fixtures [-- <output-dir>]
//!
//! Produces, under the output directory (default `fixtures/`):
//!   quantized_mlp.json   an on-device-style quantized MLP (4 issues)
//!   blobs_model.json     the quantized blobs classifier
//!   blobs_dataset.json   800 labeled samples for the attack protocol
//!   l2norm_custom.json   a custom-operator graph with reference traces
//!   custom_suite/        ten traced custom-operator graphs (α study)

use modelift::dataset::Dataset;
use modelift::fixtures;
use modelift::mgf::save_mgf;
use std::path::PathBuf;

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures"));
    std::fs::create_dir_all(dir.join("custom_suite")).expect("create fixture directory");

    let mlp = fixtures::quantized_mlp();
    save_mgf(&mlp, dir.join("quantized_mlp.json")).expect("write quantized_mlp");

    let (blobs_model, blobs_data) = fixtures::blobs();
    save_mgf(&blobs_model, dir.join("blobs_model.json")).expect("write blobs model");
    save_dataset(&blobs_data, dir.join("blobs_dataset.json"));

    save_mgf(&fixtures::l2norm_graph(), dir.join("l2norm_custom.json"))
        .expect("write l2norm_custom");

    for graph in fixtures::custom_op_suite() {
        let path = dir.join("custom_suite").join(format!("{}.json", graph.name));
        save_mgf(&graph, path).expect("write suite graph");
    }

    println!("fixtures written to {}", dir.display());
    println!("try:");
    println!("  cargo run --bin modelift -- inspect {}/quantized_mlp.json", dir.display());
    println!(
        "  cargo run --bin modelift -- transform {0}/quantized_mlp.json {0}/quantized_mlp.debuggable.json",
        dir.display()
    );
    println!(
        "  cargo run --bin modelift -- diff {0}/quantized_mlp.json {0}/quantized_mlp.debuggable.json",
        dir.display()
    );
    println!(
        "  cargo run --bin modelift -- transform {0}/blobs_model.json {0}/blobs_model.debuggable.json",
        dir.display()
    );
    println!(
        "  cargo run --bin modelift -- attack {0}/blobs_model.debuggable.json {0}/blobs_dataset.json --l2 1.0",
        dir.display()
    );
}

fn save_dataset(data: &Dataset, path: PathBuf) {
    data.save(&path).expect("write dataset");
}
