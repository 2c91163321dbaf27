//! End-to-end tests of the `modelift` binary: exit codes, JSON payloads on
//! stdout, human summaries on stderr, and rule-table resolution.

use modelift::dataset::{Dataset, Sample};
use modelift::fixtures;
use modelift::mgf::save_mgf;
use modelift::Graph;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

struct Cli {
    dir: tempfile::TempDir,
}

impl Cli {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().expect("tempdir") }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn save_graph(&self, graph: &Graph, name: &str) -> PathBuf {
        let p = self.path(name);
        save_mgf(graph, &p).expect("save fixture graph");
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_with_env(args, &[])
    }

    fn run_with_env(&self, args: &[&str], env: &[(&str, &Path)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_modelift"));
        cmd.args(args);
        cmd.env_remove("MODELIFT_RULES");
        for (key, value) in env {
            cmd.env(key, value);
        }
        cmd.output().expect("spawn modelift")
    }
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Tiny valid dataset matching the quantized MLP's [1, 8] input.
fn mlp_dataset() -> Dataset {
    Dataset {
        num_classes: 4,
        samples: (0..3)
            .map(|i| Sample {
                input: (0..8).map(|j| ((i * 8 + j) as f64) / 24.0).collect(),
                label: i % 4,
            })
            .collect(),
    }
}

#[test]
fn transform_success_writes_graph_report_and_json() {
    let cli = Cli::new();
    let input = cli.save_graph(&fixtures::quantized_mlp(), "mlp.json");
    let output = cli.path("mlp.debuggable.json");
    let report_path = cli.path("report.json");

    let out = cli.run(&[
        "transform",
        input.to_str().unwrap(),
        output.to_str().unwrap(),
        "--report",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);

    let json = stdout_json(&out);
    assert_eq!(json["command"], "transform");
    assert_eq!(json["exit_code"], 0);
    assert_eq!(json["payload"]["success"], true);
    assert!(json["payload"]["issues"].as_array().map_or(0, Vec::len) >= 4);

    // the rewritten model parses back and is free of quantization operators
    let rewritten = modelift::mgf::load_mgf(&output).expect("rewritten model parses");
    assert!(rewritten
        .nodes
        .iter()
        .all(|n| n.op_type != "QuantizeLinear" && n.op_type != "DequantizeLinear"));

    // the side report matches the payload
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report, json["payload"]);

    // human summary lands on stderr, not stdout
    assert!(stderr_text(&out).contains("issue(s)"));
}

#[test]
fn transform_semantic_failure_exits_three_but_writes_graph() {
    let cli = Cli::new();
    let input = cli.save_graph(&fixtures::l2norm_graph(), "custom.json");
    let output = cli.path("custom.out.json");

    let out = cli.run(&[
        "transform",
        input.to_str().unwrap(),
        output.to_str().unwrap(),
        "--alpha",
        "0",
    ]);
    assert_eq!(exit_code(&out), 3);

    let json = stdout_json(&out);
    assert_eq!(json["exit_code"], 3);
    assert_eq!(json["payload"]["success"], false);

    // even a failed transform leaves the partial graph for inspection
    assert!(output.exists());
    modelift::mgf::load_mgf(&output).expect("partial graph still parses");
}

#[test]
fn transform_missing_input_exits_two() {
    let cli = Cli::new();
    let output = cli.path("never.json");
    let out = cli.run(&["transform", "no-such-file.json", output.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let json = stdout_json(&out);
    assert_eq!(json["exit_code"], 2);
    assert!(json["payload"]["error"].as_str().unwrap().contains("no-such-file.json"));
    assert!(!output.exists());
}

#[test]
fn diff_of_identical_models_is_zero() {
    let cli = Cli::new();
    let a = cli.save_graph(&fixtures::quantized_mlp(), "a.json");
    let out = cli.run(&["diff", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0);
    let json = stdout_json(&out);
    assert_eq!(json["payload"]["mean_scaled"], 0.0);
    assert_eq!(json["payload"]["max_scaled"], 0.0);
}

#[test]
fn diff_of_incompatible_models_exits_two() {
    let cli = Cli::new();
    let a = cli.save_graph(&fixtures::quantized_mlp(), "a.json");
    let b = cli.save_graph(&fixtures::l2norm_graph(), "b.json");
    let out = cli.run(&["diff", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let json = stdout_json(&out);
    assert!(json["payload"]["error"].as_str().unwrap().contains("input"));
}

#[test]
fn attack_on_unprepared_model_names_the_blocker() {
    let cli = Cli::new();
    let model = cli.save_graph(&fixtures::quantized_mlp(), "mlp.json");
    let data = cli.path("data.json");
    mlp_dataset().save(&data).unwrap();

    let out = cli.run(&["attack", model.to_str().unwrap(), data.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let error = stdout_json(&out)["payload"]["error"]
        .as_str()
        .expect("error string")
        .to_owned();
    assert!(error.contains("QuantizeLinear"), "got: {error}");
    assert!(error.contains("modelift transform"), "got: {error}");
}

#[test]
fn attack_on_transformed_model_reports_fooling_rate() {
    let cli = Cli::new();
    let (graph, data) = fixtures::blobs();
    let model = cli.save_graph(&graph, "blobs.json");
    let prepared = cli.path("blobs.debuggable.json");
    let small = Dataset {
        num_classes: data.num_classes,
        samples: data.samples[..10].to_vec(),
    };
    let data_path = cli.path("data.json");
    small.save(&data_path).unwrap();

    let out = cli.run(&["transform", model.to_str().unwrap(), prepared.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0);

    let out = cli.run(&[
        "attack",
        prepared.to_str().unwrap(),
        data_path.to_str().unwrap(),
        "--method",
        "bim",
        "--l2",
        "1.0",
        "--steps",
        "50",
        "--seed",
        "1",
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
    let json = stdout_json(&out);
    assert_eq!(json["payload"]["method"], "bim");
    assert_eq!(json["payload"]["m"], 10);
    let rate = json["payload"]["fooling_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    assert!(stderr_text(&out).contains("fooled"));
}

#[test]
fn inspect_census_matches_fixture_taxonomy() {
    let cli = Cli::new();
    let mlp = cli.save_graph(&fixtures::quantized_mlp(), "mlp.json");
    let out = cli.run(&["inspect", mlp.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0);
    let issues = stdout_json(&out)["payload"].as_array().unwrap().clone();
    let categories: Vec<&str> = issues
        .iter()
        .map(|i| i["category"].as_str().unwrap())
        .collect();
    assert_eq!(
        categories
            .iter()
            .filter(|c| **c == "OPERATOR_MISMATCH")
            .count(),
        2
    );
    assert_eq!(
        categories
            .iter()
            .filter(|c| **c == "STRUCTURE_MISMATCH")
            .count(),
        2
    );

    let custom = cli.save_graph(&fixtures::l2norm_graph(), "custom.json");
    let out = cli.run(&["inspect", custom.to_str().unwrap()]);
    let issues = stdout_json(&out)["payload"].as_array().unwrap().clone();
    assert!(issues
        .iter()
        .any(|i| i["category"] == "OPERATOR_NOT_SUPPORTED"));

    // a transformed model inspects clean
    let prepared = cli.path("mlp.debuggable.json");
    cli.run(&["transform", mlp.to_str().unwrap(), prepared.to_str().unwrap()]);
    let out = cli.run(&["inspect", prepared.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0);
    assert_eq!(stdout_json(&out)["payload"], serde_json::json!([]));
    assert!(stderr_text(&out).contains("no issues"));
}

#[test]
fn rule_table_resolution_order() {
    let cli = Cli::new();
    let mlp = cli.save_graph(&fixtures::quantized_mlp(), "mlp.json");
    let mlp_str = mlp.to_str().unwrap();

    // a rule directory holding a pristine copy of the builtin table
    let rule_dir = cli.path("rules");
    std::fs::create_dir(&rule_dir).unwrap();
    let builtin = serde_json::to_string_pretty(modelift::rules::RuleSet::builtin()).unwrap();
    std::fs::write(rule_dir.join("rules.json"), builtin).unwrap();

    // MODELIFT_RULES accepts a directory (containing rules.json) or a file
    let out = cli.run_with_env(&["inspect", mlp_str], &[("MODELIFT_RULES", &rule_dir)]);
    assert_eq!(exit_code(&out), 0);
    let file = rule_dir.join("rules.json");
    let out = cli.run_with_env(&["inspect", mlp_str], &[("MODELIFT_RULES", &file)]);
    assert_eq!(exit_code(&out), 0);

    // a broken env var path is an input error
    let missing = cli.path("nowhere");
    let out = cli.run_with_env(&["inspect", mlp_str], &[("MODELIFT_RULES", &missing)]);
    assert_eq!(exit_code(&out), 2);

    // but --rules wins over the env var
    let out = cli.run_with_env(
        &["inspect", mlp_str, "--rules", rule_dir.to_str().unwrap()],
        &[("MODELIFT_RULES", &missing)],
    );
    assert_eq!(exit_code(&out), 0);
}

#[test]
fn usage_errors_exit_two() {
    let cli = Cli::new();
    let out = cli.run(&["no-such-command"]);
    assert_eq!(exit_code(&out), 2);
    let out = cli.run(&["transform"]); // missing required paths
    assert_eq!(exit_code(&out), 2);
}
