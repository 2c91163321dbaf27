//! Command-line front end: `transform`, `diff`, `attack`, `inspect`.
//!
//! Contract: the machine-readable [`CliReport`] JSON goes to stdout, a
//! one-line human summary goes to stderr, and the exit code is 0 for
//! success, 2 for input errors (unreadable files, invalid models,
//! incompatible interfaces, non-differentiable graphs), and 3 for semantic
//! failures (a transform that leaves unresolved issues). Identical
//! invocations with a fixed `--seed` produce byte-identical stdout.
//!
//! The rule tables come from `--rules` when given, else from a directory
//! named by the `MODELIFT_RULES` environment variable, else from the
//! embedded defaults.

use crate::attack::{fooling_rate, suggested_step_size, AttackConfig, AttackError, AttackMethod};
use crate::autodiff::{is_differentiable, GradError};
use crate::dataset::Dataset;
use crate::equivalence::compare_models;
use crate::issues::validate_with;
use crate::kernels::KernelRegistry;
use crate::mgf::{load_mgf, save_mgf};
use crate::passes::{transform, MatchConfig};
use crate::rules::RuleSet;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::borrow::Cow;
use std::path::{Path, PathBuf};

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_INPUT_ERROR: i32 = 2;
pub const EXIT_SEMANTIC_FAILURE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "modelift",
    version,
    about = "Lift on-device inference models into debuggable, differentiable graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rewrite a model into debuggable form (prune, translate, auto-match,
    /// normalize) and write the result
    Transform(TransformArgs),
    /// Compare two models on seeded random probes (scaled mean/max diffs)
    Diff(DiffArgs),
    /// Run the BIM/PGD attack protocol over a labeled dataset
    Attack(AttackArgs),
    /// Print the issue census of a model without changing it
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    /// Input model (MGF JSON)
    pub input: PathBuf,
    /// Where to write the transformed model
    pub output: PathBuf,
    /// Functional-equivalence threshold for auto-matching
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Probe sets per auto-match candidate
    #[arg(long, default_value_t = 100)]
    pub probes: usize,
    /// Seed for probe generation
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Alternate rule tables (file, or directory containing rules.json)
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Also write the TransformReport JSON here
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    /// Reference model (defines the output range r)
    pub a: PathBuf,
    /// Model under test
    pub b: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Model to attack (must be differentiable — transform it first)
    pub model: PathBuf,
    /// Labeled dataset JSON ({"num_classes": .., "samples": [..]})
    pub data: PathBuf,
    /// bim or pgd
    #[arg(long, default_value = "pgd")]
    pub method: String,
    /// ℓ₂ perturbation budget
    #[arg(long, default_value_t = 1.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    /// Per-step ℓ₂ step size (default: protocol value for the budget)
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Push each sample toward (label+1) mod num_classes instead of away
    /// from its own label
    #[arg(long)]
    pub targeted: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Model to classify issues for (MGF JSON)
    pub model: PathBuf,
    /// Alternate rule tables (file, or directory containing rules.json)
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

/// The stdout document every subcommand emits.
#[derive(Debug, Serialize)]
pub struct CliReport {
    pub command: String,
    pub exit_code: i32,
    pub payload: serde_json::Value,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT_ERROR,
            message: message.into(),
        }
    }
}

/// Executes the parsed command, prints the JSON report to stdout and the
/// human summary to stderr, and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let command = match cli.command {
        Command::Transform(_) => "transform",
        Command::Diff(_) => "diff",
        Command::Attack(_) => "attack",
        Command::Inspect(_) => "inspect",
    };
    let (exit_code, payload, summary) = match dispatch(cli.command) {
        Ok((code, payload, summary)) => (code, payload, summary),
        Err(f) => (
            f.code,
            serde_json::json!({ "error": f.message }),
            format!("error: {}", f.message),
        ),
    };
    let report = CliReport {
        command: command.to_string(),
        exit_code,
        payload,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serialization")
    );
    eprintln!("{summary}");
    exit_code
}

type Outcome = Result<(i32, serde_json::Value, String), Failure>;

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Transform(args) => cmd_transform(args),
        Command::Diff(args) => cmd_diff(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

fn load_model(path: &Path) -> Result<crate::Graph, Failure> {
    load_mgf(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// `--rules` beats `MODELIFT_RULES` beats the embedded tables.
fn load_rules(flag: Option<&Path>) -> Result<Cow<'static, RuleSet>, Failure> {
    if let Some(path) = flag {
        return RuleSet::from_path(path)
            .map(Cow::Owned)
            .map_err(|e| Failure::input(format!("rules {}: {e}", path.display())));
    }
    if let Ok(dir) = std::env::var("MODELIFT_RULES") {
        return RuleSet::from_path(&dir)
            .map(Cow::Owned)
            .map_err(|e| Failure::input(format!("MODELIFT_RULES {dir}: {e}")));
    }
    Ok(Cow::Borrowed(RuleSet::builtin()))
}

fn to_json(value: impl Serialize) -> serde_json::Value {
    serde_json::to_value(value).expect("report serialization")
}

fn cmd_transform(args: TransformArgs) -> Outcome {
    let graph = load_model(&args.input)?;
    let rules = load_rules(args.rules.as_deref())?;
    let cfg = MatchConfig {
        alpha: args.alpha,
        probe_count: args.probes,
        seed: args.seed,
        ..MatchConfig::default()
    };
    let (out, report) = transform(&graph, &rules, &cfg)
        .map_err(|e| Failure::input(format!("{}: {e}", args.input.display())))?;
    // write the graph even on semantic failure so it can be inspected
    save_mgf(&out, &args.output)
        .map_err(|e| Failure::input(format!("{}: {e}", args.output.display())))?;
    if let Some(report_path) = &args.report {
        let mut text = serde_json::to_string_pretty(&report).expect("report serialization");
        text.push('\n');
        std::fs::write(report_path, text)
            .map_err(|e| Failure::input(format!("{}: {e}", report_path.display())))?;
    }
    let unresolved = report
        .issues
        .iter()
        .filter(|i| i.resolved_by.is_none())
        .count();
    let summary = format!(
        "{}: {} issue(s), {} unresolved; wrote {}",
        args.input.display(),
        report.issues.len(),
        unresolved,
        args.output.display()
    );
    let code = if report.success {
        EXIT_SUCCESS
    } else {
        EXIT_SEMANTIC_FAILURE
    };
    Ok((code, to_json(report), summary))
}

fn cmd_diff(args: DiffArgs) -> Outcome {
    let a = load_model(&args.a)?;
    let b = load_model(&args.b)?;
    let report = compare_models(&a, &b, args.probes, args.seed)
        .map_err(|e| Failure::input(e.to_string()))?;
    let summary = format!(
        "{} vs {}: scaled mean diff {:.6}, scaled max diff {:.6} over {} probes",
        args.a.display(),
        args.b.display(),
        report.mean_scaled,
        report.max_scaled,
        report.probes
    );
    Ok((EXIT_SUCCESS, to_json(report), summary))
}

/// First node, in graph order, that sits on a path to an output and has no
/// registered gradient. Side branches that never feed an output are ignored,
/// matching what the reverse walk would touch.
fn first_non_differentiable(graph: &crate::graph::Graph) -> Option<&crate::graph::Node> {
    let mut needed: std::collections::BTreeSet<&str> =
        graph.outputs.iter().map(String::as_str).collect();
    loop {
        let mut grew = false;
        for node in &graph.nodes {
            if node.outputs.iter().any(|o| needed.contains(o.as_str())) {
                for input in &node.inputs {
                    grew |= needed.insert(input.as_str());
                }
            }
        }
        if !grew {
            break;
        }
    }
    graph.nodes.iter().find(|n| {
        n.outputs.iter().any(|o| needed.contains(o.as_str())) && !is_differentiable(&n.op_type)
    })
}

fn cmd_attack(args: AttackArgs) -> Outcome {
    let model = load_model(&args.model)?;
    let dataset = Dataset::load(&args.data)
        .map_err(|e| Failure::input(format!("{}: {e}", args.data.display())))?;
    let method: AttackMethod = args.method.parse().map_err(Failure::input)?;
    let cfg = AttackConfig {
        method,
        l2_budget: args.l2,
        steps: args.steps,
        step_size: args.step_size.unwrap_or_else(|| suggested_step_size(args.l2)),
        input_clip: (0.0, 1.0),
        seed: args.seed,
    };
    // Report the first offending node in graph order, so the message points
    // at the root cause rather than whichever node the reverse walk reaches
    // first (e.g. the QuantizeLinear opening a QDQ chain, not a later
    // DequantizeLinear).
    if let Some(node) = first_non_differentiable(&model) {
        return Err(Failure::input(format!(
            "graph is not differentiable: operator \"{}\" at node \"{}\" \
             has no gradient; run `modelift transform` first",
            node.op_type, node.name
        )));
    }
    let report = fooling_rate(&model, &dataset, &cfg, args.targeted).map_err(|e| match e {
        AttackError::Grad(GradError::NonDifferentiable { ref op_type, ref node }) => {
            Failure::input(format!(
                "graph is not differentiable: operator \"{op_type}\" at node \"{node}\" \
                 has no gradient; run `modelift transform` first"
            ))
        }
        other => Failure::input(other.to_string()),
    })?;
    let summary = format!(
        "{} {:?} l2={} steps={}: fooled {}/{} correctly classified samples (p={:.4})",
        args.model.display(),
        method,
        args.l2,
        args.steps,
        report.n,
        report.m,
        report.fooling_rate
    );
    Ok((EXIT_SUCCESS, to_json(report), summary))
}

fn cmd_inspect(args: InspectArgs) -> Outcome {
    let graph = load_model(&args.model)?;
    let rules = load_rules(args.rules.as_deref())?;
    let issues = validate_with(&graph, &rules, KernelRegistry::builtin());
    let summary = if issues.is_empty() {
        format!("{}: debuggable, no issues", args.model.display())
    } else {
        let mut counts = std::collections::BTreeMap::new();
        for issue in &issues {
            *counts.entry(issue.category.to_string()).or_insert(0usize) += 1;
        }
        let parts: Vec<String> = counts.iter().map(|(c, n)| format!("{n} {c}")).collect();
        format!("{}: {}", args.model.display(), parts.join(", "))
    };
    Ok((EXIT_SUCCESS, to_json(issues), summary))
}
