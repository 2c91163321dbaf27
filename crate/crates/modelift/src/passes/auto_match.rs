//! Auto-matching pass: resolve operators that exist in neither the kernel
//! registry nor the translation table by pairing name similarity with
//! functional validation.
//!
//! For each unresolved node, every operator in the supported list is scored
//! with [`dice_similarity`] against the custom op's name. Candidates are
//! tried from most to least similar (ties broken lexicographically): the
//! node's op_type is tentatively replaced and the rewritten graph is
//! validated functionally. The first candidate whose distance is within
//! `alpha` wins; if none passes, the node is reported unresolved.
//!
//! Functional validation prefers recorded whole-graph traces: the trial
//! graph is run on each trace's inputs and the worst ℓ₂ distance between its
//! concatenated outputs and the recorded outputs is the candidate's score.
//! When the graph carries no traces but a reference registry implementing
//! the custom operators is available, the pass instead probes the node in
//! isolation with seeded random inputs and compares candidate kernels
//! against the reference kernel. Any evaluation failure scores as infinite
//! distance, so a candidate that cannot even run never matches.

use crate::graph::{Graph, TraceRecord};
use crate::interp::{canonical_inputs, evaluate_all_with, evaluate_with, probe_inputs, random_tensor};
use crate::issues::{IssueCategory, IssueRecord};
use crate::kernels::KernelRegistry;
use crate::passes::similarity::dice_similarity;
use crate::rules::RuleSet;
use crate::tensor::TensorValue;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;

/// Configuration for [`auto_match_pass`].
#[derive(Debug, Clone)]
pub struct MatchConfig {
    /// Acceptance threshold on functional ℓ₂ distance (inclusive).
    pub alpha: f64,
    /// Random probes per node when validating against a reference registry.
    pub probe_count: usize,
    /// Seed for probe generation.
    pub seed: u64,
    /// Candidate vocabulary; defaults to the builtin supported list.
    pub supported: Vec<String>,
    /// Optional registry implementing the custom operators' ground-truth
    /// semantics, enabling validation when no traces are recorded.
    pub reference: Option<KernelRegistry>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            probe_count: 100,
            seed: 0,
            supported: RuleSet::builtin().supported.clone(),
            reference: None,
        }
    }
}

/// One accepted operator replacement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Substitution {
    pub node: String,
    pub old_op: String,
    pub new_op: String,
    /// Dice similarity between the two operator names.
    pub similarity: f64,
    /// Functional ℓ₂ distance of the accepted candidate.
    pub distance: f64,
}

/// Resolves custom operators in place. Returns the rewritten graph, one
/// OPERATOR_NOT_SUPPORTED record per affected node (resolved for successful
/// matches), and the list of substitutions performed.
pub fn auto_match_pass(
    graph: &Graph,
    cfg: &MatchConfig,
) -> (Graph, Vec<IssueRecord>, Vec<Substitution>) {
    let builtin = KernelRegistry::builtin();
    // Execution registry for trial runs: builtin kernels plus reference
    // implementations of any operators the builtin set lacks.
    let exec = match &cfg.reference {
        Some(reference) => {
            let mut merged = builtin.clone();
            for name in reference.names() {
                if !merged.contains(name) {
                    merged.register(name, reference.get(name).expect("listed name"));
                }
            }
            merged
        }
        None => builtin.clone(),
    };

    let mut g = graph.clone();
    let mut issues = Vec::new();
    let mut subs = Vec::new();

    // Earlier nodes are resolved first so later trials run on a graph where
    // upstream substitutions are already in place.
    let order = g.topo_order().unwrap_or_else(|_| (0..g.nodes.len()).collect());
    let targets: Vec<String> = order
        .iter()
        .map(|&i| &g.nodes[i])
        .filter(|n| {
            !cfg.supported.iter().any(|s| s == &n.op_type) && !builtin.contains(&n.op_type)
        })
        .map(|n| n.name.clone())
        .collect();

    for name in targets {
        let idx = g.nodes.iter().position(|n| n.name == name).expect("node name stable");
        let old_op = g.nodes[idx].op_type.clone();

        let mut candidates: Vec<(f64, &str)> = cfg
            .supported
            .iter()
            .map(|c| (dice_similarity(&old_op, c), c.as_str()))
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));

        let oracle = NodeOracle::prepare(&g, idx, cfg, &exec);
        let mut accepted: Option<(String, f64, f64)> = None;
        let mut nearest: Option<(String, f64)> = None;
        for (sim, cand) in &candidates {
            let dist = oracle.distance(&g, idx, cand, &exec);
            if nearest.as_ref().map_or(true, |(_, d)| dist < *d) {
                nearest = Some((cand.to_string(), dist));
            }
            if dist <= cfg.alpha {
                accepted = Some((cand.to_string(), *sim, dist));
                break;
            }
        }

        match accepted {
            Some((cand, sim, dist)) => {
                g.nodes[idx].op_type = cand.clone();
                issues.push(
                    IssueRecord::new(
                        IssueCategory::OperatorNotSupported,
                        &name,
                        format!(
                            "\"{old_op}\" matched to \"{cand}\" (similarity {sim:.6}, distance {dist:.6})"
                        ),
                    )
                    .resolved("auto-match"),
                );
                subs.push(Substitution {
                    node: name,
                    old_op,
                    new_op: cand,
                    similarity: sim,
                    distance: dist,
                });
            }
            None => {
                let detail = match nearest {
                    Some((cand, dist)) if dist.is_finite() => format!(
                        "no candidate for \"{old_op}\" within alpha {}; closest was \"{cand}\" at distance {dist:.6}",
                        cfg.alpha
                    ),
                    _ => format!(
                        "no candidate for \"{old_op}\" could be validated (no usable traces or reference kernels)"
                    ),
                };
                issues.push(IssueRecord::new(IssueCategory::OperatorNotSupported, &name, detail));
            }
        }
    }

    (g, issues, subs)
}

/// Pre-computed validation context for one node, shared by all candidates.
enum NodeOracle {
    /// Whole-graph validation against recorded traces.
    Traces(Vec<TraceRecord>),
    /// Per-node validation: probe inputs and the reference kernel's
    /// concatenated outputs for each probe.
    Probes {
        inputs: Vec<Vec<TensorValue>>,
        expected: Vec<Vec<f64>>,
    },
    /// Nothing to validate against.
    Unavailable,
}

impl NodeOracle {
    fn prepare(g: &Graph, idx: usize, cfg: &MatchConfig, exec: &KernelRegistry) -> Self {
        if let Some(traces) = g.traces.as_ref().filter(|t| !t.is_empty()) {
            return NodeOracle::Traces(traces.clone());
        }
        let Some(reference) = &cfg.reference else {
            return NodeOracle::Unavailable;
        };
        let node = &g.nodes[idx];
        let Some(ref_kernel) = reference.get(&node.op_type) else {
            return NodeOracle::Unavailable;
        };
        // Input shapes for the node come from one probe evaluation of the
        // whole graph (reference kernels fill in for other custom nodes).
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let seed_inputs = probe_inputs(g, &mut rng);
        let Ok(values) = evaluate_all_with(g, &seed_inputs, exec) else {
            return NodeOracle::Unavailable;
        };
        let Ok(arg_names) = canonical_inputs(node) else {
            return NodeOracle::Unavailable;
        };
        let specs: Vec<(crate::dtype::DType, Vec<usize>)> = match arg_names
            .iter()
            .map(|n| values.get(*n).map(|v| (v.dtype, v.shape.clone())))
            .collect::<Option<Vec<_>>>()
        {
            Some(s) => s,
            None => return NodeOracle::Unavailable,
        };

        let mut inputs = Vec::with_capacity(cfg.probe_count);
        let mut expected = Vec::with_capacity(cfg.probe_count);
        for _ in 0..cfg.probe_count {
            let probe: Vec<TensorValue> = specs
                .iter()
                .map(|(dt, shape)| random_tensor(*dt, shape, &mut rng))
                .collect();
            let args: Vec<&TensorValue> = probe.iter().collect();
            let Ok(outs) = ref_kernel(&args, &node.attributes) else {
                return NodeOracle::Unavailable;
            };
            expected.push(concat_data(&outs));
            inputs.push(probe);
        }
        NodeOracle::Probes { inputs, expected }
    }

    /// Worst-case ℓ₂ distance of `candidate` standing in for node `idx`.
    fn distance(&self, g: &Graph, idx: usize, candidate: &str, exec: &KernelRegistry) -> f64 {
        match self {
            NodeOracle::Traces(traces) => {
                let mut trial = g.clone();
                trial.nodes[idx].op_type = candidate.to_string();
                traces
                    .iter()
                    .map(|t| trace_distance(&trial, t, exec))
                    .fold(0.0, f64::max)
            }
            NodeOracle::Probes { inputs, expected } => {
                let Some(kernel) = exec.get(candidate) else {
                    return f64::INFINITY;
                };
                let attrs = &g.nodes[idx].attributes;
                let mut worst = 0.0f64;
                for (probe, want) in inputs.iter().zip(expected) {
                    let args: Vec<&TensorValue> = probe.iter().collect();
                    let Ok(outs) = kernel(&args, attrs) else {
                        return f64::INFINITY;
                    };
                    worst = worst.max(l2(&concat_data(&outs), want));
                }
                worst
            }
            NodeOracle::Unavailable => f64::INFINITY,
        }
    }
}

/// ℓ₂ distance between the trial graph's outputs and one recorded trace.
fn trace_distance(trial: &Graph, trace: &TraceRecord, exec: &KernelRegistry) -> f64 {
    let mut inputs = BTreeMap::new();
    for spec in &trial.inputs {
        let Some(data) = trace.inputs.get(&spec.name) else {
            return f64::INFINITY;
        };
        match TensorValue::new(spec.dtype, spec.shape.clone(), data.clone()) {
            Ok(v) => inputs.insert(spec.name.clone(), v),
            Err(_) => return f64::INFINITY,
        };
    }
    let Ok(outputs) = evaluate_with(trial, &inputs, exec) else {
        return f64::INFINITY;
    };
    let mut got = Vec::new();
    let mut want = Vec::new();
    for name in &trial.outputs {
        let Some(recorded) = trace.outputs.get(name) else {
            return f64::INFINITY;
        };
        got.extend_from_slice(&outputs[name].data);
        want.extend_from_slice(recorded);
    }
    l2(&got, &want)
}

fn concat_data(outs: &[TensorValue]) -> Vec<f64> {
    outs.iter().flat_map(|t| t.data.iter().copied()).collect()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtype::DType;
    use crate::graph::{Node, TensorSpec};
    use crate::interp::evaluate;
    use crate::kernels::KernelError;

    /// A one-node graph wrapping `op` over a [1, 4] float input, with traces
    /// recorded by `f` over a fixed set of probe vectors.
    fn traced_graph(op: &str, f: impl Fn(&[f64]) -> Vec<f64>) -> Graph {
        let mut g = Graph::new("traced");
        g.inputs.push(TensorSpec {
            name: "x".into(),
            dtype: DType::Float32,
            shape: vec![1, 4],
        });
        g.nodes.push(Node::new(op, "n0", vec!["x"], vec!["y"]));
        g.outputs.push("y".into());
        let mut traces = Vec::new();
        for k in 0..4 {
            let xs: Vec<f64> = (0..4)
                .map(|i| ((k * 4 + i) as f64 / 7.5 - 1.0) as f32 as f64)
                .collect();
            traces.push(TraceRecord {
                inputs: BTreeMap::from([("x".to_string(), xs.clone())]),
                outputs: BTreeMap::from([("y".to_string(), f(&xs))]),
            });
        }
        g.traces = Some(traces);
        g
    }

    fn l2_normalize(xs: &[f64]) -> Vec<f64> {
        let n = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
        xs.iter().map(|v| (v / n) as f32 as f64).collect()
    }

    #[test]
    fn l2_normalization_matches_lp_normalization() {
        let g = traced_graph("TFL_L2_NORMALIZATION", l2_normalize);
        let cfg = MatchConfig::default();
        let (matched, issues, subs) = auto_match_pass(&g, &cfg);
        assert_eq!(matched.nodes[0].op_type, "LpNormalization");
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].old_op, "TFL_L2_NORMALIZATION");
        assert_eq!(subs[0].new_op, "LpNormalization");
        assert!((subs[0].similarity - 28.0 / 33.0).abs() < 1e-12);
        assert!(subs[0].distance <= 1e-6, "exact match up to f32 rounding");
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].resolved_by.as_deref(), Some("auto-match"));
        // resolved graph actually evaluates with builtin kernels
        let x = TensorValue::float(vec![1, 4], vec![3.0, 4.0, 0.0, 0.0]).unwrap();
        let out = evaluate(&matched, &BTreeMap::from([("x".to_string(), x)])).unwrap();
        assert!((out["y"].data[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn zero_alpha_rejects_rounding_noise() {
        // The recorded traces go through an f32 round-trip, so even the
        // correct candidate carries tiny nonzero distance.
        let g = traced_graph("TFL_L2_NORMALIZATION", |xs| {
            let exact = l2_normalize(xs);
            // perturb the last element in the f64 domain, below f32 epsilon
            let mut noisy = exact;
            if let Some(v) = noisy.last_mut() {
                *v += 1e-12;
            }
            noisy
        });
        let cfg = MatchConfig { alpha: 0.0, ..MatchConfig::default() };
        let (matched, issues, subs) = auto_match_pass(&g, &cfg);
        assert_eq!(matched.nodes[0].op_type, "TFL_L2_NORMALIZATION");
        assert!(subs.is_empty());
        assert_eq!(issues.len(), 1);
        assert!(issues[0].resolved_by.is_none());
        assert!(issues[0].detail.contains("no candidate"));
    }

    #[test]
    fn supported_and_registered_ops_are_left_alone() {
        let mut g = Graph::new("plain");
        g.inputs.push(TensorSpec {
            name: "x".into(),
            dtype: DType::Float32,
            shape: vec![1, 4],
        });
        g.nodes.push(Node::new("Relu", "r", vec!["x"], vec!["y"]));
        g.nodes.push(Node::new("ArgMax", "a", vec!["y"], vec!["c"]));
        g.outputs.push("c".into());
        let (matched, issues, subs) = auto_match_pass(&g, &MatchConfig::default());
        assert_eq!(matched, g);
        assert!(issues.is_empty());
        assert!(subs.is_empty());
    }

    fn tfl_logistic(args: &[&TensorValue], _attrs: &crate::graph::Attrs) -> Result<Vec<TensorValue>, KernelError> {
        let x = args[0];
        let data = x.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        Ok(vec![TensorValue::new(DType::Float32, x.shape.clone(), data).unwrap()])
    }

    #[test]
    fn reference_registry_resolves_untraced_graphs() {
        let mut g = Graph::new("untraced");
        g.inputs.push(TensorSpec {
            name: "x".into(),
            dtype: DType::Float32,
            shape: vec![2, 3],
        });
        g.nodes.push(Node::new("TFL_LOGISTIC", "n0", vec!["x"], vec!["y"]));
        g.outputs.push("y".into());

        let mut reference = KernelRegistry::empty();
        reference.register("TFL_LOGISTIC", tfl_logistic);
        let cfg = MatchConfig {
            reference: Some(reference),
            ..MatchConfig::default()
        };
        let (matched, _, subs) = auto_match_pass(&g, &cfg);
        assert_eq!(matched.nodes[0].op_type, "Sigmoid");
        assert_eq!(subs[0].new_op, "Sigmoid");
        assert!(subs[0].distance < 1e-6);
    }

    #[test]
    fn no_oracle_means_no_match() {
        let mut g = Graph::new("blind");
        g.inputs.push(TensorSpec {
            name: "x".into(),
            dtype: DType::Float32,
            shape: vec![1, 4],
        });
        g.nodes.push(Node::new("TFL_RELU", "n0", vec!["x"], vec!["y"]));
        g.outputs.push("y".into());
        let (matched, issues, subs) = auto_match_pass(&g, &MatchConfig::default());
        assert_eq!(matched.nodes[0].op_type, "TFL_RELU");
        assert!(subs.is_empty());
        assert!(issues[0].detail.contains("could be validated"));
    }

    #[test]
    fn multiple_customs_resolve_cumulatively() {
        // Relu followed by logistic, both spelled in a foreign dialect, with
        // whole-graph traces; resolving the first enables validating the
        // second through it.
        let mut g = Graph::new("two");
        g.inputs.push(TensorSpec {
            name: "x".into(),
            dtype: DType::Float32,
            shape: vec![1, 4],
        });
        g.nodes.push(Node::new("TFL_RELU", "n0", vec!["x"], vec!["t"]));
        g.nodes.push(Node::new("TFL_LOGISTIC", "n1", vec!["t"], vec!["y"]));
        g.outputs.push("y".into());
        let mut traces = Vec::new();
        for k in 0..3 {
            let xs: Vec<f64> = (0..4)
                .map(|i| ((k * 4 + i) as f64 / 5.5 - 1.0) as f32 as f64)
                .collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|&v| {
                    let r = v.max(0.0);
                    ((1.0 / (1.0 + (-r).exp())) as f32) as f64
                })
                .collect();
            traces.push(TraceRecord {
                inputs: BTreeMap::from([("x".to_string(), xs)]),
                outputs: BTreeMap::from([("y".to_string(), ys)]),
            });
        }
        g.traces = Some(traces);

        // Without reference kernels the trial for n0 must run n1 somehow:
        // provide the reference registry for the still-unresolved sibling.
        let mut reference = KernelRegistry::empty();
        reference.register("TFL_LOGISTIC", tfl_logistic);
        fn tfl_relu(args: &[&TensorValue], attrs: &crate::graph::Attrs) -> Result<Vec<TensorValue>, KernelError> {
            KernelRegistry::builtin().get("Relu").unwrap()(args, attrs)
        }
        reference.register("TFL_RELU", tfl_relu);

        let cfg = MatchConfig {
            reference: Some(reference),
            ..MatchConfig::default()
        };
        let (matched, issues, subs) = auto_match_pass(&g, &cfg);
        let ops: Vec<&str> = matched.nodes.iter().map(|n| n.op_type.as_str()).collect();
        assert_eq!(ops, ["Relu", "Sigmoid"]);
        assert_eq!(subs.len(), 2);
        assert!(issues.iter().all(|i| i.resolved_by.is_some()));
    }
}
