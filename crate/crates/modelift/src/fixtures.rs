//! Deterministic fixture graphs and datasets used by the examples, the
//! integration suite, and the CLI walkthroughs.
//!
//! Everything here is generated from fixed seeds, so fixture files written
//! to disk are reproducible byte for byte and the documented issue counts,
//! accuracies, and attack rates hold on every run.

use crate::dataset::{Dataset, Sample};
use crate::graph::{ConstTensor, Graph, Node, TensorSpec, TraceRecord};
use crate::DType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 > 1e-12 {
            let u2: f64 = rng.gen();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// A random vector rescaled to an exact ℓ₂ norm.
fn noise(rng: &mut ChaCha8Rng, len: usize, target: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..len).map(|_| rng.gen::<f64>() - 0.5).collect();
    let n = l2(&v);
    v.into_iter().map(|x| x * target / n).collect()
}

fn uint8_codes(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0..=255u32) as f64).collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn float_input(name: &str, shape: Vec<usize>) -> TensorSpec {
    TensorSpec {
        name: name.into(),
        dtype: DType::Float32,
        shape,
    }
}

/// A two-layer MLP in on-device form: the input passes through a
/// quantize/dequantize pair (extra operators a converter would leave
/// behind), and both weight matrices are stored as raw uint8 codes behind
/// their own DequantizeLinear nodes. Validation reports exactly two
/// STRUCTURE_MISMATCH records (the constant-fed weight dequantizers) and
/// two OPERATOR_MISMATCH records (the activation quantize/dequantize pair);
/// `transform` resolves all four.
pub fn quantized_mlp() -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (in_dim, hidden, classes) = (8, 16, 4);

    let mut g = Graph::new("quantized_mlp");
    g.inputs.push(float_input("x", vec![1, in_dim]));
    g.constants.push(ConstTensor::new(
        "input_scale",
        DType::Float32,
        vec![1],
        vec![1.0 / 255.0],
    ));
    g.constants.push(ConstTensor::new(
        "input_zero",
        DType::Float32,
        vec![1],
        vec![0.0],
    ));
    g.constants.push(ConstTensor::new(
        "w1_codes",
        DType::Uint8,
        vec![hidden, in_dim],
        uint8_codes(&mut rng, hidden * in_dim),
    ));
    g.constants
        .push(ConstTensor::new("w1_scale", DType::Float32, vec![1], vec![0.01]));
    g.constants
        .push(ConstTensor::new("w1_zero", DType::Float32, vec![1], vec![128.0]));
    g.constants.push(ConstTensor::new(
        "b1",
        DType::Float32,
        vec![hidden],
        uniform(&mut rng, hidden, -0.5, 0.5),
    ));
    g.constants.push(ConstTensor::new(
        "w2_codes",
        DType::Uint8,
        vec![classes, hidden],
        uint8_codes(&mut rng, classes * hidden),
    ));
    g.constants
        .push(ConstTensor::new("w2_scale", DType::Float32, vec![1], vec![0.01]));
    g.constants
        .push(ConstTensor::new("w2_zero", DType::Float32, vec![1], vec![128.0]));
    g.constants.push(ConstTensor::new(
        "b2",
        DType::Float32,
        vec![classes],
        uniform(&mut rng, classes, -0.5, 0.5),
    ));

    g.nodes.push(Node::new(
        "QuantizeLinear",
        "quantize_input",
        vec!["x", "input_scale", "input_zero"],
        vec!["x_codes"],
    ));
    g.nodes.push(Node::new(
        "DequantizeLinear",
        "dequantize_input",
        vec!["x_codes", "input_scale", "input_zero"],
        vec!["x_real"],
    ));
    g.nodes.push(Node::new(
        "DequantizeLinear",
        "dequantize_w1",
        vec!["w1_codes", "w1_scale", "w1_zero"],
        vec!["w1"],
    ));
    g.nodes.push(Node::new(
        "FullyConnected",
        "fc1",
        vec!["x_real", "w1", "b1"],
        vec!["hidden"],
    ));
    g.nodes
        .push(Node::new("Relu", "relu1", vec!["hidden"], vec!["hidden_act"]));
    g.nodes.push(Node::new(
        "DequantizeLinear",
        "dequantize_w2",
        vec!["w2_codes", "w2_scale", "w2_zero"],
        vec!["w2"],
    ));
    g.nodes.push(Node::new(
        "FullyConnected",
        "fc2",
        vec!["hidden_act", "w2", "b2"],
        vec!["logits"],
    ));
    g.outputs.push("logits".into());
    g.check().expect("quantized_mlp fixture must validate");
    g
}

/// Gaussian-blobs attack benchmark: a 4-class, 8-dimensional dataset (200
/// samples per class) with a nearest-centroid linear classifier, shipped in
/// the same quantized on-device form as [`quantized_mlp`].
///
/// Class centers are drawn uniformly from [−2,2]⁸ with pairwise distance
/// ≥ 3 enforced by rejection, then rescaled so the minimum pairwise
/// distance is exactly 3 — that pins the decision margin, which makes the
/// fooling-rate-vs-budget curve reproducible: tiny budgets fool nobody,
/// budget 0.1 fools the boundary tail, budget 1.0 fools everyone. Inputs
/// live in [0,1]⁸ (the quantization domain) via u = (x+4)/8; the classifier
/// weights are folded accordingly (row_c = 16μ_c in u-space equals the
/// 2μ_c nearest-centroid rule in x-space) and snapped to the uint8 weight
/// grid the graph actually stores.
pub fn blobs() -> (Graph, Dataset) {
    const CLASSES: usize = 4;
    const DIM: usize = 8;
    const PER_CLASS: usize = 200;
    const SIGMA: f64 = 0.4;
    const W_SCALE: f64 = 0.26; // uint8 grid step for weights in [−32, 32]

    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // centers: uniform in [−2,2]^8, pairwise ≥ 3 by rejection
    let mut centers: Vec<Vec<f64>> = Vec::new();
    while centers.len() < CLASSES {
        let candidate = uniform(&mut rng, DIM, -2.0, 2.0);
        let ok = centers.iter().all(|c| {
            let d: Vec<f64> = c.iter().zip(&candidate).map(|(a, b)| a - b).collect();
            l2(&d) >= 3.0
        });
        if ok {
            centers.push(candidate);
        }
    }
    // rescale so the minimum pairwise distance is exactly 3
    let mut d_min = f64::INFINITY;
    for i in 0..CLASSES {
        for j in i + 1..CLASSES {
            let d: Vec<f64> = centers[i]
                .iter()
                .zip(&centers[j])
                .map(|(a, b)| a - b)
                .collect();
            d_min = d_min.min(l2(&d));
        }
    }
    let t = 3.0 / d_min;
    for c in centers.iter_mut() {
        for v in c.iter_mut() {
            *v *= t;
        }
    }
    // snap weights (u-space rows 16μ_c) to the stored uint8 grid and take
    // the dequantized values as the definitive centers
    let mut codes = Vec::with_capacity(CLASSES * DIM);
    for c in &centers {
        for &mu in c {
            codes.push((128.0 + 16.0 * mu / W_SCALE).round().clamp(0.0, 255.0));
        }
    }
    let centers: Vec<Vec<f64>> = (0..CLASSES)
        .map(|c| {
            (0..DIM)
                .map(|j| (codes[c * DIM + j] - 128.0) * W_SCALE / 16.0)
                .collect()
        })
        .collect();
    // b_c = −8·Σ_j μ_cj − ‖μ_c‖² (the x-space bias −‖μ_c‖² shifted to u-space)
    let bias: Vec<f64> = centers
        .iter()
        .map(|mu| {
            let sum: f64 = mu.iter().sum();
            let sq: f64 = mu.iter().map(|v| v * v).sum();
            -8.0 * sum - sq
        })
        .collect();

    let mut g = Graph::new("blobs_classifier");
    g.inputs.push(float_input("x", vec![1, DIM]));
    g.constants.push(ConstTensor::new(
        "input_scale",
        DType::Float32,
        vec![1],
        vec![1.0 / 255.0],
    ));
    g.constants.push(ConstTensor::new(
        "input_zero",
        DType::Float32,
        vec![1],
        vec![0.0],
    ));
    g.constants.push(ConstTensor::new(
        "w_codes",
        DType::Uint8,
        vec![CLASSES, DIM],
        codes,
    ));
    // codes store the u-space rows W_c = 16μ_c on the W_SCALE grid
    g.constants
        .push(ConstTensor::new("w_scale", DType::Float32, vec![1], vec![W_SCALE]));
    g.constants
        .push(ConstTensor::new("w_zero", DType::Float32, vec![1], vec![128.0]));
    g.constants.push(ConstTensor::new(
        "bias",
        DType::Float32,
        vec![1, CLASSES],
        bias,
    ));
    g.nodes.push(Node::new(
        "QuantizeLinear",
        "quantize_input",
        vec!["x", "input_scale", "input_zero"],
        vec!["x_codes"],
    ));
    g.nodes.push(Node::new(
        "DequantizeLinear",
        "dequantize_input",
        vec!["x_codes", "input_scale", "input_zero"],
        vec!["x_real"],
    ));
    g.nodes.push(Node::new(
        "DequantizeLinear",
        "dequantize_w",
        vec!["w_codes", "w_scale", "w_zero"],
        vec!["w"],
    ));
    g.nodes.push(
        Node::new("Gemm", "classify", vec!["x_real", "w", "bias"], vec!["logits"])
            .with_attr("alpha", 1.0)
            .with_attr("beta", 1.0)
            .with_attr("transA", 0i64)
            .with_attr("transB", 1i64),
    );
    g.outputs.push("logits".into());
    g.check().expect("blobs fixture must validate");

    // the weights are scaled for u = (x+4)/8, so map samples the same way
    let mut samples = Vec::with_capacity(CLASSES * PER_CLASS);
    for (label, mu) in centers.iter().enumerate() {
        let mut kept = 0;
        while kept < PER_CLASS {
            let x: Vec<f64> = mu
                .iter()
                .map(|&m| m + SIGMA * standard_normal(&mut rng))
                .collect();
            if x.iter().any(|v| v.abs() > 4.0) {
                continue; // keep u inside [0,1]
            }
            samples.push(Sample {
                input: x.iter().map(|v| (v + 4.0) / 8.0).collect(),
                label,
            });
            kept += 1;
        }
    }
    let dataset = Dataset {
        num_classes: CLASSES,
        samples,
    };
    dataset.check().expect("blobs dataset must validate");
    (g, dataset)
}

/// A seeded synthetic graph full of constant-fed chains the pruning pass
/// must fold: two uint8 weight matrices behind DequantizeLinear (one also
/// behind a Transpose), and a bias behind a Reshape. The surviving live
/// path is Gemm → Add → activation → FullyConnected.
pub fn pruned_chain(seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_dim = rng.gen_range(3..=6usize);
    let hidden = rng.gen_range(4..=8usize);
    let classes = rng.gen_range(2..=4usize);

    let mut g = Graph::new(format!("pruned_chain_{seed}"));
    g.inputs.push(float_input("x", vec![1, in_dim]));
    g.constants.push(ConstTensor::new(
        "w_codes",
        DType::Uint8,
        vec![hidden, in_dim],
        uint8_codes(&mut rng, hidden * in_dim),
    ));
    g.constants
        .push(ConstTensor::new("w_scale", DType::Float32, vec![1], vec![0.02]));
    g.constants
        .push(ConstTensor::new("w_zero", DType::Float32, vec![1], vec![128.0]));
    g.constants.push(ConstTensor::new(
        "bias_flat",
        DType::Float32,
        vec![hidden],
        uniform(&mut rng, hidden, -0.5, 0.5),
    ));
    g.constants.push(ConstTensor::new(
        "v_codes",
        DType::Uint8,
        vec![classes, hidden],
        uint8_codes(&mut rng, classes * hidden),
    ));
    g.constants
        .push(ConstTensor::new("v_scale", DType::Float32, vec![1], vec![0.02]));
    g.constants
        .push(ConstTensor::new("v_zero", DType::Float32, vec![1], vec![128.0]));

    g.nodes.push(Node::new(
        "DequantizeLinear",
        "dequantize_w",
        vec!["w_codes", "w_scale", "w_zero"],
        vec!["w"],
    ));
    g.nodes.push(
        Node::new("Transpose", "transpose_w", vec!["w"], vec!["w_t"])
            .with_attr("perm", vec![1i64, 0]),
    );
    g.nodes.push(
        Node::new("Reshape", "reshape_bias", vec!["bias_flat"], vec!["bias_row"])
            .with_attr("shape", vec![1i64, hidden as i64]),
    );
    g.nodes.push(
        Node::new("Gemm", "project", vec!["x", "w_t"], vec!["projected"])
            .with_attr("alpha", 1.0)
            .with_attr("beta", 1.0)
            .with_attr("transA", 0i64)
            .with_attr("transB", 0i64),
    );
    g.nodes.push(Node::new(
        "Add",
        "add_bias",
        vec!["projected", "bias_row"],
        vec!["biased"],
    ));
    let activation = if rng.gen::<bool>() { "Relu" } else { "Sigmoid" };
    g.nodes.push(Node::new(
        activation,
        "activate",
        vec!["biased"],
        vec!["activated"],
    ));
    g.nodes.push(Node::new(
        "DequantizeLinear",
        "dequantize_v",
        vec!["v_codes", "v_scale", "v_zero"],
        vec!["v"],
    ));
    g.nodes.push(Node::new(
        "FullyConnected",
        "head",
        vec!["activated", "v"],
        vec!["logits"],
    ));
    g.outputs.push("logits".into());
    g.check().expect("pruned_chain fixture must validate");
    g
}

/// Builds a single-custom-op graph with recorded reference traces.
/// `noise_l2` is the exact ℓ₂ norm of the disturbance added to each trace
/// output, emulating measurement noise in traces captured from a real
/// runtime.
fn traced_custom(
    name: &str,
    op_type: &str,
    input_shape: Vec<usize>,
    attrs: &[(&str, i64)],
    semantics: impl Fn(&[f64]) -> Vec<f64>,
    noise_l2: f64,
    rng: &mut ChaCha8Rng,
) -> Graph {
    let mut g = Graph::new(name);
    let numel: usize = input_shape.iter().product();
    g.inputs.push(float_input("x", input_shape));
    let mut node = Node::new(op_type, "custom", vec!["x"], vec!["y"]);
    for (key, value) in attrs {
        node = node.with_attr(*key, vec![*value, *value]);
    }
    g.nodes.push(node);
    g.outputs.push("y".into());

    let mut traces = Vec::new();
    for _ in 0..3 {
        let input = uniform(rng, numel, -1.0, 1.0);
        let mut output = semantics(&input);
        if noise_l2 > 0.0 {
            for (o, n) in output.iter_mut().zip(noise(rng, numel, noise_l2)) {
                *o += n;
            }
        }
        traces.push(TraceRecord {
            inputs: BTreeMap::from([("x".to_string(), input)]),
            outputs: BTreeMap::from([("y".to_string(), output)]),
        });
    }
    g.traces = Some(traces);
    g.check().expect("traced fixture must validate");
    g
}

fn sem_l2_normalize(x: &[f64]) -> Vec<f64> {
    let n = l2(x).max(1e-12);
    x.iter().map(|v| v / n).collect()
}

fn sem_logistic(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
}

fn sem_relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

fn sem_tanh(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

fn sem_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// 2×2/stride-2 average pooling over a [1,1,4,4] plane.
fn sem_avg_pool(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(4);
    for oy in 0..2 {
        for ox in 0..2 {
            let base = oy * 2 * 4 + ox * 2;
            out.push((x[base] + x[base + 1] + x[base + 4] + x[base + 5]) / 4.0);
        }
    }
    out
}

fn sem_hard_swish(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v * (v + 3.0).clamp(0.0, 6.0) / 6.0).collect()
}

fn sem_leaky_relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| if *v > 0.0 { *v } else { 0.3 * v }).collect()
}

fn sem_gelu(x: &[f64]) -> Vec<f64> {
    // tanh approximation of the Gaussian error linear unit
    x.iter()
        .map(|v| 0.5 * v * (1.0 + (0.7978845608028654 * (v + 0.044715 * v.powi(3))).tanh()))
        .collect()
}

fn sem_elu(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| if *v > 0.0 { *v } else { v.exp() - 1.0 })
        .collect()
}

/// Ten single-custom-op graphs with reference traces, spanning three
/// equivalence bands so the α threshold sweep has structure:
///
/// * 2 graphs whose traces carry noise of ℓ₂ exactly 0.005 — resolvable at
///   α ≥ 0.01;
/// * 4 graphs with noise 0.05 — resolvable at α ≥ 0.1;
/// * 4 graphs whose semantics genuinely differ from every builtin kernel
///   (hard-swish, leaky-relu with slope 0.3, gelu, elu) — functional
///   distance lands in (0.1, 100], so only an absurdly lax α accepts them.
///
/// Cumulative resolution counts across α ∈ {0, 0.001, 0.01, 0.1, 100} are
/// 0, 0, 2, 6, 10.
pub fn custom_op_suite() -> Vec<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let flat = vec![1usize, 16];
    vec![
        traced_custom(
            "custom_l2_normalization",
            "TFL_L2_NORMALIZATION",
            flat.clone(),
            &[],
            sem_l2_normalize,
            0.005,
            &mut rng,
        ),
        traced_custom(
            "custom_logistic",
            "TFL_LOGISTIC",
            flat.clone(),
            &[],
            sem_logistic,
            0.005,
            &mut rng,
        ),
        traced_custom(
            "custom_relu",
            "TFL_RELU",
            flat.clone(),
            &[],
            sem_relu,
            0.05,
            &mut rng,
        ),
        traced_custom(
            "custom_tanh",
            "TFL_TANH",
            flat.clone(),
            &[],
            sem_tanh,
            0.05,
            &mut rng,
        ),
        traced_custom(
            "custom_softmax",
            "TFL_SOFTMAX",
            flat.clone(),
            &[],
            sem_softmax,
            0.05,
            &mut rng,
        ),
        traced_custom(
            "custom_average_pool",
            "TFL_AVERAGE_POOL_2D",
            vec![1, 1, 4, 4],
            &[("kernel_shape", 2), ("strides", 2)],
            sem_avg_pool,
            0.05,
            &mut rng,
        ),
        traced_custom(
            "custom_hard_swish",
            "TFL_HARD_SWISH",
            flat.clone(),
            &[],
            sem_hard_swish,
            0.0,
            &mut rng,
        ),
        traced_custom(
            "custom_leaky_relu",
            "TFL_LEAKY_RELU",
            flat.clone(),
            &[],
            sem_leaky_relu,
            0.0,
            &mut rng,
        ),
        traced_custom(
            "custom_gelu",
            "TFL_GELU",
            flat.clone(),
            &[],
            sem_gelu,
            0.0,
            &mut rng,
        ),
        traced_custom(
            "custom_elu",
            "TFL_ELU",
            flat,
            &[],
            sem_elu,
            0.0,
            &mut rng,
        ),
    ]
}

/// The auto-matching showcase: a graph with one custom operator,
/// `TFL_L2_NORMALIZATION`, plus reference traces recorded with noise of
/// ℓ₂ norm 1e-3. At the default α = 0.1 it resolves to `LpNormalization`;
/// at α = 0 nothing can pass the functional probe.
pub fn l2norm_graph() -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    traced_custom(
        "l2norm_custom",
        "TFL_L2_NORMALIZATION",
        vec![1, 16],
        &[],
        sem_l2_normalize,
        1e-3,
        &mut rng,
    )
}
