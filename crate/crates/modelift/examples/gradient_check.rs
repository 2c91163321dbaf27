//! Reverse-mode gradients through a transformed graph, validated two ways:
//! against the closed form for a linear classifier and against central
//! finite differences for a conv/pool/dense stack.
//!
//! Run with: cargo run --example gradient_check

use modelift::attack::{input_gradient, LossSpec};
use modelift::autodiff::{backward, finite_difference_gradient};
use modelift::graph::{ConstTensor, Node, TensorSpec};
use modelift::interp::evaluate_all_with;
use modelift::kernels::KernelRegistry;
use modelift::{DType, Graph, TensorValue};
use std::collections::BTreeMap;

fn main() {
    closed_form_linear();
    finite_difference_stack();
}

/// For y = Wx with cross-entropy at class c, the input gradient has the
/// closed form Wᵀ(softmax(Wx) − e_c).
fn closed_form_linear() {
    let w = vec![0.9, -0.3, 0.1, -0.7, 0.4, 0.6]; // [2, 3]
    let mut g = Graph::new("linear");
    g.inputs.push(TensorSpec {
        name: "x".into(),
        dtype: DType::Float32,
        shape: vec![1, 2],
    });
    g.constants
        .push(ConstTensor::new("w", DType::Float32, vec![2, 3], w.clone()));
    g.nodes.push(Node::new("Gemm", "mm", vec!["x", "w"], vec!["y"]));
    g.outputs.push("y".into());

    let x = vec![0.5, -0.2];
    let input = TensorValue::float(vec![1, 2], x.clone()).unwrap();
    let grad = input_gradient(&g, &input, &LossSpec::untargeted(1)).expect("gradient");

    // closed form, accounting for float32 storage of constants and activations
    let w: Vec<f64> = w.iter().map(|v| *v as f32 as f64).collect();
    let x: Vec<f64> = x.iter().map(|v| *v as f32 as f64).collect();
    let logits: Vec<f64> = (0..3)
        .map(|j| (x[0] * w[j] + x[1] * w[3 + j]) as f32 as f64)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let seed: Vec<f64> = exps
        .iter()
        .enumerate()
        .map(|(j, e)| e / z - if j == 1 { 1.0 } else { 0.0 })
        .collect();
    let expected: Vec<f64> = (0..2)
        .map(|i| (0..3).map(|j| seed[j] * w[i * 3 + j]).sum())
        .collect();

    println!("linear model, cross-entropy at class 1:");
    println!("  reverse-mode: {:?}", grad.data);
    println!("  closed form:  {expected:?}");
    let err: f64 = grad
        .data
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("  max abs error: {err:.3e}\n");
    assert!(err < 1e-9);
}

/// Central differences (h = 1e-3) against backward() on a small CNN.
fn finite_difference_stack() {
    let mut g = Graph::new("cnn");
    g.inputs.push(TensorSpec {
        name: "x".into(),
        dtype: DType::Float32,
        shape: vec![1, 1, 4, 4],
    });
    g.constants.push(ConstTensor::new(
        "w",
        DType::Float32,
        vec![2, 1, 3, 3],
        (0..18).map(|i| ((i * 31 % 11) as f64 - 5.0) / 7.0).collect::<Vec<_>>(),
    ));
    g.nodes.push(
        Node::new("Conv2D", "conv", vec!["x", "w"], vec!["c"])
            .with_attr("pads", vec![1i64, 1, 1, 1]),
    );
    g.nodes.push(Node::new("Relu", "relu", vec!["c"], vec!["r"]));
    g.nodes.push(
        Node::new("AveragePool2D", "pool", vec!["r"], vec!["p"])
            .with_attr("kernel_shape", vec![2i64, 2])
            .with_attr("strides", vec![2i64, 2]),
    );
    g.nodes.push(Node::new("Flatten", "flat", vec!["p"], vec!["y"]));
    g.outputs.push("y".into());

    let input = TensorValue::float(
        vec![1, 1, 4, 4],
        (0..16).map(|i| 0.3 + 0.04 * i as f64).collect(),
    )
    .unwrap();
    let inputs = BTreeMap::from([("x".to_string(), input)]);
    let values = evaluate_all_with(&g, &inputs, KernelRegistry::builtin()).expect("forward");
    let out = &values["y"];
    let seed = BTreeMap::from([(
        "y".to_string(),
        TensorValue::float(out.shape.clone(), vec![1.0; out.data.len()]).unwrap(),
    )]);

    let analytic = backward(&g, &values, &seed).expect("backward");
    let numeric = finite_difference_gradient(&g, &inputs, "x", &seed, 1e-3).expect("fd");

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic["x"]
        .data
        .iter()
        .zip(&numeric.data)
        .map(|(a, b)| a - b)
        .collect();
    let rel = norm(&diff) / norm(&numeric.data).max(1e-12);
    println!("conv → relu → avgpool → flatten stack:");
    println!("  ‖∇_ad − ∇_fd‖ / ‖∇_fd‖ = {rel:.3e} (tolerance 1e-4)");
    assert!(rel <= 1e-4);
}
