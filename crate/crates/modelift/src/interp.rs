//! Reference interpreter: deterministic forward execution of a [`Graph`].
//!
//! Evaluation walks nodes in [`Graph::topo_order`]. Constants with
//! quantization parameters are materialized as their dequantized float values
//! — the toolkit emulates quantized semantics in float rather than running
//! integer arithmetic. Tensor data is rounded to each node's output dtype at
//! the node boundary, so two evaluations of the same graph and inputs are
//! bitwise identical.

use crate::graph::{ConstTensor, Graph, Node};
use crate::kernels::{kernel_dequantize_linear, KernelError, KernelRegistry};
use crate::tensor::{numel, TensorValue};
use rand::Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("node \"{node}\": operator \"{op_type}\" is not registered")]
    UnknownOperator { op_type: String, node: String },
    #[error("node \"{node}\": {detail}")]
    Shape { node: String, detail: String },
    #[error("missing graph input \"{0}\"")]
    MissingInput(String),
    #[error("input \"{name}\": {detail}")]
    InputSpec { name: String, detail: String },
    #[error("node \"{node}\": {source}")]
    Kernel { node: String, source: KernelError },
    #[error("node \"{node}\" declares {declared} outputs, kernel produced {produced}")]
    OutputArity {
        node: String,
        declared: usize,
        produced: usize,
    },
    #[error(transparent)]
    Cycle(#[from] crate::graph::CycleError),
}

/// Canonical input order of a node, honoring the `input_order` marker that
/// extractor front ends attach when they recorded inputs out of order.
pub fn canonical_inputs<'a>(node: &'a Node) -> Result<Vec<&'a str>, EvalError> {
    let Some(order) = node.attributes.get("input_order") else {
        return Ok(node.inputs.iter().map(String::as_str).collect());
    };
    let order = order.as_i64_list().unwrap_or_default();
    let n = node.inputs.len();
    let mut seen = vec![false; n];
    let mut out = Vec::with_capacity(n);
    for &i in &order {
        if i < 0 || i >= n as i64 || seen[i as usize] {
            return Err(EvalError::Shape {
                node: node.name.clone(),
                detail: format!("input_order {order:?} is not a permutation of 0..{n}"),
            });
        }
        seen[i as usize] = true;
        out.push(node.inputs[i as usize].as_str());
    }
    if out.len() != n {
        return Err(EvalError::Shape {
            node: node.name.clone(),
            detail: format!("input_order {order:?} is not a permutation of 0..{n}"),
        });
    }
    Ok(out)
}

/// Runtime value of a constant. Quantized constants become their dequantized
/// float interpretation `(x − zero_point) × scale`.
pub fn materialize_constant(c: &ConstTensor) -> Result<TensorValue, EvalError> {
    let raw = TensorValue::new(c.dtype, c.shape.clone(), c.data.clone()).map_err(|e| {
        EvalError::InputSpec {
            name: c.name.clone(),
            detail: e.to_string(),
        }
    })?;
    match &c.quant {
        Some(q) => {
            kernel_dequantize_linear(&raw, q.scale, q.zero_point).map_err(|e| EvalError::InputSpec {
                name: c.name.clone(),
                detail: e.to_string(),
            })
        }
        None => Ok(raw),
    }
}

/// Evaluates the graph and returns every named value: inputs, constants, and
/// all node outputs. The backbone for [`evaluate`], shape propagation, and
/// reverse-mode differentiation.
pub fn evaluate_all_with(
    graph: &Graph,
    inputs: &BTreeMap<String, TensorValue>,
    registry: &KernelRegistry,
) -> Result<BTreeMap<String, TensorValue>, EvalError> {
    let mut values: BTreeMap<String, TensorValue> = BTreeMap::new();
    for spec in &graph.inputs {
        let given = inputs
            .get(&spec.name)
            .ok_or_else(|| EvalError::MissingInput(spec.name.clone()))?;
        if given.shape != spec.shape {
            return Err(EvalError::InputSpec {
                name: spec.name.clone(),
                detail: format!("expected shape {:?}, got {:?}", spec.shape, given.shape),
            });
        }
        // coerce the buffer to the declared dtype
        let v = TensorValue::new(spec.dtype, spec.shape.clone(), given.data.clone()).map_err(
            |e| EvalError::InputSpec {
                name: spec.name.clone(),
                detail: e.to_string(),
            },
        )?;
        values.insert(spec.name.clone(), v);
    }
    for c in &graph.constants {
        values.insert(c.name.clone(), materialize_constant(c)?);
    }
    for node in graph.topo_sort()? {
        let kernel = registry.get(&node.op_type).ok_or_else(|| EvalError::UnknownOperator {
            op_type: node.op_type.clone(),
            node: node.name.clone(),
        })?;
        let names = canonical_inputs(node)?;
        let mut args: Vec<&TensorValue> = Vec::with_capacity(names.len());
        for name in &names {
            args.push(
                values
                    .get(*name)
                    .ok_or_else(|| EvalError::MissingInput(name.to_string()))?,
            );
        }
        let outs = kernel(&args, &node.attributes).map_err(|e| match e {
            KernelError::Shape { detail, .. } => EvalError::Shape {
                node: node.name.clone(),
                detail,
            },
            other => EvalError::Kernel {
                node: node.name.clone(),
                source: other,
            },
        })?;
        if outs.len() != node.outputs.len() {
            return Err(EvalError::OutputArity {
                node: node.name.clone(),
                declared: node.outputs.len(),
                produced: outs.len(),
            });
        }
        for (name, value) in node.outputs.iter().zip(outs) {
            values.insert(name.clone(), value);
        }
    }
    Ok(values)
}

/// Evaluates the graph on the builtin registry, returning only the declared
/// graph outputs.
pub fn evaluate(
    graph: &Graph,
    inputs: &BTreeMap<String, TensorValue>,
) -> Result<BTreeMap<String, TensorValue>, EvalError> {
    evaluate_with(graph, inputs, KernelRegistry::builtin())
}

pub fn evaluate_with(
    graph: &Graph,
    inputs: &BTreeMap<String, TensorValue>,
    registry: &KernelRegistry,
) -> Result<BTreeMap<String, TensorValue>, EvalError> {
    let mut values = evaluate_all_with(graph, inputs, registry)?;
    let mut outputs = BTreeMap::new();
    for name in &graph.outputs {
        let v = values
            .remove(name)
            .or_else(|| outputs.get(name).cloned()) // output listed twice
            .ok_or_else(|| EvalError::MissingInput(name.clone()))?;
        outputs.insert(name.clone(), v);
    }
    Ok(outputs)
}

/// One random tensor for probing: floats uniform in [0,1), integers uniform
/// over the dtype's range, bools fair coin flips.
pub fn random_tensor(dtype: crate::dtype::DType, shape: &[usize], rng: &mut impl Rng) -> TensorValue {
    use crate::dtype::DType;
    let n = numel(shape);
    let data: Vec<f64> = match dtype {
        DType::Float32 => (0..n).map(|_| rng.gen::<f64>()).collect(),
        DType::Bool => (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect(),
        _ => {
            let (lo, hi) = dtype.integer_range().unwrap();
            (0..n).map(|_| rng.gen_range(lo as i64..=hi as i64) as f64).collect()
        }
    };
    TensorValue::new(dtype, shape.to_vec(), data).expect("length matches by construction")
}

/// Classifies one sample with a single-input graph: evaluates it and returns
/// the argmax (first index on ties) of the first declared output, flattened.
pub fn predict(graph: &Graph, input: &TensorValue) -> Result<usize, EvalError> {
    let [spec] = graph.inputs.as_slice() else {
        return Err(EvalError::InputSpec {
            name: graph.name.clone(),
            detail: format!("predict needs exactly one graph input, found {}", graph.inputs.len()),
        });
    };
    let Some(out_name) = graph.outputs.first() else {
        return Err(EvalError::MissingInput("graph declares no outputs".into()));
    };
    let inputs = BTreeMap::from([(spec.name.clone(), input.clone())]);
    let outputs = evaluate(graph, &inputs)?;
    let logits = &outputs[out_name];
    if logits.data.is_empty() {
        return Err(EvalError::Shape {
            node: out_name.clone(),
            detail: "output tensor is empty".into(),
        });
    }
    let mut best = 0usize;
    for (i, v) in logits.data.iter().enumerate() {
        if *v > logits.data[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Random values for every graph input, in input-declaration order.
pub fn probe_inputs(graph: &Graph, rng: &mut impl Rng) -> BTreeMap<String, TensorValue> {
    graph
        .inputs
        .iter()
        .map(|spec| (spec.name.clone(), random_tensor(spec.dtype, &spec.shape, rng)))
        .collect()
}
