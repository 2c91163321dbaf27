//! Reverse-mode automatic differentiation over evaluated graphs.
//!
//! [`backward`] consumes the value map produced by
//! [`crate::interp::evaluate_all_with`] plus gradient seeds for any subset of
//! values (typically the graph outputs) and accumulates vector-Jacobian
//! products node by node in reverse topological order. Every differentiable
//! builtin kernel has a hand-written VJP rule; anything else — quantization
//! ops, ArgMax, casts that change representation, custom operators — raises
//! [`GradError::NonDifferentiable`], which is the signal that a graph must go
//! through the transform pipeline before it can be attacked.
//!
//! Conventions: gradients are kept at full f64 precision (finalize to
//! float32 only at the consumer's boundary); Relu and Clip take subgradient
//! 0 exactly at their kinks; MaxPool routes to the first element attaining
//! the window maximum, matching the forward kernel's tie-breaking.

use crate::graph::{Graph, Node};
use crate::interp::{canonical_inputs, evaluate_all_with, EvalError};
use crate::kernels::{
    f64_attr, int_attr, ints_attr, pool_geometry, resolve_axis, str_attr, usize_pair,
    KernelRegistry, CLIP_DEFAULT_BOUND, LP_NORM_EPSILON,
};
use crate::tensor::{numel, BroadcastIndexer, ExactFloatGuard, TensorValue};
use crate::DType;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("node \"{node}\": operator \"{op_type}\" is not differentiable")]
    NonDifferentiable { op_type: String, node: String },
    #[error("node \"{node}\": {detail}")]
    Malformed { node: String, detail: String },
    #[error("value \"{0}\" is missing from the evaluation")]
    MissingValue(String),
    #[error("gradient seed for \"{name}\": expected shape {expected:?}, got {got:?}")]
    SeedShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn raw(shape: &[usize], data: Vec<f64>) -> TensorValue {
    TensorValue::raw_float(shape.to_vec(), data)
}

fn zeros_like(v: &TensorValue) -> TensorValue {
    raw(&v.shape, vec![0.0; v.data.len()])
}

fn accumulate(grads: &mut BTreeMap<String, TensorValue>, name: &str, g: TensorValue) {
    match grads.get_mut(name) {
        Some(slot) => {
            debug_assert_eq!(slot.shape, g.shape);
            for (s, v) in slot.data.iter_mut().zip(&g.data) {
                *s += v;
            }
        }
        None => {
            grads.insert(name.to_string(), g);
        }
    }
}

/// Propagates gradient seeds backwards through the graph and returns the
/// accumulated gradient for every value reached (inputs, constants, and
/// intermediates alike). Nodes none of whose outputs carry gradient are
/// skipped entirely, so non-differentiable branches that the seeds never
/// touch do not fail the run.
pub fn backward(
    graph: &Graph,
    values: &BTreeMap<String, TensorValue>,
    seed: &BTreeMap<String, TensorValue>,
) -> Result<BTreeMap<String, TensorValue>, GradError> {
    let mut grads: BTreeMap<String, TensorValue> = BTreeMap::new();
    for (name, g) in seed {
        let v = values
            .get(name)
            .ok_or_else(|| GradError::MissingValue(name.clone()))?;
        if v.shape != g.shape {
            return Err(GradError::SeedShape {
                name: name.clone(),
                expected: v.shape.clone(),
                got: g.shape.clone(),
            });
        }
        accumulate(&mut grads, name, raw(&g.shape, g.data.clone()));
    }

    let order = graph.topo_sort().map_err(EvalError::from)?;
    for node in order.into_iter().rev() {
        if node.outputs.iter().all(|o| !grads.contains_key(o)) {
            continue;
        }
        let mut outs = Vec::with_capacity(node.outputs.len());
        let mut gouts = Vec::with_capacity(node.outputs.len());
        for name in &node.outputs {
            let v = values
                .get(name)
                .ok_or_else(|| GradError::MissingValue(name.clone()))?;
            gouts.push(grads.get(name).cloned().unwrap_or_else(|| zeros_like(v)));
            outs.push(v);
        }
        let in_names = canonical_inputs(node)?;
        let mut args = Vec::with_capacity(in_names.len());
        for name in &in_names {
            args.push(
                values
                    .get(*name)
                    .ok_or_else(|| GradError::MissingValue(name.to_string()))?,
            );
        }
        let gins = node_vjp(node, &args, &outs, &gouts)?;
        debug_assert_eq!(gins.len(), in_names.len());
        for (name, g) in in_names.iter().zip(gins) {
            if let Some(g) = g {
                accumulate(&mut grads, name, g);
            }
        }
    }
    Ok(grads)
}

fn malformed(node: &Node, detail: impl std::fmt::Display) -> GradError {
    GradError::Malformed {
        node: node.name.clone(),
        detail: detail.to_string(),
    }
}

/// Both broadcast-aware input gradients of an elementwise binary op:
/// `fa`/`fb` give ∂out/∂a and ∂out/∂b at each output position.
fn binary_vjp(
    a: &TensorValue,
    b: &TensorValue,
    gout: &TensorValue,
    fa: impl Fn(f64, f64) -> f64,
    fb: impl Fn(f64, f64) -> f64,
) -> (TensorValue, TensorValue) {
    let ia = BroadcastIndexer::new(&a.shape, &gout.shape);
    let ib = BroadcastIndexer::new(&b.shape, &gout.shape);
    let mut ga = vec![0.0; a.data.len()];
    let mut gb = vec![0.0; b.data.len()];
    for (flat, &g) in gout.data.iter().enumerate() {
        let (pa, pb) = (ia.map(flat), ib.map(flat));
        let (av, bv) = (a.data[pa], b.data[pb]);
        ga[pa] += g * fa(av, bv);
        gb[pb] += g * fb(av, bv);
    }
    (raw(&a.shape, ga), raw(&b.shape, gb))
}

/// Sums a gradient living on `gout`'s shape down to `target`'s shape
/// (the adjoint of broadcasting), with an optional scalar factor.
fn reduce_broadcast(gout: &TensorValue, target: &TensorValue, factor: f64) -> TensorValue {
    let idx = BroadcastIndexer::new(&target.shape, &gout.shape);
    let mut acc = vec![0.0; target.data.len()];
    for (flat, &g) in gout.data.iter().enumerate() {
        acc[idx.map(flat)] += factor * g;
    }
    raw(&target.shape, acc)
}

/// Iterates `(outer, lane, inner)` decompositions for axis-wise ops.
struct LaneIter {
    dim: usize,
    inner: usize,
    outer: usize,
}

impl LaneIter {
    fn new(shape: &[usize], axis: usize) -> Self {
        Self {
            dim: shape[axis],
            inner: shape[axis + 1..].iter().product(),
            outer: shape[..axis].iter().product(),
        }
    }

    fn for_each(&self, mut f: impl FnMut(&dyn Fn(usize) -> usize, usize)) {
        for o in 0..self.outer {
            for i in 0..self.inner {
                let at = move |d: usize| (o * self.dim + d) * self.inner + i;
                f(&at, self.dim);
            }
        }
    }
}

fn transpose_f64(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = crate::tensor::strides(shape);
    let out_strides = crate::tensor::strides(&out_shape);
    let mut out = vec![0.0; data.len()];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut src = 0;
        let mut rem = flat;
        for (d, &os) in out_strides.iter().enumerate() {
            let idx = rem / os;
            rem %= os;
            src += idx * in_strides[perm[d]];
        }
        *slot = data[src];
    }
    (out_shape, out)
}

/// Whether [`backward`] knows a vector-Jacobian product for this operator.
/// `Cast` is listed even though only float-to-float casts differentiate; the
/// attribute-dependent part is checked when the gradient is actually taken.
pub fn is_differentiable(op_type: &str) -> bool {
    matches!(
        op_type,
        "Add"
            | "Sub"
            | "Mul"
            | "Div"
            | "Relu"
            | "Clip"
            | "Sigmoid"
            | "Tanh"
            | "Softmax"
            | "LpNormalization"
            | "Gemm"
            | "FullyConnected"
            | "Conv2D"
            | "MaxPool2D"
            | "AveragePool2D"
            | "Reshape"
            | "Flatten"
            | "Transpose"
            | "Concat"
            | "Resize"
            | "Cast"
    )
}

/// Gradients for the node's canonical inputs, aligned by position. `None`
/// marks inputs that receive no gradient (none currently, but the signature
/// allows rules to skip integer side inputs).
fn node_vjp(
    node: &Node,
    args: &[&TensorValue],
    outs: &[&TensorValue],
    gouts: &[TensorValue],
) -> Result<Vec<Option<TensorValue>>, GradError> {
    let attrs = &node.attributes;
    let g0 = &gouts[0];
    match node.op_type.as_str() {
        "Add" => {
            let (ga, gb) = binary_vjp(args[0], args[1], g0, |_, _| 1.0, |_, _| 1.0);
            Ok(vec![Some(ga), Some(gb)])
        }
        "Sub" => {
            let (ga, gb) = binary_vjp(args[0], args[1], g0, |_, _| 1.0, |_, _| -1.0);
            Ok(vec![Some(ga), Some(gb)])
        }
        "Mul" => {
            let (ga, gb) = binary_vjp(args[0], args[1], g0, |_, b| b, |a, _| a);
            Ok(vec![Some(ga), Some(gb)])
        }
        "Div" => {
            let (ga, gb) =
                binary_vjp(args[0], args[1], g0, |_, b| 1.0 / b, |a, b| -a / (b * b));
            Ok(vec![Some(ga), Some(gb)])
        }
        "Relu" => {
            let x = args[0];
            let data = x
                .data
                .iter()
                .zip(&g0.data)
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect();
            Ok(vec![Some(raw(&x.shape, data))])
        }
        "Clip" => {
            let x = args[0];
            let lo = f64_attr("Clip", attrs, "min")
                .map_err(|e| malformed(node, e))?
                .unwrap_or(-CLIP_DEFAULT_BOUND);
            let hi = f64_attr("Clip", attrs, "max")
                .map_err(|e| malformed(node, e))?
                .unwrap_or(CLIP_DEFAULT_BOUND);
            let data = x
                .data
                .iter()
                .zip(&g0.data)
                .map(|(&v, &g)| if v > lo && v < hi { g } else { 0.0 })
                .collect();
            Ok(vec![Some(raw(&x.shape, data))])
        }
        "Sigmoid" => {
            let y = outs[0];
            let data = y
                .data
                .iter()
                .zip(&g0.data)
                .map(|(&y, &g)| g * y * (1.0 - y))
                .collect();
            Ok(vec![Some(raw(&y.shape, data))])
        }
        "Tanh" => {
            let y = outs[0];
            let data = y
                .data
                .iter()
                .zip(&g0.data)
                .map(|(&y, &g)| g * (1.0 - y * y))
                .collect();
            Ok(vec![Some(raw(&y.shape, data))])
        }
        "Softmax" => {
            let y = outs[0];
            let rank = y.shape.len().max(1);
            let axis = int_attr("Softmax", attrs, "axis")
                .and_then(|a| resolve_axis("Softmax", a.unwrap_or(-1), rank))
                .map_err(|e| malformed(node, e))?;
            let mut data = vec![0.0; y.data.len()];
            LaneIter::new(&y.shape, axis).for_each(|at, dim| {
                let dot: f64 = (0..dim).map(|d| g0.data[at(d)] * y.data[at(d)]).sum();
                for d in 0..dim {
                    data[at(d)] = y.data[at(d)] * (g0.data[at(d)] - dot);
                }
            });
            Ok(vec![Some(raw(&y.shape, data))])
        }
        "LpNormalization" => {
            let x = args[0];
            let y = outs[0];
            let p = int_attr("LpNormalization", attrs, "p")
                .map_err(|e| malformed(node, e))?
                .unwrap_or(2);
            let rank = x.shape.len().max(1);
            let axis = int_attr("LpNormalization", attrs, "axis")
                .and_then(|a| resolve_axis("LpNormalization", a.unwrap_or(-1), rank))
                .map_err(|e| malformed(node, e))?;
            let mut data = vec![0.0; x.data.len()];
            LaneIter::new(&x.shape, axis).for_each(|at, dim| {
                let norm = if p == 1 {
                    (0..dim).map(|d| x.data[at(d)].abs()).sum::<f64>()
                } else {
                    (0..dim)
                        .map(|d| x.data[at(d)] * x.data[at(d)])
                        .sum::<f64>()
                        .sqrt()
                };
                if norm <= LP_NORM_EPSILON {
                    return; // degenerate slice: treat as locally constant
                }
                let dot: f64 = (0..dim).map(|d| g0.data[at(d)] * y.data[at(d)]).sum();
                for d in 0..dim {
                    let shrink = if p == 1 {
                        let xv = x.data[at(d)];
                        if xv > 0.0 {
                            dot
                        } else if xv < 0.0 {
                            -dot
                        } else {
                            0.0
                        }
                    } else {
                        y.data[at(d)] * dot
                    };
                    data[at(d)] = (g0.data[at(d)] - shrink) / norm;
                }
            });
            Ok(vec![Some(raw(&x.shape, data))])
        }
        "Gemm" => gemm_vjp(node, args, g0),
        "FullyConnected" => fully_connected_vjp(args, g0),
        "Conv2D" => conv2d_vjp(node, args, g0),
        "MaxPool2D" => {
            let x = args[0];
            let geo = pool_geometry("MaxPool2D", x, attrs).map_err(|e| malformed(node, e))?;
            let mut data = vec![0.0; x.data.len()];
            let mut out_flat = 0usize;
            for n in 0..geo.n {
                for c in 0..geo.c {
                    let base = (n * geo.c + c) * geo.h * geo.w;
                    for oh in 0..geo.oh {
                        for ow in 0..geo.ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_at: Option<usize> = None;
                            for dh in 0..geo.kh {
                                for dw in 0..geo.kw {
                                    let ih = (oh * geo.sh + dh) as isize - geo.pads[0] as isize;
                                    let iw = (ow * geo.sw + dw) as isize - geo.pads[1] as isize;
                                    if ih >= 0
                                        && iw >= 0
                                        && (ih as usize) < geo.h
                                        && (iw as usize) < geo.w
                                    {
                                        let at = base + ih as usize * geo.w + iw as usize;
                                        // strictly greater keeps the first
                                        // maximum, matching the forward kernel
                                        if x.data[at] > best {
                                            best = x.data[at];
                                            best_at = Some(at);
                                        }
                                    }
                                }
                            }
                            if let Some(at) = best_at {
                                data[at] += g0.data[out_flat];
                            }
                            out_flat += 1;
                        }
                    }
                }
            }
            Ok(vec![Some(raw(&x.shape, data))])
        }
        "AveragePool2D" => {
            let x = args[0];
            let geo = pool_geometry("AveragePool2D", x, attrs).map_err(|e| malformed(node, e))?;
            let mut data = vec![0.0; x.data.len()];
            let mut out_flat = 0usize;
            for n in 0..geo.n {
                for c in 0..geo.c {
                    let base = (n * geo.c + c) * geo.h * geo.w;
                    for oh in 0..geo.oh {
                        for ow in 0..geo.ow {
                            let mut hits = Vec::new();
                            for dh in 0..geo.kh {
                                for dw in 0..geo.kw {
                                    let ih = (oh * geo.sh + dh) as isize - geo.pads[0] as isize;
                                    let iw = (ow * geo.sw + dw) as isize - geo.pads[1] as isize;
                                    if ih >= 0
                                        && iw >= 0
                                        && (ih as usize) < geo.h
                                        && (iw as usize) < geo.w
                                    {
                                        hits.push(base + ih as usize * geo.w + iw as usize);
                                    }
                                }
                            }
                            let share = g0.data[out_flat] / hits.len().max(1) as f64;
                            for at in hits {
                                data[at] += share;
                            }
                            out_flat += 1;
                        }
                    }
                }
            }
            Ok(vec![Some(raw(&x.shape, data))])
        }
        "Reshape" | "Flatten" => {
            let x = args[0];
            Ok(vec![Some(raw(&x.shape, g0.data.clone()))])
        }
        "Transpose" => {
            let x = args[0];
            let rank = x.shape.len();
            let perm: Vec<usize> = match ints_attr("Transpose", attrs, "perm")
                .map_err(|e| malformed(node, e))?
            {
                Some(p) => p
                    .into_iter()
                    .map(|v| {
                        let v = if v < 0 { v + rank as i64 } else { v };
                        (0..rank as i64)
                            .contains(&v)
                            .then_some(v as usize)
                            .ok_or_else(|| malformed(node, "perm out of range"))
                    })
                    .collect::<Result<_, _>>()?,
                None => (0..rank).rev().collect(),
            };
            let mut inverse = vec![0usize; rank];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            let (shape, data) = transpose_f64(&g0.data, &g0.shape, &inverse);
            debug_assert_eq!(shape, x.shape);
            Ok(vec![Some(raw(&shape, data))])
        }
        "Concat" => {
            let rank = args[0].shape.len();
            let axis = int_attr("Concat", attrs, "axis")
                .and_then(|a| {
                    resolve_axis(
                        "Concat",
                        a.ok_or_else(|| crate::kernels::KernelError::Attr {
                            op: "Concat".into(),
                            key: "axis".into(),
                            detail: "missing".into(),
                        })?,
                        rank,
                    )
                })
                .map_err(|e| malformed(node, e))?;
            let inner: usize = args[0].shape[axis + 1..].iter().product();
            let outer: usize = args[0].shape[..axis].iter().product();
            let mut grads: Vec<Vec<f64>> =
                args.iter().map(|a| vec![0.0; a.data.len()]).collect();
            let mut pos = 0usize;
            for o in 0..outer {
                for (t, gt) in args.iter().zip(grads.iter_mut()) {
                    let block = t.shape[axis] * inner;
                    gt[o * block..(o + 1) * block]
                        .copy_from_slice(&g0.data[pos..pos + block]);
                    pos += block;
                }
            }
            Ok(args
                .iter()
                .zip(grads)
                .map(|(a, g)| Some(raw(&a.shape, g)))
                .collect())
        }
        "Resize" => resize_vjp(node, args, outs, g0),
        "Cast" => {
            let to = str_attr("Cast", attrs, "to")
                .map_err(|e| malformed(node, e))?
                .unwrap_or("");
            if to.parse::<DType>() == Ok(DType::Float32) && args[0].dtype == DType::Float32 {
                Ok(vec![Some(raw(&args[0].shape, g0.data.clone()))])
            } else {
                Err(GradError::NonDifferentiable {
                    op_type: format!("Cast(to={to})"),
                    node: node.name.clone(),
                })
            }
        }
        // QuantizeLinear (a step function), DequantizeLinear (consumes
        // integer codes), ArgMax, and anything custom.
        other => Err(GradError::NonDifferentiable {
            op_type: other.to_string(),
            node: node.name.clone(),
        }),
    }
}

fn gemm_vjp(
    node: &Node,
    args: &[&TensorValue],
    g0: &TensorValue,
) -> Result<Vec<Option<TensorValue>>, GradError> {
    let attrs = &node.attributes;
    let (a, b) = (args[0], args[1]);
    let alpha = f64_attr("Gemm", attrs, "alpha")
        .map_err(|e| malformed(node, e))?
        .unwrap_or(1.0);
    let beta = f64_attr("Gemm", attrs, "beta")
        .map_err(|e| malformed(node, e))?
        .unwrap_or(1.0);
    let trans_a = int_attr("Gemm", attrs, "transA")
        .map_err(|e| malformed(node, e))?
        .unwrap_or(0)
        != 0;
    let trans_b = int_attr("Gemm", attrs, "transB")
        .map_err(|e| malformed(node, e))?
        .unwrap_or(0)
        != 0;
    let (m, k) = if trans_a {
        (a.shape[1], a.shape[0])
    } else {
        (a.shape[0], a.shape[1])
    };
    let n = g0.shape[1];
    debug_assert_eq!(g0.shape[0], m);

    // materialize op(A) [m,k] and op(B) [k,n]
    let op_a: Vec<f64> = (0..m * k)
        .map(|i| {
            let (r, c) = (i / k, i % k);
            if trans_a {
                a.data[c * a.shape[1] + r]
            } else {
                a.data[r * a.shape[1] + c]
            }
        })
        .collect();
    let op_b: Vec<f64> = (0..k * n)
        .map(|i| {
            let (r, c) = (i / n, i % n);
            if trans_b {
                b.data[c * b.shape[1] + r]
            } else {
                b.data[r * b.shape[1] + c]
            }
        })
        .collect();

    // d op(A) = α · G · op(B)ᵀ ; d op(B) = α · op(A)ᵀ · G
    let mut d_op_a = vec![0.0; m * k];
    for r in 0..m {
        for kk in 0..k {
            let mut acc = 0.0;
            for c in 0..n {
                acc += g0.data[r * n + c] * op_b[kk * n + c];
            }
            d_op_a[r * k + kk] = alpha * acc;
        }
    }
    let mut d_op_b = vec![0.0; k * n];
    for kk in 0..k {
        for c in 0..n {
            let mut acc = 0.0;
            for r in 0..m {
                acc += op_a[r * k + kk] * g0.data[r * n + c];
            }
            d_op_b[kk * n + c] = alpha * acc;
        }
    }

    let ga = if trans_a {
        // A = op(A)ᵀ, so dA[i,j] = d op(A)[j,i]
        let mut t = vec![0.0; m * k];
        for r in 0..m {
            for c in 0..k {
                t[c * m + r] = d_op_a[r * k + c];
            }
        }
        raw(&a.shape, t)
    } else {
        raw(&a.shape, d_op_a)
    };
    let gb = if trans_b {
        let mut t = vec![0.0; k * n];
        for r in 0..k {
            for c in 0..n {
                t[c * k + r] = d_op_b[r * n + c];
            }
        }
        raw(&b.shape, t)
    } else {
        raw(&b.shape, d_op_b)
    };

    let mut result = vec![Some(ga), Some(gb)];
    if let Some(c) = args.get(2) {
        result.push(Some(reduce_broadcast(g0, c, beta)));
    }
    Ok(result)
}

fn fully_connected_vjp(
    args: &[&TensorValue],
    g0: &TensorValue,
) -> Result<Vec<Option<TensorValue>>, GradError> {
    let (x, w) = (args[0], args[1]);
    let batch = x.shape[0];
    let in_dim = x.data.len() / batch;
    let out_dim = w.shape[0];
    let mut gx = vec![0.0; x.data.len()];
    let mut gw = vec![0.0; w.data.len()];
    for n in 0..batch {
        for o in 0..out_dim {
            let g = g0.data[n * out_dim + o];
            if g == 0.0 {
                continue;
            }
            for i in 0..in_dim {
                gx[n * in_dim + i] += g * w.data[o * in_dim + i];
                gw[o * in_dim + i] += g * x.data[n * in_dim + i];
            }
        }
    }
    let mut result = vec![Some(raw(&x.shape, gx)), Some(raw(&w.shape, gw))];
    if let Some(bias) = args.get(2) {
        let mut gb = vec![0.0; bias.data.len()];
        for n in 0..batch {
            for (o, slot) in gb.iter_mut().enumerate() {
                *slot += g0.data[n * out_dim + o];
            }
        }
        result.push(Some(raw(&bias.shape, gb)));
    }
    Ok(result)
}

fn conv2d_vjp(
    node: &Node,
    args: &[&TensorValue],
    g0: &TensorValue,
) -> Result<Vec<Option<TensorValue>>, GradError> {
    let attrs = &node.attributes;
    let (x, w) = (args[0], args[1]);
    let (sh, sw) = match ints_attr("Conv2D", attrs, "strides").map_err(|e| malformed(node, e))? {
        Some(s) => usize_pair("Conv2D", "strides", s).map_err(|e| malformed(node, e))?,
        None => (1, 1),
    };
    let (dh, dw) = match ints_attr("Conv2D", attrs, "dilations").map_err(|e| malformed(node, e))? {
        Some(d) => usize_pair("Conv2D", "dilations", d).map_err(|e| malformed(node, e))?,
        None => (1, 1),
    };
    let pads = match ints_attr("Conv2D", attrs, "pads").map_err(|e| malformed(node, e))? {
        Some(p) => crate::kernels::pads4("Conv2D", "pads", p).map_err(|e| malformed(node, e))?,
        None => [0; 4],
    };
    let (n, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (m, _, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    let (oh, ow) = (g0.shape[2], g0.shape[3]);

    let mut gx = vec![0.0; x.data.len()];
    let mut gw = vec![0.0; w.data.len()];
    let mut gb = args.get(2).map(|b| vec![0.0; b.data.len()]);
    for ni in 0..n {
        for mi in 0..m {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = g0.data[((ni * m + mi) * oh + oy) * ow + ox];
                    if let Some(gb) = gb.as_mut() {
                        gb[mi] += g;
                    }
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..c {
                        let xbase = (ni * c + ci) * h * wd;
                        let wbase = (mi * c + ci) * kh * kw;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky * dh) as isize - pads[0] as isize;
                                let ix = (ox * sw + kx * dw) as isize - pads[1] as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    let xat = xbase + iy as usize * wd + ix as usize;
                                    let wat = wbase + ky * kw + kx;
                                    gx[xat] += g * w.data[wat];
                                    gw[wat] += g * x.data[xat];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut result = vec![Some(raw(&x.shape, gx)), Some(raw(&w.shape, gw))];
    if let (Some(b), Some(gb)) = (args.get(2), gb) {
        result.push(Some(raw(&b.shape, gb)));
    }
    Ok(result)
}

fn resize_vjp(
    node: &Node,
    args: &[&TensorValue],
    outs: &[&TensorValue],
    g0: &TensorValue,
) -> Result<Vec<Option<TensorValue>>, GradError> {
    let x = args[0];
    let mode = str_attr("Resize", &node.attributes, "mode")
        .map_err(|e| malformed(node, e))?
        .unwrap_or("linear");
    let (h, w) = (x.shape[2], x.shape[3]);
    let (oh, ow) = (outs[0].shape[2], outs[0].shape[3]);
    let planes = x.shape[0] * x.shape[1];
    let mut gx = vec![0.0; x.data.len()];
    let src_of = |od: usize, out: usize, inn: usize| (od as f64 + 0.5) * inn as f64 / out as f64;
    for p in 0..planes {
        let in_base = p * h * w;
        let out_base = p * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = g0.data[out_base + oy * ow + ox];
                if mode == "nearest" {
                    let iy = (src_of(oy, oh, h).floor() as usize).min(h - 1);
                    let ix = (src_of(ox, ow, w).floor() as usize).min(w - 1);
                    gx[in_base + iy * w + ix] += g;
                } else {
                    let fy = (src_of(oy, oh, h) - 0.5).clamp(0.0, (h - 1) as f64);
                    let fx = (src_of(ox, ow, w) - 0.5).clamp(0.0, (w - 1) as f64);
                    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                    let (wy, wx) = (fy - y0 as f64, fx - x0 as f64);
                    gx[in_base + y0 * w + x0] += g * (1.0 - wy) * (1.0 - wx);
                    gx[in_base + y0 * w + x1] += g * (1.0 - wy) * wx;
                    gx[in_base + y1 * w + x0] += g * wy * (1.0 - wx);
                    gx[in_base + y1 * w + x1] += g * wy * wx;
                }
            }
        }
    }
    Ok(vec![Some(raw(&x.shape, gx))])
}

/// Central-difference approximation of the same quantity [`backward`]
/// computes for `wrt`: the gradient of `L = Σ_v ⟨seed_v, value_v⟩`.
///
/// The forward evaluations run with float32 storage rounding suspended so
/// the probe sees the smooth f64 composition the gradient rules actually
/// differentiate; with rounding left on, the quotient noise `ε/2h` would
/// swamp small gradients.
pub fn finite_difference_gradient(
    graph: &Graph,
    inputs: &BTreeMap<String, TensorValue>,
    wrt: &str,
    seed: &BTreeMap<String, TensorValue>,
    h: f64,
) -> Result<TensorValue, GradError> {
    let _exact = ExactFloatGuard::new();
    let registry = KernelRegistry::builtin();
    let base = inputs
        .get(wrt)
        .ok_or_else(|| GradError::MissingValue(wrt.to_string()))?;
    let loss = |probe: &BTreeMap<String, TensorValue>| -> Result<f64, GradError> {
        let values = evaluate_all_with(graph, probe, registry)?;
        let mut acc = 0.0;
        for (name, weight) in seed {
            let v = values
                .get(name)
                .ok_or_else(|| GradError::MissingValue(name.clone()))?;
            acc += weight
                .data
                .iter()
                .zip(&v.data)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        Ok(acc)
    };
    let mut grad = vec![0.0; base.data.len()];
    let mut probe = inputs.clone();
    for (i, slot) in grad.iter_mut().enumerate() {
        let mut plus = base.clone();
        plus.data[i] += h;
        probe.insert(wrt.to_string(), plus);
        let lp = loss(&probe)?;
        let mut minus = base.clone();
        minus.data[i] -= h;
        probe.insert(wrt.to_string(), minus);
        let lm = loss(&probe)?;
        *slot = (lp - lm) / (2.0 * h);
    }
    debug_assert_eq!(numel(&base.shape), grad.len());
    Ok(TensorValue::raw_float(base.shape.clone(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{ConstTensor, Node, TensorSpec};
    use crate::interp::evaluate_all_with;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn rel_err(a: &TensorValue, b: &TensorValue) -> f64 {
        assert_eq!(a.shape, b.shape);
        let diff: Vec<f64> = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
        norm(&diff) / norm(&a.data).max(norm(&b.data)).max(1e-12)
    }

    /// Builds inputs, checks backward against central differences.
    fn fd_check(graph: &Graph, seed_value: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
        let mut inputs = BTreeMap::new();
        for spec in &graph.inputs {
            let data: Vec<f64> = (0..numel(&spec.shape))
                .map(|_| 0.25 + 0.7 * rng.gen::<f64>())
                .collect();
            inputs.insert(
                spec.name.clone(),
                TensorValue::new(spec.dtype, spec.shape.clone(), data).unwrap(),
            );
        }
        let values = evaluate_all_with(graph, &inputs, KernelRegistry::builtin()).unwrap();
        let mut seed = BTreeMap::new();
        for name in &graph.outputs {
            let out = &values[name];
            let weights: Vec<f64> = (0..out.data.len())
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect();
            seed.insert(name.clone(), raw(&out.shape, weights));
        }
        let grads = backward(graph, &values, &seed).unwrap();
        for spec in &graph.inputs {
            let ad = &grads[&spec.name];
            let fd = finite_difference_gradient(graph, &inputs, &spec.name, &seed, 1e-3).unwrap();
            let err = rel_err(ad, &fd);
            assert!(
                err <= 1e-4,
                "graph {} input {}: rel err {err:.3e}",
                graph.name,
                spec.name
            );
        }
    }

    fn input(g: &mut Graph, name: &str, shape: Vec<usize>) {
        g.inputs.push(TensorSpec {
            name: name.into(),
            dtype: DType::Float32,
            shape,
        });
    }

    #[test]
    fn elementwise_chain_matches_finite_differences() {
        let mut g = Graph::new("chain");
        input(&mut g, "x", vec![2, 3]);
        input(&mut g, "b", vec![1, 3]);
        g.nodes.push(Node::new("Mul", "m", vec!["x", "b"], vec!["t"]));
        g.nodes.push(Node::new("Sigmoid", "s", vec!["t"], vec!["u"]));
        g.nodes.push(Node::new("Tanh", "th", vec!["u"], vec!["v"]));
        g.nodes.push(Node::new("Add", "a", vec!["v", "b"], vec!["y"]));
        g.outputs.push("y".into());
        g.check().unwrap();
        for s in 0..4 {
            fd_check(&g, s);
        }
    }

    #[test]
    fn broadcast_reduction_accumulates_scalar_gradient() {
        // y = x * s with scalar s: ds must collect from every element
        let mut g = Graph::new("scale");
        input(&mut g, "x", vec![2, 2]);
        input(&mut g, "s", vec![1]);
        g.nodes.push(Node::new("Mul", "m", vec!["x", "s"], vec!["y"]));
        g.outputs.push("y".into());
        let x = TensorValue::float(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = TensorValue::float(vec![1], vec![0.5]).unwrap();
        let inputs = BTreeMap::from([("x".to_string(), x), ("s".to_string(), s)]);
        let values = evaluate_all_with(&g, &inputs, KernelRegistry::builtin()).unwrap();
        let seed = BTreeMap::from([("y".to_string(), raw(&[2, 2], vec![1.0; 4]))]);
        let grads = backward(&g, &values, &seed).unwrap();
        assert_eq!(grads["s"].data, vec![1.0 + 2.0 + 3.0 + 4.0]);
        assert_eq!(grads["x"].data, vec![0.5; 4]);
    }

    #[test]
    fn linear_softmax_gradient_matches_closed_form() {
        // y = Gemm(x, W) row vector; seed = softmax(y) − e_c ⇒ dx = (σ−e)Wᵀ
        let w = vec![0.5, -1.0, 0.25, 1.5, 0.75, -0.5]; // [2, 3]
        let mut g = Graph::new("linear");
        input(&mut g, "x", vec![1, 2]);
        g.constants
            .push(ConstTensor::new("w", DType::Float32, vec![2, 3], w.clone()));
        g.nodes.push(Node::new("Gemm", "mm", vec!["x", "w"], vec!["y"]));
        g.outputs.push("y".into());
        let x = vec![0.3, -0.6];
        let inputs = BTreeMap::from([(
            "x".to_string(),
            TensorValue::float(vec![1, 2], x.clone()).unwrap(),
        )]);
        let values = evaluate_all_with(&g, &inputs, KernelRegistry::builtin()).unwrap();

        let logits = &values["y"].data;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let label = 1usize;
        let seed_data: Vec<f64> = exps
            .iter()
            .enumerate()
            .map(|(i, e)| e / z - if i == label { 1.0 } else { 0.0 })
            .collect();
        let seed = BTreeMap::from([("y".to_string(), raw(&[1, 3], seed_data.clone()))]);
        let grads = backward(&g, &values, &seed).unwrap();

        for i in 0..2 {
            let expect: f64 = (0..3).map(|j| seed_data[j] * w[i * 3 + j]).sum();
            assert!(
                (grads["x"].data[i] - expect).abs() < 1e-9,
                "{} vs {expect}",
                grads["x"].data[i]
            );
        }
    }

    #[test]
    fn conv_pool_dense_stack_matches_finite_differences() {
        let mut g = Graph::new("cnn");
        input(&mut g, "x", vec![1, 2, 6, 6]);
        g.constants.push(ConstTensor::new(
            "w",
            DType::Float32,
            vec![3, 2, 3, 3],
            (0..54).map(|i| ((i * 37 % 19) as f64 - 9.0) / 23.0).collect::<Vec<_>>(),
        ));
        g.constants.push(ConstTensor::new(
            "cb",
            DType::Float32,
            vec![3],
            vec![0.05, -0.1, 0.02],
        ));
        g.constants.push(ConstTensor::new(
            "fw",
            DType::Float32,
            vec![4, 12],
            (0..48).map(|i| ((i * 29 % 17) as f64 - 8.0) / 19.0).collect::<Vec<_>>(),
        ));
        g.nodes.push(
            Node::new("Conv2D", "conv", vec!["x", "w", "cb"], vec!["c"])
                .with_attr("strides", vec![1i64, 1])
                .with_attr("pads", vec![1i64, 1, 1, 1]),
        );
        g.nodes.push(Node::new("Relu", "relu", vec!["c"], vec!["r"]));
        g.nodes.push(
            Node::new("MaxPool2D", "pool", vec!["r"], vec!["p"])
                .with_attr("kernel_shape", vec![3i64, 3])
                .with_attr("strides", vec![3i64, 3]),
        );
        g.nodes.push(Node::new("Flatten", "flat", vec!["p"], vec!["f"]));
        g.nodes.push(Node::new("FullyConnected", "fc", vec!["f", "fw"], vec!["l"]));
        g.nodes.push(Node::new("Softmax", "sm", vec!["l"], vec!["y"]));
        g.outputs.push("y".into());
        g.check().unwrap();
        for s in [7, 21] {
            fd_check(&g, s);
        }
    }

    #[test]
    fn pooling_and_resize_match_finite_differences() {
        let mut g = Graph::new("spatial");
        input(&mut g, "x", vec![1, 1, 4, 4]);
        g.nodes.push(
            Node::new("AveragePool2D", "ap", vec!["x"], vec!["a"])
                .with_attr("kernel_shape", vec![2i64, 2])
                .with_attr("strides", vec![1i64, 1])
                .with_attr("pads", vec![1i64, 1, 0, 0]),
        );
        g.nodes.push(
            Node::new("Resize", "rz", vec!["a"], vec!["r"])
                .with_attr("mode", "linear")
                .with_attr("scales", vec![2i64, 2]),
        );
        g.nodes.push(Node::new("LpNormalization", "ln", vec!["r"], vec!["y"]));
        g.outputs.push("y".into());
        g.check().unwrap();
        for s in [3, 11] {
            fd_check(&g, s);
        }
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let mut g = Graph::new("structural");
        input(&mut g, "a", vec![2, 3]);
        input(&mut g, "b", vec![2, 3]);
        g.nodes.push(
            Node::new("Concat", "cat", vec!["a", "b"], vec!["c"]).with_attr("axis", 1i64),
        );
        g.nodes.push(
            Node::new("Transpose", "tr", vec!["c"], vec!["t"]).with_attr("perm", vec![1i64, 0]),
        );
        g.nodes.push(
            Node::new("Reshape", "rs", vec!["t"], vec!["r"]).with_attr("shape", vec![3i64, -1]),
        );
        g.nodes.push(
            Node::new("Clip", "cl", vec!["r"], vec!["y"])
                .with_attr("min", 0.3)
                .with_attr("max", 0.9),
        );
        g.outputs.push("y".into());
        g.check().unwrap();
        for s in [5, 13] {
            fd_check(&g, s);
        }
    }

    #[test]
    fn gemm_transpose_variants_match_finite_differences() {
        for (ta, tb) in [(0i64, 0i64), (0, 1), (1, 0), (1, 1)] {
            let mut g = Graph::new("gemm");
            let a_shape = if ta == 1 { vec![3, 2] } else { vec![2, 3] };
            let b_shape = if tb == 1 { vec![4, 3] } else { vec![3, 4] };
            input(&mut g, "a", a_shape);
            input(&mut g, "b", b_shape);
            input(&mut g, "c", vec![1, 4]);
            g.nodes.push(
                Node::new("Gemm", "mm", vec!["a", "b", "c"], vec!["y"])
                    .with_attr("alpha", 0.5)
                    .with_attr("beta", 2.0)
                    .with_attr("transA", ta)
                    .with_attr("transB", tb),
            );
            g.outputs.push("y".into());
            g.check().unwrap();
            fd_check(&g, 17);
        }
    }

    #[test]
    fn division_matches_finite_differences() {
        let mut g = Graph::new("div");
        input(&mut g, "a", vec![2, 2]);
        input(&mut g, "b", vec![2, 2]);
        g.nodes.push(Node::new("Div", "d", vec!["a", "b"], vec!["y"]));
        g.outputs.push("y".into());
        for s in 0..3 {
            fd_check(&g, s); // inputs in [0.25, 0.95]: safely away from 0
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_first_argmax() {
        let mut g = Graph::new("pool");
        input(&mut g, "x", vec![1, 1, 2, 2]);
        g.nodes.push(
            Node::new("MaxPool2D", "p", vec!["x"], vec!["y"])
                .with_attr("kernel_shape", vec![2i64, 2]),
        );
        g.outputs.push("y".into());
        // two tied maxima: the first in scan order wins
        let x = TensorValue::float(vec![1, 1, 2, 2], vec![0.5, 0.9, 0.9, 0.1]).unwrap();
        let inputs = BTreeMap::from([("x".to_string(), x)]);
        let values = evaluate_all_with(&g, &inputs, KernelRegistry::builtin()).unwrap();
        let seed = BTreeMap::from([("y".to_string(), raw(&[1, 1, 1, 1], vec![1.0]))]);
        let grads = backward(&g, &values, &seed).unwrap();
        assert_eq!(grads["x"].data, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn quantize_linear_is_not_differentiable() {
        let mut g = Graph::new("q");
        input(&mut g, "x", vec![1, 2]);
        g.constants
            .push(ConstTensor::new("s", DType::Float32, vec![1], vec![0.1]));
        g.constants
            .push(ConstTensor::new("z", DType::Float32, vec![1], vec![0.0]));
        g.nodes.push(Node::new(
            "QuantizeLinear",
            "qn",
            vec!["x", "s", "z"],
            vec!["y"],
        ));
        g.outputs.push("y".into());
        let inputs = BTreeMap::from([(
            "x".to_string(),
            TensorValue::float(vec![1, 2], vec![0.5, 0.7]).unwrap(),
        )]);
        let values = evaluate_all_with(&g, &inputs, KernelRegistry::builtin()).unwrap();
        let seed = BTreeMap::from([("y".to_string(), raw(&[1, 2], vec![1.0, 1.0]))]);
        let err = backward(&g, &values, &seed).unwrap_err();
        match err {
            GradError::NonDifferentiable { op_type, node } => {
                assert_eq!(op_type, "QuantizeLinear");
                assert_eq!(node, "qn");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unseeded_branches_are_not_visited() {
        // ArgMax on a side output would be non-differentiable, but no
        // gradient flows into it, so backward must succeed.
        let mut g = Graph::new("side");
        input(&mut g, "x", vec![1, 3]);
        g.nodes.push(Node::new("Relu", "r", vec!["x"], vec!["y"]));
        g.nodes.push(Node::new("ArgMax", "am", vec!["x"], vec!["c"]));
        g.outputs.push("y".into());
        g.outputs.push("c".into());
        let inputs = BTreeMap::from([(
            "x".to_string(),
            TensorValue::float(vec![1, 3], vec![0.5, -0.25, 1.5]).unwrap(),
        )]);
        let values = evaluate_all_with(&g, &inputs, KernelRegistry::builtin()).unwrap();
        let seed = BTreeMap::from([("y".to_string(), raw(&[1, 3], vec![1.0, 1.0, 1.0]))]);
        let grads = backward(&g, &values, &seed).unwrap();
        assert_eq!(grads["x"].data, vec![1.0, 0.0, 1.0]);
    }
}
