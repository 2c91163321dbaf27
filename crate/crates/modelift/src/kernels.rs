//! The fixed kernel registry: reference implementations of every supported
//! operator.
//!
//! Kernels are pure functions `(&[&TensorValue], &Attrs) -> Vec<TensorValue>`.
//! Arithmetic runs in f64 and is rounded to the output dtype at tensor
//! boundaries (FLOAT32 semantics for float tensors, saturating round-half-even
//! for integer tensors — see [`crate::tensor`]).
//!
//! Layout conventions: Conv2D and the pooling/resize kernels are NCHW; Gemm is
//! strictly 2-D; FullyConnected flattens its input beyond the first dimension
//! and stores weights as `[out, in]`.

use crate::dtype::DType;
use crate::graph::{Attrs, AttrValue};
use crate::tensor::{broadcast_shape, numel, BroadcastIndexer, TensorValue};
use std::collections::BTreeMap;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("{op}: expected {expected} input(s), got {got}")]
    Arity {
        op: String,
        expected: String,
        got: usize,
    },
    #[error("{op}: {detail}")]
    Shape { op: String, detail: String },
    #[error("{op}: attribute \"{key}\" {detail}")]
    Attr {
        op: String,
        key: String,
        detail: String,
    },
    #[error("{op}: {detail}")]
    Domain { op: String, detail: String },
}

pub type KernelResult = Result<Vec<TensorValue>, KernelError>;
pub type KernelFn = fn(&[&TensorValue], &Attrs) -> KernelResult;

/// Map from op_type to kernel implementation.
#[derive(Clone, Default)]
pub struct KernelRegistry {
    map: BTreeMap<String, KernelFn>,
}

impl std::fmt::Debug for KernelRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KernelRegistry")
            .field("ops", &self.names())
            .finish()
    }
}

impl KernelRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The documented supported set. Built once; cheap to clone.
    pub fn builtin() -> &'static KernelRegistry {
        static REG: OnceLock<KernelRegistry> = OnceLock::new();
        REG.get_or_init(|| {
            let mut r = KernelRegistry::empty();
            r.register("Add", k_add);
            r.register("ArgMax", k_argmax);
            r.register("AveragePool2D", k_average_pool2d);
            r.register("Cast", k_cast);
            r.register("Clip", k_clip);
            r.register("Concat", k_concat);
            r.register("Conv2D", k_conv2d);
            r.register("DequantizeLinear", k_dequantize_linear);
            r.register("Div", k_div);
            r.register("Flatten", k_flatten);
            r.register("FullyConnected", k_fully_connected);
            r.register("Gemm", k_gemm);
            r.register("LpNormalization", k_lp_normalization);
            r.register("MaxPool2D", k_max_pool2d);
            r.register("Mul", k_mul);
            r.register("QuantizeLinear", k_quantize_linear_op);
            r.register("Relu", k_relu);
            r.register("Reshape", k_reshape);
            r.register("Resize", k_resize);
            r.register("Sigmoid", k_sigmoid);
            r.register("Softmax", k_softmax);
            r.register("Sub", k_sub);
            r.register("Tanh", k_tanh);
            r.register("Transpose", k_transpose);
            r
        })
    }

    pub fn register(&mut self, op_type: &str, f: KernelFn) {
        self.map.insert(op_type.to_string(), f);
    }

    pub fn contains(&self, op_type: &str) -> bool {
        self.map.contains_key(op_type)
    }

    pub fn get(&self, op_type: &str) -> Option<KernelFn> {
        self.map.get(op_type).copied()
    }

    pub fn names(&self) -> Vec<&str> {
        self.map.keys().map(String::as_str).collect()
    }
}

// ---------------------------------------------------------------------------
// helpers

fn mk(op: &str, dtype: DType, shape: Vec<usize>, data: Vec<f64>) -> Result<TensorValue, KernelError> {
    TensorValue::new(dtype, shape, data).map_err(|e| KernelError::Shape {
        op: op.into(),
        detail: e.to_string(),
    })
}

fn want(op: &str, inputs: &[&TensorValue], lo: usize, hi: usize) -> Result<(), KernelError> {
    if inputs.len() < lo || inputs.len() > hi {
        let expected = if lo == hi {
            lo.to_string()
        } else {
            format!("{lo}..={hi}")
        };
        return Err(KernelError::Arity {
            op: op.into(),
            expected,
            got: inputs.len(),
        });
    }
    Ok(())
}

fn attr_err(op: &str, key: &str, detail: &str) -> KernelError {
    KernelError::Attr {
        op: op.into(),
        key: key.into(),
        detail: detail.into(),
    }
}

pub(crate) fn f64_attr(op: &str, attrs: &Attrs, key: &str) -> Result<Option<f64>, KernelError> {
    match attrs.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| attr_err(op, key, "must be a number")),
    }
}

pub(crate) fn int_attr(op: &str, attrs: &Attrs, key: &str) -> Result<Option<i64>, KernelError> {
    match attrs.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_i64()
            .map(Some)
            .ok_or_else(|| attr_err(op, key, "must be an integer")),
    }
}

pub(crate) fn ints_attr(op: &str, attrs: &Attrs, key: &str) -> Result<Option<Vec<i64>>, KernelError> {
    match attrs.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_i64_list()
            .map(Some)
            .ok_or_else(|| attr_err(op, key, "must be an integer list")),
    }
}

pub(crate) fn str_attr<'a>(op: &str, attrs: &'a Attrs, key: &str) -> Result<Option<&'a str>, KernelError> {
    match attrs.get(key) {
        None => Ok(None),
        Some(AttrValue::Str(s)) => Ok(Some(s)),
        Some(_) => Err(attr_err(op, key, "must be a string")),
    }
}

pub(crate) fn usize_pair(op: &str, key: &str, v: Vec<i64>) -> Result<(usize, usize), KernelError> {
    if v.len() != 2 || v.iter().any(|&x| x < 1) {
        return Err(attr_err(op, key, "must be two positive integers"));
    }
    Ok((v[0] as usize, v[1] as usize))
}

pub(crate) fn pads4(op: &str, key: &str, v: Vec<i64>) -> Result<[usize; 4], KernelError> {
    if v.len() != 4 || v.iter().any(|&x| x < 0) {
        return Err(attr_err(op, key, "must be four non-negative integers [t,l,b,r]"));
    }
    Ok([v[0] as usize, v[1] as usize, v[2] as usize, v[3] as usize])
}

pub(crate) fn resolve_axis(op: &str, axis: i64, rank: usize) -> Result<usize, KernelError> {
    let resolved = if axis < 0 { axis + rank as i64 } else { axis };
    if resolved < 0 || resolved >= rank as i64 {
        return Err(KernelError::Shape {
            op: op.into(),
            detail: format!("axis {axis} out of range for rank {rank}"),
        });
    }
    Ok(resolved as usize)
}

/// Output dtype of Add/Sub/Mul: preserved when both sides agree, FLOAT32
/// otherwise.
fn promote(a: DType, b: DType) -> DType {
    if a == b {
        a
    } else {
        DType::Float32
    }
}

fn binary(
    op: &str,
    inputs: &[&TensorValue],
    dtype: impl Fn(DType, DType) -> DType,
    f: impl Fn(f64, f64) -> f64,
) -> KernelResult {
    want(op, inputs, 2, 2)?;
    let (a, b) = (inputs[0], inputs[1]);
    let shape = broadcast_shape(&a.shape, &b.shape).map_err(|e| KernelError::Shape {
        op: op.into(),
        detail: e.to_string(),
    })?;
    let ia = BroadcastIndexer::new(&a.shape, &shape);
    let ib = BroadcastIndexer::new(&b.shape, &shape);
    let n = numel(&shape);
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        data.push(f(a.data[ia.map(i)], b.data[ib.map(i)]));
    }
    Ok(vec![mk(op, dtype(a.dtype, b.dtype), shape, data)?])
}

fn unary(
    op: &str,
    inputs: &[&TensorValue],
    dtype: impl Fn(DType) -> DType,
    f: impl Fn(f64) -> f64,
) -> KernelResult {
    want(op, inputs, 1, 1)?;
    let x = inputs[0];
    let data = x.data.iter().map(|&v| f(v)).collect();
    Ok(vec![mk(op, dtype(x.dtype), x.shape.clone(), data)?])
}

/// Resolves (scale, zero_point) for the quantization ops: either trailing
/// scalar inputs `[x, scale, zero_point]` (canonical) or `scale` /
/// `zero_point` attributes.
fn quant_params(op: &str, inputs: &[&TensorValue], attrs: &Attrs) -> Result<(f64, f64), KernelError> {
    let scalar = |t: &TensorValue, what: &str| -> Result<f64, KernelError> {
        t.as_scalar().ok_or_else(|| KernelError::Shape {
            op: op.into(),
            detail: format!("{what} input must be a scalar tensor, got shape {:?}", t.shape),
        })
    };
    let (scale, zero_point) = if inputs.len() == 3 {
        (scalar(inputs[1], "scale")?, scalar(inputs[2], "zero_point")?)
    } else if inputs.len() == 1 {
        let s = f64_attr(op, attrs, "scale")?
            .ok_or_else(|| attr_err(op, "scale", "missing (no scale input either)"))?;
        let z = f64_attr(op, attrs, "zero_point")?.unwrap_or(0.0);
        (s, z)
    } else {
        return Err(KernelError::Arity {
            op: op.into(),
            expected: "1 (attrs) or 3 ([x, scale, zero_point])".into(),
            got: inputs.len(),
        });
    };
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(KernelError::Domain {
            op: op.into(),
            detail: format!("scale must be > 0, got {scale}"),
        });
    }
    if zero_point.fract() != 0.0 {
        return Err(KernelError::Domain {
            op: op.into(),
            detail: format!("zero_point must be an integer, got {zero_point}"),
        });
    }
    Ok((scale, zero_point))
}

// ---------------------------------------------------------------------------
// quantization (the standalone forms are part of the public API)

/// y = δ(x/scale + zero_point), δ = round-half-even then saturate to [0,255].
pub fn kernel_quantize_linear(
    x: &TensorValue,
    scale: f64,
    zero_point: i64,
) -> Result<TensorValue, KernelError> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(KernelError::Domain {
            op: "QuantizeLinear".into(),
            detail: format!("scale must be > 0, got {scale}"),
        });
    }
    // TensorValue finalization for UINT8 is exactly δ
    let data = x.data.iter().map(|&v| v / scale + zero_point as f64).collect();
    mk("QuantizeLinear", DType::Uint8, x.shape.clone(), data)
}

/// y = (x − zero_point) × scale (the weight-dequantization formula).
pub fn kernel_dequantize_linear(
    x: &TensorValue,
    scale: f64,
    zero_point: i64,
) -> Result<TensorValue, KernelError> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(KernelError::Domain {
            op: "DequantizeLinear".into(),
            detail: format!("scale must be > 0, got {scale}"),
        });
    }
    let data = x.data.iter().map(|&v| (v - zero_point as f64) * scale).collect();
    mk("DequantizeLinear", DType::Float32, x.shape.clone(), data)
}

fn k_quantize_linear_op(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    let (scale, zp) = quant_params("QuantizeLinear", inputs, attrs)?;
    Ok(vec![kernel_quantize_linear(inputs[0], scale, zp as i64)?])
}

fn k_dequantize_linear(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    let (scale, zp) = quant_params("DequantizeLinear", inputs, attrs)?;
    Ok(vec![kernel_dequantize_linear(inputs[0], scale, zp as i64)?])
}

// ---------------------------------------------------------------------------
// elementwise

fn k_add(i: &[&TensorValue], _: &Attrs) -> KernelResult {
    binary("Add", i, promote, |a, b| a + b)
}

fn k_sub(i: &[&TensorValue], _: &Attrs) -> KernelResult {
    binary("Sub", i, promote, |a, b| a - b)
}

fn k_mul(i: &[&TensorValue], _: &Attrs) -> KernelResult {
    binary("Mul", i, promote, |a, b| a * b)
}

fn k_div(i: &[&TensorValue], _: &Attrs) -> KernelResult {
    binary("Div", i, |_, _| DType::Float32, |a, b| a / b)
}

fn k_relu(i: &[&TensorValue], _: &Attrs) -> KernelResult {
    unary("Relu", i, |d| d, |v| v.max(0.0))
}

fn k_sigmoid(i: &[&TensorValue], _: &Attrs) -> KernelResult {
    unary("Sigmoid", i, |_| DType::Float32, |v| 1.0 / (1.0 + (-v).exp()))
}

fn k_tanh(i: &[&TensorValue], _: &Attrs) -> KernelResult {
    unary("Tanh", i, |_| DType::Float32, f64::tanh)
}

/// Widest finite f32, used as the default Clip bound.
pub const CLIP_DEFAULT_BOUND: f64 = f32::MAX as f64;

fn k_clip(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    let lo = f64_attr("Clip", attrs, "min")?.unwrap_or(-CLIP_DEFAULT_BOUND);
    let hi = f64_attr("Clip", attrs, "max")?.unwrap_or(CLIP_DEFAULT_BOUND);
    if lo > hi {
        return Err(KernelError::Domain {
            op: "Clip".into(),
            detail: format!("min {lo} > max {hi}"),
        });
    }
    unary("Clip", inputs, |d| d, |v| v.clamp(lo, hi))
}

// ---------------------------------------------------------------------------
// shape ops

fn k_reshape(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("Reshape", inputs, 1, 1)?;
    let x = inputs[0];
    let spec = ints_attr("Reshape", attrs, "shape")?
        .ok_or_else(|| attr_err("Reshape", "shape", "missing"))?;
    let mut shape = Vec::with_capacity(spec.len());
    let mut infer: Option<usize> = None;
    let mut known = 1usize;
    for (i, &d) in spec.iter().enumerate() {
        if d == -1 {
            if infer.replace(i).is_some() {
                return Err(attr_err("Reshape", "shape", "has more than one -1"));
            }
            shape.push(0);
        } else if d < 1 {
            return Err(attr_err("Reshape", "shape", "entries must be positive or -1"));
        } else {
            known *= d as usize;
            shape.push(d as usize);
        }
    }
    if let Some(i) = infer {
        if known == 0 || x.data.len() % known != 0 {
            return Err(KernelError::Shape {
                op: "Reshape".into(),
                detail: format!("cannot infer -1 in {spec:?} for {} elements", x.data.len()),
            });
        }
        shape[i] = x.data.len() / known;
    }
    Ok(vec![mk("Reshape", x.dtype, shape, x.data.clone())?])
}

fn k_flatten(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("Flatten", inputs, 1, 1)?;
    let x = inputs[0];
    let axis = int_attr("Flatten", attrs, "axis")?.unwrap_or(1);
    let axis = if axis == x.shape.len() as i64 {
        x.shape.len() // flatten-all-to-row special case
    } else {
        resolve_axis("Flatten", axis, x.shape.len().max(1))?
    };
    let lead: usize = x.shape[..axis.min(x.shape.len())].iter().product();
    let shape = vec![lead, x.data.len() / lead.max(1)];
    Ok(vec![mk("Flatten", x.dtype, shape, x.data.clone())?])
}

fn k_transpose(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("Transpose", inputs, 1, 1)?;
    let x = inputs[0];
    let rank = x.shape.len();
    let perm: Vec<usize> = match ints_attr("Transpose", attrs, "perm")? {
        Some(p) => {
            let mut seen = vec![false; rank];
            let mut perm = Vec::with_capacity(rank);
            for &v in &p {
                let v = if v < 0 { v + rank as i64 } else { v };
                if v < 0 || v >= rank as i64 || seen[v as usize] {
                    return Err(attr_err("Transpose", "perm", "must be a permutation of the axes"));
                }
                seen[v as usize] = true;
                perm.push(v as usize);
            }
            if perm.len() != rank {
                return Err(attr_err("Transpose", "perm", "length must equal the rank"));
            }
            perm
        }
        None => (0..rank).rev().collect(),
    };
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape[p]).collect();
    let in_strides = crate::tensor::strides(&x.shape);
    let out_strides = crate::tensor::strides(&out_shape);
    let n = x.data.len();
    let mut data = vec![0.0; n];
    for (flat, slot) in data.iter_mut().enumerate() {
        let mut src = 0;
        let mut rem = flat;
        for (d, &os) in out_strides.iter().enumerate() {
            let idx = rem / os;
            rem %= os;
            src += idx * in_strides[perm[d]];
        }
        *slot = x.data[src];
    }
    Ok(vec![mk("Transpose", x.dtype, out_shape, data)?])
}

fn k_concat(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("Concat", inputs, 1, usize::MAX)?;
    let axis_raw = int_attr("Concat", attrs, "axis")?
        .ok_or_else(|| attr_err("Concat", "axis", "missing"))?;
    let rank = inputs[0].shape.len();
    let axis = resolve_axis("Concat", axis_raw, rank)?;
    let dtype = inputs[0].dtype;
    let mut out_shape = inputs[0].shape.clone();
    for t in &inputs[1..] {
        if t.shape.len() != rank
            || t.shape
                .iter()
                .zip(&inputs[0].shape)
                .enumerate()
                .any(|(d, (a, b))| d != axis && a != b)
        {
            return Err(KernelError::Shape {
                op: "Concat".into(),
                detail: format!("shapes {:?} and {:?} differ off axis {axis}", inputs[0].shape, t.shape),
            });
        }
        if t.dtype != dtype {
            return Err(KernelError::Shape {
                op: "Concat".into(),
                detail: "all inputs must share one dtype".into(),
            });
        }
        out_shape[axis] += t.shape[axis];
    }
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        for t in inputs {
            let block = t.shape[axis] * inner;
            data.extend_from_slice(&t.data[o * block..(o + 1) * block]);
        }
    }
    Ok(vec![mk("Concat", dtype, out_shape, data)?])
}

// ---------------------------------------------------------------------------
// reductions / indexing

fn k_argmax(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("ArgMax", inputs, 1, 1)?;
    let x = inputs[0];
    let rank = x.shape.len().max(1);
    let axis = resolve_axis("ArgMax", int_attr("ArgMax", attrs, "axis")?.unwrap_or(0), rank)?;
    let keepdims = int_attr("ArgMax", attrs, "keepdims")?.unwrap_or(1) != 0;
    let dim = x.shape[axis];
    let inner: usize = x.shape[axis + 1..].iter().product();
    let outer: usize = x.shape[..axis].iter().product();
    let mut data = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for d in 0..dim {
                let v = x.data[(o * dim + d) * inner + i];
                if v > best_v {
                    best_v = v;
                    best = d;
                }
            }
            data.push(best as f64);
        }
    }
    let mut shape = x.shape.clone();
    if keepdims {
        shape[axis] = 1;
    } else {
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
    }
    Ok(vec![mk("ArgMax", DType::Int64, shape, data)?])
}

fn k_softmax(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("Softmax", inputs, 1, 1)?;
    let x = inputs[0];
    let rank = x.shape.len().max(1);
    let axis = resolve_axis("Softmax", int_attr("Softmax", attrs, "axis")?.unwrap_or(-1), rank)?;
    let dim = x.shape[axis];
    let inner: usize = x.shape[axis + 1..].iter().product();
    let outer: usize = x.shape[..axis].iter().product();
    let mut data = vec![0.0; x.data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |d: usize| (o * dim + d) * inner + i;
            let max = (0..dim).map(|d| x.data[at(d)]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..dim).map(|d| (x.data[at(d)] - max).exp()).sum();
            for d in 0..dim {
                data[at(d)] = (x.data[at(d)] - max).exp() / sum;
            }
        }
    }
    Ok(vec![mk("Softmax", DType::Float32, x.shape.clone(), data)?])
}

/// Guard against division by zero on all-zero slices; small enough to be
/// invisible at FLOAT32 precision for ordinary inputs.
pub const LP_NORM_EPSILON: f64 = 1e-12;

fn k_lp_normalization(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("LpNormalization", inputs, 1, 1)?;
    let x = inputs[0];
    let p = int_attr("LpNormalization", attrs, "p")?.unwrap_or(2);
    if p != 1 && p != 2 {
        return Err(attr_err("LpNormalization", "p", "must be 1 or 2"));
    }
    let rank = x.shape.len().max(1);
    let axis = resolve_axis(
        "LpNormalization",
        int_attr("LpNormalization", attrs, "axis")?.unwrap_or(-1),
        rank,
    )?;
    let dim = x.shape[axis];
    let inner: usize = x.shape[axis + 1..].iter().product();
    let outer: usize = x.shape[..axis].iter().product();
    let mut data = vec![0.0; x.data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |d: usize| (o * dim + d) * inner + i;
            let norm = if p == 1 {
                (0..dim).map(|d| x.data[at(d)].abs()).sum::<f64>()
            } else {
                (0..dim).map(|d| x.data[at(d)] * x.data[at(d)]).sum::<f64>().sqrt()
            };
            let norm = norm.max(LP_NORM_EPSILON);
            for d in 0..dim {
                data[at(d)] = x.data[at(d)] / norm;
            }
        }
    }
    Ok(vec![mk("LpNormalization", DType::Float32, x.shape.clone(), data)?])
}

// ---------------------------------------------------------------------------
// linear algebra

fn k_gemm(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("Gemm", inputs, 2, 3)?;
    let (a, b) = (inputs[0], inputs[1]);
    if a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(KernelError::Shape {
            op: "Gemm".into(),
            detail: format!("A and B must be rank 2, got {:?} and {:?}", a.shape, b.shape),
        });
    }
    let alpha = f64_attr("Gemm", attrs, "alpha")?.unwrap_or(1.0);
    let beta = f64_attr("Gemm", attrs, "beta")?.unwrap_or(1.0);
    let trans_a = int_attr("Gemm", attrs, "transA")?.unwrap_or(0) != 0;
    let trans_b = int_attr("Gemm", attrs, "transB")?.unwrap_or(0) != 0;
    let (m, ka) = if trans_a { (a.shape[1], a.shape[0]) } else { (a.shape[0], a.shape[1]) };
    let (kb, n) = if trans_b { (b.shape[1], b.shape[0]) } else { (b.shape[0], b.shape[1]) };
    if ka != kb {
        return Err(KernelError::Shape {
            op: "Gemm".into(),
            detail: format!("inner dimensions disagree: {ka} vs {kb}"),
        });
    }
    let at = |r: usize, c: usize| if trans_a { a.data[c * a.shape[1] + r] } else { a.data[r * a.shape[1] + c] };
    let bt = |r: usize, c: usize| if trans_b { b.data[c * b.shape[1] + r] } else { b.data[r * b.shape[1] + c] };
    let mut data = vec![0.0; m * n];
    for r in 0..m {
        for c in 0..n {
            let mut acc = 0.0;
            for k in 0..ka {
                acc += at(r, k) * bt(k, c);
            }
            data[r * n + c] = alpha * acc;
        }
    }
    if let Some(cin) = inputs.get(2) {
        let out_shape = [m, n];
        if broadcast_shape(&out_shape, &cin.shape).map(|s| s != out_shape).unwrap_or(true) {
            return Err(KernelError::Shape {
                op: "Gemm".into(),
                detail: format!("C shape {:?} does not broadcast to [{m}, {n}]", cin.shape),
            });
        }
        let ic = BroadcastIndexer::new(&cin.shape, &out_shape);
        for (i, v) in data.iter_mut().enumerate() {
            *v += beta * cin.data[ic.map(i)];
        }
    }
    Ok(vec![mk("Gemm", DType::Float32, vec![m, n], data)?])
}

fn k_fully_connected(inputs: &[&TensorValue], _: &Attrs) -> KernelResult {
    want("FullyConnected", inputs, 2, 3)?;
    let (x, w) = (inputs[0], inputs[1]);
    if x.shape.len() < 2 || w.shape.len() != 2 {
        return Err(KernelError::Shape {
            op: "FullyConnected".into(),
            detail: format!("X must be rank ≥ 2 and W rank 2, got {:?} and {:?}", x.shape, w.shape),
        });
    }
    let batch = x.shape[0];
    let in_dim = x.data.len() / batch;
    let (out_dim, w_in) = (w.shape[0], w.shape[1]);
    if w_in != in_dim {
        return Err(KernelError::Shape {
            op: "FullyConnected".into(),
            detail: format!("W expects {w_in} input features, X flattens to {in_dim}"),
        });
    }
    if let Some(b) = inputs.get(2) {
        if b.data.len() != out_dim {
            return Err(KernelError::Shape {
                op: "FullyConnected".into(),
                detail: format!("bias has {} elements, want {out_dim}", b.data.len()),
            });
        }
    }
    let mut data = vec![0.0; batch * out_dim];
    for n in 0..batch {
        for o in 0..out_dim {
            let mut acc = inputs.get(2).map(|b| b.data[o]).unwrap_or(0.0);
            for i in 0..in_dim {
                acc += x.data[n * in_dim + i] * w.data[o * in_dim + i];
            }
            data[n * out_dim + o] = acc;
        }
    }
    Ok(vec![mk("FullyConnected", DType::Float32, vec![batch, out_dim], data)?])
}

// ---------------------------------------------------------------------------
// spatial ops (NCHW)

pub(crate) struct PoolGeom {
    pub(crate) n: usize,
    pub(crate) c: usize,
    pub(crate) h: usize,
    pub(crate) w: usize,
    pub(crate) kh: usize,
    pub(crate) kw: usize,
    pub(crate) sh: usize,
    pub(crate) sw: usize,
    pub(crate) pads: [usize; 4],
    pub(crate) oh: usize,
    pub(crate) ow: usize,
}

pub(crate) fn pool_geometry(op: &str, x: &TensorValue, attrs: &Attrs) -> Result<PoolGeom, KernelError> {
    if x.shape.len() != 4 {
        return Err(KernelError::Shape {
            op: op.into(),
            detail: format!("input must be NCHW rank 4, got {:?}", x.shape),
        });
    }
    let ks = ints_attr(op, attrs, "kernel_shape")?
        .ok_or_else(|| attr_err(op, "kernel_shape", "missing"))?;
    let (kh, kw) = usize_pair(op, "kernel_shape", ks.clone())?;
    let (sh, sw) = match ints_attr(op, attrs, "strides")? {
        Some(s) => usize_pair(op, "strides", s)?,
        None => (kh, kw),
    };
    let pads = match ints_attr(op, attrs, "pads")? {
        Some(p) => pads4(op, "pads", p)?,
        None => [0; 4],
    };
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let span_h = h + pads[0] + pads[2];
    let span_w = w + pads[1] + pads[3];
    if span_h < kh || span_w < kw {
        return Err(KernelError::Shape {
            op: op.into(),
            detail: format!("kernel {kh}x{kw} larger than padded input {span_h}x{span_w}"),
        });
    }
    Ok(PoolGeom {
        n,
        c,
        h,
        w,
        kh,
        kw,
        sh,
        sw,
        pads,
        oh: (span_h - kh) / sh + 1,
        ow: (span_w - kw) / sw + 1,
    })
}

fn k_max_pool2d(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("MaxPool2D", inputs, 1, 1)?;
    let x = inputs[0];
    let g = pool_geometry("MaxPool2D", x, attrs)?;
    let mut data = Vec::with_capacity(g.n * g.c * g.oh * g.ow);
    for n in 0..g.n {
        for c in 0..g.c {
            let base = (n * g.c + c) * g.h * g.w;
            for oh in 0..g.oh {
                for ow in 0..g.ow {
                    let mut best = f64::NEG_INFINITY;
                    for dh in 0..g.kh {
                        for dw in 0..g.kw {
                            let ih = (oh * g.sh + dh) as isize - g.pads[0] as isize;
                            let iw = (ow * g.sw + dw) as isize - g.pads[1] as isize;
                            if ih >= 0 && iw >= 0 && (ih as usize) < g.h && (iw as usize) < g.w {
                                best = best.max(x.data[base + ih as usize * g.w + iw as usize]);
                            }
                        }
                    }
                    data.push(best);
                }
            }
        }
    }
    Ok(vec![mk("MaxPool2D", x.dtype, vec![g.n, g.c, g.oh, g.ow], data)?])
}

fn k_average_pool2d(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("AveragePool2D", inputs, 1, 1)?;
    let x = inputs[0];
    let g = pool_geometry("AveragePool2D", x, attrs)?;
    let mut data = Vec::with_capacity(g.n * g.c * g.oh * g.ow);
    for n in 0..g.n {
        for c in 0..g.c {
            let base = (n * g.c + c) * g.h * g.w;
            for oh in 0..g.oh {
                for ow in 0..g.ow {
                    let mut acc = 0.0;
                    let mut count = 0usize; // padding excluded from the mean
                    for dh in 0..g.kh {
                        for dw in 0..g.kw {
                            let ih = (oh * g.sh + dh) as isize - g.pads[0] as isize;
                            let iw = (ow * g.sw + dw) as isize - g.pads[1] as isize;
                            if ih >= 0 && iw >= 0 && (ih as usize) < g.h && (iw as usize) < g.w {
                                acc += x.data[base + ih as usize * g.w + iw as usize];
                                count += 1;
                            }
                        }
                    }
                    data.push(acc / count.max(1) as f64);
                }
            }
        }
    }
    Ok(vec![mk("AveragePool2D", DType::Float32, vec![g.n, g.c, g.oh, g.ow], data)?])
}

fn k_conv2d(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("Conv2D", inputs, 2, 3)?;
    let (x, w) = (inputs[0], inputs[1]);
    if x.shape.len() != 4 || w.shape.len() != 4 {
        return Err(KernelError::Shape {
            op: "Conv2D".into(),
            detail: format!("X and W must be rank 4 (NCHW / OIHW), got {:?} and {:?}", x.shape, w.shape),
        });
    }
    let (sh, sw) = match ints_attr("Conv2D", attrs, "strides")? {
        Some(s) => usize_pair("Conv2D", "strides", s)?,
        None => (1, 1),
    };
    let (dh, dw) = match ints_attr("Conv2D", attrs, "dilations")? {
        Some(d) => usize_pair("Conv2D", "dilations", d)?,
        None => (1, 1),
    };
    let pads = match ints_attr("Conv2D", attrs, "pads")? {
        Some(p) => pads4("Conv2D", "pads", p)?,
        None => [0; 4],
    };
    let (n, c, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (m, wc, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    if wc != c {
        return Err(KernelError::Shape {
            op: "Conv2D".into(),
            detail: format!("weight expects {wc} channels, input has {c}"),
        });
    }
    if let Some(b) = inputs.get(2) {
        if b.data.len() != m {
            return Err(KernelError::Shape {
                op: "Conv2D".into(),
                detail: format!("bias has {} elements, want {m}", b.data.len()),
            });
        }
    }
    let eff_kh = (kh - 1) * dh + 1;
    let eff_kw = (kw - 1) * dw + 1;
    let span_h = h + pads[0] + pads[2];
    let span_w = wd + pads[1] + pads[3];
    if span_h < eff_kh || span_w < eff_kw {
        return Err(KernelError::Shape {
            op: "Conv2D".into(),
            detail: format!("effective kernel {eff_kh}x{eff_kw} larger than padded input {span_h}x{span_w}"),
        });
    }
    let oh = (span_h - eff_kh) / sh + 1;
    let ow = (span_w - eff_kw) / sw + 1;
    let mut data = vec![0.0; n * m * oh * ow];
    for ni in 0..n {
        for mi in 0..m {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = inputs.get(2).map(|b| b.data[mi]).unwrap_or(0.0);
                    for ci in 0..c {
                        let xbase = (ni * c + ci) * h * wd;
                        let wbase = (mi * c + ci) * kh * kw;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky * dh) as isize - pads[0] as isize;
                                let ix = (ox * sw + kx * dw) as isize - pads[1] as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.data[xbase + iy as usize * wd + ix as usize]
                                        * w.data[wbase + ky * kw + kx];
                                }
                            }
                        }
                    }
                    data[((ni * m + mi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Ok(vec![mk("Conv2D", DType::Float32, vec![n, m, oh, ow], data)?])
}

fn k_resize(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("Resize", inputs, 1, 1)?;
    let x = inputs[0];
    if x.shape.len() != 4 {
        return Err(KernelError::Shape {
            op: "Resize".into(),
            detail: format!("input must be NCHW rank 4, got {:?}", x.shape),
        });
    }
    let mode = str_attr("Resize", attrs, "mode")?.unwrap_or("linear");
    if mode != "nearest" && mode != "linear" {
        return Err(attr_err("Resize", "mode", "must be \"nearest\" or \"linear\""));
    }
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (oh, ow) = if let Some(sizes) = ints_attr("Resize", attrs, "sizes")? {
        usize_pair("Resize", "sizes", sizes)?
    } else if let Some(scales) = attrs.get("scales").map(|v| v.as_f64_list()) {
        let scales = scales.ok_or_else(|| attr_err("Resize", "scales", "must be a numeric list"))?;
        if scales.len() != 2 || scales.iter().any(|&s| !(s > 0.0)) {
            return Err(attr_err("Resize", "scales", "must be two positive numbers [sh, sw]"));
        }
        (((h as f64 * scales[0]).floor() as usize).max(1), ((w as f64 * scales[1]).floor() as usize).max(1))
    } else {
        return Err(attr_err("Resize", "scales", "missing (provide \"scales\" or \"sizes\")"));
    };
    let mut data = Vec::with_capacity(n * c * oh * ow);
    // half-pixel coordinate transform in both modes
    let src_of = |od: usize, out: usize, inn: usize| (od as f64 + 0.5) * inn as f64 / out as f64;
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let v = if mode == "nearest" {
                        let iy = (src_of(oy, oh, h).floor() as usize).min(h - 1);
                        let ix = (src_of(ox, ow, w).floor() as usize).min(w - 1);
                        x.data[base + iy * w + ix]
                    } else {
                        let fy = (src_of(oy, oh, h) - 0.5).clamp(0.0, (h - 1) as f64);
                        let fx = (src_of(ox, ow, w) - 0.5).clamp(0.0, (w - 1) as f64);
                        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                        let (wy, wx) = (fy - y0 as f64, fx - x0 as f64);
                        let g = |yy: usize, xx: usize| x.data[base + yy * w + xx];
                        g(y0, x0) * (1.0 - wy) * (1.0 - wx)
                            + g(y0, x1) * (1.0 - wy) * wx
                            + g(y1, x0) * wy * (1.0 - wx)
                            + g(y1, x1) * wy * wx
                    };
                    data.push(v);
                }
            }
        }
    }
    let dtype = if mode == "nearest" { x.dtype } else { DType::Float32 };
    Ok(vec![mk("Resize", dtype, vec![n, c, oh, ow], data)?])
}

fn k_cast(inputs: &[&TensorValue], attrs: &Attrs) -> KernelResult {
    want("Cast", inputs, 1, 1)?;
    let x = inputs[0];
    let to = str_attr("Cast", attrs, "to")?.ok_or_else(|| attr_err("Cast", "to", "missing"))?;
    let dtype: DType = to
        .parse()
        .map_err(|_| attr_err("Cast", "to", "must name a dtype (float32|uint8|int8|int32|int64|bool)"))?;
    Ok(vec![mk("Cast", dtype, x.shape.clone(), x.data.clone())?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> TensorValue {
        TensorValue::new(DType::Float32, shape.to_vec(), data.to_vec()).unwrap()
    }

    fn run(op: &str, inputs: &[&TensorValue], attrs: &Attrs) -> TensorValue {
        let k = KernelRegistry::builtin().get(op).unwrap();
        k(inputs, attrs).unwrap().remove(0)
    }

    fn attrs(pairs: &[(&str, AttrValue)]) -> Attrs {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn quantize_hand_examples() {
        // 0.5/0.1 + 3 = 8
        let y = kernel_quantize_linear(&t(&[1], &[0.5]), 0.1, 3).unwrap();
        assert_eq!(y.dtype, DType::Uint8);
        assert_eq!(y.data, vec![8.0]);
        // -10/0.1 = -100 saturates to 0
        let y = kernel_quantize_linear(&t(&[1], &[-10.0]), 0.1, 0).unwrap();
        assert_eq!(y.data, vec![0.0]);
        // zero maps to the zero point for any scale
        for s in [0.001, 0.1, 1.0, 37.5] {
            let y = kernel_quantize_linear(&t(&[1], &[0.0]), s, 0).unwrap();
            assert_eq!(y.data, vec![0.0]);
        }
        assert!(matches!(
            kernel_quantize_linear(&t(&[1], &[1.0]), 0.0, 0),
            Err(KernelError::Domain { .. })
        ));
    }

    #[test]
    fn dequantize_hand_examples() {
        let y = kernel_dequantize_linear(&t(&[1], &[8.0]), 0.1, 3).unwrap();
        assert_eq!(y.dtype, DType::Float32);
        assert!((y.data[0] - 0.5).abs() < 1e-12);
        // zero-point maps to 0.0
        let y = kernel_dequantize_linear(&t(&[1], &[3.0]), 0.1, 3).unwrap();
        assert_eq!(y.data, vec![0.0]);
        // round trip at the hand example
        let q = kernel_quantize_linear(&t(&[1], &[0.5]), 0.1, 3).unwrap();
        let d = kernel_dequantize_linear(&q, 0.1, 3).unwrap();
        assert!((d.data[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn quantize_of_dequantize_is_identity_on_all_codes() {
        for (s, z) in [(0.1, 3), (1.0 / 255.0, 0), (0.0038, 128), (2.5, 255), (0.75, 17)] {
            for u in 0..=255u16 {
                let x = kernel_dequantize_linear(&t(&[1], &[u as f64]), s, z).unwrap();
                let q = kernel_quantize_linear(&x, s, z).unwrap();
                assert_eq!(q.data[0], u as f64, "code {u} with scale {s}, zp {z}");
            }
        }
    }

    #[test]
    fn rounding_is_half_even() {
        // 0.5/1 + 0 rounds to 0, 1.5 rounds to 2
        let y = kernel_quantize_linear(&t(&[2], &[0.5, 1.5]), 1.0, 0).unwrap();
        assert_eq!(y.data, vec![0.0, 2.0]);
    }

    #[test]
    fn broadcasting_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let rank = rng.gen_range(1..=4);
            let full: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=5)).collect();
            // b drops or shrinks trailing axes
            let b_shape: Vec<usize> = full
                .iter()
                .skip(rng.gen_range(0..rank))
                .map(|&d| if rng.gen_bool(0.4) { 1 } else { d })
                .collect();
            let a = t(&full, &(0..numel(&full)).map(|i| i as f64 * 0.25 + 1.0).collect::<Vec<_>>());
            let bn = numel(&b_shape).max(1);
            let b = if b_shape.is_empty() {
                t(&[1], &[2.0])
            } else {
                t(&b_shape, &(0..bn).map(|i| i as f64 * 0.5 + 1.0).collect::<Vec<_>>())
            };
            let got = run("Mul", &[&a, &b], &Attrs::new());
            // naive: iterate multi-indices of the output
            assert_eq!(got.shape, full);
            let out_strides = crate::tensor::strides(&full);
            for flat in 0..numel(&full) {
                let mut idx = vec![0usize; rank];
                let mut rem = flat;
                for (d, &s) in out_strides.iter().enumerate() {
                    idx[d] = rem / s;
                    rem %= s;
                }
                let b_rank = b.shape.len();
                let mut bflat = 0;
                let bstr = crate::tensor::strides(&b.shape);
                for d in 0..b_rank {
                    let od = rank - b_rank + d;
                    let i = if b.shape[d] == 1 { 0 } else { idx[od] };
                    bflat += i * bstr[d];
                }
                let expect = (a.data[flat] * b.data[bflat]) as f32 as f64;
                assert_eq!(got.data[flat], expect);
            }
        }
    }

    #[test]
    fn add_promotes_mixed_dtypes_to_float() {
        let a = TensorValue::new(DType::Uint8, vec![2], vec![10.0, 20.0]).unwrap();
        let b = t(&[2], &[0.5, 0.25]);
        let y = run("Add", &[&a, &b], &Attrs::new());
        assert_eq!(y.dtype, DType::Float32);
        assert_eq!(y.data, vec![10.5, 20.25]);
        // same-dtype ints stay integral (and saturate via finalization)
        let c = TensorValue::new(DType::Uint8, vec![1], vec![250.0]).unwrap();
        let d = TensorValue::new(DType::Uint8, vec![1], vec![10.0]).unwrap();
        let y = run("Add", &[&c, &d], &Attrs::new());
        assert_eq!(y.dtype, DType::Uint8);
        assert_eq!(y.data, vec![255.0]);
    }

    #[test]
    fn gemm_transpose_variants() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let y = run("Gemm", &[&a, &b], &Attrs::new());
        assert_eq!(y.shape, vec![2, 2]);
        assert_eq!(y.data, vec![58.0, 64.0, 139.0, 154.0]);
        // with transB: B stored [2,3]
        let bt = t(&[2, 3], &[7.0, 9.0, 11.0, 8.0, 10.0, 12.0]);
        let y2 = run("Gemm", &[&a, &bt], &attrs(&[("transB", 1i64.into())]));
        assert_eq!(y2.data, y.data);
        // alpha/beta with bias broadcast over rows
        let c = t(&[2], &[1.0, -1.0]);
        let y3 = run(
            "Gemm",
            &[&a, &b, &c],
            &attrs(&[("alpha", 2.0.into()), ("beta", 0.5.into())]),
        );
        assert_eq!(y3.data, vec![116.5, 127.5, 278.5, 307.5]);
    }

    #[test]
    fn fully_connected_flattens_input() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[2, 4], &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = t(&[2], &[10.0, 20.0]);
        let y = run("FullyConnected", &[&x, &w, &b], &Attrs::new());
        assert_eq!(y.shape, vec![1, 2]);
        assert_eq!(y.data, vec![11.0, 29.0]);
    }

    #[test]
    fn conv2d_hand_example() {
        // 1x1x3x3 input, 1x1x2x2 kernel of ones: sliding window sums
        let x = t(&[1, 1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let w = t(&[1, 1, 2, 2], &[1.0; 4]);
        let y = run(
            "Conv2D",
            &[&x, &w],
            &attrs(&[
                ("strides", vec![1i64, 1].into()),
                ("pads", vec![0i64, 0, 0, 0].into()),
                ("dilations", vec![1i64, 1].into()),
            ]),
        );
        assert_eq!(y.shape, vec![1, 1, 2, 2]);
        assert_eq!(y.data, vec![12.0, 16.0, 24.0, 28.0]);
        // padding produces a 4x4 map whose corner is the lone top-left pixel
        let y = run(
            "Conv2D",
            &[&x, &w],
            &attrs(&[("pads", vec![1i64, 1, 0, 0].into())]),
        );
        assert_eq!(y.shape, vec![1, 1, 3, 3]);
        assert_eq!(y.data[0], 1.0);
    }

    #[test]
    fn pooling_hand_examples() {
        let x = t(&[1, 1, 4, 4], &(1..=16).map(|v| v as f64).collect::<Vec<_>>());
        let at = attrs(&[("kernel_shape", vec![2i64, 2].into())]);
        let y = run("MaxPool2D", &[&x, ], &at);
        assert_eq!(y.shape, vec![1, 1, 2, 2]);
        assert_eq!(y.data, vec![6.0, 8.0, 14.0, 16.0]);
        let y = run("AveragePool2D", &[&x], &at);
        assert_eq!(y.data, vec![3.5, 5.5, 11.5, 13.5]);
        // average pooling with padding excludes the padded cells from the count
        let at = attrs(&[
            ("kernel_shape", vec![2i64, 2].into()),
            ("strides", vec![2i64, 2].into()),
            ("pads", vec![1i64, 1, 1, 1].into()),
        ]);
        let y = run("AveragePool2D", &[&x], &at);
        assert_eq!(y.shape, vec![1, 1, 3, 3]);
        assert_eq!(y.data[0], 1.0); // lone corner element averaged over count 1
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let y = run("Softmax", &[&x], &attrs(&[("axis", AttrValue::Num(-1.0))]));
        for row in y.data.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert!(y.data[2] > y.data[1] && y.data[1] > y.data[0]);
    }

    #[test]
    fn lp_normalization_unit_norm() {
        let x = t(&[1, 4], &[3.0, 4.0, 0.0, 0.0]);
        let y = run("LpNormalization", &[&x], &Attrs::new());
        assert!((y.data[0] - 0.6).abs() < 1e-6);
        assert!((y.data[1] - 0.8).abs() < 1e-6);
        let norm: f64 = y.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shape_ops() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = run("Reshape", &[&x], &attrs(&[("shape", vec![3i64, -1].into())]));
        assert_eq!(y.shape, vec![3, 2]);
        let y = run("Transpose", &[&x], &attrs(&[("perm", vec![1i64, 0].into())]));
        assert_eq!(y.shape, vec![3, 2]);
        assert_eq!(y.data, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        // default perm reverses
        let y2 = run("Transpose", &[&x], &Attrs::new());
        assert_eq!(y2.data, y.data);
        let f = run("Flatten", &[&t(&[2, 3, 4], &vec![1.0; 24])], &Attrs::new());
        assert_eq!(f.shape, vec![2, 12]);
        let c = run(
            "Concat",
            &[&x, &x],
            &attrs(&[("axis", AttrValue::Num(-1.0))]),
        );
        assert_eq!(c.shape, vec![2, 6]);
        assert_eq!(c.data[..6], [1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn argmax_first_wins_on_ties() {
        let x = t(&[1, 4], &[1.0, 7.0, 7.0, 0.0]);
        let y = run("ArgMax", &[&x], &attrs(&[("axis", 1i64.into())]));
        assert_eq!(y.dtype, DType::Int64);
        assert_eq!(y.shape, vec![1, 1]);
        assert_eq!(y.data, vec![1.0]);
        let y = run(
            "ArgMax",
            &[&x],
            &attrs(&[("axis", 1i64.into()), ("keepdims", 0i64.into())]),
        );
        assert_eq!(y.shape, vec![1]);
    }

    #[test]
    fn resize_modes() {
        let x = t(&[1, 1, 2, 2], &[0.0, 1.0, 2.0, 3.0]);
        let y = run(
            "Resize",
            &[&x],
            &attrs(&[("mode", "nearest".into()), ("scales", AttrValue::List(vec![2.0, 2.0]))]),
        );
        assert_eq!(y.shape, vec![1, 1, 4, 4]);
        assert_eq!(y.data[0], 0.0);
        assert_eq!(y.data[15], 3.0);
        let y = run(
            "Resize",
            &[&x],
            &attrs(&[("mode", "linear".into()), ("sizes", vec![4i64, 4].into())]),
        );
        // half-pixel bilinear: center cells interpolate halfway
        assert!((y.data[5] - (0.0 * 0.5625 + 1.0 * 0.1875 + 2.0 * 0.1875 + 3.0 * 0.0625)) < 1e-6);
        let err = KernelRegistry::builtin().get("Resize").unwrap()(
            &[&x],
            &attrs(&[("mode", "cubic".into()), ("sizes", vec![4i64, 4].into())]),
        );
        assert!(matches!(err, Err(KernelError::Attr { .. })));
    }

    #[test]
    fn cast_changes_dtype_with_saturation() {
        let x = t(&[3], &[-1.5, 0.5, 300.0]);
        let y = run("Cast", &[&x], &attrs(&[("to", "uint8".into())]));
        assert_eq!(y.dtype, DType::Uint8);
        assert_eq!(y.data, vec![0.0, 0.0, 255.0]); // 0.5 rounds half-even to 0
        let y = run("Cast", &[&x], &attrs(&[("to", "float32".into())]));
        assert_eq!(y.data, vec![-1.5, 0.5, 300.0]);
    }

    #[test]
    fn clip_bounds() {
        let x = t(&[4], &[-2.0, 0.5, 3.0, 300.0]);
        let y = run(
            "Clip",
            &[&x],
            &attrs(&[("min", 0.0.into()), ("max", 255.0.into())]),
        );
        assert_eq!(y.data, vec![0.0, 0.5, 3.0, 255.0]);
        // defaults are the full f32 range
        let y = run("Clip", &[&x], &Attrs::new());
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn kernels_do_not_mutate_inputs() {
        let x = t(&[2, 2], &[1.0, -2.0, 3.0, -4.0]);
        let before = x.clone();
        let _ = run("Relu", &[&x], &Attrs::new());
        let _ = run("Softmax", &[&x], &Attrs::new());
        assert_eq!(x, before);
    }
}
