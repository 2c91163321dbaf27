//! Runtime tensors and the small amount of shape algebra the kernels need.
//!
//! Values are stored as flat row-major `f64` buffers tagged with a [`DType`].
//! Arithmetic runs in f64 and is rounded back to the declared type at tensor
//! boundaries: `float32` data passes through an f32 round-trip, integer data
//! is rounded half-to-even and saturated to the type's range.

use crate::dtype::DType;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("shape {shape:?} holds {expected} elements but data has {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shapes {lhs:?} and {rhs:?} do not broadcast")]
    Broadcast { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("expected shape {expected:?}, got {got:?}")]
    Mismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// A runtime tensor: dtype tag, row-major shape, flat f64 storage.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorValue {
    pub fn new(dtype: DType, shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ShapeError> {
        if numel(&shape) != data.len() {
            return Err(ShapeError::DataLength {
                expected: numel(&shape),
                got: data.len(),
                shape,
            });
        }
        Ok(Self { dtype, shape, data }.finalized())
    }

    pub fn zeros(dtype: DType, shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            dtype,
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(dtype: DType, value: f64) -> Self {
        Self {
            dtype,
            shape: vec![],
            data: vec![value],
        }
        .finalized()
    }

    pub fn float(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ShapeError> {
        Self::new(DType::Float32, shape, data)
    }

    /// Float tensor kept at full f64 precision (no dtype rounding). Gradient
    /// buffers accumulate through this so chained products don't collapse;
    /// callers finalize once at the very end.
    pub(crate) fn raw_float(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            dtype: DType::Float32,
            shape,
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Scalar view of a 0-d or single-element tensor.
    pub fn as_scalar(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Rounds the buffer to what `dtype` can represent.
    pub fn finalized(mut self) -> Self {
        finalize_in_place(self.dtype, &mut self.data);
        self
    }

    /// Same data reinterpreted under a new dtype (with rounding applied).
    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        finalize_in_place(dtype, &mut self.data);
        self
    }

    pub fn l2_distance(&self, other: &TensorValue) -> Result<f64, ShapeError> {
        if self.shape != other.shape {
            return Err(ShapeError::Mismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

thread_local! {
    static EXACT_FLOAT: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// RAII guard that suspends FLOAT32 storage rounding on the current thread.
///
/// The gradient rules differentiate the idealized real-valued composition;
/// verification by finite differences must probe that same function, not the
/// one with float32 rounding injected at every node boundary. Integer dtypes
/// are unaffected — their rounding is semantic (quantization), not storage.
pub(crate) struct ExactFloatGuard {
    prev: bool,
}

impl ExactFloatGuard {
    pub(crate) fn new() -> Self {
        Self {
            prev: EXACT_FLOAT.with(|f| f.replace(true)),
        }
    }
}

impl Drop for ExactFloatGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        EXACT_FLOAT.with(|f| f.set(prev));
    }
}

pub(crate) fn finalize_in_place(dtype: DType, data: &mut [f64]) {
    if dtype == DType::Float32 && EXACT_FLOAT.with(std::cell::Cell::get) {
        return;
    }
    match dtype {
        DType::Float32 => {
            for v in data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
        DType::Bool => {
            for v in data.iter_mut() {
                *v = if *v != 0.0 { 1.0 } else { 0.0 };
            }
        }
        _ => {
            let (lo, hi) = dtype.integer_range().unwrap();
            for v in data.iter_mut() {
                *v = v.round_ties_even().clamp(lo, hi);
            }
        }
    }
}

/// Row-major strides; size-1 axes keep their natural stride.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * shape[i + 1];
    }
    out
}

/// NumPy-style broadcast of two shapes (right aligned, 1s stretch).
pub fn broadcast_shape(lhs: &[usize], rhs: &[usize]) -> Result<Vec<usize>, ShapeError> {
    let rank = lhs.len().max(rhs.len());
    let dim_at = |s: &[usize], i: usize| {
        if i + s.len() >= rank {
            s[i + s.len() - rank]
        } else {
            1
        }
    };
    let mut out = vec![0; rank];
    for i in 0..rank {
        let a = dim_at(lhs, i);
        let b = dim_at(rhs, i);
        out[i] = match (a, b) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(ShapeError::Broadcast {
                    lhs: lhs.to_vec(),
                    rhs: rhs.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Maps a flat index in the broadcast output back to a flat index in `shape`.
pub struct BroadcastIndexer {
    out_strides: Vec<usize>,
    in_strides: Vec<usize>,
}

impl BroadcastIndexer {
    pub fn new(shape: &[usize], out_shape: &[usize]) -> Self {
        let offset = out_shape.len() - shape.len();
        let in_nat = strides(shape);
        let mut in_strides = vec![0; out_shape.len()];
        for (i, (&dim, nat)) in shape.iter().zip(in_nat).enumerate() {
            // stride 0 replays the single element along stretched axes
            in_strides[offset + i] = if dim == 1 { 0 } else { nat };
        }
        Self {
            out_strides: strides(out_shape),
            in_strides,
        }
    }

    pub fn map(&self, mut flat: usize) -> usize {
        let mut idx = 0;
        for (os, is) in self.out_strides.iter().zip(&self.in_strides) {
            if *os > 0 {
                let coord = flat / os;
                flat %= os;
                idx += coord * is;
            }
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_length_checked() {
        let err = TensorValue::float(vec![2, 2], vec![1.0]).unwrap_err();
        assert!(matches!(err, ShapeError::DataLength { expected: 4, .. }));
    }

    #[test]
    fn finalize_rounds_to_dtype() {
        let t = TensorValue::new(DType::Uint8, vec![4], vec![-3.0, 0.5, 1.5, 300.0]).unwrap();
        // half-to-even: 0.5 -> 0, 1.5 -> 2
        assert_eq!(t.data, vec![0.0, 0.0, 2.0, 255.0]);
        let t = TensorValue::float(vec![1], vec![0.1]).unwrap();
        assert_eq!(t.data[0], 0.1f32 as f64);
    }

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 1, 3], &[4, 3]).unwrap(), vec![2, 4, 3]);
        assert_eq!(broadcast_shape(&[], &[2, 2]).unwrap(), vec![2, 2]);
        assert!(broadcast_shape(&[2], &[3]).is_err());
    }

    #[test]
    fn broadcast_indexing_replays_stretched_axes() {
        // shape [2,1] against out [2,3]: column replicated
        let ix = BroadcastIndexer::new(&[2, 1], &[2, 3]);
        let got: Vec<usize> = (0..6).map(|i| ix.map(i)).collect();
        assert_eq!(got, vec![0, 0, 0, 1, 1, 1]);
    }
}
