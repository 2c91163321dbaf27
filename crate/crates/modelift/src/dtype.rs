use serde::{Deserialize, Serialize};
use std::fmt;

/// Element type of a tensor value or stored constant.
///
/// Compiled on-device graphs lean on `uint8`/`int8` for weights and
/// activations; everything the rewrite pipeline emits is `float32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Float32,
    Uint8,
    Int8,
    Int32,
    Int64,
    Bool,
}

impl DType {
    pub fn is_float(self) -> bool {
        matches!(self, DType::Float32)
    }

    pub fn is_integer(self) -> bool {
        matches!(
            self,
            DType::Uint8 | DType::Int8 | DType::Int32 | DType::Int64
        )
    }

    /// Inclusive representable range for integer and bool types, as f64.
    ///
    /// `Int64` is truncated to the band exactly representable in an f64
    /// mantissa; values outside it are rejected at load time.
    pub fn integer_range(self) -> Option<(f64, f64)> {
        match self {
            DType::Uint8 => Some((0.0, 255.0)),
            DType::Int8 => Some((-128.0, 127.0)),
            DType::Int32 => Some((i32::MIN as f64, i32::MAX as f64)),
            DType::Int64 => Some((-(2f64.powi(53)), 2f64.powi(53))),
            DType::Bool => Some((0.0, 1.0)),
            DType::Float32 => None,
        }
    }

    /// Whether `value` is exactly representable in this type.
    pub fn contains(self, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        match self {
            DType::Float32 => (value as f32).is_finite(),
            _ => {
                let (lo, hi) = self.integer_range().unwrap();
                value.fract() == 0.0 && value >= lo && value <= hi
            }
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DType::Float32 => "float32",
            DType::Uint8 => "uint8",
            DType::Int8 => "int8",
            DType::Int32 => "int32",
            DType::Int64 => "int64",
            DType::Bool => "bool",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "float32" => Ok(DType::Float32),
            "uint8" => Ok(DType::Uint8),
            "int8" => Ok(DType::Int8),
            "int32" => Ok(DType::Int32),
            "int64" => Ok(DType::Int64),
            "bool" => Ok(DType::Bool),
            other => Err(format!("unknown dtype \"{other}\"")),
        }
    }
}

/// Affine quantization parameters attached to an integer tensor.
///
/// A stored code `x` maps to the real value `(x - zero_point) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i64,
}

impl QuantParams {
    pub fn new(scale: f64, zero_point: i64) -> Self {
        Self { scale, zero_point }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dtype_serde_names() {
        for (dt, name) in [
            (DType::Float32, "\"float32\""),
            (DType::Uint8, "\"uint8\""),
            (DType::Int8, "\"int8\""),
            (DType::Int32, "\"int32\""),
            (DType::Int64, "\"int64\""),
            (DType::Bool, "\"bool\""),
        ] {
            assert_eq!(serde_json::to_string(&dt).unwrap(), name);
            assert_eq!(serde_json::from_str::<DType>(name).unwrap(), dt);
        }
    }

    #[test]
    fn representability() {
        assert!(DType::Uint8.contains(255.0));
        assert!(!DType::Uint8.contains(256.0));
        assert!(!DType::Uint8.contains(0.5));
        assert!(DType::Int8.contains(-128.0));
        assert!(!DType::Int8.contains(-129.0));
        assert!(DType::Float32.contains(0.1));
        assert!(!DType::Float32.contains(f64::INFINITY));
        assert!(!DType::Float32.contains(1e300));
        assert!(DType::Bool.contains(1.0));
        assert!(!DType::Bool.contains(2.0));
    }
}
