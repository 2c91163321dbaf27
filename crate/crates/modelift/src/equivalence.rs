//! Output-equivalence metrics between a reference model and its transformed
//! counterpart.
//!
//! Raw differences are meaningless across models whose outputs live on
//! different scales (a uint8 tensor vs its float reconstruction), so both
//! metrics normalize by the reference output's value range r — 255 for uint8
//! outputs, max−min of the observed reference values otherwise (1 when the
//! reference is constant):
//!
//! * scaled mean difference `(1/(r·k)) Σ |y − ŷ|` over the k elements;
//! * scaled max difference `(1/r) max |y − ŷ|`.
//!
//! [`compare_models`] drives both over seeded random probes and aggregates
//! mean-of-means / max-of-maxes per output and across outputs;
//! [`agreement_rate`] compares end-task accuracy on a labeled dataset.

use crate::dataset::Dataset;
use crate::graph::Graph;
use crate::interp::{evaluate, predict, probe_inputs, EvalError};
use crate::tensor::{ShapeError, TensorValue};
use crate::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("model interfaces disagree: {0}")]
    Interface(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error("sample {index}: {detail}")]
    Sample { index: usize, detail: String },
}

/// Value range r of a reference tensor: the full code range for uint8,
/// otherwise the observed spread, never zero.
fn reference_range(reference: &TensorValue) -> f64 {
    if reference.dtype == DType::Uint8 {
        return 255.0;
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &reference.data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let r = hi - lo;
    if r.is_finite() && r > 0.0 {
        r
    } else {
        1.0
    }
}

fn check_same_shape(reference: &TensorValue, test: &TensorValue) -> Result<(), ShapeError> {
    if reference.shape != test.shape {
        return Err(ShapeError::Mismatch {
            expected: reference.shape.clone(),
            got: test.shape.clone(),
        });
    }
    Ok(())
}

/// Scaled mean absolute difference: `(1/(r·k)) Σ |y − ŷ|`.
pub fn scaled_mean_diff(reference: &TensorValue, test: &TensorValue) -> Result<f64, ShapeError> {
    check_same_shape(reference, test)?;
    let k = reference.data.len();
    if k == 0 {
        return Ok(0.0);
    }
    let r = reference_range(reference);
    let total: f64 = reference
        .data
        .iter()
        .zip(&test.data)
        .map(|(y, t)| (y - t).abs())
        .sum();
    Ok(total / (r * k as f64))
}

/// Scaled maximum absolute difference: `(1/r) max |y − ŷ|`.
pub fn scaled_max_diff(reference: &TensorValue, test: &TensorValue) -> Result<f64, ShapeError> {
    check_same_shape(reference, test)?;
    if reference.data.is_empty() {
        return Ok(0.0);
    }
    let r = reference_range(reference);
    let worst = reference
        .data
        .iter()
        .zip(&test.data)
        .map(|(y, t)| (y - t).abs())
        .fold(0.0f64, f64::max);
    Ok(worst / r)
}

/// Aggregated divergence of one output across all probes.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OutputDiff {
    /// Mean over probes of the per-probe scaled mean difference.
    pub mean_scaled: f64,
    /// Max over probes of the per-probe scaled max difference.
    pub max_scaled: f64,
    /// Mean reference range r seen across probes.
    pub range_r: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DiffReport {
    /// Mean of the per-output `mean_scaled` values.
    pub mean_scaled: f64,
    /// Max of the per-output `max_scaled` values.
    pub max_scaled: f64,
    /// Mean of the per-output ranges.
    pub range_r: f64,
    pub probes: usize,
    pub outputs: BTreeMap<String, OutputDiff>,
}

/// Probes both models with the same seeded random inputs (shaped by the
/// reference model's input specs) and aggregates the scaled differences of
/// every reference output.
pub fn compare_models(
    reference: &Graph,
    test: &Graph,
    probes: usize,
    seed: u64,
) -> Result<DiffReport, DiffError> {
    if probes == 0 {
        return Err(DiffError::Interface("probe count must be at least 1".into()));
    }
    for spec in &reference.inputs {
        if !test.inputs.iter().any(|t| t.name == spec.name && t.shape == spec.shape) {
            return Err(DiffError::Interface(format!(
                "test model lacks input \"{}\" of shape {:?}",
                spec.name, spec.shape
            )));
        }
    }
    for name in &reference.outputs {
        if !test.outputs.contains(name) {
            return Err(DiffError::Interface(format!(
                "test model lacks output \"{name}\""
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc: BTreeMap<&str, (f64, f64, f64)> = reference
        .outputs
        .iter()
        .map(|n| (n.as_str(), (0.0, 0.0, 0.0)))
        .collect();
    for _ in 0..probes {
        let inputs = probe_inputs(reference, &mut rng);
        let ref_out = evaluate(reference, &inputs)?;
        let test_out = evaluate(test, &inputs)?;
        for name in &reference.outputs {
            let y = &ref_out[name];
            let t = &test_out[name];
            let (mean_sum, max_seen, r_sum) = acc.get_mut(name.as_str()).expect("seeded above");
            *mean_sum += scaled_mean_diff(y, t)?;
            *max_seen = max_seen.max(scaled_max_diff(y, t)?);
            *r_sum += reference_range(y);
        }
    }

    let outputs: BTreeMap<String, OutputDiff> = acc
        .into_iter()
        .map(|(name, (mean_sum, max_seen, r_sum))| {
            (
                name.to_string(),
                OutputDiff {
                    mean_scaled: mean_sum / probes as f64,
                    max_scaled: max_seen,
                    range_r: r_sum / probes as f64,
                },
            )
        })
        .collect();
    let n = outputs.len().max(1) as f64;
    let mean_scaled = outputs.values().map(|o| o.mean_scaled).sum::<f64>() / n;
    let max_scaled = outputs.values().map(|o| o.max_scaled).fold(0.0, f64::max);
    let range_r = outputs.values().map(|o| o.range_r).sum::<f64>() / n;
    Ok(DiffReport { mean_scaled, max_scaled, range_r, probes, outputs })
}

/// Task-level agreement of two classifiers on a labeled dataset.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Agreement {
    pub accuracy_ref: f64,
    pub accuracy_test: f64,
    /// |accuracy_ref − accuracy_test|, as a fraction.
    pub accuracy_delta: f64,
    /// Fraction of samples where the two models predict the same class,
    /// right or wrong.
    pub prediction_agreement: f64,
}

/// Runs both single-input classifiers over the dataset and compares
/// accuracies and per-sample predictions.
pub fn agreement_rate(
    reference: &Graph,
    test: &Graph,
    data: &Dataset,
) -> Result<Agreement, DiffError> {
    if data.is_empty() {
        return Err(DiffError::EmptyDataset);
    }
    let spec = match reference.inputs.as_slice() {
        [one] => one,
        other => {
            return Err(DiffError::Interface(format!(
                "classification needs exactly one input, reference has {}",
                other.len()
            )))
        }
    };
    let (mut right_ref, mut right_test, mut same) = (0usize, 0usize, 0usize);
    for (index, sample) in data.samples.iter().enumerate() {
        let x = TensorValue::new(spec.dtype, spec.shape.clone(), sample.input.clone()).map_err(
            |e| DiffError::Sample {
                index,
                detail: e.to_string(),
            },
        )?;
        let p_ref = predict(reference, &x)?;
        let p_test = predict(test, &x)?;
        right_ref += (p_ref == sample.label) as usize;
        right_test += (p_test == sample.label) as usize;
        same += (p_ref == p_test) as usize;
    }
    let m = data.len() as f64;
    let accuracy_ref = right_ref as f64 / m;
    let accuracy_test = right_test as f64 / m;
    Ok(Agreement {
        accuracy_ref,
        accuracy_test,
        accuracy_delta: (accuracy_ref - accuracy_test).abs(),
        prediction_agreement: same as f64 / m,
    })
}
