//! White-box evasion attacks on single-input classifier graphs: BIM and
//! PGD under an ℓ₂ budget, targeted or non-targeted, plus fooling-rate
//! reporting over a labeled dataset.
//!
//! Both methods take ℓ₂-normalized gradient steps and project onto the ℓ₂
//! ball around the clean sample; they differ only in the starting point
//! (BIM starts at the clean sample, PGD at a seeded random point inside the
//! ball). Projection order per step: gradient step, ℓ₂-ball projection, box
//! clip, then a final ℓ₂ re-projection in case clipping moved the point out
//! of the ball. Because the clean sample lies inside the box and the
//! re-projection only shrinks toward it, the result always satisfies both
//! constraints.

use crate::autodiff::{backward, GradError};
use crate::dataset::Dataset;
use crate::graph::Graph;
use crate::interp::{evaluate_all_with, predict, EvalError};
use crate::kernels::KernelRegistry;
use crate::tensor::TensorValue;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Interface(String),
    #[error("invalid attack config: {0}")]
    BadConfig(String),
    #[error("invalid loss spec: {0}")]
    BadLoss(String),
    #[error("no correctly classified samples to attack")]
    EmptyDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    CrossEntropy,
}

/// What the attacker optimizes: cross-entropy at `label` for non-targeted
/// runs (ascended), or at `target_label` for targeted runs (descended).
#[derive(Debug, Clone, Serialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub label: usize,
    pub targeted: bool,
    pub target_label: Option<usize>,
}

impl LossSpec {
    pub fn untargeted(label: usize) -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            label,
            targeted: false,
            target_label: None,
        }
    }

    pub fn targeted(label: usize, target_label: usize) -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            label,
            targeted: true,
            target_label: Some(target_label),
        }
    }

    pub fn check(&self) -> Result<(), AttackError> {
        if self.targeted {
            match self.target_label {
                None => {
                    return Err(AttackError::BadLoss(
                        "targeted loss requires target_label".into(),
                    ))
                }
                Some(t) if t == self.label => {
                    return Err(AttackError::BadLoss(
                        "target_label must differ from label".into(),
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// The class the cross-entropy is evaluated at.
    pub fn effective_label(&self) -> usize {
        if self.targeted {
            self.target_label.unwrap_or(self.label)
        } else {
            self.label
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Bim,
    Pgd,
}

impl std::str::FromStr for AttackMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bim" => Ok(Self::Bim),
            "pgd" => Ok(Self::Pgd),
            other => Err(format!("unknown attack method \"{other}\" (use bim or pgd)")),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackConfig {
    pub method: AttackMethod,
    /// ℓ₂ radius of allowed perturbation around the clean sample.
    pub l2_budget: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Per-coordinate box the adversarial input must stay within.
    pub input_clip: (f64, f64),
    /// PGD random-start seed; ignored by BIM.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: AttackMethod::Pgd,
            l2_budget: 1.0,
            steps: 400,
            step_size: 0.04,
            input_clip: (0.0, 1.0),
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn check(&self) -> Result<(), AttackError> {
        if !(self.l2_budget > 0.0) {
            return Err(AttackError::BadConfig("l2_budget must be > 0".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(AttackError::BadConfig("step_size must be > 0".into()));
        }
        if !(self.input_clip.0 < self.input_clip.1) {
            return Err(AttackError::BadConfig(
                "input_clip must be an increasing pair".into(),
            ));
        }
        Ok(())
    }
}

/// Step sizes used in the evaluation protocol for the three standard
/// budgets; other budgets scale proportionally to the largest pair.
pub fn suggested_step_size(l2_budget: f64) -> f64 {
    if (l2_budget - 0.01).abs() < 1e-12 {
        0.0001
    } else if (l2_budget - 0.1).abs() < 1e-12 {
        0.001
    } else if (l2_budget - 1.0).abs() < 1e-12 {
        0.04
    } else {
        l2_budget * 0.04
    }
}

fn single_input_name(graph: &Graph) -> Result<&str, AttackError> {
    match graph.inputs.as_slice() {
        [spec] => Ok(&spec.name),
        other => Err(AttackError::Interface(format!(
            "attacks require a single-input graph, found {} inputs",
            other.len()
        ))),
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Gradient of the cross-entropy loss with respect to the graph input, for
/// a single sample (the first graph output is read as the flat logits
/// vector). A graph whose output does not depend on the input yields a zero
/// gradient.
pub fn input_gradient(
    graph: &Graph,
    input: &TensorValue,
    loss: &LossSpec,
) -> Result<TensorValue, AttackError> {
    loss.check()?;
    let input_name = single_input_name(graph)?.to_string();
    let output_name = graph
        .outputs
        .first()
        .ok_or_else(|| AttackError::Interface("graph has no outputs".into()))?
        .clone();
    let inputs = BTreeMap::from([(input_name.clone(), input.clone())]);
    let values = evaluate_all_with(graph, &inputs, KernelRegistry::builtin())?;
    let logits = &values[&output_name];
    let label = loss.effective_label();
    if label >= logits.data.len() {
        return Err(AttackError::BadLoss(format!(
            "label {label} out of range for {} logits",
            logits.data.len()
        )));
    }
    // ∂CE/∂logits = softmax(logits) − e_label. The gradient is an analysis
    // artifact, not an on-device tensor, so it stays at full precision: a
    // saturated softmax yields magnitudes far below the float32 subnormal
    // range, and normalized attack steps still need the direction.
    let mut seed_data = softmax(&logits.data);
    seed_data[label] -= 1.0;
    let seed = BTreeMap::from([(
        output_name,
        TensorValue::raw_float(logits.shape.clone(), seed_data),
    )]);
    let grads = backward(graph, &values, &seed)?;
    Ok(match grads.get(&input_name) {
        Some(g) => TensorValue::raw_float(g.shape.clone(), g.data.clone()),
        None => TensorValue::raw_float(input.shape.clone(), vec![0.0; input.data.len()]),
    })
}

/// Cross-entropy value at the loss's effective label:
/// `logsumexp(logits) − logits[label]`.
pub fn loss_value(graph: &Graph, input: &TensorValue, loss: &LossSpec) -> Result<f64, AttackError> {
    loss.check()?;
    let input_name = single_input_name(graph)?.to_string();
    let inputs = BTreeMap::from([(input_name, input.clone())]);
    let values = evaluate_all_with(graph, &inputs, KernelRegistry::builtin())?;
    let logits = &values[graph
        .outputs
        .first()
        .ok_or_else(|| AttackError::Interface("graph has no outputs".into()))?];
    let label = loss.effective_label();
    if label >= logits.data.len() {
        return Err(AttackError::BadLoss(format!(
            "label {label} out of range for {} logits",
            logits.data.len()
        )));
    }
    let max = logits.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.data.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - logits.data[label])
}

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

/// Projects `x` onto the intersection of the ℓ₂ ball of `budget` around
/// `origin` and the `[lo, hi]` box. `origin` must itself lie in the box.
fn project(x: &mut [f64], origin: &[f64], budget: f64, lo: f64, hi: f64) {
    let shrink_to_ball = |x: &mut [f64]| {
        let dist = l2(&x
            .iter()
            .zip(origin)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>());
        if dist > budget {
            let t = budget / dist;
            for (xi, oi) in x.iter_mut().zip(origin) {
                *xi = oi + t * (*xi - oi);
            }
        }
    };
    shrink_to_ball(x);
    for xi in x.iter_mut() {
        *xi = xi.clamp(lo, hi);
    }
    // clipping toward a box containing the origin never grows the distance,
    // but guard against float rounding
    shrink_to_ball(x);
}

/// Runs one BIM/PGD attack. Returns the adversarial example (the final
/// iterate) and whether it succeeds: prediction ≠ `true_label` for
/// non-targeted runs, prediction == target for targeted runs. `steps == 0`
/// returns the clean sample with `success = false`.
pub fn run_attack(
    graph: &Graph,
    sample: &TensorValue,
    true_label: usize,
    cfg: &AttackConfig,
    loss: &LossSpec,
) -> Result<(TensorValue, bool), AttackError> {
    cfg.check()?;
    loss.check()?;
    if cfg.steps == 0 {
        return Ok((sample.clone(), false));
    }
    let (lo, hi) = cfg.input_clip;
    let origin = sample.data.clone();
    let mut x = origin.clone();

    if cfg.method == AttackMethod::Pgd {
        // uniform point in the ball: gaussian direction, radius budget·U^(1/d)
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dir: Vec<f64> = (0..x.len()).map(|_| standard_normal(&mut rng)).collect();
        let dn = l2(&dir);
        if dn > 0.0 {
            let radius = cfg.l2_budget * rng.gen::<f64>().powf(1.0 / x.len() as f64);
            for (xi, di) in x.iter_mut().zip(&dir) {
                *xi += radius * di / dn;
            }
            project(&mut x, &origin, cfg.l2_budget, lo, hi);
        }
    }

    // ascend the loss at the true label, or descend toward the target
    let sign = if loss.targeted { -1.0 } else { 1.0 };
    for _ in 0..cfg.steps {
        let current = TensorValue::new(sample.dtype, sample.shape.clone(), x.clone())
            .map_err(|e| AttackError::Interface(e.to_string()))?;
        let g = input_gradient(graph, &current, loss)?;
        let gn = l2(&g.data);
        if gn == 0.0 || !gn.is_finite() {
            break;
        }
        for (xi, gi) in x.iter_mut().zip(&g.data) {
            *xi += sign * cfg.step_size * gi / gn;
        }
        project(&mut x, &origin, cfg.l2_budget, lo, hi);
    }

    let adversarial = TensorValue::new(sample.dtype, sample.shape.clone(), x)
        .map_err(|e| AttackError::Interface(e.to_string()))?;
    let predicted = predict(graph, &adversarial)?;
    let success = if loss.targeted {
        Some(predicted) == loss.target_label
    } else {
        predicted != true_label
    };
    Ok((adversarial, success))
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleOutcome {
    /// Index of the sample in the dataset.
    pub index: usize,
    pub true_label: usize,
    pub target_label: Option<usize>,
    pub predicted: usize,
    /// ℓ₂ distance between the adversarial example and the clean sample.
    pub final_l2: f64,
    pub success: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackReport {
    pub method: AttackMethod,
    pub l2_budget: f64,
    pub targeted: bool,
    /// Correctly classified samples attacked.
    pub m: usize,
    /// Successful adversarial examples.
    pub n: usize,
    /// n / m.
    pub fooling_rate: f64,
    pub samples: Vec<SampleOutcome>,
}

/// Attacks every correctly classified sample in the dataset and reports the
/// fooling rate p = n/m. Targeted mode assigns each sample the target label
/// `(true_label + 1) mod num_classes`. Each sample gets its own PGD seed
/// (`cfg.seed + index`) so random starts differ across the dataset.
pub fn fooling_rate(
    graph: &Graph,
    dataset: &Dataset,
    cfg: &AttackConfig,
    targeted: bool,
) -> Result<AttackReport, AttackError> {
    cfg.check()?;
    dataset
        .check()
        .map_err(|e| AttackError::Interface(e.to_string()))?;
    let spec = graph
        .inputs
        .first()
        .ok_or_else(|| AttackError::Interface("graph has no inputs".into()))?;
    let shape = spec.shape.clone();
    let dtype = spec.dtype;

    let mut report = AttackReport {
        method: cfg.method,
        l2_budget: cfg.l2_budget,
        targeted,
        m: 0,
        n: 0,
        fooling_rate: 0.0,
        samples: Vec::new(),
    };
    for (index, sample) in dataset.samples.iter().enumerate() {
        let clean = TensorValue::new(dtype, shape.clone(), sample.input.clone())
            .map_err(|e| AttackError::Interface(format!("sample {index}: {e}")))?;
        if predict(graph, &clean)? != sample.label {
            continue; // only attack correctly classified samples
        }
        report.m += 1;
        let loss = if targeted {
            LossSpec::targeted(sample.label, (sample.label + 1) % dataset.num_classes)
        } else {
            LossSpec::untargeted(sample.label)
        };
        let per_sample = AttackConfig {
            seed: cfg.seed.wrapping_add(index as u64),
            ..cfg.clone()
        };
        let (adversarial, success) = run_attack(graph, &clean, sample.label, &per_sample, &loss)?;
        let predicted = predict(graph, &adversarial)?;
        if success {
            report.n += 1;
        }
        let diff: Vec<f64> = adversarial
            .data
            .iter()
            .zip(&clean.data)
            .map(|(a, b)| a - b)
            .collect();
        report.samples.push(SampleOutcome {
            index,
            true_label: sample.label,
            target_label: loss.target_label,
            predicted,
            final_l2: l2(&diff),
            success,
        });
    }
    if report.m == 0 {
        return Err(AttackError::EmptyDataset);
    }
    report.fooling_rate = report.n as f64 / report.m as f64;
    Ok(report)
}
