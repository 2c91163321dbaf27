//! modelift: lift on-device inference models into a debuggable, differentiable
//! graph representation.
//!
//! The crate revolves around a small computation-graph IR ([`graph::Graph`])
//! with a JSON interchange format ("MGF", [`mgf`]), a reference interpreter
//! ([`interp`]), and a set of rewrite passes ([`passes`]) that turn
//! deploy-oriented graphs (quantized, fused, vendor-specific operators) into
//! plain differentiable ones. On top of that sit equivalence metrics
//! ([`equivalence`]), reverse-mode gradients ([`autodiff`]) and white-box
//! attack drivers ([`attack`]).
//!
//! Start with the runnable examples in `examples/` — each one exercises a
//! single capability end to end.

pub mod attack;
pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod dtype;
pub mod equivalence;
pub mod fixtures;
pub mod graph;
pub mod interp;
pub mod issues;
pub mod kernels;
pub mod mgf;
pub mod passes;
pub mod rules;
pub mod tensor;

pub use dtype::{DType, QuantParams};
pub use graph::{AttrValue, ConstTensor, Graph, Node, TensorSpec, TraceRecord};
pub use passes::{transform, MatchConfig, Substitution, TransformReport};
pub use tensor::TensorValue;
