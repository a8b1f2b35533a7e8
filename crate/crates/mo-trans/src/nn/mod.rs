//! Minimal dense-tensor reverse-mode autodiff and the transformer layer zoo.
//!
//! Everything a genome needs to become a runnable model: a rank ≤ 3
//! [`Tensor`], a [`Tape`] of primitive differentiable ops, the layer helpers
//! ([`multihead_attention`], [`feed_forward`]), the plan builder that expands
//! block genes into layer lists with arbitrary cross-attention wiring, the
//! Adam optimizer, and a finite-difference gradient checker.
//!
//! Elements are `f32` for training speed; every op is generic over
//! [`Element`] so the gradient checker can run the same code in `f64`.

mod gradcheck;
mod model;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{compare_entries, grad_check, GradCheckConfig, GradCheckReport, GradFailure};
pub use model::{
    build_plan, cross_entropy, embed, feed_forward, layer_norm, multihead_attention, output_logits,
    positional_encode, AttentionParams, BlockProbe, FeedForwardParams, LayerSpec, Model, ModelPlan,
    NormParams, ParamStore, PositionalEncoding, ProbeScope, LN_EPS,
};
pub use optim::Adam;
pub use tape::{AttnMask, Gradients, NodeId, Tape};
pub use tensor::{Element, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("token id {id} out of range for vocab of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("batch must be non-empty and sequences must have at least one token")]
    EmptyBatch,
    #[error("cross-entropy needs at least one non-pad target")]
    EmptyTargets,
    #[error("head count {heads} does not divide embedding dim {dim}")]
    HeadsDim { heads: usize, dim: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("corrupt parameter blob: {0}")]
    CorruptBlob(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl NnError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NnError::Shape { op, detail: detail.into() }
    }
}
