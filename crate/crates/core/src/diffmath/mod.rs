//! Minimal reverse-mode tensor math: a define-by-run [`Tape`] of primitives
//! sufficient for the encoder, Sinkhorn iterations, the CNN and the loss,
//! plus [`grad_check`] for verifying analytic gradients.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
}

impl DiffError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        DiffError::Shape { op, detail }
    }
}
