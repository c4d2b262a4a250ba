//! Dense tensors with a reverse-mode tape and a finite-difference checker.
//!
//! Kernels run single-threaded with a fixed summation order, so identical
//! inputs give bit-identical outputs and gradients.

mod gradcheck;
mod graph;
mod ops;
mod scalar;
pub mod suite;
mod tensor;

use thiserror::Error;

pub use gradcheck::{
    analytic_gradients, compare_gradients, fd_step, grad_check, grad_check_with_step, numeric_gradients, numeric_gradients_with_step,
    GradReport, FD_REL_STEP, REL_ERR_FLOOR,
};
pub use graph::{Gradients, Graph, Unfold2d, Var};
pub use ops::{adaptive_pool_ranges, conv1d_out_len, rope_angle, CrossEntropy};
pub use scalar::Real;
pub use tensor::Tensor;


/// Scalar GELU and SiLU, shared with code that works outside a graph.
pub mod activation {
    pub use super::ops::activation::{gelu, silu};
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: invalid configuration: {detail}")]
    Config { op: &'static str, detail: String },
    #[error("{op}: out of range: {detail}")]
    Range { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("expected a scalar output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("every position is masked out; the mean loss is undefined")]
    EmptyMask,
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        NumericsError::Shape { op, detail }
    }
}
