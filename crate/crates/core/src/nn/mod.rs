//! Tensor container, layer primitives with hand-written backward passes, and
//! a finite-difference gradient checker.
//!
//! Every kernel accumulates each output element with a single accumulator in
//! a fixed order, so forward and backward passes are bit-deterministic.

mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod ops;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use thiserror::Error;

pub use gemm::gemm_acc;
pub use layers::{
    BatchNorm, Conv2d, Dense, DepthwiseConv2d, GlobalAvgPool, Layer, MaxPool2d, ParamKind, ParamRef,
    ParamRefMut, Relu, Relu6,
};
pub use tensor::{Shape, Tensor};

/// Element type of tensors: `f32` in production, `f64` for gradient checks.
pub trait Scalar:
    num_traits::Float
    + Default
    + Debug
    + Display
    + Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + 'static
{
    fn lit(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("representable constant")
    }

    fn count(v: usize) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("representable count")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// Output spatial size `ceil(in / stride)`; total padding `kernel - 1`,
    /// split floor on the leading edge and ceil on the trailing edge.
    #[default]
    Same,
    Valid,
}

impl Padding {
    /// Output length and leading padding along one axis.
    pub fn resolve(self, input: usize, kernel: usize, stride: usize) -> Option<(usize, usize)> {
        match self {
            Padding::Same => {
                if input == 0 {
                    return None;
                }
                Some(((input - 1) / stride + 1, (kernel - 1) / 2))
            }
            Padding::Valid => {
                if input < kernel {
                    return None;
                }
                Some(((input - kernel) / stride + 1, 0))
            }
        }
    }
}

/// Batch-norm behaviour: batch statistics while training, running statistics at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: {dim} mismatch, expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("tensor of shape {shape} needs {expected} values, got {actual}")]
    LengthMismatch {
        shape: Shape,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: input spatial size {size} too small for kernel {kernel}")]
    SpatialUnderflow {
        op: &'static str,
        size: usize,
        kernel: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{0}: backward called without a cached forward pass")]
    NoForwardCache(&'static str),
    #[error("invalid layer configuration: {0}")]
    InvalidConfig(String),
}
