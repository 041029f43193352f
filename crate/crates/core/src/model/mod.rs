//! Architecture specs, network construction, parameter accounting and
//! checkpoint serialization.

pub mod accounting;
pub mod checkpoint;
mod network;
mod spec;

use thiserror::Error;

use crate::nn::{NnError, Shape};

pub use accounting::{count_macs, count_params, param_layout, LayerCount, ParamCount, ParamInfo};
pub use checkpoint::CheckpointError;
pub use network::{build_lenet_baseline, build_network, Bottleneck, Network, RowInput, SummaryRow};
pub use spec::{
    ArchitectureSpec, BlockSequenceSpec, InputSize, LeNetSpec, ModelSpec, MAX_SEQUENCE_CHANNELS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("sequence {sequence} reduces the feature map to {height}×{width}, below 1×1")]
    SpatialUnderflow { sequence: usize, height: f64, width: f64 },
    #[error("expected input shape {expected}, got {actual}")]
    InputShape { expected: Shape, actual: Shape },
    #[error(transparent)]
    Nn(#[from] NnError),
}
