use alloc::string::String;

use crate::tensor::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("invalid shape for {op}: {shape} ({reason})")]
    InvalidShape {
        op: &'static str,
        shape: Shape,
        reason: String,
    },
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("invalid convolution: {0}")]
    InvalidConv(String),
    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("no gradient recorded for parameter `{0}`")]
    MissingGradient(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("window [{start}, {end}) exceeds sequence of {len} frames")]
    WindowOutOfRange { start: usize, end: usize, len: usize },
    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),
    #[error("frame dimensions must be even, got {width}x{height}")]
    OddFrameDims { width: usize, height: usize },
    #[error("parameter layout mismatch: {0}")]
    ParamMismatch(String),
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(u64),
    #[error("missing ablation cell: {0}")]
    MissingCell(String),
}
