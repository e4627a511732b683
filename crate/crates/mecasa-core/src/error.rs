use thiserror::Error;

/// Errors raised by tensor construction and tensor operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements but data has {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch on axis {axis}: {left} vs {right} ({context})")]
    DimMismatch {
        axis: usize,
        left: usize,
        right: usize,
        context: String,
    },
    #[error("expected {expected}-d tensor, got shape {shape:?} ({context})")]
    Rank {
        expected: usize,
        shape: Vec<usize>,
        context: String,
    },
    #[error("invalid axis {axis} for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("conv2d: input channels {cin} not divisible by groups {groups}")]
    Groups { cin: usize, groups: usize },
    #[error("conv2d: spatial extent {extent} too small for kernel {kernel} with padding {padding}")]
    KernelFit {
        extent: usize,
        kernel: usize,
        padding: usize,
    },
    #[error("label {label} out of range for {classes} classes at batch index {index}")]
    LabelRange {
        label: usize,
        classes: usize,
        index: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("gradient already populated on a leaf; call reset_grad before a second backward")]
    GradNotReset,
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },
}

pub type TensorResult<T> = std::result::Result<T, TensorError>;
