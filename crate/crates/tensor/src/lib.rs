//! Minimal dense-matrix autodiff for training small graph networks on CPU.
//!
//! Values are `f64` matrices recorded on a per-forward-pass [`Graph`].
//! Parameters live in a [`ParamStore`] at `f32` storage precision and are
//! updated with Adam.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

use thiserror::Error;

pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use graph::{GradMode, Graph, Var};
pub use params::{glorot_uniform, AdamConfig, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {}x{} vs {}x{}", lhs.0, lhs.1, rhs.0, rhs.1)]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("data length {actual} does not match shape ({expected} elements)")]
    DataLength { expected: usize, actual: usize },
    #[error("segment {0} has no members")]
    EmptySegment(usize),
    #[error("{ids} segment ids for {rows} rows")]
    SegmentLength { rows: usize, ids: usize },
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("unsupported axis {0}")]
    BadAxis(usize),
    #[error("loss must be 1x1, got {}x{}", .0.0, .0.1)]
    NotScalarLoss((usize, usize)),
    #[error("parameter {0} registered twice")]
    DuplicateParam(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("i/o error: {0}")]
    Io(String),
}
