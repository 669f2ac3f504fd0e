//! Dense reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied to [`Tensor`] values; calling
//! [`Tape::backward`] on a scalar walks the records in reverse and returns a
//! [`Gradients`] entry for every tensor in the [`ParamSet`].

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    check_gradients, relative_error, GradCheckReport, ParamCheck, FD_STEP, FD_TOLERANCE, REL_FLOOR,
};
pub use params::{Gradients, ParamSet};
pub use tape::{Tape, Var, MASK_NEG};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("rates for `{0}` must be strictly positive")]
    NonPositiveRate(String),
    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("loss is not finite at the probe point (seed {seed})")]
    NonFiniteLoss { seed: u64 },
}
