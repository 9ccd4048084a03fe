//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The engine is closed-world: it provides exactly the operations the codec
//! network needs. Operations are recorded on a [`Tape`] in execution order and
//! [`Tape::backward`] walks the records in reverse. All reductions sum in
//! ascending index order so identical inputs give bit-identical results.

mod check;
mod tape;
mod tensor;

pub use check::{grad_check, GradCheckReport, InputReport};
pub use tape::{ConvMode, Tape, Var};
pub use tensor::{Parameter, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stride {stride} does not divide input length {len} in causal mode")]
    Stride { stride: usize, len: usize },
    #[error("input too short for valid convolution: need {need} frames, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("mean over an empty time axis")]
    EmptyTime,
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("backward requires a single-element output, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, GradError>;
