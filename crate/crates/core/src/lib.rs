//! TaylorShift attention: a softmax replacement built on the second-order
//! Taylor expansion of `exp`, with a quadratic-cost direct form and a
//! linear-cost form that routes through tensor-product features.

pub mod bench;
pub mod cli;
pub mod costmodel;
pub mod error;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod matrix;
pub mod memtrack;
pub mod sampling;
pub mod scaling;

pub use error::{Error, Result};
pub use kernels::{
    attention, attention_auto, direct_taylorshift, efficient_taylorshift, select_kernel,
    softmax_attention, AttentionConfig, KernelKind, NormMode, Precision,
};
pub use matrix::{Matrix, Scalar};
pub use sampling::RandomSeed;
