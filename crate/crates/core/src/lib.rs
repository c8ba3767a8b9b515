//! Holistically-guided decoding for semantic segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`ops`], [`autodiff`], [`gradcheck`]: dense 4-D tensors, forward
//!   and backward kernels, a reverse-mode tape and a finite-difference checker.
//! - [`backbone`]: a small executable CNN encoder plus symbolic ResNet101 and
//!   decoder graphs.
//! - [`hgd`]: multi-scale fusion, holistic codebook generation and codeword
//!   assembly.
//! - [`cost`]: MAC and parameter accounting over symbolic graphs.
//! - [`harness`]: toy training, metrics, multi-scale inference and file formats.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below fix the two
//! precisions the crate is used at.

pub mod autodiff;
pub mod backbone;
pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod hgd;
pub mod model;
pub mod nn;
pub mod ops;
pub mod scalar;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{LabelMap, Shape, Tensor};

/// Single-precision tensor used for training and inference.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor used for gradient checking.
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
