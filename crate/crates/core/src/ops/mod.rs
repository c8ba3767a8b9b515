//! Forward and backward kernels.
//!
//! Every forward kernel is a pure function of its inputs. Backward kernels take
//! the upstream gradient and whatever the forward pass produced, and return
//! gradients for each differentiable input. The autodiff tape composes them.

mod codebook;
mod conv;
mod elementwise;
mod loss;
mod norm;
mod resize;
mod softmax;

pub use codebook::{assemble, assemble_backward, global_avg, global_avg_backward, weighted_pool, weighted_pool_backward};
pub use conv::{conv1x1, conv1x1_backward, conv1x1_forward, conv2d, conv2d_backward, Conv1x1Params, ConvGeometry};
pub use elementwise::{
    add, add_broadcast, add_broadcast_backward, argmax_channels, concat_channels, crop, pad_symmetric, relu, relu_backward,
    softmax_channels, split_channels,
};
pub use loss::{cross_entropy_mask, cross_entropy_mask_backward, CrossEntropyOutput};
pub use norm::{batch_norm, batch_norm_backward, BatchNormGrads, BatchNormOutput, BN_EPS};
pub use resize::{bilinear_resize, bilinear_resize_backward};
pub use softmax::{softmax_spatial, softmax_spatial_backward};

use crate::error::{Error, Result};
use crate::tensor::Shape;

pub(crate) fn ensure(cond: bool, op: &'static str, lhs: Shape, rhs: Shape) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Dimension { op, lhs, rhs })
    }
}

/// `dst += alpha * src`
#[inline]
pub fn axpy<T: crate::Scalar>(dst: &mut [T], alpha: T, src: &[T]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

#[inline]
pub fn dot<T: crate::Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
