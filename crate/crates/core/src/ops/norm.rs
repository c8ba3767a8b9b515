use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct BatchNormOutput<T> {
    pub out: Tensor<T>,
    /// Per-channel mean used for normalization.
    pub mean: Vec<T>,
    /// Per-channel biased variance used for normalization.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub dx: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

/// Per-channel normalization followed by `gamma * x_hat + beta`.
///
/// With `running = None` statistics come from the batch (over `N, H, W`);
/// otherwise the given `(mean, var)` are used as constants.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running: Option<(&[T], &[T])>,
    eps: T,
) -> Result<BatchNormOutput<T>> {
    let s = x.shape();
    if gamma.len() != s.c || beta.len() != s.c {
        return Err(Error::Shape {
            op: "batch_norm",
            msg: format!("{} affine parameters for input {}", gamma.len(), s),
        });
    }
    let p = s.plane();
    let (mean, var) = match running {
        Some((m, v)) => (m.to_vec(), v.to_vec()),
        None => {
            let count = T::of_usize(s.n * p);
            let mut mean = vec![T::zero(); s.c];
            let mut var = vec![T::zero(); s.c];
            for c in 0..s.c {
                let mut acc = T::zero();
                for n in 0..s.n {
                    acc += x.plane(n, c).iter().copied().sum::<T>();
                }
                let m = acc / count;
                let mut sq = T::zero();
                for n in 0..s.n {
                    for &v in x.plane(n, c) {
                        sq += (v - m) * (v - m);
                    }
                }
                mean[c] = m;
                var[c] = sq / count;
            }
            (mean, var)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut out = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let scale = gamma[c] * inv_std[c];
            let shift = beta[c] - mean[c] * scale;
            out.extend(x.plane(n, c).iter().map(|&v| v * scale + shift));
        }
    }
    Ok(BatchNormOutput {
        out: Tensor::new(s, out)?,
        mean,
        var,
        inv_std,
    })
}

/// Gradients of [`batch_norm`]; `batch_stats` selects whether the mean and
/// variance depended on `x`.
pub fn batch_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    mean: &[T],
    inv_std: &[T],
    dy: &Tensor<T>,
    batch_stats: bool,
) -> BatchNormGrads<T> {
    let s = x.shape();
    let p = s.plane();
    let m = T::of_usize(s.n * p);
    let mut dx = vec![T::zero(); s.numel()];
    let mut dgamma = vec![T::zero(); s.c];
    let mut dbeta = vec![T::zero(); s.c];
    for c in 0..s.c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for n in 0..s.n {
            for (&xv, &g) in x.plane(n, c).iter().zip(dy.plane(n, c)) {
                let xh = (xv - mean[c]) * inv_std[c];
                sum_g += g;
                sum_gx += g * xh;
            }
        }
        dgamma[c] = sum_gx;
        dbeta[c] = sum_g;
        let k = gamma[c] * inv_std[c];
        for n in 0..s.n {
            let base = (n * s.c + c) * p;
            for (j, (&xv, &g)) in x.plane(n, c).iter().zip(dy.plane(n, c)).enumerate() {
                dx[base + j] = if batch_stats {
                    let xh = (xv - mean[c]) * inv_std[c];
                    k * (g - sum_g / m - xh * sum_gx / m)
                } else {
                    k * g
                };
            }
        }
    }
    BatchNormGrads { dx, dgamma, dbeta }
}
