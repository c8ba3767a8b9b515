use crate::error::{Error, Result};
use crate::ops::ensure;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient passes where the forward output was positive.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Vec<T> {
    y.data()
        .iter()
        .zip(dy.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect()
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    ensure(a.shape() == b.shape(), "add", a.shape(), b.shape())?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

/// `out[n,d,h,w] = x[n,d,h,w] + v[n,d,0,0]`
pub fn add_broadcast<T: Scalar>(x: &Tensor<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let vs = v.shape();
    ensure(
        vs.n == xs.n && vs.c == xs.c && vs.h == 1 && vs.w == 1,
        "add_broadcast",
        xs,
        vs,
    )?;
    let mut out = x.data().to_vec();
    for (plane, &b) in out.chunks_mut(xs.plane()).zip(v.data()) {
        for e in plane {
            *e += b;
        }
    }
    Tensor::new(xs, out)
}

/// Returns `(dx, dv)`.
pub fn add_broadcast_backward<T: Scalar>(dy: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let dv = dy
        .data()
        .chunks(dy.shape().plane())
        .map(|p| p.iter().copied().sum())
        .collect();
    (dy.data().to_vec(), dv)
}

/// Stacks channels in argument order.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::Shape {
        op: "concat_channels",
        msg: "no inputs".into(),
    })?;
    let s0 = first.shape();
    for t in xs {
        let s = t.shape();
        ensure(s.n == s0.n && s.h == s0.h && s.w == s0.w, "concat_channels", s0, s)?;
    }
    let c: usize = xs.iter().map(|t| t.shape().c).sum();
    let os = s0.with_c(c);
    let mut out = Vec::with_capacity(os.numel());
    let p = s0.plane();
    for n in 0..s0.n {
        for t in xs {
            let tc = t.shape().c;
            out.extend_from_slice(&t.data()[n * tc * p..(n + 1) * tc * p]);
        }
    }
    Tensor::new(os, out)
}

/// Inverse of [`concat_channels`]: splits `dy` into per-input gradients.
pub fn split_channels<T: Scalar>(dy: &Tensor<T>, channels: &[usize]) -> Vec<Vec<T>> {
    let s = dy.shape();
    let p = s.plane();
    let mut parts: Vec<Vec<T>> = channels.iter().map(|&c| Vec::with_capacity(s.n * c * p)).collect();
    for n in 0..s.n {
        let mut off = n * s.c * p;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&dy.data()[off..off + c * p]);
            off += c * p;
        }
    }
    parts
}

/// Softmax across channels at every location (class probabilities).
pub fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let p = s.plane();
    let mut out = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        let base = n * s.c * p;
        for loc in 0..p {
            let mut max = T::neg_infinity();
            for c in 0..s.c {
                max = max.max(x.data()[base + c * p + loc]);
            }
            let mut sum = T::zero();
            for c in 0..s.c {
                let e = (x.data()[base + c * p + loc] - max).exp();
                out[base + c * p + loc] = e;
                sum += e;
            }
            for c in 0..s.c {
                out[base + c * p + loc] /= sum;
            }
        }
    }
    Tensor::new(s, out).expect("shape preserved")
}

/// Per-location argmax over channels; ties go to the lowest index.
pub fn argmax_channels<T: Scalar>(x: &Tensor<T>) -> Vec<u32> {
    let s = x.shape();
    let p = s.plane();
    let mut out = Vec::with_capacity(s.n * p);
    for n in 0..s.n {
        let base = n * s.c * p;
        for loc in 0..p {
            let mut best = 0usize;
            let mut best_v = x.data()[base + loc];
            for c in 1..s.c {
                let v = x.data()[base + c * p + loc];
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            out.push(best as u32);
        }
    }
    out
}

/// Zero-pads to `(out_h, out_w)`, splitting the border evenly (extra row/column
/// at the bottom/right). Returns the padded tensor and the `(top, left)` offset.
pub fn pad_symmetric<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<(Tensor<T>, (usize, usize))> {
    let s = x.shape();
    if out_h < s.h || out_w < s.w {
        return Err(Error::Shape {
            op: "pad_symmetric",
            msg: format!("cannot pad {} down to {}x{}", s, out_h, out_w),
        });
    }
    let top = (out_h - s.h) / 2;
    let left = (out_w - s.w) / 2;
    let os = s.with_hw(out_h, out_w);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            for h in 0..s.h {
                for w in 0..s.w {
                    out.set(n, c, h + top, w + left, x.at(n, c, h, w));
                }
            }
        }
    }
    Ok((out, (top, left)))
}

/// Extracts the `h x w` window starting at `(top, left)`.
pub fn crop<T: Scalar>(x: &Tensor<T>, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if top + h > s.h || left + w > s.w {
        return Err(Error::Shape {
            op: "crop",
            msg: format!("window {}x{} at ({}, {}) exceeds {}", h, w, top, left, s),
        });
    }
    let os = Shape::new(s.n, s.c, h, w);
    Ok(Tensor::from_fn(os, |n, c, y, xx| x.at(n, c, y + top, xx + left)))
}
