use crate::error::{Error, Result};
use crate::ops::{axpy, dot, elementwise, ensure, norm};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Weights of a pointwise convolution.
///
/// `weight` is stored as a `(C_out, C_in, 1, 1)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1x1Params<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
    /// Follow the convolution with batch-statistics normalization and ReLU.
    pub with_bn_relu: bool,
}

impl<T: Scalar> Conv1x1Params<T> {
    pub fn new(c_out: usize, c_in: usize, weight: Vec<T>, bias: Option<Vec<T>>, with_bn_relu: bool) -> Result<Self> {
        let weight = Tensor::new([c_out, c_in, 1, 1], weight)?;
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::Shape {
                    op: "conv1x1",
                    msg: format!("bias length {} for {} output channels", b.len(), c_out),
                });
            }
        }
        if !weight.is_finite() {
            return Err(Error::Validation("conv1x1 weight contains non-finite values".into()));
        }
        Ok(Conv1x1Params {
            weight,
            bias,
            with_bn_relu,
        })
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c
    }
}

/// Pointwise convolution, optionally followed by batch-statistics BN and ReLU.
pub fn conv1x1<T: Scalar>(x: &Tensor<T>, p: &Conv1x1Params<T>) -> Result<Tensor<T>> {
    let out = conv1x1_forward(x, &p.weight, p.bias.as_deref())?;
    if !p.with_bn_relu {
        return Ok(out);
    }
    let c = out.shape().c;
    let ones = vec![T::one(); c];
    let zeros = vec![T::zero(); c];
    let bn = norm::batch_norm(&out, &ones, &zeros, None, T::of(norm::BN_EPS))?;
    Ok(elementwise::relu(&bn.out))
}

/// `out[n,o,:] = bias[o] + sum_i weight[o,i] * x[n,i,:]`
pub fn conv1x1_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    ensure(ws.c == xs.c && ws.h == 1 && ws.w == 1, "conv1x1", xs, ws)?;
    let c_out = ws.n;
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::Shape {
                op: "conv1x1",
                msg: format!("bias length {} for {} output channels", b.len(), c_out),
            });
        }
    }
    let os = xs.with_c(c_out);
    let p = xs.plane();
    let w = weight.data();
    let mut out = vec![T::zero(); os.numel()];
    for n in 0..xs.n {
        for o in 0..c_out {
            let dst = &mut out[(n * c_out + o) * p..(n * c_out + o + 1) * p];
            if let Some(b) = bias {
                dst.fill(b[o]);
            }
            for i in 0..xs.c {
                let wv = w[o * xs.c + i];
                if wv != T::zero() {
                    axpy(dst, wv, x.plane(n, i));
                }
            }
        }
    }
    Tensor::new(os, out)
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv1x1_backward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, dy: &Tensor<T>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let xs = x.shape();
    let c_out = weight.shape().n;
    let p = xs.plane();
    let w = weight.data();
    let mut dx = vec![T::zero(); xs.numel()];
    let mut dw = vec![T::zero(); c_out * xs.c];
    let mut db = vec![T::zero(); c_out];
    for n in 0..xs.n {
        for o in 0..c_out {
            let g = dy.plane(n, o);
            db[o] += g.iter().copied().sum::<T>();
            for i in 0..xs.c {
                dw[o * xs.c + i] += dot(g, x.plane(n, i));
                let wv = w[o * xs.c + i];
                if wv != T::zero() {
                    let dst = &mut dx[(n * xs.c + i) * p..(n * xs.c + i + 1) * p];
                    axpy(dst, wv, g);
                }
            }
        }
    }
    (dx, dw, db)
}

/// Stride, zero padding and dilation of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        ConvGeometry {
            stride,
            padding,
            dilation,
        }
    }

    pub fn out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    /// Output positions `o` with `0 <= o*stride + k*dilation - padding < input`.
    fn valid_range(&self, k: usize, input: usize, out: usize) -> (usize, usize) {
        let off = (k * self.dilation) as isize - self.padding as isize;
        let s = self.stride as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= input-1
        let hi_excl = if (input as isize - 1 - off) < 0 {
            0
        } else {
            (input as isize - 1 - off) / s + 1
        };
        let lo = lo.max(0) as usize;
        let hi = (hi_excl.max(0) as usize).min(out);
        (lo, hi.max(lo))
    }
}

/// Dense 2-D convolution with a `(C_out, C_in, kh, kw)` weight.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&[T]>, geom: ConvGeometry) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    ensure(ws.c == xs.c, "conv2d", xs, ws)?;
    let (kh, kw) = (ws.h, ws.w);
    let oh = geom.out_len(xs.h, kh);
    let ow = geom.out_len(xs.w, kw);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(Error::Shape {
            op: "conv2d",
            msg: format!("input {} too small for kernel {}x{} with {:?}", xs, kh, kw, geom),
        });
    };
    let c_out = ws.n;
    let os = Shape::new(xs.n, c_out, oh, ow);
    let mut out = vec![T::zero(); os.numel()];
    let w = weight.data();
    let (s, d, p) = (geom.stride, geom.dilation, geom.padding);
    for n in 0..xs.n {
        for o in 0..c_out {
            let dst = &mut out[(n * c_out + o) * oh * ow..(n * c_out + o + 1) * oh * ow];
            if let Some(b) = bias {
                dst.fill(b[o]);
            }
            for i in 0..xs.c {
                let src = x.plane(n, i);
                for ky in 0..kh {
                    let (y0, y1) = geom.valid_range(ky, xs.h, oh);
                    for kx in 0..kw {
                        let wv = w[((o * xs.c + i) * kh + ky) * kw + kx];
                        if wv == T::zero() {
                            continue;
                        }
                        let (x0, x1) = geom.valid_range(kx, xs.w, ow);
                        for oy in y0..y1 {
                            let iy = oy * s + ky * d - p;
                            let row = &src[iy * xs.w..(iy + 1) * xs.w];
                            let drow = &mut dst[oy * ow..(oy + 1) * ow];
                            for ox in x0..x1 {
                                drow[ox] += wv * row[ox * s + kx * d - p];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(os, out)
}

/// Returns `(dx, dweight, dbias)` for [`conv2d`].
#[allow(clippy::needless_range_loop)]
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    geom: ConvGeometry,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let xs = x.shape();
    let ws = weight.shape();
    let ds = dy.shape();
    let (kh, kw) = (ws.h, ws.w);
    let (oh, ow) = (ds.h, ds.w);
    let c_out = ws.n;
    let (s, d, p) = (geom.stride, geom.dilation, geom.padding);
    let w = weight.data();
    let mut dx = vec![T::zero(); xs.numel()];
    let mut dw = vec![T::zero(); ws.numel()];
    let mut db = vec![T::zero(); c_out];
    let plane = xs.plane();
    for n in 0..xs.n {
        for o in 0..c_out {
            let g = dy.plane(n, o);
            db[o] += g.iter().copied().sum::<T>();
            for i in 0..xs.c {
                let src = x.plane(n, i);
                let dsrc = &mut dx[(n * xs.c + i) * plane..(n * xs.c + i + 1) * plane];
                for ky in 0..kh {
                    let (y0, y1) = geom.valid_range(ky, xs.h, oh);
                    for kx in 0..kw {
                        let widx = ((o * xs.c + i) * kh + ky) * kw + kx;
                        let wv = w[widx];
                        let (x0, x1) = geom.valid_range(kx, xs.w, ow);
                        let mut acc = T::zero();
                        for oy in y0..y1 {
                            let iy = oy * s + ky * d - p;
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            for ox in x0..x1 {
                                let ix = ox * s + kx * d - p;
                                acc += grow[ox] * src[iy * xs.w + ix];
                                dsrc[iy * xs.w + ix] += wv * grow[ox];
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (dx, dw, db)
}
