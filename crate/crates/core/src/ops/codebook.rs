//! Codeword pooling, codeword assembly and global averaging.
//!
//! Codewords are stored as a `(N, D, n, 1)` tensor: column `i` of the `D x n`
//! codeword matrix lives at `[b, :, i, 0]`.

use crate::error::Result;
use crate::ops::{axpy, dot, ensure};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// `c_i = sum_{p,q} weights_i(p,q) * basis(p,q)` for each batch item.
pub fn weighted_pool<T: Scalar>(basis: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let bs = basis.shape();
    let ws = weights.shape();
    ensure(bs.n == ws.n && bs.h == ws.h && bs.w == ws.w, "weighted_pool", bs, ws)?;
    let (d, k) = (bs.c, ws.c);
    let os = Shape::new(bs.n, d, k, 1);
    let mut out = vec![T::zero(); os.numel()];
    for n in 0..bs.n {
        for ch in 0..d {
            let b = basis.plane(n, ch);
            for i in 0..k {
                out[(n * d + ch) * k + i] = dot(b, weights.plane(n, i));
            }
        }
    }
    Tensor::new(os, out)
}

/// Returns `(dbasis, dweights)`.
pub fn weighted_pool_backward<T: Scalar>(basis: &Tensor<T>, weights: &Tensor<T>, dc: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let bs = basis.shape();
    let ws = weights.shape();
    let (d, k, p) = (bs.c, ws.c, bs.plane());
    let mut db = vec![T::zero(); bs.numel()];
    let mut dw = vec![T::zero(); ws.numel()];
    let g = dc.data();
    for n in 0..bs.n {
        for ch in 0..d {
            let b = basis.plane(n, ch);
            let dbp = &mut db[(n * d + ch) * p..(n * d + ch + 1) * p];
            for i in 0..k {
                let gv = g[(n * d + ch) * k + i];
                axpy(dbp, gv, weights.plane(n, i));
                let dwp = &mut dw[(n * k + i) * p..(n * k + i + 1) * p];
                axpy(dwp, gv, b);
            }
        }
    }
    (db, dw)
}

/// `out[b,d,h,w] = sum_i weights[b,i,h,w] * codewords[b,d,i]`, i.e. `W^T C` per location.
pub fn assemble<T: Scalar>(weights: &Tensor<T>, codewords: &Tensor<T>) -> Result<Tensor<T>> {
    let ws = weights.shape();
    let cs = codewords.shape();
    ensure(cs.n == ws.n && cs.h == ws.c && cs.w == 1, "assemble", ws, cs)?;
    let (d, k, p) = (cs.c, ws.c, ws.plane());
    let os = ws.with_c(d);
    let mut out = vec![T::zero(); os.numel()];
    let c = codewords.data();
    for n in 0..ws.n {
        for ch in 0..d {
            let dst = &mut out[(n * d + ch) * p..(n * d + ch + 1) * p];
            for i in 0..k {
                let cv = c[(n * d + ch) * k + i];
                axpy(dst, cv, weights.plane(n, i));
            }
        }
    }
    Tensor::new(os, out)
}

/// Returns `(dweights, dcodewords)`.
pub fn assemble_backward<T: Scalar>(weights: &Tensor<T>, codewords: &Tensor<T>, dy: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let ws = weights.shape();
    let cs = codewords.shape();
    let (d, k, p) = (cs.c, ws.c, ws.plane());
    let mut dw = vec![T::zero(); ws.numel()];
    let mut dc = vec![T::zero(); cs.numel()];
    let c = codewords.data();
    for n in 0..ws.n {
        for ch in 0..d {
            let g = dy.plane(n, ch);
            for i in 0..k {
                let ci = (n * d + ch) * k + i;
                dc[ci] += dot(g, weights.plane(n, i));
                let dst = &mut dw[(n * k + i) * p..(n * k + i + 1) * p];
                axpy(dst, c[ci], g);
            }
        }
    }
    (dw, dc)
}

/// Per-channel spatial mean, shaped `(N, C, 1, 1)`.
pub fn global_avg<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let inv = T::one() / T::of_usize(s.plane());
    let data = x
        .data()
        .chunks(s.plane())
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(s.with_hw(1, 1), data).expect("one value per plane")
}

pub fn global_avg_backward<T: Scalar>(in_shape: Shape, dy: &Tensor<T>) -> Vec<T> {
    let inv = T::one() / T::of_usize(in_shape.plane());
    let mut dx = Vec::with_capacity(in_shape.numel());
    for &g in dy.data() {
        dx.extend(std::iter::repeat_n(g * inv, in_shape.plane()));
    }
    dx
}
