use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// One output coordinate's two source taps and the weight of the second.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    frac: T,
}

/// Half-pixel-centre sampling: `src = (dst + 0.5) * in/out - 0.5`, clamped to
/// the valid range. Equal sizes map every output onto its own input exactly.
fn taps<T: Scalar>(in_len: usize, out_len: usize) -> Vec<Tap<T>> {
    if in_len == out_len {
        return (0..out_len)
            .map(|i| Tap {
                lo: i,
                hi: i,
                frac: T::zero(),
            })
            .collect();
    }
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|dst| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap {
                lo,
                hi,
                frac: T::of(frac),
            }
        })
        .collect()
}

/// Bilinear resize of every channel plane to `out_h x out_w`.
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape {
            op: "bilinear_resize",
            msg: format!("output size {}x{} must be positive", out_h, out_w),
        });
    }
    let xs = x.shape();
    if xs.h == out_h && xs.w == out_w {
        return Tensor::new(xs, x.data().to_vec());
    }
    let ty = taps::<T>(xs.h, out_h);
    let tx = taps::<T>(xs.w, out_w);
    let os = xs.with_hw(out_h, out_w);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..xs.n {
        for c in 0..xs.c {
            let src = x.plane(n, c);
            for t in &ty {
                let r0 = &src[t.lo * xs.w..(t.lo + 1) * xs.w];
                let r1 = &src[t.hi * xs.w..(t.hi + 1) * xs.w];
                for s in &tx {
                    // lerp form keeps constant inputs exactly constant
                    let top = r0[s.lo] + s.frac * (r0[s.hi] - r0[s.lo]);
                    let bot = r1[s.lo] + s.frac * (r1[s.hi] - r1[s.lo]);
                    out.push(top + t.frac * (bot - top));
                }
            }
        }
    }
    Tensor::new(os, out)
}

/// Gradient of [`bilinear_resize`] with respect to its input.
pub fn bilinear_resize_backward<T: Scalar>(in_shape: Shape, dy: &Tensor<T>) -> Vec<T> {
    let ds = dy.shape();
    let mut dx = vec![T::zero(); in_shape.numel()];
    let ty = taps::<T>(in_shape.h, ds.h);
    let tx = taps::<T>(in_shape.w, ds.w);
    let p = in_shape.plane();
    for n in 0..ds.n {
        for c in 0..ds.c {
            let g = dy.plane(n, c);
            let dst = &mut dx[(n * ds.c + c) * p..(n * ds.c + c + 1) * p];
            for (oy, t) in ty.iter().enumerate() {
                let wy1 = t.frac;
                let wy0 = T::one() - wy1;
                for (ox, s) in tx.iter().enumerate() {
                    let v = g[oy * ds.w + ox];
                    let wx1 = s.frac;
                    let wx0 = T::one() - wx1;
                    dst[t.lo * in_shape.w + s.lo] += v * wy0 * wx0;
                    dst[t.lo * in_shape.w + s.hi] += v * wy0 * wx1;
                    dst[t.hi * in_shape.w + s.lo] += v * wy1 * wx0;
                    dst[t.hi * in_shape.w + s.hi] += v * wy1 * wx1;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scalar oracle: evaluates one output pixel from the
    /// half-pixel convention directly.
    fn oracle(img: &[f64], h: usize, w: usize, oh: usize, ow: usize, y: usize, x: usize) -> f64 {
        let coord = |dst: usize, inn: usize, out: usize| -> (usize, usize, f64) {
            let s = ((dst as f64 + 0.5) * inn as f64 / out as f64 - 0.5).clamp(0.0, (inn - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(inn - 1);
            (i0, i1, s - i0 as f64)
        };
        let (y0, y1, fy) = coord(y, h, oh);
        let (x0, x1, fx) = coord(x, w, ow);
        let p = |yy: usize, xx: usize| img[yy * w + xx];
        (1.0 - fy) * ((1.0 - fx) * p(y0, x0) + fx * p(y0, x1)) + fy * ((1.0 - fx) * p(y1, x0) + fx * p(y1, x1))
    }

    #[test]
    fn two_by_two_to_four_by_four_matches_oracle() {
        let img = [0.0, 1.0, 2.0, 3.0];
        let x = Tensor::<f64>::new([1, 1, 2, 2], img.to_vec()).unwrap();
        let y = bilinear_resize(&x, 4, 4).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert!((y.at(0, 0, r, c) - oracle(&img, 2, 2, 4, 4, r, c)).abs() < 1e-12);
            }
        }
        // frozen values from the oracle
        let expected = [
            0.0, 0.25, 0.75, 1.0, //
            0.5, 0.75, 1.25, 1.5, //
            1.5, 1.75, 2.25, 2.5, //
            2.0, 2.25, 2.75, 3.0,
        ];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn arbitrary_sizes_match_oracle() {
        let (h, w) = (5, 7);
        let img: Vec<f64> = (0..h * w).map(|i| ((i * 37) % 13) as f64 * 0.3).collect();
        let x = Tensor::<f64>::new([1, 1, h, w], img.clone()).unwrap();
        for (oh, ow) in [(3, 2), (9, 11), (1, 1), (5, 14), (2, 7)] {
            let y = bilinear_resize(&x, oh, ow).unwrap();
            for r in 0..oh {
                for c in 0..ow {
                    assert!((y.at(0, 0, r, c) - oracle(&img, h, w, oh, ow, r, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constants_stay_exactly_constant() {
        let v = 0.123_456_7_f32;
        let x = Tensor::<f32>::full([1, 2, 3, 5], v);
        for (oh, ow) in [(7, 9), (1, 1), (12, 20), (2, 3)] {
            let y = bilinear_resize(&x, oh, ow).unwrap();
            assert!(y.data().iter().all(|&e| e == v));
        }
    }

    #[test]
    fn equal_size_is_identity() {
        let x = Tensor::<f32>::from_fn([2, 3, 4, 5], |n, c, h, w| (n * 60 + c * 20 + h * 5 + w) as f32 * 0.37);
        assert_eq!(bilinear_resize(&x, 4, 5).unwrap(), x);
    }

    #[test]
    fn zero_size_rejected() {
        let x = Tensor::<f32>::zeros([1, 1, 2, 2]);
        assert!(bilinear_resize(&x, 0, 2).is_err());
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        let x = Tensor::<f64>::from_fn([1, 1, 4, 4], |_, _, h, w| (h * 4 + w) as f64);
        let y = bilinear_resize(&x, 2, 2).unwrap();
        // src = 2*dst + 0.5: mean of the 2x2 block
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }
}
