use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Softmax over all spatial positions of each `(n, c)` plane.
pub fn softmax_spatial<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let s = a.shape();
    let mut out = Vec::with_capacity(s.numel());
    for plane in a.data().chunks(s.plane()) {
        let max = plane.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut sum = T::zero();
        for &v in plane {
            let e = (v - max).exp();
            sum += e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e /= sum;
        }
    }
    Tensor::new(s, out).expect("shape preserved")
}

/// Gradient given the softmax output `y`: `y * (dy - sum(dy * y))` per plane.
pub fn softmax_spatial_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Vec<T> {
    let p = y.shape().plane();
    let mut dx = Vec::with_capacity(y.numel());
    for (yp, gp) in y.data().chunks(p).zip(dy.data().chunks(p)) {
        let inner = super::dot(yp, gp);
        dx.extend(yp.iter().zip(gp).map(|(&yv, &gv)| yv * (gv - inner)));
    }
    dx
}
