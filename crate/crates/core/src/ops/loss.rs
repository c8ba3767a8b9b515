use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LabelMap, Tensor};

#[derive(Clone, Debug)]
pub struct CrossEntropyOutput<T> {
    pub loss: T,
    /// Class probabilities at every location, same shape as the logits.
    pub probs: Tensor<T>,
    /// Number of pixels that contributed.
    pub count: usize,
}

/// Mean per-pixel negative log-likelihood over pixels whose label is not
/// `ignore_index`. An all-ignored map yields a loss of zero.
pub fn cross_entropy_mask<T: Scalar>(logits: &Tensor<T>, labels: &LabelMap, ignore_index: u32) -> Result<CrossEntropyOutput<T>> {
    let s = logits.shape();
    if labels.n != s.n || labels.h != s.h || labels.w != s.w {
        return Err(Error::Shape {
            op: "cross_entropy_mask",
            msg: format!("labels {}x{}x{} for logits {}", labels.n, labels.h, labels.w, s),
        });
    }
    let k = s.c as u32;
    if let Some(&bad) = labels.data.iter().find(|&&l| l >= k && l != ignore_index) {
        return Err(Error::Validation(format!(
            "label {} outside [0, {}) and not the ignore index {}",
            bad, k, ignore_index
        )));
    }
    let probs = crate::ops::softmax_channels(logits);
    let p = s.plane();
    let mut total = T::zero();
    let mut count = 0usize;
    for n in 0..s.n {
        for loc in 0..p {
            let l = labels.data[n * p + loc];
            if l == ignore_index {
                continue;
            }
            // log-sum-exp directly from logits for accuracy
            let base = n * s.c * p + loc;
            let mut max = T::neg_infinity();
            for c in 0..s.c {
                max = max.max(logits.data()[base + c * p]);
            }
            let mut sum = T::zero();
            for c in 0..s.c {
                sum += (logits.data()[base + c * p] - max).exp();
            }
            total += max + sum.ln() - logits.data()[base + l as usize * p];
            count += 1;
        }
    }
    let loss = if count == 0 { T::zero() } else { total / T::of_usize(count) };
    Ok(CrossEntropyOutput { loss, probs, count })
}

/// Gradient with respect to the logits, scaled by the upstream `dloss`.
pub fn cross_entropy_mask_backward<T: Scalar>(
    probs: &Tensor<T>,
    labels: &LabelMap,
    ignore_index: u32,
    count: usize,
    dloss: T,
) -> Vec<T> {
    let s = probs.shape();
    let p = s.plane();
    let mut d = vec![T::zero(); s.numel()];
    if count == 0 {
        return d;
    }
    let scale = dloss / T::of_usize(count);
    for n in 0..s.n {
        for loc in 0..p {
            let l = labels.data[n * p + loc];
            if l == ignore_index {
                continue;
            }
            let base = n * s.c * p + loc;
            for c in 0..s.c {
                let target = if c as u32 == l { T::one() } else { T::zero() };
                d[base + c * p] = (probs.data()[base + c * p] - target) * scale;
            }
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peaked_logits_give_near_zero_loss() {
        let logits = Tensor::<f64>::from_fn([1, 3, 2, 2], |_, c, _, _| if c == 1 { 50.0 } else { 0.0 });
        let labels = LabelMap::filled(1, 2, 2, 1);
        let out = cross_entropy_mask(&logits, &labels, 255).unwrap();
        assert!(out.loss < 1e-15);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::<f64>::zeros([2, 5, 3, 3]);
        let labels = LabelMap::new(2, 3, 3, (0..18).map(|i| i % 5).collect()).unwrap();
        let out = cross_entropy_mask(&logits, &labels, 255).unwrap();
        assert!((out.loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn closed_form_single_pixel() {
        let logits = Tensor::<f64>::new([1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let labels = LabelMap::filled(1, 1, 1, 0);
        let out = cross_entropy_mask(&logits, &labels, 255).unwrap();
        let lse = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        assert!((out.loss - (lse - 1.0)).abs() < 1e-12);
        // 2.4076059644443806 = ln(e + e^2 + e^3) - 1
        assert!((out.loss - 2.407_605_964_444_380_6).abs() < 1e-12);
    }

    #[test]
    fn ignored_pixels_do_not_count() {
        let logits = Tensor::<f64>::new([1, 2, 1, 2], vec![0.0, 5.0, 0.0, -5.0]).unwrap();
        let labels = LabelMap::new(1, 1, 2, vec![0, 255]).unwrap();
        let out = cross_entropy_mask(&logits, &labels, 255).unwrap();
        assert_eq!(out.count, 1);
        assert!((out.loss - 2f64.ln()).abs() < 1e-12);
        let all = LabelMap::filled(1, 1, 2, 255);
        let out = cross_entropy_mask(&logits, &all, 255).unwrap();
        assert_eq!((out.loss, out.count), (0.0, 0));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor::<f32>::zeros([1, 3, 1, 1]);
        let labels = LabelMap::filled(1, 1, 1, 3);
        assert!(matches!(cross_entropy_mask(&logits, &labels, 255), Err(Error::Validation(_))));
    }
}
