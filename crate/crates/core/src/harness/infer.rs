use crate::error::{Error, Result};
use crate::model::EfficientFcn;
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default evaluation scales.
pub const EVAL_SCALES: [f64; 7] = [0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0];

/// Anything mapping `(N, 3, H, W)` images with `H, W` divisible by 32 to
/// `(N, K, H, W)` logits.
pub trait SegmentationModel<T: Scalar> {
    fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar> SegmentationModel<T> for EfficientFcn<T> {
    fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        EfficientFcn::logits(self, image)
    }
}

impl<T: Scalar, F: Fn(&Tensor<T>) -> Result<Tensor<T>>> SegmentationModel<T> for F {
    fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self(image)
    }
}

fn round_up_32(v: usize) -> usize {
    v.div_ceil(32) * 32
}

/// Class probabilities for one pass at the image's own size, padding to a
/// multiple of 32 and cropping back as needed.
fn probs_at<T: Scalar, M: SegmentationModel<T> + ?Sized>(model: &M, image: &Tensor<T>) -> Result<Tensor<T>> {
    let s = image.shape();
    let (ph, pw) = (round_up_32(s.h), round_up_32(s.w));
    let logits = if (ph, pw) == (s.h, s.w) {
        model.logits(image)?
    } else {
        let (padded, (top, left)) = ops::pad_symmetric(image, ph, pw)?;
        ops::crop(&model.logits(&padded)?, top, left, s.h, s.w)?
    };
    Ok(ops::softmax_channels(&logits))
}

/// Averages softmax probabilities over rescaled (and optionally mirrored)
/// copies of `image`, each mapped back to the input size.
pub fn multiscale_infer<T: Scalar, M: SegmentationModel<T> + ?Sized>(
    model: &M,
    image: &Tensor<T>,
    scales: &[f64],
    flip: bool,
) -> Result<Tensor<T>> {
    if scales.is_empty() {
        return Err(Error::Validation("no inference scales given".into()));
    }
    if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::Validation(format!("invalid scale {s}")));
    }
    let s = image.shape();
    let mut acc: Option<Tensor<T>> = None;
    let mut passes = 0usize;
    let mut add = |p: Tensor<T>| {
        passes += 1;
        match &mut acc {
            None => acc = Some(p),
            Some(a) => {
                for (x, y) in a.data_mut().iter_mut().zip(p.data()) {
                    *x += *y;
                }
            }
        }
    };
    for &scale in scales {
        let h = ((s.h as f64 * scale).round() as usize).max(1);
        let w = ((s.w as f64 * scale).round() as usize).max(1);
        let scaled = ops::bilinear_resize(image, h, w)?;
        let p = probs_at(model, &scaled)?;
        add(ops::bilinear_resize(&p, s.h, s.w)?);
        if flip {
            let p = probs_at(model, &scaled.flip_horizontal())?.flip_horizontal();
            add(ops::bilinear_resize(&p, s.h, s.w)?);
        }
    }
    let mut out = acc.expect("at least one pass");
    if passes > 1 {
        let inv = T::one() / T::of_usize(passes);
        out = out.map(|v| v * inv);
    }
    Ok(out)
}
