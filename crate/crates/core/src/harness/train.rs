use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, IGNORE_INDEX};
use super::data::{augment, AugmentParams, Sample};
use super::infer::{multiscale_infer, SegmentationModel};
use super::metrics::{Confusion, SegMetrics};
use super::optim::{poly_lr, Sgd};
use crate::error::{Error, Result};
use crate::model::EfficientFcn;
use crate::nn::{apply_pass, Mode, Session};
use crate::ops;
use crate::tensor::{LabelMap, Tensor};

/// Running-statistic retention for batch norm.
pub const BN_MOMENTUM: f32 = 0.9;

/// One JSON-lines record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub lr: f64,
    /// Mean training loss since the previous record.
    pub loss: f64,
    pub pix_acc: f64,
    pub mean_iou: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: EfficientFcn<f32>,
    pub log: Vec<LogRecord>,
    pub final_metrics: SegMetrics,
}

/// One SGD step on a batch; returns the loss.
pub fn train_step(
    model: &mut EfficientFcn<f32>,
    opt: &mut Sgd<f32>,
    image: &Tensor<f32>,
    label: &LabelMap,
    lr: f32,
    iter: usize,
) -> Result<f64> {
    let diverged = |loss: f64| Error::Diverged { iter, loss };
    let (loss, grads, updates) = {
        let mut sess = Session::new(&model.store, Mode::Train);
        let x = sess.tape.constant(image.clone());
        let out = model.forward(&mut sess, x).map_err(|e| match e {
            Error::NonFinite { .. } => diverged(f64::NAN),
            e => e,
        })?;
        let loss_var = sess
            .tape
            .cross_entropy(out.logits, label, IGNORE_INDEX)
            .map_err(|e| match e {
                Error::NonFinite { .. } => diverged(f64::NAN),
                e => e,
            })?;
        let loss = sess.tape.value(loss_var).data()[0] as f64;
        if !loss.is_finite() {
            return Err(diverged(loss));
        }
        let g = sess.tape.backward(loss_var)?;
        (loss, sess.collect_grads(&g), sess.take_updates())
    };
    if grads.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(diverged(loss));
    }
    model.store.zero_grads();
    apply_pass(&mut model.store, grads, updates, BN_MOMENTUM)?;
    opt.step(&mut model.store, lr)?;
    Ok(loss)
}

/// Single-scale evaluation with running statistics.
pub fn evaluate(model: &EfficientFcn<f32>, data: &[Sample], k: usize) -> Result<SegMetrics> {
    let mut conf = Confusion::new(k);
    for s in data {
        let pred = ops::argmax_channels(&model.logits(&s.image)?);
        conf.accumulate(&pred, &s.label.data, IGNORE_INDEX)?;
    }
    Ok(conf.metrics())
}

/// Multi-scale (and optionally mirrored) evaluation.
pub fn evaluate_multiscale<M: SegmentationModel<f32> + ?Sized>(
    model: &M,
    data: &[Sample],
    k: usize,
    scales: &[f64],
    flip: bool,
) -> Result<SegMetrics> {
    let mut conf = Confusion::new(k);
    for s in data {
        let pred = ops::argmax_channels(&multiscale_infer(model, &s.image, scales, flip)?);
        conf.accumulate(&pred, &s.label.data, IGNORE_INDEX)?;
    }
    Ok(conf.metrics())
}

/// Trains the toy model on `data` with poly-LR momentum SGD and augmentation.
/// Training-set metrics are logged every `eval_interval` iterations and at
/// the end; records are also written as JSON lines to `log_sink`.
pub fn train_toy(cfg: &RunConfig, data: &[Sample], mut log_sink: Option<&mut dyn Write>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    let t = &cfg.train;
    let k = cfg.model.hgd.n_classes;
    let mut model = EfficientFcn::<f32>::new(cfg.model.clone(), t.seed)?;
    let mut opt = Sgd::new(&model.store, t);
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1));
    let aug = AugmentParams {
        crop: t.crop,
        scale_range: t.scale_range,
        flip_prob: t.flip_prob,
    };
    let mut log = Vec::new();
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    let mut last = None;
    for iter in 0..t.max_iters {
        let lr = poly_lr(iter, t)?;
        let mut images = Vec::with_capacity(t.batch_size);
        let mut labels = Vec::with_capacity(t.batch_size);
        for _ in 0..t.batch_size {
            let s = augment(&data[rng.random_range(0..data.len())], &aug, &mut rng)?;
            images.push(s.image);
            labels.push(s.label);
        }
        let image = Tensor::stack_batch(&images)?;
        let label = LabelMap::stack(&labels)?;
        loss_sum += train_step(&mut model, &mut opt, &image, &label, lr as f32, iter)?;
        loss_n += 1;
        let done = iter + 1;
        if done == t.max_iters || (t.eval_interval > 0 && done % t.eval_interval == 0) {
            let m = evaluate(&model, data, k)?;
            let rec = LogRecord {
                iter: done,
                lr,
                loss: loss_sum / loss_n as f64,
                pix_acc: m.pix_acc,
                mean_iou: m.mean_iou,
            };
            if let Some(w) = log_sink.as_deref_mut() {
                writeln!(w, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io("<log>", e))?;
            }
            log.push(rec);
            loss_sum = 0.0;
            loss_n = 0;
            last = Some(m);
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        final_metrics: last.expect("final evaluation always runs"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::TrainConfig;
    use crate::harness::data::{generate, SyntheticConfig};

    fn tiny(base_lr: f64, aug: bool) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model.backbone.stage_channels = [8, 8, 8];
        cfg.model.backbone.stem_channels = 4;
        cfg.model.backbone.blocks_per_stage = [1, 1, 1];
        cfg.model.hgd = crate::hgd::HgdConfig {
            compress_channels: 8,
            basis_channels: 8,
            guidance_channels: 8,
            ..crate::hgd::HgdConfig::toy(4, 4)
        };
        cfg.data = SyntheticConfig {
            n_images: 2,
            size: (32, 32),
            ..SyntheticConfig::default()
        };
        cfg.train = TrainConfig {
            base_lr,
            max_iters: 4,
            batch_size: 2,
            crop: (32, 32),
            eval_interval: 1,
            ..TrainConfig::default()
        };
        if !aug {
            cfg.train.scale_range = (1.0, 1.0);
            cfg.train.flip_prob = 0.0;
            cfg.train.batch_size = 1;
            cfg.data.n_images = 1;
        }
        cfg
    }

    #[test]
    fn deterministic_log() {
        let cfg = tiny(0.01, true);
        let data = generate(&cfg.data).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        train_toy(&cfg, &data, Some(&mut a)).unwrap();
        train_toy(&cfg, &data, Some(&mut b)).unwrap();
        assert_eq!(a, b);
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 4);
    }

    #[test]
    fn zero_lr_freezes_parameters() {
        let cfg = tiny(0.0, false);
        let data = generate(&cfg.data).unwrap();
        let out = train_toy(&cfg, &data, None).unwrap();
        let fresh = EfficientFcn::<f32>::new(cfg.model.clone(), cfg.train.seed).unwrap();
        for ((_, p), (_, q)) in out.model.store.iter().zip(fresh.store.iter()) {
            if p.role.trainable() {
                assert_eq!(p.tensor.data(), q.tensor.data(), "{}", p.name);
            }
        }
        let losses: Vec<f64> = out.log.iter().map(|r| r.loss).collect();
        assert!(losses.windows(2).all(|w| w[0] == w[1]), "{losses:?}");
    }
}
