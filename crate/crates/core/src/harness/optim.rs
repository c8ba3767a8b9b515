use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Shape;

/// `base_lr * (1 - iter / max_iters)^power`.
pub fn poly_lr(iter: usize, cfg: &TrainConfig) -> Result<f64> {
    if iter > cfg.max_iters {
        return Err(Error::Validation(format!("iteration {iter} outside [0, {}]", cfg.max_iters)));
    }
    Ok(cfg.base_lr * (1.0 - iter as f64 / cfg.max_iters as f64).powf(cfg.power))
}

/// `v <- momentum*v + g + wd*p; p <- p - lr*v`.
pub fn sgd_update<T: Scalar>(param: &mut [T], grad: &[T], velocity: &mut [T], lr: T, momentum: T, weight_decay: T) -> Result<()> {
    if grad.len() != param.len() || velocity.len() != param.len() {
        return Err(Error::Dimension {
            op: "sgd_step",
            lhs: Shape::new(1, 1, 1, param.len()),
            rhs: Shape::new(1, 1, grad.len(), velocity.len()),
        });
    }
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over the trainable entries of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    velocity: Vec<Vec<T>>,
    momentum: T,
    weight_decay: T,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(store: &ParamStore<T>, cfg: &TrainConfig) -> Self {
        Sgd {
            velocity: store.iter().map(|(_, p)| vec![T::zero(); p.tensor.numel()]).collect(),
            momentum: T::of(cfg.momentum),
            weight_decay: T::of(cfg.weight_decay),
        }
    }

    /// Applies one step using the gradients held in the store. Parameters
    /// without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: T) -> Result<()> {
        if self.velocity.len() != store.len() {
            return Err(Error::Validation("optimizer state does not match the parameter set".into()));
        }
        for (p, v) in store.iter_mut().zip(&mut self.velocity) {
            if !p.role.trainable() {
                continue;
            }
            let grad = match p.tensor.grad() {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); p.tensor.numel()],
            };
            sgd_update(p.tensor.data_mut(), &grad, v, lr, self.momentum, self.weight_decay)?;
        }
        Ok(())
    }
}
