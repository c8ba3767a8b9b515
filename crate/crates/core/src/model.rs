//! Toy backbone plus holistically-guided decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::backbone::{BackboneConfig, ToyBackbone};
use crate::error::Result;
use crate::hgd::{HgdConfig, HgdHead, HgdOutput};
use crate::nn::{Mode, ParamStore, Session};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub hgd: HgdConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            hgd: HgdConfig::toy(16, 4),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EfficientFcn<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub backbone: ToyBackbone,
    pub head: HgdHead,
}

impl<T: Scalar> EfficientFcn<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = ToyBackbone::new(config.backbone.clone(), &mut store, &mut rng)?;
        let head = HgdHead::new(config.hgd.clone(), backbone.out_channels(), &mut store, &mut rng)?;
        Ok(EfficientFcn {
            config,
            store,
            backbone,
            head,
        })
    }

    pub fn forward(&self, sess: &mut Session<'_, T>, image: Var) -> Result<HgdOutput> {
        let s = sess.tape.shape(image);
        let feats = self.backbone.forward(sess, image)?;
        self.head.forward(sess, &feats, (s.h, s.w))
    }

    /// Inference-mode logits with running batch-norm statistics.
    pub fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut sess = Session::frozen(&self.store, Mode::Eval);
        let x = sess.tape.constant(image.clone());
        let out = self.forward(&mut sess, x)?;
        Ok(sess.tape.value(out.logits).clone())
    }
}
