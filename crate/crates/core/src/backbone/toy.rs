//! Small executable encoder producing OS=8/16/32 feature maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{ConvBlock, ParamStore, Session};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    /// Channels at OS=8, OS=16, OS=32.
    pub stage_channels: [usize; 3],
    /// Conv layers per stage, the first of which has stride 2.
    pub blocks_per_stage: [usize; 3],
    pub stem_channels: usize,
    /// Training resolution `(H, W)`.
    pub input_size: (usize, usize),
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stage_channels: [32, 48, 64],
            blocks_per_stage: [2, 2, 2],
            stem_channels: 16,
            input_size: (96, 96),
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.contains(&0) || self.blocks_per_stage.contains(&0) || self.stem_channels == 0 {
            return Err(Error::Config("backbone channel and block counts must be >= 1".into()));
        }
        check_divisible(self.input_size.0, self.input_size.1)
    }
}

pub(crate) fn check_divisible(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(32) || !w.is_multiple_of(32) {
        return Err(Error::Config(format!("input {h}x{w} is not a positive multiple of 32")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderFeatures {
    pub f8: Var,
    pub f16: Var,
    pub f32: Var,
}

/// Two stride-2 stem convs followed by three stride-2 stages of 3x3
/// conv-BN-ReLU layers.
#[derive(Clone, Debug)]
pub struct ToyBackbone {
    pub config: BackboneConfig,
    stem: Vec<ConvBlock>,
    stages: [Vec<ConvBlock>; 3],
}

impl ToyBackbone {
    pub fn new<T: Scalar, R: Rng + ?Sized>(config: BackboneConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let s = config.stem_channels;
        let stem = vec![
            ConvBlock::conv3x3_bn_relu(store, "backbone.stem0", 3, s, 2, rng),
            ConvBlock::conv3x3_bn_relu(store, "backbone.stem1", s, s, 2, rng),
        ];
        let mut c_in = s;
        let stages = std::array::from_fn(|i| {
            let c = config.stage_channels[i];
            let layers = (0..config.blocks_per_stage[i])
                .map(|j| {
                    let stride = if j == 0 { 2 } else { 1 };
                    let cin = if j == 0 { c_in } else { c };
                    ConvBlock::conv3x3_bn_relu(store, &format!("backbone.stage{}.{j}", i + 1), cin, c, stride, rng)
                })
                .collect();
            c_in = c;
            layers
        });
        Ok(ToyBackbone { config, stem, stages })
    }

    pub fn out_channels(&self) -> [usize; 3] {
        self.config.stage_channels
    }

    /// Accepts any `(N, 3, H, W)` input with `H` and `W` divisible by 32.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, image: Var) -> Result<EncoderFeatures> {
        let s = sess.tape.shape(image);
        if s.c != 3 {
            return Err(Error::Shape {
                op: "forward_toy",
                msg: format!("expected 3 input channels, got {s}"),
            });
        }
        check_divisible(s.h, s.w)?;
        let mut x = image;
        for l in &self.stem {
            x = l.forward(sess, x)?;
        }
        let mut outs = [x; 3];
        for (i, stage) in self.stages.iter().enumerate() {
            for l in stage {
                x = l.forward(sess, x)?;
            }
            outs[i] = x;
        }
        Ok(EncoderFeatures {
            f8: outs[0],
            f16: outs[1],
            f32: outs[2],
        })
    }
}
