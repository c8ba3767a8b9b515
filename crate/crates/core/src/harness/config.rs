use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Label value excluded from the loss and the metrics.
pub const IGNORE_INDEX: u32 = 255;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub crop: (usize, usize),
    pub scale_range: (f64, f64),
    pub flip_prob: f64,
    /// Iterations between training-set evaluations; 0 evaluates only at the end.
    pub eval_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.02,
            power: 0.9,
            momentum: 0.9,
            weight_decay: 1e-4,
            max_iters: 2000,
            batch_size: 4,
            crop: (96, 96),
            scale_range: (0.5, 2.0),
            flip_prob: 0.5,
            eval_interval: 250,
            seed: 1,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so that frozen runs can be compared.
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.into()));
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return err("base_lr must be finite and >= 0");
        }
        if !(self.power > 0.0 && self.power <= 1.0) {
            return err("power must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return err("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err("weight_decay must be >= 0");
        }
        if self.max_iters == 0 || self.batch_size == 0 {
            return err("max_iters and batch_size must be >= 1");
        }
        if self.crop.0 == 0 || self.crop.1 == 0 || !self.crop.0.is_multiple_of(32) || !self.crop.1.is_multiple_of(32) {
            return err("crop must be a positive multiple of 32");
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return err("scale_range must satisfy 0 < lo <= hi");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return err("flip_prob must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Everything a training or evaluation run needs, loaded from one JSON file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: SyntheticConfig,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.backbone.validate()?;
        self.model.hgd.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        if self.data.n_classes != self.model.hgd.n_classes {
            return Err(Error::Config(format!(
                "dataset has {} classes but the model predicts {}",
                self.data.n_classes, self.model.hgd.n_classes
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"train": {"max_iters": 10}, "model": {"hgd": {"n_codewords": 8}}}"#).unwrap();
        assert_eq!(cfg.train.max_iters, 10);
        assert_eq!(cfg.train.power, 0.9);
        assert_eq!(cfg.model.hgd.n_codewords, 8);
        assert_eq!(cfg.model.hgd.compress_channels, 512);
    }

    #[test]
    fn rejects_bad_values() {
        for cfg in [
            TrainConfig {
                power: 0.0,
                ..Default::default()
            },
            TrainConfig {
                base_lr: -1.0,
                ..Default::default()
            },
            TrainConfig {
                max_iters: 0,
                ..Default::default()
            },
            TrainConfig {
                crop: (48, 64),
                ..Default::default()
            },
            TrainConfig {
                scale_range: (2.0, 0.5),
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
