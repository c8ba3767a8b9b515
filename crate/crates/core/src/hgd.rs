//! Holistically-guided decoder: multi-scale fusion, codebook generation and
//! codeword assembly.
//!
//! Shapes, with `N` the batch, `n` the codeword count and `D` the basis width:
//!
//! | value | shape |
//! |---|---|
//! | `m32` | `(N, 512·|m32_scales|, H/32, W/32)` |
//! | `m8` | `(N, 512·|m8_scales|, H/8, W/8)` |
//! | `A`, `Ã` | `(N, n, H/32, W/32)` |
//! | `B` | `(N, D, H/32, W/32)` |
//! | `C` | `(N, D, n, 1)` |
//! | `G`, `Ḡ` | `(N, 1024, H/8, W/8)` |
//! | `W` | `(N, n, H/8, W/8)` |
//! | `f̃₈` | `(N, D, H/8, W/8)` |
//! | `f̂₈` | `(N, D + 1024, H/8, W/8)` |

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::backbone::EncoderFeatures;
use crate::error::{Error, Result};
use crate::nn::{ConvBlock, ParamStore, Session};
use crate::scalar::Scalar;

pub const SCALES: [usize; 3] = [8, 16, 32];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HgdConfig {
    pub n_codewords: usize,
    pub compress_channels: usize,
    pub basis_channels: usize,
    pub guidance_channels: usize,
    /// Output strides fused into `m32`; must contain 32.
    pub m32_scales: Vec<usize>,
    /// Output strides fused into `m8`; must contain 8.
    pub m8_scales: Vec<usize>,
    /// Add the mean basis vector to the guidance map before predicting `W`.
    pub codeword_transfer: bool,
    pub n_classes: usize,
}

impl Default for HgdConfig {
    fn default() -> Self {
        HgdConfig {
            n_codewords: 256,
            compress_channels: 512,
            basis_channels: 1024,
            guidance_channels: 1024,
            m32_scales: SCALES.to_vec(),
            m8_scales: SCALES.to_vec(),
            codeword_transfer: true,
            n_classes: 60,
        }
    }
}

impl HgdConfig {
    /// Narrow widths for desk-scale execution.
    pub fn toy(n_codewords: usize, n_classes: usize) -> Self {
        HgdConfig {
            n_codewords,
            compress_channels: 32,
            basis_channels: 32,
            guidance_channels: 32,
            n_classes,
            ..HgdConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.n_codewords == 0 {
            return err("n_codewords must be >= 1".into());
        }
        if self.compress_channels == 0 || self.basis_channels == 0 || self.guidance_channels == 0 || self.n_classes == 0 {
            return err("channel counts must be >= 1".into());
        }
        for (name, set, anchor) in [("m32_scales", &self.m32_scales, 32), ("m8_scales", &self.m8_scales, 8)] {
            if let Some(s) = set.iter().find(|s| !SCALES.contains(s)) {
                return err(format!("{name}: unsupported output stride {s}"));
            }
            let mut sorted = set.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != set.len() {
                return err(format!("{name}: repeated output stride"));
            }
            if !set.contains(&anchor) {
                return err(format!("{name} must contain {anchor}"));
            }
        }
        if self.codeword_transfer && self.basis_channels != self.guidance_channels {
            return err(format!(
                "codeword transfer needs basis_channels ({}) == guidance_channels ({})",
                self.basis_channels, self.guidance_channels
            ));
        }
        Ok(())
    }

    pub fn uses_scale(&self, os: usize) -> bool {
        self.m32_scales.contains(&os) || self.m8_scales.contains(&os)
    }

    pub fn m32_channels(&self) -> usize {
        self.compress_channels * self.m32_scales.len()
    }

    pub fn m8_channels(&self) -> usize {
        self.compress_channels * self.m8_scales.len()
    }

    pub fn feature_channels(&self) -> usize {
        self.basis_channels + self.guidance_channels
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FusionBundle {
    /// Compressed per-scale maps; `None` for scales no fusion map uses.
    pub e8: Option<Var>,
    pub e16: Option<Var>,
    pub e32: Option<Var>,
    pub m32: Var,
    pub m8: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct Codebook {
    /// Weighting logits `A`.
    pub a: Var,
    /// Spatially normalized weighting maps `Ã`.
    pub a_norm: Var,
    pub b: Var,
    pub b_bar: Var,
    /// Codewords `(N, D, n, 1)`.
    pub c: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AssemblyResult {
    pub g: Var,
    pub g_bar: Var,
    pub w: Var,
    pub f8_tilde: Var,
    pub f8_hat: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct HgdOutput {
    pub logits: Var,
    pub fusion: FusionBundle,
    pub codebook: Codebook,
    pub assembly: AssemblyResult,
}

/// Decoder parameters. Compression, basis and guidance convs are
/// conv-BN-ReLU; the weighting, assembly-weight and classifier convs are
/// linear with bias.
#[derive(Clone, Debug)]
pub struct HgdHead {
    pub config: HgdConfig,
    pub compress: [Option<ConvBlock>; 3],
    pub basis: ConvBlock,
    pub attn: ConvBlock,
    pub guidance: ConvBlock,
    pub assembly_weights: ConvBlock,
    pub classifier: ConvBlock,
}

impl HgdHead {
    /// `encoder_channels` are the channel counts at OS=8/16/32.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        config: HgdConfig,
        encoder_channels: [usize; 3],
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let cc = config.compress_channels;
        let compress = std::array::from_fn(|i| {
            let os = SCALES[i];
            config
                .uses_scale(os)
                .then(|| ConvBlock::pointwise_bn_relu(store, &format!("hgd.compress{os}"), encoder_channels[i], cc, rng))
        });
        let basis = ConvBlock::pointwise_bn_relu(store, "hgd.basis", config.m32_channels(), config.basis_channels, rng);
        let attn = ConvBlock::pointwise_linear(store, "hgd.attn", config.m32_channels(), config.n_codewords, rng);
        let guidance = ConvBlock::pointwise_bn_relu(store, "hgd.guidance", config.m8_channels(), config.guidance_channels, rng);
        let assembly_weights = ConvBlock::pointwise_linear(
            store,
            "hgd.assembly_weights",
            config.guidance_channels,
            config.n_codewords,
            rng,
        );
        let classifier = ConvBlock::pointwise_linear(store, "hgd.classifier", config.feature_channels(), config.n_classes, rng);
        Ok(HgdHead {
            config,
            compress,
            basis,
            attn,
            guidance,
            assembly_weights,
            classifier,
        })
    }

    /// Compresses each scale and builds `m32` and `m8` by bilinear resizing
    /// and concatenation in (8, 16, 32) order.
    pub fn fuse<T: Scalar>(&self, sess: &mut Session<'_, T>, feats: &EncoderFeatures) -> Result<FusionBundle> {
        let src = [feats.f8, feats.f16, feats.f32];
        let s8 = sess.tape.shape(feats.f8);
        let s32 = sess.tape.shape(feats.f32);
        let s16 = sess.tape.shape(feats.f16);
        if s8.h != 4 * s32.h || s8.w != 4 * s32.w || s16.h != 2 * s32.h || s16.w != 2 * s32.w {
            return Err(Error::Shape {
                op: "fuse",
                msg: format!("feature sizes {s8}, {s16}, {s32} are not at strides 8/16/32"),
            });
        }
        let mut e = [None; 3];
        for i in 0..3 {
            if let Some(block) = &self.compress[i] {
                e[i] = Some(block.forward(sess, src[i])?);
            }
        }
        let mut gather = |scales: &[usize], h: usize, w: usize| -> Result<Var> {
            let mut parts = Vec::new();
            for (i, os) in SCALES.into_iter().enumerate() {
                if scales.contains(&os) {
                    let v = e[i].expect("compressed scale present");
                    parts.push(sess.tape.bilinear_resize(v, h, w)?);
                }
            }
            sess.tape.concat(&parts)
        };
        let m32 = gather(&self.config.m32_scales, s32.h, s32.w)?;
        let m8 = gather(&self.config.m8_scales, s8.h, s8.w)?;
        Ok(FusionBundle {
            e8: e[0],
            e16: e[1],
            e32: e[2],
            m32,
            m8,
        })
    }

    pub fn build_codebook<T: Scalar>(&self, sess: &mut Session<'_, T>, m32: Var) -> Result<Codebook> {
        let c = sess.tape.shape(m32).c;
        if c != self.config.m32_channels() {
            return Err(Error::Shape {
                op: "build_codebook",
                msg: format!("m32 has {c} channels, expected {}", self.config.m32_channels()),
            });
        }
        let b = self.basis.forward(sess, m32)?;
        let a = self.attn.forward(sess, m32)?;
        let a_norm = sess.tape.softmax_spatial(a)?;
        let codewords = sess.tape.weighted_pool(b, a_norm)?;
        let b_bar = sess.tape.global_avg(b)?;
        Ok(Codebook {
            a,
            a_norm,
            b,
            b_bar,
            c: codewords,
        })
    }

    pub fn assemble_features<T: Scalar>(&self, sess: &mut Session<'_, T>, m8: Var, cb: &Codebook) -> Result<AssemblyResult> {
        let g = self.guidance.forward(sess, m8)?;
        let g_bar = if self.config.codeword_transfer {
            sess.tape.add_broadcast(g, cb.b_bar)?
        } else {
            g
        };
        let w = self.assembly_weights.forward(sess, g_bar)?;
        let f8_tilde = sess.tape.assemble(w, cb.c)?;
        let f8_hat = sess.tape.concat(&[f8_tilde, g])?;
        Ok(AssemblyResult {
            g,
            g_bar,
            w,
            f8_tilde,
            f8_hat,
        })
    }

    /// 1x1 classifier at OS=8 followed by bilinear upsampling to `out_size`.
    pub fn predict_mask<T: Scalar>(&self, sess: &mut Session<'_, T>, f8_hat: Var, out_size: (usize, usize)) -> Result<Var> {
        let s = sess.tape.shape(f8_hat);
        if out_size != (8 * s.h, 8 * s.w) {
            return Err(Error::Shape {
                op: "predict_mask",
                msg: format!("output size {out_size:?} is not 8x the feature size {s}"),
            });
        }
        let logits = self.classifier.forward(sess, f8_hat)?;
        sess.tape.bilinear_resize(logits, out_size.0, out_size.1)
    }

    pub fn forward<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        feats: &EncoderFeatures,
        out_size: (usize, usize),
    ) -> Result<HgdOutput> {
        let fusion = self.fuse(sess, feats)?;
        let codebook = self.build_codebook(sess, fusion.m32)?;
        let assembly = self.assemble_features(sess, fusion.m8, &codebook)?;
        let logits = self.predict_mask(sess, assembly.f8_hat, out_size)?;
        Ok(HgdOutput {
            logits,
            fusion,
            codebook,
            assembly,
        })
    }
}
