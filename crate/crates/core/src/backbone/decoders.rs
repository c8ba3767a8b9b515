//! Symbolic decoder heads attached to ResNet101 feature shapes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::{ArchGraph, GraphBuilder};
use super::resnet::{describe_resnet101_with, ResNetOptions};
use crate::error::{Error, Result};
use crate::hgd::HgdConfig;

/// ResNet101 channels at OS=8, OS=16, OS=32.
pub const RESNET_FEATURE_CHANNELS: [usize; 3] = [512, 1024, 2048];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    /// 1x1 classifier on the OS=32 map.
    Fcn32sHead,
    UnetBilinear,
    UnetDeconv,
    Hgd,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 4] = [
        DecoderKind::Fcn32sHead,
        DecoderKind::UnetBilinear,
        DecoderKind::UnetDeconv,
        DecoderKind::Hgd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::Fcn32sHead => "fcn32s_head",
            DecoderKind::UnetBilinear => "unet_bilinear",
            DecoderKind::UnetDeconv => "unet_deconv",
            DecoderKind::Hgd => "hgd",
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        DecoderKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown decoder kind '{s}'")))
    }
}

/// Full segmentation models compared in the cost tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Fcn32s,
    DilatedFcn8s,
    UnetBilinear,
    UnetDeconv,
    EfficientFcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Fcn32s,
        ModelKind::DilatedFcn8s,
        ModelKind::UnetBilinear,
        ModelKind::UnetDeconv,
        ModelKind::EfficientFcn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Fcn32s => "fcn32s",
            ModelKind::DilatedFcn8s => "dilatedfcn8s",
            ModelKind::UnetBilinear => "unet-bilinear",
            ModelKind::UnetDeconv => "unet-deconv",
            ModelKind::EfficientFcn => "efficientfcn",
        }
    }

    /// Display name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Fcn32s => "FCN-32s",
            ModelKind::DilatedFcn8s => "dilatedFCN-8s",
            ModelKind::UnetBilinear => "UNet-Bilinear",
            ModelKind::UnetDeconv => "UNet-Deconv",
            ModelKind::EfficientFcn => "EfficientFCN",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }
}

fn feature_inputs(b: &mut GraphBuilder, input: (usize, usize)) -> [usize; 3] {
    let [c8, c16, c32] = RESNET_FEATURE_CHANNELS;
    [
        b.input("f8", c8, input.0 / 8, input.1 / 8),
        b.input("f16", c16, input.0 / 16, input.1 / 16),
        b.input("f32", c32, input.0 / 32, input.1 / 32),
    ]
}

fn check_input(input: (usize, usize)) -> Result<()> {
    super::toy::check_divisible(input.0, input.1)
}

/// Classifier on a 2048-channel map at output stride `os`, upsampled to the
/// input size. `mid` inserts a 3x3 conv-BN-ReLU to that many channels first.
pub fn describe_fcn_head(input: (usize, usize), os: usize, n_classes: usize, mid: Option<usize>) -> Result<ArchGraph> {
    check_input(input)?;
    let mut b = GraphBuilder::new();
    b.set_prefix("head");
    let x = b.input("features", RESNET_FEATURE_CHANNELS[2], input.0 / os, input.1 / os);
    let x = match mid {
        Some(c) => b.conv_bn_relu("conv", x, c, 3, 1, 1, 1),
        None => x,
    };
    let logits = b.conv("classifier", x, n_classes, 1, 1, 0, 1, true);
    b.bilinear("upsample", logits, input.0, input.1);
    Ok(b.finish())
}

/// Two-step skip-connected decoder from OS=32 to OS=8. Each step upsamples by
/// two while halving channels (bilinear + 1x1 conv, or a 2x2 stride-2
/// deconvolution), concatenates the skip feature and applies a 3x3 conv.
fn describe_unet(input: (usize, usize), n_classes: usize, deconv: bool) -> Result<ArchGraph> {
    check_input(input)?;
    let mut b = GraphBuilder::new();
    b.set_prefix(if deconv { "unet_deconv" } else { "unet_bilinear" });
    let [f8, f16, f32] = feature_inputs(&mut b, input);
    let mut x = f32;
    for (step, (skip, c_out)) in [(f16, 512), (f8, 256)].into_iter().enumerate() {
        let c = b.layer(x).c_out / 2;
        let (h, w) = (b.layer(skip).out_h, b.layer(skip).out_w);
        let up = if deconv {
            let d = b.deconv(&format!("up{step}"), x, c, 2, 2, 0, false);
            let d = b.bn(&format!("up{step}.bn"), d);
            b.relu(&format!("up{step}.relu"), d)
        } else {
            let r = b.bilinear(&format!("up{step}.resize"), x, h, w);
            b.conv_bn_relu(&format!("up{step}"), r, c, 1, 1, 0, 1)
        };
        let cat = b.concat(&format!("skip{step}"), &[up, skip]);
        x = b.conv_bn_relu(&format!("fuse{step}"), cat, c_out, 3, 1, 1, 1);
    }
    let logits = b.conv("classifier", x, n_classes, 1, 1, 0, 1, true);
    b.bilinear("upsample", logits, input.0, input.1);
    Ok(b.finish())
}

/// Holistically-guided decoder on ResNet101 features.
pub fn describe_hgd(cfg: &HgdConfig, input: (usize, usize)) -> Result<ArchGraph> {
    describe_hgd_on(cfg, input, RESNET_FEATURE_CHANNELS)
}

/// Holistically-guided decoder on features with the given channel counts.
pub fn describe_hgd_on(cfg: &HgdConfig, input: (usize, usize), enc: [usize; 3]) -> Result<ArchGraph> {
    cfg.validate()?;
    check_input(input)?;
    let mut b = GraphBuilder::new();
    b.set_prefix("hgd");
    let h32 = (input.0 / 32, input.1 / 32);
    let h8 = (input.0 / 8, input.1 / 8);
    let feats = [
        b.input("f8", enc[0], input.0 / 8, input.1 / 8),
        b.input("f16", enc[1], input.0 / 16, input.1 / 16),
        b.input("f32", enc[2], input.0 / 32, input.1 / 32),
    ];
    let mut e = [None; 3];
    for (i, os) in [8, 16, 32].into_iter().enumerate() {
        if cfg.uses_scale(os) {
            e[i] = Some(b.conv_bn_relu(&format!("compress{os}"), feats[i], cfg.compress_channels, 1, 1, 0, 1));
        }
    }
    let gather = |b: &mut GraphBuilder, scales: &[usize], size: (usize, usize), tag: &str| {
        let parts: Vec<usize> = scales
            .iter()
            .map(|&os| {
                let idx = match os {
                    8 => 0,
                    16 => 1,
                    _ => 2,
                };
                let src = e[idx].expect("compressed scale present");
                let l = b.layer(src);
                if (l.out_h, l.out_w) == size {
                    src
                } else {
                    b.bilinear(&format!("e{os}_to_{tag}"), src, size.0, size.1)
                }
            })
            .collect();
        b.concat(tag, &parts)
    };
    let m32 = gather(&mut b, &cfg.m32_scales, h32, "m32");
    let m8 = gather(&mut b, &cfg.m8_scales, h8, "m8");

    let n = cfg.n_codewords;
    let d = cfg.basis_channels;
    let basis = b.conv_bn_relu("basis", m32, d, 1, 1, 0, 1);
    let a = b.conv("attn", m32, n, 1, 1, 0, 1, true);
    let a_norm = b.softmax("attn.softmax", a);
    let codewords = b.matmul("codewords", basis, a_norm, h32.0 * h32.1, d, n, 1);
    let g = b.conv_bn_relu("guidance", m8, cfg.guidance_channels, 1, 1, 0, 1);
    let g_bar = if cfg.codeword_transfer {
        let b_bar = b.global_pool("basis.mean", basis);
        b.add("transfer", &[g, b_bar])
    } else {
        g
    };
    let w = b.conv("assembly_weights", g_bar, n, 1, 1, 0, 1, true);
    let f8_tilde = b.matmul("assemble", w, codewords, n, d, h8.0, h8.1);
    let f8_hat = b.concat("f8_hat", &[f8_tilde, g]);
    let logits = b.conv("classifier", f8_hat, cfg.n_classes, 1, 1, 0, 1, true);
    b.bilinear("upsample", logits, input.0, input.1);
    Ok(b.finish())
}

/// Decoder graph with the default HGD channel widths.
pub fn describe_decoder(kind: DecoderKind, input: (usize, usize), n_codewords: usize, n_classes: usize) -> Result<ArchGraph> {
    match kind {
        DecoderKind::Fcn32sHead => describe_fcn_head(input, 32, n_classes, None),
        DecoderKind::UnetBilinear => describe_unet(input, n_classes, false),
        DecoderKind::UnetDeconv => describe_unet(input, n_classes, true),
        DecoderKind::Hgd => {
            let cfg = HgdConfig {
                n_codewords,
                n_classes,
                ..HgdConfig::default()
            };
            describe_hgd(&cfg, input)
        }
    }
}

/// Encoder followed by decoder; decoder inputs remain as placeholder layers.
pub fn describe_model(kind: ModelKind, input: (usize, usize), n_codewords: usize, n_classes: usize) -> Result<ArchGraph> {
    let dilated = kind == ModelKind::DilatedFcn8s;
    let mut g = describe_resnet101_with(
        input,
        ResNetOptions {
            dilated,
            ..ResNetOptions::default()
        },
    )?
    .graph;
    let head = match kind {
        ModelKind::Fcn32s => describe_fcn_head(input, 32, n_classes, None)?,
        ModelKind::DilatedFcn8s => describe_fcn_head(input, 8, n_classes, None)?,
        ModelKind::UnetBilinear => describe_decoder(DecoderKind::UnetBilinear, input, n_codewords, n_classes)?,
        ModelKind::UnetDeconv => describe_decoder(DecoderKind::UnetDeconv, input, n_codewords, n_classes)?,
        ModelKind::EfficientFcn => describe_decoder(DecoderKind::Hgd, input, n_codewords, n_classes)?,
    };
    g.append(&head);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::graph::LayerKind;

    #[test]
    fn hgd_layer_shapes() {
        let g = describe_decoder(DecoderKind::Hgd, (512, 512), 256, 60).unwrap();
        g.validate().unwrap();
        let a = g.find("hgd.attn").unwrap();
        assert_eq!((a.c_in, a.c_out, a.out_h, a.out_w), (1536, 256, 16, 16));
        let hat = g.find("hgd.f8_hat").unwrap();
        assert_eq!((hat.c_out, hat.out_h), (2048, 64));
        let basis = g.find("hgd.basis").unwrap();
        assert_eq!((basis.c_in, basis.c_out), (1536, 1024));
        let gd = g.find("hgd.guidance").unwrap();
        assert_eq!((gd.c_in, gd.c_out, gd.out_h), (1536, 1024, 64));
        let w = g.find("hgd.assembly_weights").unwrap();
        assert_eq!((w.c_in, w.c_out), (1024, 256));
        assert_eq!(g.count_kind(LayerKind::Matmul), 2);
        let convs: Vec<_> = g.layers.iter().filter(|l| l.kind == LayerKind::Conv).collect();
        assert_eq!(convs.len(), 3 + 4 + 1);
        assert_eq!(g.last().unwrap().out_h, 512);
    }

    #[test]
    fn fcn32s_head_is_single_conv() {
        let g = describe_decoder(DecoderKind::Fcn32sHead, (512, 512), 256, 60).unwrap();
        let convs: Vec<_> = g.layers.iter().filter(|l| l.kind == LayerKind::Conv).collect();
        assert_eq!(convs.len(), 1);
        assert_eq!((convs[0].out_h, convs[0].c_in), (16, 2048));
    }

    #[test]
    fn all_models_validate() {
        for kind in ModelKind::ALL {
            describe_model(kind, (512, 512), 256, 60).unwrap().validate().unwrap();
            assert_eq!(kind.as_str().parse::<ModelKind>().unwrap(), kind);
        }
        for kind in DecoderKind::ALL {
            assert_eq!(kind.as_str().parse::<DecoderKind>().unwrap(), kind);
        }
        assert!("psp".parse::<DecoderKind>().is_err());
    }

    #[test]
    fn unet_reaches_os8() {
        for kind in [DecoderKind::UnetBilinear, DecoderKind::UnetDeconv] {
            let g = describe_decoder(kind, (512, 512), 256, 60).unwrap();
            g.validate().unwrap();
            let cls = g.layers.iter().find(|l| l.name.ends_with("classifier")).unwrap();
            assert_eq!((cls.out_h, cls.out_w), (64, 64));
        }
    }
}
