//! Symbolic ResNet101.

use super::graph::{ArchGraph, GraphBuilder};
use crate::error::{Error, Result};

pub const RESNET101_BLOCKS: [usize; 4] = [3, 4, 23, 3];
pub const RESNET_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const BOTTLENECK_EXPANSION: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ResNetOptions {
    /// Stages 3 and 4 run at stride 1 with dilation 2 and 4 (output stride 8).
    pub dilated: bool,
    /// Put the downsampling stride on the 3x3 conv instead of the first 1x1.
    pub stride_in_3x3: bool,
    /// Global pool plus 1000-way classifier after stage 4.
    pub include_fc: bool,
}

/// Indices of the last layer of each stage, plus the finished graph.
#[derive(Clone, Debug)]
pub struct ResNetGraph {
    pub graph: ArchGraph,
    pub stage_outputs: [usize; 4],
}

fn check_input(input: (usize, usize)) -> Result<()> {
    if input.0 == 0 || input.1 == 0 || !input.0.is_multiple_of(32) || !input.1.is_multiple_of(32) {
        return Err(Error::Config(format!(
            "input {}x{} is not a positive multiple of 32",
            input.0, input.1
        )));
    }
    Ok(())
}

/// ResNet101 without the classifier: 7x7/2 stem, 3x3/2 max-pool, and
/// bottleneck stages of 3/4/23/3 blocks.
pub fn describe_resnet101(input: (usize, usize), dilated: bool) -> Result<ArchGraph> {
    Ok(describe_resnet101_with(
        input,
        ResNetOptions {
            dilated,
            ..ResNetOptions::default()
        },
    )?
    .graph)
}

pub fn describe_resnet101_with(input: (usize, usize), opts: ResNetOptions) -> Result<ResNetGraph> {
    check_input(input)?;
    let mut b = GraphBuilder::new();
    let x = b.input("image", 3, input.0, input.1);
    let stem = b.conv_bn_relu("conv1", x, 64, 7, 2, 3, 1);
    let mut cur = b.pool("maxpool", stem, 3, 2, 1);
    let mut c_in = 64;
    let mut stage_outputs = [0; 4];
    for (s, (&blocks, &width)) in RESNET101_BLOCKS.iter().zip(&RESNET_WIDTHS).enumerate() {
        let (stride, dilation) = match (s, opts.dilated) {
            (0, _) => (1, 1),
            (1, _) => (2, 1),
            (2, true) => (1, 2),
            (3, true) => (1, 4),
            _ => (2, 1),
        };
        let c_out = width * BOTTLENECK_EXPANSION;
        for blk in 0..blocks {
            let name = format!("layer{}.{blk}", s + 1);
            let st = if blk == 0 { stride } else { 1 };
            let (s1, s3) = if opts.stride_in_3x3 { (1, st) } else { (st, 1) };
            let a = b.conv_bn_relu(&format!("{name}.conv1"), cur, width, 1, s1, 0, 1);
            let a = b.conv_bn_relu(&format!("{name}.conv2"), a, width, 3, s3, dilation, dilation);
            let a = b.conv(&format!("{name}.conv3"), a, c_out, 1, 1, 0, 1, false);
            let a = b.bn(&format!("{name}.bn3"), a);
            let short = if blk == 0 {
                let d = b.conv(&format!("{name}.downsample"), cur, c_out, 1, st, 0, 1, false);
                b.bn(&format!("{name}.downsample.bn"), d)
            } else {
                cur
            };
            let sum = b.add(&format!("{name}.add"), &[a, short]);
            cur = b.relu(&format!("{name}.relu"), sum);
        }
        c_in = c_out;
        stage_outputs[s] = cur;
    }
    debug_assert_eq!(c_in, 2048);
    if opts.include_fc {
        let p = b.global_pool("avgpool", cur);
        b.fc("fc", p, 1000);
    }
    Ok(ResNetGraph {
        graph: b.finish(),
        stage_outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::graph::LayerKind;

    #[test]
    fn final_map_sizes() {
        let g = describe_resnet101((512, 512), false).unwrap();
        let last = g.last().unwrap();
        assert_eq!((last.c_out, last.out_h, last.out_w), (2048, 16, 16));
        let g = describe_resnet101((512, 512), true).unwrap();
        let last = g.last().unwrap();
        assert_eq!((last.c_out, last.out_h, last.out_w), (2048, 64, 64));
    }

    #[test]
    fn conv_count() {
        let g = describe_resnet101((224, 224), false).unwrap();
        assert_eq!(g.count_kind(LayerKind::Conv), 1 + 33 * 3 + 4);
    }

    #[test]
    fn graphs_validate() {
        for dilated in [false, true] {
            for stride_in_3x3 in [false, true] {
                describe_resnet101_with(
                    (320, 480),
                    ResNetOptions {
                        dilated,
                        stride_in_3x3,
                        include_fc: true,
                    },
                )
                .unwrap()
                .graph
                .validate()
                .unwrap();
            }
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        assert!(describe_resnet101((500, 512), false).is_err());
    }
}
