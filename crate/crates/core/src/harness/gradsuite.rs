//! Randomized finite-difference checks of every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::backbone::EncoderFeatures;
use crate::error::Result;
use crate::gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
use crate::hgd::{HgdConfig, HgdHead};
use crate::nn::{Mode, ParamStore, Session};
use crate::ops::ConvGeometry;
use crate::tensor::{LabelMap, Tensor};

#[derive(Clone, Debug, Serialize)]
pub struct OpSummary {
    pub op: String,
    pub shapes: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    pub passed: bool,
}

type Case = (Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>);

fn randn(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor<f64> {
    Tensor::randn(dims, 1.0, rng)
}

fn r(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// A random instance of op `name`; `None` for unknown names.
fn case(name: &str, rng: &mut ChaCha8Rng) -> Option<Case> {
    let (n, c, h, w) = (r(rng, 1, 2), r(rng, 1, 4), r(rng, 1, 5), r(rng, 1, 5));
    Some(match name {
        "conv1x1" => {
            let co = r(rng, 1, 4);
            let x = randn(rng, [n, c, h, w]);
            (
                vec![x, randn(rng, [co, c, 1, 1]), randn(rng, [co, 1, 1, 1])],
                Box::new(|t, v| t.conv1x1(v[0], v[1], Some(v[2]))),
            )
        }
        "conv2d" => {
            let k = [1, 3][r(rng, 0, 1)];
            let geom = ConvGeometry::new(r(rng, 1, 2), r(rng, 0, 2), r(rng, 1, 2));
            let (h, w) = (r(rng, 5, 7), r(rng, 5, 7));
            let co = r(rng, 1, 3);
            (
                vec![randn(rng, [n, c, h, w]), randn(rng, [co, c, k, k]), randn(rng, [co, 1, 1, 1])],
                Box::new(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), geom)),
            )
        }
        "batch_norm" => {
            let (h, w) = (r(rng, 2, 5), r(rng, 2, 5));
            (
                vec![randn(rng, [n, c, h, w]), randn(rng, [c, 1, 1, 1]), randn(rng, [c, 1, 1, 1])],
                Box::new(|t, v| Ok(t.batch_norm(v[0], v[1], v[2], None)?.out)),
            )
        }
        "relu" => (vec![randn(rng, [n, c, h, w])], Box::new(|t, v| t.relu(v[0]))),
        "bilinear_resize" => {
            let (oh, ow) = (r(rng, 1, 9), r(rng, 1, 9));
            (
                vec![randn(rng, [n, c, h, w])],
                Box::new(move |t, v| t.bilinear_resize(v[0], oh, ow)),
            )
        }
        "softmax_spatial" => (vec![randn(rng, [n, c, h, w])], Box::new(|t, v| t.softmax_spatial(v[0]))),
        "concat_channels" => {
            let c2 = r(rng, 1, 3);
            (
                vec![randn(rng, [n, c, h, w]), randn(rng, [n, c2, h, w])],
                Box::new(|t, v| t.concat(&[v[0], v[1], v[0]])),
            )
        }
        "weighted_pool" => {
            let k = r(rng, 1, 4);
            (
                vec![randn(rng, [n, c, h, w]), randn(rng, [n, k, h, w])],
                Box::new(|t, v| {
                    let a = t.softmax_spatial(v[1])?;
                    t.weighted_pool(v[0], a)
                }),
            )
        }
        "assemble" => {
            let k = r(rng, 1, 4);
            (
                vec![randn(rng, [n, k, h, w]), randn(rng, [n, c, k, 1])],
                Box::new(|t, v| t.assemble(v[0], v[1])),
            )
        }
        "global_avg" => (vec![randn(rng, [n, c, h, w])], Box::new(|t, v| t.global_avg(v[0]))),
        "add_broadcast" => (
            vec![randn(rng, [n, c, h, w]), randn(rng, [n, c, 1, 1])],
            Box::new(|t, v| t.add_broadcast(v[0], v[1])),
        ),
        "add" => (
            vec![randn(rng, [n, c, h, w]), randn(rng, [n, c, h, w])],
            Box::new(|t, v| t.add(v[0], v[1])),
        ),
        "cross_entropy_mask" => {
            let k = r(rng, 2, 4);
            let labels: Vec<u32> = (0..n * h * w)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        255
                    } else {
                        rng.random_range(0..k as u32)
                    }
                })
                .collect();
            let labels = LabelMap::new(n, h, w, labels).expect("sizes match");
            (
                vec![randn(rng, [n, k, h, w])],
                Box::new(move |t, v| t.cross_entropy(v[0], &labels, 255)),
            )
        }
        "hgd_forward" => return Some(hgd_case(rng)),
        _ => return None,
    })
}

/// Full decoder on random encoder features; inputs are the three feature
/// maps followed by every trainable decoder parameter.
fn hgd_case(rng: &mut ChaCha8Rng) -> Case {
    let s32 = r(rng, 2, 3);
    let enc = [r(rng, 2, 4), r(rng, 2, 4), r(rng, 2, 4)];
    let mut cfg = HgdConfig::toy(r(rng, 1, 4), r(rng, 2, 3));
    cfg.compress_channels = r(rng, 2, 3);
    cfg.basis_channels = r(rng, 2, 4);
    cfg.guidance_channels = cfg.basis_channels;
    cfg.codeword_transfer = rng.random_bool(0.5);
    hgd_case_with(cfg, enc, s32, rng)
}

fn hgd_case_with(cfg: HgdConfig, enc: [usize; 3], s32: usize, rng: &mut ChaCha8Rng) -> Case {
    let mut store = ParamStore::<f64>::new();
    let head = HgdHead::new(cfg, enc, &mut store, rng).expect("valid toy config");
    let n = r(rng, 1, 2);
    let mut inputs = vec![
        randn(rng, [n, enc[0], 4 * s32, 4 * s32]),
        randn(rng, [n, enc[1], 2 * s32, 2 * s32]),
        randn(rng, [n, enc[2], s32, s32]),
    ];
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.role.trainable())
        .map(|(id, p)| {
            // Perturb the initialization so biases and BN affines are not trivial.
            let mut t = p.tensor.clone();
            t.data_mut().iter_mut().for_each(|v| *v += 0.1 * rng.random_range(-1.0..1.0));
            inputs.push(t);
            id
        })
        .collect();
    let out = (32 * s32, 32 * s32);
    (
        inputs,
        Box::new(move |t, v| {
            let mut sess = Session::with_tape(std::mem::take(t), &store, Mode::Train);
            for (id, var) in ids.iter().zip(&v[3..]) {
                sess.bind(*id, *var);
            }
            let feats = EncoderFeatures {
                f8: v[0],
                f16: v[1],
                f32: v[2],
            };
            let res = head.forward(&mut sess, &feats, out).map(|o| o.logits);
            *t = sess.into_tape();
            res
        }),
    )
}

/// Gradcheck of the full decoder under a fixed configuration, on random
/// encoder features whose OS=32 map is `s32 x s32`.
pub fn gradcheck_hgd(cfg: HgdConfig, enc: [usize; 3], s32: usize, opts: GradcheckOptions) -> Result<GradcheckReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (inputs, op) = hgd_case_with(cfg, enc, s32, &mut rng);
    gradcheck("hgd_forward", |t, v| op(t, v), &inputs, opts)
}

pub const SUITE_OPS: [&str; 14] = [
    "conv1x1",
    "conv2d",
    "batch_norm",
    "relu",
    "bilinear_resize",
    "softmax_spatial",
    "concat_channels",
    "weighted_pool",
    "assemble",
    "global_avg",
    "add_broadcast",
    "add",
    "cross_entropy_mask",
    "hgd_forward",
];

/// Runs `shapes` random instances of every op in double precision.
pub fn gradcheck_suite(shapes: usize, opts: GradcheckOptions) -> Result<Vec<OpSummary>> {
    let mut out = Vec::new();
    for (i, name) in SUITE_OPS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ ((i as u64 + 1) * 0x1000_0001));
        let mut summary = OpSummary {
            op: name.to_string(),
            shapes,
            max_rel_error: 0.0,
            checked: 0,
            passed: true,
        };
        for _ in 0..shapes {
            let (inputs, op) = case(name, &mut rng).expect("known op");
            let o = GradcheckOptions {
                max_per_input: opts.max_per_input.or((*name == "hgd_forward").then_some(16)),
                seed: rng.random(),
                ..opts
            };
            let rep = gradcheck(name, |t, v| op(t, v), &inputs, o)?;
            summary.max_rel_error = summary.max_rel_error.max(rep.max_rel_error);
            summary.checked += rep.checked;
            summary.passed &= rep.passed;
        }
        out.push(summary);
    }
    Ok(out)
}
