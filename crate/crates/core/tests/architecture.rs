use efficientfcn::backbone::{
    describe_model, describe_resnet101, describe_resnet101_with, ArchGraph, BackboneConfig, ModelKind, ResNetOptions, ToyBackbone,
};
use efficientfcn::cost::{count, CountingConvention};
use efficientfcn::nn::{Mode, ParamStore, Session};
use efficientfcn::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODELS: [ModelKind; 5] = [
    ModelKind::Fcn32s,
    ModelKind::DilatedFcn8s,
    ModelKind::UnetBilinear,
    ModelKind::UnetDeconv,
    ModelKind::EfficientFcn,
];

fn input_side() -> impl Strategy<Value = usize> {
    (1usize..=6).prop_map(|k| 32 * k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn toy_backbone_strides(
        h in input_side(),
        w in input_side(),
        stem in 1usize..=4,
        chans in prop::array::uniform3(1usize..=4),
        blocks in prop::array::uniform3(1usize..=2),
        seed: u64,
    ) {
        let cfg = BackboneConfig { stage_channels: chans, blocks_per_stage: blocks, stem_channels: stem, input_size: (h, w) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f32>::new();
        let bb = ToyBackbone::new(cfg, &mut store, &mut rng).unwrap();
        let mut sess = Session::frozen(&store, Mode::Eval);
        let x = sess.tape.constant(Tensor::randn([1, 3, h, w], 1.0, &mut rng));
        let f = bb.forward(&mut sess, x).unwrap();
        for (v, os, c) in [(f.f8, 8, chans[0]), (f.f16, 16, chans[1]), (f.f32, 32, chans[2])] {
            prop_assert_eq!(sess.tape.shape(v).dims(), [1, c, h / os, w / os]);
        }
    }

    #[test]
    fn every_generated_graph_validates(h in input_side(), w in input_side(), n in 1usize..=64, k in 2usize..=60) {
        for m in MODELS {
            describe_model(m, (h, w), n, k).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn graphs_roundtrip_through_json(h in input_side(), w in input_side(), n in 1usize..=64) {
        for m in MODELS {
            let g = describe_model(m, (h, w), n, 21).unwrap();
            prop_assert_eq!(ArchGraph::from_json(&g.to_json().unwrap()).unwrap(), g);
        }
    }

    #[test]
    fn dilation_adds_no_parameters(side in input_side(), v15: bool) {
        let conv = CountingConvention::default();
        let opts = |dilated| ResNetOptions { dilated, stride_in_3x3: v15, include_fc: false };
        let plain = describe_resnet101_with((side, side), opts(false)).unwrap().graph;
        let dil = describe_resnet101_with((side, side), opts(true)).unwrap().graph;
        prop_assert_eq!(count(&plain, &conv).unwrap().total_params, count(&dil, &conv).unwrap().total_params);
    }

    #[test]
    fn counts_are_additive(side in input_side(), n in 1usize..=300) {
        let conv = CountingConvention { include_bn_relu: true, include_pool_resize: true, ..Default::default() };
        let enc = describe_resnet101((side, side), false).unwrap();
        let head = efficientfcn::backbone::describe_decoder(efficientfcn::backbone::DecoderKind::Hgd, (side, side), n, 60).unwrap();
        let mut joined = enc.clone();
        joined.append(&head);
        let (a, b, j) = (count(&enc, &conv).unwrap(), count(&head, &conv).unwrap(), count(&joined, &conv).unwrap());
        prop_assert_eq!(j.total_macs, a.total_macs + b.total_macs);
        prop_assert_eq!(j.total_params, a.total_params + b.total_params);
    }
}

#[test]
fn dilated_layers_scale_with_spatial_area() {
    let conv = CountingConvention::default();
    let plain = describe_resnet101((512, 512), false).unwrap();
    let dil = describe_resnet101((512, 512), true).unwrap();
    let (pr, dr) = (count(&plain, &conv).unwrap(), count(&dil, &conv).unwrap());
    assert_eq!(pr.per_layer.len(), dr.per_layer.len());
    let mut seen = [0usize; 3];
    for (p, d) in pr.per_layer.iter().zip(&dr.per_layer) {
        assert_eq!(p.name, d.name);
        assert_eq!(p.params, d.params, "{}", p.name);
        let factor = if p.name.starts_with("layer3.") {
            seen[1] += 1;
            4
        } else if p.name.starts_with("layer4.") {
            seen[2] += 1;
            16
        } else {
            seen[0] += 1;
            1
        };
        assert_eq!(d.macs, factor * p.macs, "{}", p.name);
    }
    assert!(seen.iter().all(|&s| s > 0));
}

#[test]
fn conventions_move_resnet_totals_by_under_five_percent() {
    for dilated in [false, true] {
        let g = describe_resnet101((512, 512), dilated).unwrap();
        let base = count(&g, &CountingConvention::default()).unwrap().total_macs as f64;
        let full = count(
            &g,
            &CountingConvention {
                include_bn_relu: true,
                include_pool_resize: true,
                ..Default::default()
            },
        )
        .unwrap()
        .total_macs as f64;
        let rel = (full - base) / base;
        assert!((0.0..0.05).contains(&rel), "dilated={dilated}: {:.4}", rel);
    }
}
