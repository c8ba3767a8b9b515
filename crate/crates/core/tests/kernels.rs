use efficientfcn::ops::{self, assemble, bilinear_resize, conv1x1_forward, softmax_spatial, weighted_pool};
use efficientfcn::Tensor64;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(seed: u64, dims: [usize; 4], std: f64) -> Tensor64 {
    Tensor64::randn(dims, std, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn dims() -> impl Strategy<Value = [usize; 4]> {
    (1usize..=2, 1usize..=4, 1usize..=6, 1usize..=6).prop_map(|(n, c, h, w)| [n, c, h, w])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_planes_sum_to_one(d in dims(), seed: u64, scale in 0.1f64..30.0) {
        let y = softmax_spatial(&rand_tensor(seed, d, scale));
        for n in 0..d[0] {
            for c in 0..d[1] {
                let s: f64 = y.plane(n, c).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-5, "plane ({n},{c}) sums to {s}");
            }
        }
    }

    #[test]
    fn softmax_ignores_constant_shift(d in dims(), seed: u64, shift in -50.0f64..50.0) {
        let a = rand_tensor(seed, d, 2.0);
        let y = softmax_spatial(&a);
        let z = softmax_spatial(&a.map(|v| v + shift));
        prop_assert!(y.max_abs_diff(&z) < 1e-6);
    }

    #[test]
    fn codewords_stay_in_convex_hull(d in dims(), k in 1usize..=5, seed: u64) {
        let b = rand_tensor(seed, d, 1.0);
        let a = softmax_spatial(&rand_tensor(seed ^ 1, [d[0], k, d[2], d[3]], 3.0));
        let c = weighted_pool(&b, &a).unwrap();
        for n in 0..d[0] {
            for ch in 0..d[1] {
                let plane = b.plane(n, ch);
                let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..k {
                    let v = c.at(n, ch, i, 0);
                    prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6, "c[{n},{ch},{i}]={v} outside [{lo},{hi}]");
                }
            }
        }
    }

    #[test]
    fn assemble_is_a_matrix_product(n in 1usize..=8, dd in 1usize..=8, h in 1usize..=8, w in 1usize..=8, seed: u64) {
        let wt = rand_tensor(seed, [1, n, h, w], 1.0);
        let c = rand_tensor(seed ^ 2, [1, dd, n, 1], 1.0);
        let y = assemble(&wt, &c).unwrap();
        // (D x n) * (n x HW)
        let cm = DMatrix::from_fn(dd, n, |i, j| c.at(0, i, j, 0));
        let wm = DMatrix::from_row_slice(n, h * w, wt.data());
        let oracle = cm * wm;
        for i in 0..dd {
            for p in 0..h * w {
                prop_assert!((y.plane(0, i)[p] - oracle[(i, p)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bilinear_keeps_constants(d in dims(), oh in 1usize..=13, ow in 1usize..=13, v in -100.0f64..100.0) {
        let x = Tensor64::full(d, v);
        let y = bilinear_resize(&x, oh, ow).unwrap();
        prop_assert!(y.data().iter().all(|&u| u == v));
        prop_assert_eq!(bilinear_resize(&x, d[2], d[3]).unwrap(), x);
    }

    #[test]
    fn odd_upsampling_hits_grid_points(d in dims(), half in 0usize..=3, seed: u64) {
        let f = 2 * half + 1;
        let x = rand_tensor(seed, d, 1.0);
        let y = bilinear_resize(&x, f * d[2], f * d[3]).unwrap();
        let xa = ops::argmax_channels(&x);
        let ya = ops::argmax_channels(&y);
        for n in 0..d[0] {
            for i in 0..d[2] {
                for j in 0..d[3] {
                    let (oy, ox) = (f * i + half, f * j + half);
                    for c in 0..d[1] {
                        prop_assert!((y.at(n, c, oy, ox) - x.at(n, c, i, j)).abs() < 1e-6);
                    }
                    prop_assert_eq!(ya[(n * f * d[2] + oy) * f * d[3] + ox], xa[(n * d[2] + i) * d[3] + j]);
                }
            }
        }
    }

    #[test]
    fn bilinear_identity_at_equal_size(d in dims(), seed: u64) {
        let x = rand_tensor(seed, d, 1.0);
        prop_assert_eq!(bilinear_resize(&x, d[2], d[3]).unwrap(), x);
    }

    #[test]
    fn conv1x1_is_linear(d in dims(), co in 1usize..=4, seed: u64, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let x = rand_tensor(seed, d, 1.0);
        let y = rand_tensor(seed ^ 3, d, 1.0);
        let wt = rand_tensor(seed ^ 4, [co, d[1], 1, 1], 1.0);
        let mix = Tensor64::new(d, x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + beta * b).collect()).unwrap();
        let lhs = conv1x1_forward(&mix, &wt, None).unwrap();
        let fx = conv1x1_forward(&x, &wt, None).unwrap();
        let fy = conv1x1_forward(&y, &wt, None).unwrap();
        for ((l, a), b) in lhs.data().iter().zip(fx.data()).zip(fy.data()) {
            prop_assert!((l - (alpha * a + beta * b)).abs() < 1e-6);
        }
    }

    #[test]
    fn pad_crop_recovers_input(d in dims(), ph in 0usize..5, pw in 0usize..5, seed: u64) {
        let x = rand_tensor(seed, d, 1.0);
        let (p, (top, left)) = ops::pad_symmetric(&x, d[2] + ph, d[3] + pw).unwrap();
        prop_assert_eq!(ops::crop(&p, top, left, d[2], d[3]).unwrap(), x);
    }
}

#[test]
fn hand_set_weighting_logits() {
    // Logits (0, ln 3, 0, 0) over a 2x2 grid.
    let a = Tensor64::new([1, 1, 2, 2], vec![0.0, 3f64.ln(), 0.0, 0.0]).unwrap();
    let an = softmax_spatial(&a);
    let expect = [1.0 / 6.0, 0.5, 1.0 / 6.0, 1.0 / 6.0];
    for (got, want) in an.data().iter().zip(expect) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
    let b = Tensor64::new([1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0]).unwrap();
    let c = weighted_pool(&b, &an).unwrap();
    let mut oracle = [0.0; 2];
    for (ch, o) in oracle.iter_mut().enumerate() {
        for y in 0..2 {
            for x in 0..2 {
                *o += an.at(0, 0, y, x) * b.at(0, ch, y, x);
            }
        }
    }
    assert!((c.at(0, 0, 0, 0) - oracle[0]).abs() < 1e-12);
    assert!((c.at(0, 1, 0, 0) - oracle[1]).abs() < 1e-12);
    assert!((oracle[0] - 14.0 / 6.0).abs() < 1e-12);
    assert!((oracle[1] - 1.0).abs() < 1e-12);
}

#[test]
fn constant_logits_pool_to_the_mean() {
    let b = rand_tensor(5, [2, 3, 4, 5], 1.0);
    let c = weighted_pool(&b, &softmax_spatial(&Tensor64::full([2, 1, 4, 5], 0.7))).unwrap();
    let mean = ops::global_avg(&b);
    for n in 0..2 {
        for ch in 0..3 {
            assert!((c.at(n, ch, 0, 0) - mean.at(n, ch, 0, 0)).abs() < 1e-12);
        }
    }
}
