mod common;

use common::{naive_conv, naive_dense, naive_pool, random_vec};
use proptest::prelude::*;
use sonar_atr::rng::SplitMix64;
use sonar_atr::tensor::{conv2d, dense, maxpool2d, relu, softmax, Tensor};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_loops(
        seed in any::<u64>(),
        c in 1usize..4, h in 1usize..10, w in 1usize..10,
        co in 1usize..4, kh in 1usize..5, kw in 1usize..5,
        stride in 1usize..3, pad in 0usize..3,
    ) {
        prop_assume!(h + 2 * pad >= kh && w + 2 * pad >= kw);
        let mut rng = SplitMix64::new(seed);
        let input = random_vec(&mut rng, c * h * w, -1.0, 1.0);
        let kernels = random_vec(&mut rng, co * c * kh * kw, -1.0, 1.0);
        let bias = random_vec(&mut rng, co, -0.5, 0.5);
        let out = conv2d(
            &Tensor::new(vec![c, h, w], input.clone()).unwrap(),
            &Tensor::new(vec![co, c, kh, kw], kernels.clone()).unwrap(),
            &bias, stride, pad,
        ).unwrap();
        let (want, oh, ow) = naive_conv(&input, (c, h, w), &kernels, (co, kh, kw), &bias, stride, pad);
        prop_assert_eq!(out.shape(), &[co, oh, ow][..]);
        prop_assert!(max_abs_diff(out.data(), &want) <= 1e-12);
    }

    #[test]
    fn maxpool_matches_loops(
        seed in any::<u64>(), c in 1usize..4, h in 1usize..12, w in 1usize..12,
        window in 1usize..4, stride in 1usize..4,
    ) {
        prop_assume!(window <= h && window <= w);
        let mut rng = SplitMix64::new(seed);
        let input = random_vec(&mut rng, c * h * w, -2.0, 2.0);
        let out = maxpool2d(&Tensor::new(vec![c, h, w], input.clone()).unwrap(), window, stride).unwrap();
        let (want, oh, ow) = naive_pool(&input, (c, h, w), window, stride);
        prop_assert_eq!(out.shape(), &[c, oh, ow][..]);
        prop_assert_eq!(out.data(), &want[..]);
    }

    #[test]
    fn dense_matches_loops(seed in any::<u64>(), m in 1usize..12, n in 1usize..40) {
        let mut rng = SplitMix64::new(seed);
        let x = random_vec(&mut rng, n, -1.0, 1.0);
        let wts = random_vec(&mut rng, m * n, -1.0, 1.0);
        let b = random_vec(&mut rng, m, -1.0, 1.0);
        let out = dense(&x, &Tensor::new(vec![m, n], wts.clone()).unwrap(), &b).unwrap();
        prop_assert!(max_abs_diff(&out, &naive_dense(&x, &wts, &b)) <= 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(seed in any::<u64>(), n in 1usize..20, shift in -50.0f64..50.0) {
        let mut rng = SplitMix64::new(seed);
        let x = random_vec(&mut rng, n, -20.0, 20.0);
        let p = softmax(&x);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        prop_assert!(max_abs_diff(&p, &softmax(&shifted)) <= 1e-12);
    }

    #[test]
    fn relu_clamps_negatives(seed in any::<u64>(), n in 1usize..50) {
        let mut rng = SplitMix64::new(seed);
        let x = random_vec(&mut rng, n, -1.0, 1.0);
        let r = relu(&Tensor::vector(x.clone()).unwrap());
        for (a, b) in r.data().iter().zip(&x) {
            prop_assert_eq!(*a, b.max(0.0));
        }
    }
}

#[test]
fn softmax_survives_huge_logits() {
    let p = softmax(&[1000.0, 999.0, -1000.0]);
    assert!(p.iter().all(|v| v.is_finite()));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn conv_rejects_mismatched_channels() {
    let input = Tensor::zeros(vec![2, 4, 4]).unwrap();
    let kernels = Tensor::zeros(vec![1, 3, 3, 3]).unwrap();
    assert!(conv2d(&input, &kernels, &[0.0], 1, 1).is_err());
}

#[test]
fn pool_rejects_oversized_window() {
    let input = Tensor::zeros(vec![1, 2, 2]).unwrap();
    assert!(maxpool2d(&input, 3, 1).is_err());
}
