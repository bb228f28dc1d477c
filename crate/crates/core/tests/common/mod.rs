// Loop-level reference implementations shared by the integration suites.
#![allow(dead_code)]

use sonar_atr::network::{LayerSpec, Network, NetworkSpec};
use sonar_atr::tensor::Tensor;
use sonar_atr::rng::SplitMix64;
use sonar_atr::svm::FeatureSet;

pub fn random_vec(rng: &mut SplitMix64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(lo, hi)).collect()
}

/// Zero-padded cross-correlation over `[C,H,W]` input and `[Co,C,kh,kw]` kernels.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    kernels: &[f64],
    (co, kh, kw): (usize, usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias[o];
                for ci in 0..c {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = (y * stride + dy) as isize - pad as isize;
                            let ix = (x * stride + dx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let v = input[(ci * h + iy as usize) * w + ix as usize];
                            acc += v * kernels[((o * c + ci) * kh + dy) * kw + dx];
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    (out, oh, ow)
}

pub fn naive_pool(input: &[f64], (c, h, w): (usize, usize, usize), window: usize, stride: usize) -> (Vec<f64>, usize, usize) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..window {
                    for dx in 0..window {
                        m = m.max(input[(ch * h + y * stride + dy) * w + x * stride + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    (out, oh, ow)
}

pub fn naive_dense(x: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len();
    bias.iter()
        .enumerate()
        .map(|(i, b)| b + (0..n).map(|j| weights[i * n + j] * x[j]).sum::<f64>())
        .collect()
}

/// `0.5 (|w|^2 + b^2) + C * sum hinge`, written out independently of the library.
pub fn hinge_objective(theta: &[f64], xs: &[Vec<f64>], ys: &[f64], c: f64) -> f64 {
    let d = xs[0].len();
    let reg = 0.5 * theta.iter().map(|t| t * t).sum::<f64>();
    let loss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let f = (0..d).map(|j| theta[j] * x[j]).sum::<f64>() + theta[d];
            (1.0 - y * f).max(0.0)
        })
        .sum();
    reg + c * loss
}

/// Brute-force subgradient descent on the primal; returns the best objective
/// seen. The objective is 1-strongly convex, so steps `1/t` converge.
pub fn subgradient_minimum(xs: &[Vec<f64>], ys: &[f64], c: f64, iterations: usize) -> f64 {
    let d = xs[0].len();
    let mut theta = vec![0.0; d + 1];
    let mut avg = theta.clone();
    let mut best = hinge_objective(&theta, xs, ys, c);
    for t in 1..=iterations {
        let mut g = theta.clone();
        for (x, &y) in xs.iter().zip(ys) {
            let f = (0..d).map(|j| theta[j] * x[j]).sum::<f64>() + theta[d];
            if y * f < 1.0 {
                for j in 0..d {
                    g[j] -= c * y * x[j];
                }
                g[d] -= c * y;
            }
        }
        let step = 1.0 / t as f64;
        for (th, gj) in theta.iter_mut().zip(&g) {
            *th -= step * gj;
        }
        // running average of the iterates
        let a = 1.0 / t as f64;
        for (m, th) in avg.iter_mut().zip(&theta) {
            *m += a * (th - *m);
        }
        if t % 64 == 0 || t == iterations {
            best = best.min(hinge_objective(&theta, xs, ys, c)).min(hinge_objective(&avg, xs, ys, c));
        }
    }
    best
}

/// Tiny conv net for finite-difference checks: 199 parameters.
pub fn micro_spec() -> NetworkSpec {
    NetworkSpec {
        input_shape: [1, 6, 6],
        layers: vec![
            LayerSpec::Conv {
                out_channels: 2,
                kernel_size: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::Maxpool { window: 2, stride: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 8 },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 3 },
            LayerSpec::Softmax,
        ],
        class_names: vec!["a".into(), "b".into(), "c".into()],
    }
}

/// Lowest index wins ties.
pub fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Small noisy problem: labels from a random hyperplane with a few flips.
pub fn small_instance(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = SplitMix64::new(seed);
    let d = 2 + rng.below(3);
    let n = 8 + rng.below(6);
    let plane: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let s: f64 = x.iter().zip(&plane).map(|(a, b)| a * b).sum();
        let mut y = if s >= 0.0 { 1.0 } else { -1.0 };
        if rng.next_f64() < 0.15 {
            y = -y;
        }
        xs.push(x);
        ys.push(y);
    }
    if ys.iter().all(|&y| y == ys[0]) {
        ys[0] = -ys[0];
    }
    (xs, ys)
}

pub fn separable(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = SplitMix64::new(seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        xs.push(vec![y * rng.uniform(0.5, 2.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)]);
        ys.push(y);
    }
    (xs, ys)
}

pub fn three_class(seed: u64, per_class: usize) -> FeatureSet {
    let mut rng = SplitMix64::new(seed);
    let centers = [[2.0, 0.0, 0.0, 1.0], [0.0, 2.0, 0.0, -1.0], [0.0, 0.0, 2.0, 0.5]];
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            vectors.push(c.iter().map(|v| v + rng.uniform(-0.8, 0.8)).collect());
            labels.push(k);
        }
    }
    FeatureSet::new(vec!["x".into(), "y".into(), "z".into()], vectors, labels).unwrap()
}


pub const FD_STEP: f64 = 1e-5;

fn fd_loss(net: &Network, image: &Tensor, label: usize) -> f64 {
    -net.predict(image).unwrap()[label].ln()
}

/// Largest relative error between backprop and central differences.
pub fn fd_worst_relative_error(seed: u64) -> f64 {
    let net = Network::init(micro_spec(), seed).unwrap();
    let mut rng = SplitMix64::new(seed ^ 0xABCD);
    let image = Tensor::new(vec![1, 6, 6], (0..36).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap();
    let label = rng.below(3);
    let (_, grads) = net.backprop(&image, label, 0).unwrap();
    // every block must carry signal, otherwise the check is vacuous
    assert!(grads.iter().all(|g| g.iter().any(|v| v.abs() > 1e-8)), "seed {seed}: dead block");
    let mut worst: f64 = 0.0;
    for (b, block) in net.weights().blocks.iter().enumerate() {
        for i in 0..block.values.len() {
            let perturbed = |delta: f64| {
                let (spec, mut ws) = net.clone().into_parts();
                ws.blocks[b].values[i] += delta;
                Network::new(spec, ws).unwrap()
            };
            let numeric = (fd_loss(&perturbed(FD_STEP), &image, label) - fd_loss(&perturbed(-FD_STEP), &image, label)) / (2.0 * FD_STEP);
            let analytic = grads[b][i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}

