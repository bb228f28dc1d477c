mod common;

use common::{fd_worst_relative_error, micro_spec};
use sonar_atr::network::Network;
use sonar_atr::tensor::Tensor;

#[test]
fn micro_network_is_small() {
    let net = Network::init(micro_spec(), 0).unwrap();
    assert!(net.weights().param_count() <= 500);
}

#[test]
fn backprop_matches_finite_differences() {
    for seed in 0..10 {
        let err = fd_worst_relative_error(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn frozen_layers_get_zero_gradient() {
    let net = Network::init(micro_spec(), 3).unwrap();
    let image = Tensor::new(vec![1, 6, 6], vec![0.5; 36]).unwrap();
    let (_, grads) = net.backprop(&image, 1, 4).unwrap();
    for (block, g) in net.weights().blocks.iter().zip(&grads) {
        if block.layer_index < 4 {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }
}
