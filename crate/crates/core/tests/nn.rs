mod common;

use posg::nn::{AdamConfig, AdamState, DenseNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

#[test]
fn backprop_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let input = rng.random_range(1..=5);
        let depth = rng.random_range(0..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=8)).collect();
        let output = rng.random_range(1..=4);
        let net = DenseNet::mlp(input, &hidden, output, 1.0, &mut rng);
        let rows = rng.random_range(1..=4);
        let x = random_rows(&mut rng, rows, input);
        let g = random_rows(&mut rng, rows, output);
        worst = worst.max(common::max_grad_rel_error(&net, &x, &g, 1e-5));
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = DenseNet::mlp(1, &[], 1, 1.0, &mut rng);
    let mut opt = AdamState::new(AdamConfig::with_lr(0.05), &net.param_sizes());
    // fit y = 3x - 1 by least squares
    let xs: Vec<f64> = (0..16).map(|i| i as f64 / 8.0 - 1.0).collect();
    for _ in 0..2000 {
        let x = ndarray::Array2::from_shape_fn((xs.len(), 1), |(i, _)| xs[i]);
        let cache = net.forward_batch(x.view()).unwrap();
        let g = ndarray::Array2::from_shape_fn((xs.len(), 1), |(i, _)| {
            (cache.output()[[i, 0]] - (3.0 * xs[i] - 1.0)) / xs.len() as f64
        });
        let grads = net.backward(&cache, g.view()).unwrap();
        opt.step(&mut net.params_mut(), &grads.slices()).unwrap();
    }
    assert!((net.predict(&[0.5])[0] - 0.5).abs() < 1e-3);
    assert!((net.predict(&[-1.0])[0] + 4.0).abs() < 1e-3);
}

#[test]
fn serialization_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = DenseNet::mlp(4, &[8, 8], 3, 0.01, &mut rng);
    let mut buf = Vec::new();
    net.write_to(&mut buf).unwrap();
    let back = DenseNet::read_from(buf.as_slice()).unwrap();
    assert_eq!(net, back);
    assert!(DenseNet::read_from(&buf[..buf.len() - 3]).is_err());
}
