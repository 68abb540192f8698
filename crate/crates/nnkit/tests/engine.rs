use approx::assert_abs_diff_eq;
use nnkit::layer::{Conv2d, Dense, Layer};
use nnkit::{
    grad_check, train, Adam, AdamConfig, Gradients, Network, NetworkBuilder, PairSource,
    Parallelism, Tensor, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-3;

fn random_input(shape: &[usize], batch: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut full = vec![batch];
    full.extend_from_slice(shape);
    let n: usize = full.iter().product();
    Tensor::new(full, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// An input whose relu pre-activations all sit at least `KINK_MARGIN` away
/// from zero, so central differences never straddle a kink.
fn input_off_kinks(net: &Network, batch: usize, seed: u64) -> Tensor {
    for attempt in 0..500 {
        let x = random_input(net.input_shape(), batch, seed * 1000 + attempt);
        let (_, cache) = net.forward(&x).unwrap();
        let clear = net.layers().iter().enumerate().all(|(i, l)| {
            !matches!(l, Layer::Relu)
                || cache
                    .activation(i)
                    .data()
                    .iter()
                    .all(|v| v.abs() > KINK_MARGIN)
        });
        if clear {
            return x;
        }
    }
    panic!("no kink-free input found");
}

fn check(net: &Network, batch: usize, seed: u64) -> f64 {
    let x = input_off_kinks(net, batch, seed);
    let g = grad_check(net, &x, H).unwrap();
    assert!(g.checked > 0 || net.param_count() == 0);
    g.max_rel_error.max(g.max_input_rel_error)
}

#[test]
fn gradient_check_dense() {
    let net = NetworkBuilder::new(vec![5]).dense(4).build(1).unwrap();
    assert!(check(&net, 3, 1) < TOL);
}

#[test]
fn gradient_check_conv_strides_and_padding() {
    for (stride, padding) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
        let net = NetworkBuilder::new(vec![2, 6, 6])
            .conv2d(3, 3, stride, padding)
            .build(2)
            .unwrap();
        let e = check(&net, 2, 2);
        assert!(e < TOL, "stride {stride} padding {padding}: {e}");
    }
}

#[test]
fn gradient_check_upsample() {
    let net = NetworkBuilder::new(vec![2, 3, 3])
        .upsample(2)
        .conv2d(1, 3, 1, 1)
        .build(3)
        .unwrap();
    assert!(check(&net, 2, 3) < TOL);
}

#[test]
fn gradient_check_relu() {
    let net = NetworkBuilder::new(vec![6])
        .dense(8)
        .relu()
        .dense(3)
        .build(4)
        .unwrap();
    assert!(check(&net, 4, 4) < TOL);
}

#[test]
fn gradient_check_sigmoid() {
    let net = NetworkBuilder::new(vec![4])
        .dense(5)
        .sigmoid()
        .build(5)
        .unwrap();
    assert!(check(&net, 3, 5) < TOL);
}

#[test]
fn gradient_check_flatten_reshape() {
    let net = NetworkBuilder::new(vec![1, 4, 4])
        .conv2d(2, 3, 2, 1)
        .flatten()
        .dense(8)
        .reshape(vec![2, 2, 2])
        .conv2d(1, 1, 1, 0)
        .build(6)
        .unwrap();
    assert!(check(&net, 2, 6) < TOL);
}

fn random_network(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..=3);
    let s = 2 * rng.random_range(2..=4);
    let mut b = NetworkBuilder::new(vec![c, s, s])
        .conv2d(rng.random_range(2..=4), 3, 2, 1)
        .relu();
    if rng.random_bool(0.5) {
        b = b.upsample(2).conv2d(2, 3, 1, 1).sigmoid();
    }
    b.flatten()
        .dense(rng.random_range(3..=8))
        .relu()
        .dense(rng.random_range(1..=4))
        .build(seed)
        .unwrap()
}

#[test]
fn gradient_check_random_networks() {
    for seed in [11, 12, 13] {
        let net = random_network(seed);
        let e = check(&net, 2, seed);
        assert!(e < TOL, "network {seed}: {e}");
    }
}

#[test]
fn linear_network_gradients_are_nearly_exact() {
    let net = NetworkBuilder::new(vec![4])
        .dense(6)
        .dense(3)
        .build(7)
        .unwrap();
    assert!(check(&net, 3, 7) < 1e-7);
}

#[test]
fn zero_weights_with_relu_pass() {
    let layers = vec![
        Layer::Dense(Dense::new(3, 4, vec![0.0; 12], vec![0.0; 4])),
        Layer::Relu,
        Layer::Dense(Dense::new(4, 2, vec![0.0; 8], vec![0.0; 2])),
    ];
    let net = Network::from_layers(vec![3], layers, 0).unwrap();
    let x = random_input(&[3], 2, 8);
    let g = grad_check(&net, &x, H).unwrap();
    assert!(g.passes(TOL), "{g:?}");
}

#[test]
fn identity_dense_passes_input_through() {
    let mut w = vec![0.0; 9];
    for i in 0..3 {
        w[i * 3 + i] = 1.0;
    }
    let net = Network::from_layers(
        vec![3],
        vec![Layer::Dense(Dense::new(3, 3, w, vec![0.0; 3]))],
        0,
    )
    .unwrap();
    let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 3.25]).unwrap();
    assert_eq!(net.predict(&x).unwrap().data(), x.data());
}

#[test]
fn relu_values() {
    let net = Network::from_layers(vec![3], vec![Layer::Relu], 0).unwrap();
    let x = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.5]).unwrap();
    assert_eq!(net.predict(&x).unwrap().data(), &[0.0, 0.0, 2.5]);
}

#[test]
fn one_by_one_conv_is_identity() {
    let conv = Conv2d {
        in_channels: 1,
        out_channels: 1,
        kernel: 1,
        stride: 1,
        padding: 0,
        weight: vec![1.0],
        bias: vec![0.0],
    };
    let net = Network::from_layers(vec![1, 5, 5], vec![Layer::Conv2d(conv)], 0).unwrap();
    let x = random_input(&[1, 5, 5], 2, 9);
    assert_eq!(net.predict(&x).unwrap().data(), x.data());
}

#[test]
fn zero_output_gradient_gives_zero_parameter_gradients() {
    let net = random_network(21);
    let x = random_input(net.input_shape(), 2, 21);
    let (y, cache) = net.forward(&x).unwrap();
    let (g, dx) = net
        .backward(&cache, &Tensor::zeros(y.shape().to_vec()))
        .unwrap();
    assert_eq!(g.max_abs(), 0.0);
    assert!(dx.data().iter().all(|v| *v == 0.0));
}

#[test]
fn scalar_dense_input_gradient() {
    let net = Network::from_layers(
        vec![1],
        vec![Layer::Dense(Dense::new(1, 1, vec![2.0], vec![0.5]))],
        0,
    )
    .unwrap();
    let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
    let (_, cache) = net.forward(&x).unwrap();
    let (g, dx) = net
        .backward(&cache, &Tensor::new(vec![1, 1], vec![1.0]).unwrap())
        .unwrap();
    assert_eq!(dx.data(), &[2.0]);
    assert_eq!(g.tensors, vec![vec![3.0], vec![1.0]]);
}

fn scalar_net(w: f64) -> Network {
    Network::from_layers(
        vec![1],
        vec![Layer::Dense(Dense::new(1, 1, vec![w], vec![0.0]))],
        0,
    )
    .unwrap()
}

#[test]
fn adam_first_step_hand_arithmetic() {
    let mut net = scalar_net(1.0);
    let mut opt = Adam::new(AdamConfig::default(), &net);
    let g = Gradients {
        tensors: vec![vec![0.5], vec![0.0]],
    };
    opt.step(&mut net, &g).unwrap();
    // bias-corrected first step is lr * g / (|g| + eps')
    assert_abs_diff_eq!(net.params()[0][0], 0.999, epsilon = 1e-7);
    assert_eq!(net.params()[1][0], 0.0);
    assert_eq!(opt.steps(), 1);
}

#[test]
fn adam_repeated_gradient_does_not_grow_the_step() {
    let mut net = scalar_net(1.0);
    let mut opt = Adam::new(AdamConfig::default(), &net);
    let g = Gradients {
        tensors: vec![vec![0.5], vec![0.0]],
    };
    let w0 = net.params()[0][0];
    opt.step(&mut net, &g).unwrap();
    let w1 = net.params()[0][0];
    opt.step(&mut net, &g).unwrap();
    let w2 = net.params()[0][0];
    assert!((w2 - w1).abs() <= (w1 - w0).abs() * (1.0 + 1e-6));
}

#[test]
fn fitting_a_single_weight() {
    let mut net = NetworkBuilder::new(vec![1]).dense(1).build(3).unwrap();
    net.params_mut()[1][0] = 0.0;
    let src = PairSource::from_rows(vec![vec![1.0]], vec![vec![2.0]]).unwrap();
    let cfg = TrainConfig {
        epochs: 3000,
        batch_size: 1,
        learning_rate: 1e-2,
        ..Default::default()
    };
    train(&mut net, &src, None, &cfg).unwrap();
    let y = net
        .predict(&Tensor::new(vec![1, 1], vec![1.0]).unwrap())
        .unwrap();
    assert_abs_diff_eq!(y.data()[0], 2.0, epsilon = 1e-3);
}

fn toy_source(n: usize, seed: u64) -> PairSource {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let ys = xs
        .iter()
        .map(|x| vec![x[0] * x[1] - x[2], x.iter().sum::<f64>()])
        .collect();
    PairSource::from_rows(xs, ys).unwrap()
}

#[test]
fn training_is_reproducible_and_mode_independent() {
    let src = toy_source(50, 1);
    let run = |mode| {
        let mut net = NetworkBuilder::new(vec![3])
            .dense(8)
            .relu()
            .dense(2)
            .build(5)
            .unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            parallelism: mode,
            ..Default::default()
        };
        let rep = train(&mut net, &src, Some(&src), &cfg).unwrap();
        (rep, net.params().concat())
    };
    let a = run(Parallelism::Sequential);
    assert_eq!(a, run(Parallelism::Sequential));
    assert_eq!(a, run(Parallelism::Parallel));
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let src = toy_source(20, 2);
    let mut net = NetworkBuilder::new(vec![3])
        .dense(4)
        .relu()
        .dense(2)
        .build(6)
        .unwrap();
    let before = net.params().concat();
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 20,
        learning_rate: 0.0,
        ..Default::default()
    };
    let rep = train(&mut net, &src, None, &cfg).unwrap();
    assert!(rep.train_loss.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(before, net.params().concat());
}

#[test]
fn invalid_training_configs_are_rejected() {
    let src = toy_source(4, 3);
    let mut net = NetworkBuilder::new(vec![3]).dense(2).build(0).unwrap();
    for cfg in [
        TrainConfig {
            epochs: 0,
            ..Default::default()
        },
        TrainConfig {
            batch_size: 0,
            ..Default::default()
        },
    ] {
        assert!(train(&mut net, &src, None, &cfg).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_is_pure(seed in 0u64..1000, batch in 1usize..4) {
        let net = random_network(seed);
        let x = random_input(net.input_shape(), batch, seed);
        prop_assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn adam_with_zero_gradient_is_identity(w in -10.0f64..10.0, steps in 1usize..5) {
        let mut net = scalar_net(w);
        let mut opt = Adam::new(AdamConfig::default(), &net);
        let g = Gradients::zeros_like(&net);
        for _ in 0..steps {
            opt.step(&mut net, &g).unwrap();
        }
        prop_assert_eq!(net.params()[0][0], w);
        prop_assert_eq!(opt.steps(), steps as u64);
    }

    #[test]
    fn dense_relu_gradients_match(seed in 0u64..200) {
        let net = NetworkBuilder::new(vec![4]).dense(6).relu().dense(2).build(seed).unwrap();
        prop_assert!(check(&net, 2, seed) < TOL);
    }
}
