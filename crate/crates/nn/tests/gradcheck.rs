mod common;

use common::{check_input, check_params, dot, param_grads, FdReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use swarm_sar_nn::graph::GraphActivation;
use swarm_sar_nn::softmax::{segment_softmax, segment_softmax_backward};
use swarm_sar_nn::*;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

/// Checks a single-input layer: loss = <c, layer(x)>.
fn check_layer(layer: &mut Layer, x: &Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> FdReport {
    let y = layer.forward(x, mode).unwrap();
    let c = randn(rng, y.shape());
    layer.zero_grad();
    let dx = layer.backward(&c).unwrap();
    let analytic = param_grads(layer);
    let shape = x.shape().to_vec();
    let c2 = c.clone();
    let mut input_loss = |v: &[f64]| {
        let xi = Tensor::new(&shape, v.to_vec()).unwrap();
        dot(layer.forward(&xi, mode).unwrap().data(), c2.data())
    };
    let rep_in = check_input(x.data(), dx.data(), 40, rng, &mut input_loss);
    let x2 = x.clone();
    let rep_p = check_params(layer, &analytic, 30, rng, &mut |l: &mut Layer| {
        dot(l.forward(&x2, mode).unwrap().data(), c.data())
    });
    rep_in.merge(rep_p)
}

fn assert_ok(name: &str, seed: u64, rep: FdReport) {
    assert!(rep.passes(), "{name} seed {seed}: {rep:?}");
}

#[test]
fn dense_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = Layer::Dense(Dense::new("d", 5, 4, &mut rng));
        let x = randn(&mut rng, &[3, 5]);
        assert_ok("dense", seed, check_layer(&mut l, &x, Mode::Train, &mut rng));
    }
}

#[test]
fn conv2d_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = Layer::Conv2d(Conv2d::new("c", 2, 3, 3, &mut rng));
        let x = randn(&mut rng, &[2, 2, 5, 4]);
        assert_ok("conv2d", seed, check_layer(&mut l, &x, Mode::Train, &mut rng));
    }
}

#[test]
fn conv1d_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = Layer::Conv1d(Conv1d::new("c", 2, 3, 3, &mut rng));
        let x = randn(&mut rng, &[2, 2, 7]);
        assert_ok("conv1d", seed, check_layer(&mut l, &x, Mode::Train, &mut rng));
    }
}

#[test]
fn maxpool_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randn(&mut rng, &[2, 2, 4, 6]);
        assert_ok("maxpool2d", seed, check_layer(&mut Layer::MaxPool2d(MaxPool2d::default()), &x, Mode::Train, &mut rng));
        let x = randn(&mut rng, &[2, 3, 8]);
        assert_ok("maxpool1d", seed, check_layer(&mut Layer::MaxPool1d(MaxPool1d::default()), &x, Mode::Train, &mut rng));
    }
}

#[test]
fn batchnorm_gradients_train_and_eval() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bn = BatchNorm::new("bn", 3);
        bn.gamma.value.data_mut().copy_from_slice(&[1.3, -0.7, 0.4]);
        bn.beta.value.data_mut().copy_from_slice(&[0.1, 0.2, -0.3]);
        let mut l = Layer::BatchNorm(bn);
        let x = randn(&mut rng, &[4, 3]);
        assert_ok("batchnorm dense train", seed, check_layer(&mut l, &x, Mode::Train, &mut rng));
        let x = randn(&mut rng, &[3, 3, 2, 2]);
        assert_ok("batchnorm conv train", seed, check_layer(&mut l, &x, Mode::Train, &mut rng));
        assert_ok("batchnorm eval", seed, check_layer(&mut l, &x, Mode::Eval, &mut rng));
    }
}

#[test]
fn activation_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randn(&mut rng, &[3, 6]);
        assert_ok("leaky", seed, check_layer(&mut Layer::leaky_relu(LEAKY_SLOPE), &x, Mode::Train, &mut rng));
        assert_ok("tanh", seed, check_layer(&mut Layer::tanh(), &x, Mode::Train, &mut rng));
    }
}

#[test]
fn softmax_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let segs = [3usize, 5, 2];
        let x: Vec<f64> = (0..10).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let c: Vec<f64> = (0..10).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let p = segment_softmax(&x, &segs);
        let dx = segment_softmax_backward(&p, &c, &segs);
        let rep = check_input(&x, &dx, 10, &mut rng, &mut |v| dot(&segment_softmax(v, &segs), &c));
        assert_ok("softmax", seed, rep);
    }
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(0.6) {
                edges.push((i, j, rng.random_range(0.1..2.0)));
            }
        }
    }
    Graph::from_edges(n, &edges, true).unwrap()
}

#[test]
fn gcn_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 5);
        let mut l = GcnLayer::new("gcn", 3, 4, GraphActivation::LeakyRelu(LEAKY_SLOPE), &mut rng);
        let h = randn(&mut rng, &[5, 3]);
        let y = l.forward(&g, &h).unwrap();
        let c = randn(&mut rng, y.shape());
        l.zero_grad();
        let dh = l.backward(&g, &c).unwrap();
        let analytic = param_grads(&l);
        let rep_in = check_input(h.data(), dh.data(), 15, &mut rng, &mut |v| {
            let hi = Tensor::new(&[5, 3], v.to_vec()).unwrap();
            dot(l.clone().forward(&g, &hi).unwrap().data(), c.data())
        });
        let rep_p = check_params(&mut l, &analytic, 12, &mut rng, &mut |l: &mut GcnLayer| {
            dot(l.forward(&g, &h).unwrap().data(), c.data())
        });
        assert_ok("gcn", seed, rep_in.merge(rep_p));
    }
}

#[test]
fn gat_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 5);
        let mut l = GatLayer::new("gat", 3, 2, 3, &mut rng);
        let h = randn(&mut rng, &[5, 3]);
        let y = l.forward(&g, &h).unwrap();
        let c = randn(&mut rng, y.shape());
        l.zero_grad();
        let dh = l.backward(&g, &c).unwrap();
        let analytic = param_grads(&l);
        let rep_in = check_input(h.data(), dh.data(), 15, &mut rng, &mut |v| {
            let hi = Tensor::new(&[5, 3], v.to_vec()).unwrap();
            dot(l.clone().forward(&g, &hi).unwrap().data(), c.data())
        });
        let rep_p = check_params(&mut l, &analytic, 20, &mut rng, &mut |l: &mut GatLayer| {
            dot(l.forward(&g, &h).unwrap().data(), c.data())
        });
        assert_ok("gat", seed, rep_in.merge(rep_p));
    }
}

#[test]
fn sequential_stack_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Sequential::new(vec![
            Layer::Conv2d(Conv2d::new("c0", 1, 2, 3, &mut rng)),
            Layer::BatchNorm(BatchNorm::new("bn0", 2)),
            Layer::leaky_relu(LEAKY_SLOPE),
            Layer::MaxPool2d(MaxPool2d::default()),
            Layer::flatten(),
            Layer::Dense(Dense::new("d0", 8, 3, &mut rng)),
            Layer::tanh(),
        ]);
        let x = randn(&mut rng, &[3, 1, 4, 4]);
        let y = net.forward(&x, Mode::Train).unwrap();
        let c = randn(&mut rng, y.shape());
        net.zero_grad();
        net.backward(&c).unwrap();
        let analytic = param_grads(&net);
        let rep = check_params(&mut net, &analytic, 10, &mut rng, &mut |n: &mut Sequential| {
            dot(n.forward(&x, Mode::Train).unwrap().data(), c.data())
        });
        assert_ok("sequential", seed, rep);
    }
}
