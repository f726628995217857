use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarm_sar_nn::graph::GraphActivation;
use swarm_sar_nn::*;

#[test]
fn gcn_path_graph_matches_hand_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut gcn = GcnLayer::new("g", 2, 2, GraphActivation::Identity, &mut rng);
    gcn.weight.value.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    let g = Graph::undirected(3, &[(0, 1, 1.0), (1, 2, 1.0)], true).unwrap();
    let h = Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let y = gcn.forward(&g, &h).unwrap();
    // degrees with self-loops: 2, 3, 2
    let r6 = 1.0 / 6f64.sqrt();
    let expect = [
        0.5 * 1.0 + r6 * 3.0,
        0.5 * 2.0 + r6 * 4.0,
        r6 * 1.0 + 3.0 / 3.0 + r6 * 5.0,
        r6 * 2.0 + 4.0 / 3.0 + r6 * 6.0,
        r6 * 3.0 + 0.5 * 5.0,
        r6 * 4.0 + 0.5 * 6.0,
    ];
    for (a, b) in y.data().iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn gcn_disconnected_nodes_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut gcn = GcnLayer::new("g", 2, 3, GraphActivation::LeakyRelu(LEAKY_SLOPE), &mut rng);
    let g = Graph::empty(2).with_self_loops();
    let h = Tensor::new(&[2, 2], vec![0.3, -0.2, 1.5, 0.8]).unwrap();
    let both = gcn.forward(&g, &h).unwrap();
    let one = Graph::empty(1).with_self_loops();
    for r in 0..2 {
        let single = gcn.forward(&one, &Tensor::new(&[1, 2], h.row(r).to_vec()).unwrap()).unwrap();
        assert_eq!(single.data(), both.row(r));
    }
}

/// Direct scalar evaluation of the attention coefficients, independent of
/// the layer's vectorised code.
fn attention_oracle(gat: &GatLayer, g: &Graph, h: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let (heads, hw) = (gat.heads(), gat.head_width());
    let w = gat.weight.value.data();
    let a = gat.attention.value.data();
    let fin = h.dim(1);
    let width = heads * hw;
    let z = |i: usize, k: usize, c: usize| -> f64 {
        (0..fin).map(|f| h.data()[i * fin + f] * w[f * width + k * hw + c]).sum()
    };
    (0..heads)
        .map(|k| {
            let ak = &a[k * (2 * hw + 1)..(k + 1) * (2 * hw + 1)];
            (0..g.n())
                .map(|i| {
                    let scores: Vec<f64> = g
                        .neighbors(i)
                        .iter()
                        .map(|&(j, wij)| {
                            let mut s = ak[2 * hw] * wij;
                            for c in 0..hw {
                                s += ak[c] * z(i, k, c) + ak[hw + c] * z(j, k, c);
                            }
                            let e = if s > 0.0 { s } else { 0.2 * s };
                            e.exp()
                        })
                        .collect();
                    let total: f64 = scores.iter().sum();
                    scores.iter().map(|s| s / total).collect()
                })
                .collect()
        })
        .collect()
}

#[test]
fn gat_clique_attention_matches_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let weights = vec![vec![0.0, 0.4, 0.9], vec![0.4, 0.0, 0.6], vec![0.9, 0.6, 0.0]];
    let g = Graph::fully_connected(&weights, true).unwrap();
    let mut gat = GatLayer::new("g", 3, 4, 2, &mut rng);
    let h = Tensor::from_fn(&[3, 3], |_| rng.random_range(-0.5..0.5));
    gat.forward(&g, &h).unwrap();
    let got = gat.last_attention(&g).unwrap();
    let want = attention_oracle(&gat, &g, &h);
    for (gh, wh) in got.iter().zip(&want) {
        for (gr, wr) in gh.iter().zip(wh) {
            for (a, b) in gr.iter().zip(wr) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn identical_neighbours_get_uniform_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = Graph::fully_connected(&vec![vec![1.0; 4]; 4], true).unwrap();
    let mut gat = GatLayer::new("g", 2, 3, 5, &mut rng);
    // self-loops carry weight 0 while other edges carry 1, so drop the edge term
    let hw = gat.head_width();
    for k in 0..gat.heads() {
        gat.attention.value.data_mut()[k * (2 * hw + 1) + 2 * hw] = 0.0;
    }
    let h = Tensor::new(&[4, 2], [0.3, -0.7].repeat(4)).unwrap();
    gat.forward(&g, &h).unwrap();
    for head in gat.last_attention(&g).unwrap() {
        for row in head {
            for a in row {
                assert!((a - 0.25).abs() < 1e-15);
            }
        }
    }
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = rng.random_range(0.1..3.0);
            w[i][j] = v;
            w[j][i] = v;
        }
    }
    w
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_sum_to_one(seed in any::<u64>(), n in 1usize..8, heads in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Graph::fully_connected(&random_weights(&mut rng, n), true).unwrap();
        let mut gat = GatLayer::new("g", 3, 4, heads, &mut rng);
        let h = Tensor::from_fn(&[n, 3], |_| rng.random_range(-2.0..2.0));
        gat.forward(&g, &h).unwrap();
        for head in gat.last_attention(&g).unwrap() {
            for row in head {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gcn_and_gat_are_permutation_equivariant(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_weights(&mut rng, n);
        let g = Graph::fully_connected(&w, true).unwrap();
        let h = Tensor::from_fn(&[n, 3], |_| rng.random_range(-1.0..1.0));
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let gp = g.permuted(&perm);
        let mut hp = vec![0.0; n * 3];
        for i in 0..n {
            hp[perm[i] * 3..perm[i] * 3 + 3].copy_from_slice(h.row(i));
        }
        let hp = Tensor::new(&[n, 3], hp).unwrap();

        let mut gcn = GcnLayer::new("gcn", 3, 4, GraphActivation::LeakyRelu(LEAKY_SLOPE), &mut rng);
        let mut gat = GatLayer::new("gat", 3, 2, 3, &mut rng);
        for (y, yp) in [
            (gcn.forward(&g, &h).unwrap(), gcn.forward(&gp, &hp).unwrap()),
            (gat.forward(&g, &h).unwrap(), gat.forward(&gp, &hp).unwrap()),
        ] {
            for i in 0..n {
                for (a, b) in y.row(i).iter().zip(yp.row(perm[i])) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut net = Sequential::new(vec![
        Layer::Dense(Dense::new("a", 4, 3, &mut rng)),
        Layer::BatchNorm(BatchNorm::new("bn", 3)),
        Layer::Dense(Dense::new("b", 3, 2, &mut rng)),
    ]);
    // awkward values: subnormals, tiny/huge magnitudes, negative zero
    if let Layer::Dense(d) = &mut net.layers[0] {
        let w = d.weight.value.data_mut();
        w[0] = 1e-310;
        w[1] = -0.0;
        w[2] = 1.0 / 3.0;
        w[3] = 6.02214076e23;
    }
    net.forward(&Tensor::from_fn(&[5, 4], |i| (i as f64).sin()), Mode::Train).unwrap();
    let meta = CheckpointMeta { module: "test".into(), step: 9, seed: 11, ..Default::default() };
    let ck = Checkpoint::capture(&net, meta);
    let text = ck.to_json().unwrap();
    let back = Checkpoint::from_json(&text).unwrap();
    assert_eq!(back, ck);
    let mut fresh = Sequential::new(vec![
        Layer::Dense(Dense::new("a", 4, 3, &mut rng)),
        Layer::BatchNorm(BatchNorm::new("bn", 3)),
        Layer::Dense(Dense::new("b", 3, 2, &mut rng)),
    ]);
    back.restore(&mut fresh).unwrap();
    let bits = |m: &Sequential| {
        let mut v = Vec::new();
        m.visit_params(&mut |p| v.extend(p.value.data().iter().map(|x| x.to_bits())));
        v
    };
    assert_eq!(bits(&fresh), bits(&net));
}

#[test]
fn checkpoint_rejects_shape_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = Dense::new("a", 4, 3, &mut rng);
    let mut b = Dense::new("a", 3, 3, &mut rng);
    let ck = Checkpoint::capture(&a, CheckpointMeta::default());
    assert!(ck.restore(&mut b).is_err());
}
