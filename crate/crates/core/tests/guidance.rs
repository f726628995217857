#[path = "../../nn/tests/common/mod.rs"]
mod fd;

use fd::{check_input, check_params_piecewise, dot, param_grads};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarm_sar::guidance::{GuidanceActor, GuidanceConfig, GuidanceCritic, ObsBatch, BRANCH_WIDTH};
use swarm_sar_nn::{Mode, Module, Tensor};

const SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

fn random_batch(cfg: &GuidanceConfig, b: usize, rng: &mut ChaCha8Rng) -> ObsBatch {
    let rows: Vec<Vec<f32>> = (0..b)
        .map(|_| (0..cfg.encoded_len()).map(|_| rng.random_range(0.05f32..1.0)).collect())
        .collect();
    ObsBatch::from_encoded(&rows, cfg).unwrap()
}

fn tiny() -> GuidanceConfig {
    // Small frames keep the number of kinks a nudge can cross low.
    GuidanceConfig {
        depth_size: (16, 16),
        conv2d_channels: [2, 2, 3, 3],
        conv1d_channels: [2, 3, 3],
        depth_hidden: 8,
        fusion_hidden: 8,
        ..GuidanceConfig::desk()
    }
}

#[test]
fn actor_backprop_matches_finite_differences() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = tiny();
        let mut actor = GuidanceActor::new(&cfg, &mut rng).unwrap();
        let obs = random_batch(&cfg, 3, &mut rng);
        let out = actor.forward(&obs, Mode::Train).unwrap();
        // Gradient of the mean output.
        let g = Tensor::from_fn(out.shape(), |_| 1.0 / out.len() as f64);
        actor.zero_grad();
        actor.backward(&g).unwrap();
        let analytic = param_grads(&actor);
        let rep = check_params_piecewise(&mut actor, &analytic, 4, &mut rng, &mut |a: &mut GuidanceActor| {
            let y = a.forward(&obs, Mode::Train).unwrap();
            y.data().iter().sum::<f64>() / y.len() as f64
        });
        assert!(rep.passes(), "seed {seed}: {rep:?}");
    }
}

#[test]
fn critic_backprop_matches_finite_differences() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = tiny();
        let mut critic = GuidanceCritic::new(&cfg, &mut rng).unwrap();
        let obs = random_batch(&cfg, 3, &mut rng);
        let act = Tensor::from_fn(&[3, 3], |_| rng.random_range(-1.0..1.0));
        let q = critic.forward(&obs, &act, Mode::Train).unwrap();
        let c = Tensor::from_fn(q.shape(), |_| rng.random_range(-1.0..1.0));
        critic.zero_grad();
        let da = critic.backward(&c).unwrap();
        let analytic = param_grads(&critic);
        let rep = check_params_piecewise(&mut critic, &analytic, 4, &mut rng, &mut |m: &mut GuidanceCritic| {
            dot(m.forward(&obs, &act, Mode::Train).unwrap().data(), c.data())
        });
        assert!(rep.passes(), "params, seed {seed}: {rep:?}");
        let rep = check_input(act.data(), da.data(), 9, &mut rng, &mut |v: &[f64]| {
            let a = Tensor::new(&[3, 3], v.to_vec()).unwrap();
            dot(critic.forward(&obs, &a, Mode::Train).unwrap().data(), c.data())
        });
        assert!(rep.passes(), "action, seed {seed}: {rep:?}");
    }
}

#[test]
fn actor_outputs_are_bounded_and_repeatable() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = GuidanceConfig::default();
    let mut actor = GuidanceActor::new(&cfg, &mut rng).unwrap();
    let obs = random_batch(&cfg, 4, &mut rng);
    let a = actor.forward(&obs, Mode::Eval).unwrap();
    let b = actor.forward(&obs, Mode::Eval).unwrap();
    assert_eq!(a.shape(), &[4, 3]);
    assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn zeroed_output_layer_leaves_only_the_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = GuidanceConfig::desk();
    let mut critic = GuidanceCritic::new(&cfg, &mut rng).unwrap();
    critic.visit_params_mut(&mut |p| {
        if p.name == "head.out.weight" {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        if p.name == "head.out.bias" {
            p.value.data_mut()[0] = 0.75;
        }
    });
    let obs = random_batch(&cfg, 1, &mut rng);
    let q = critic.forward(&obs, &Tensor::zeros(&[1, 3]), Mode::Eval).unwrap();
    assert_eq!(q.shape(), &[1, 1]);
    assert_eq!(q.data()[0], 0.75);
}

#[test]
fn zeroing_depth_only_moves_the_depth_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = GuidanceConfig::desk();
    let mut actor = GuidanceActor::new(&cfg, &mut rng).unwrap();
    let obs = random_batch(&cfg, 2, &mut rng);
    let mut blank = obs.clone();
    blank.depth.data_mut().iter_mut().for_each(|v| *v = 0.0);
    let a = actor.branches.branch_outputs(&obs, Mode::Eval).unwrap();
    let b = actor.branches.branch_outputs(&blank, Mode::Eval).unwrap();
    assert_ne!(a[0], b[0]);
    assert_eq!(a[1], b[1]);
    assert_eq!(a[2], b[2]);
    assert_eq!(a[0].shape(), &[2, BRANCH_WIDTH]);
}

#[test]
fn twin_critics_share_shapes_not_values() {
    let cfg = GuidanceConfig::default();
    let c1 = GuidanceCritic::new(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let c2 = GuidanceCritic::new(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(c1.param_names(), c2.param_names());
    assert_eq!(c1.num_trainable(), c2.num_trainable());
    assert_ne!(swarm_sar_nn::param::flatten_values(&c1), swarm_sar_nn::param::flatten_values(&c2));
}

#[test]
fn mismatched_observation_is_rejected() {
    let cfg = GuidanceConfig::desk();
    assert!(ObsBatch::from_encoded(&[vec![0.0f32; 10]], &cfg).is_err());
}
