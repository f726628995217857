//! TD3 training of the allocator, checkpoint ranking and benchmarking.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use swarm_sar_nn::{Checkpoint, CheckpointMeta, Mode, Tensor};

use super::model::GraphBatch;
use super::{
    argmax, greedy_baseline, optimal_oracle, rollout, AllocCritic, AllocEpisode, AllocOutcome, AllocPolicy, Allocator,
    AllocatorConfig, GraphFixture, TaskGraph,
};
use crate::error::{Error, Result};
use crate::td3::{Actor, Critic, ReplayBuffer, Td3, Td3Batch, Td3Config};

pub const ALLOCATOR_MODULE: &str = "allocator";
/// Moves allowed on the reference graph for a checkpoint to be retained.
pub const REFERENCE_MOVE_LIMIT: usize = 6;
/// Attempts per random graph in the second ranking stage.
pub const RANKING_ATTEMPTS: usize = 5;

impl Actor for Allocator {
    type Obs = GraphBatch;
    fn forward(&mut self, obs: &GraphBatch, mode: Mode) -> Result<Tensor> {
        Allocator::forward(self, obs, mode)
    }
    fn backward(&mut self, grad: &Tensor) -> Result<()> {
        Allocator::backward(self, grad)
    }
}

impl Critic<GraphBatch> for AllocCritic {
    fn forward(&mut self, obs: &GraphBatch, action: &Tensor, mode: Mode) -> Result<Tensor> {
        AllocCritic::forward(self, obs, action, mode)
    }
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        AllocCritic::backward(self, grad)
    }
}

/// Six nodes on a 2 x 3 lattice with 2 m spacing; UAVs start in opposite
/// corners. Four nodes remain, so a good policy needs four moves.
pub fn reference_graph() -> GraphFixture {
    let pts = [[0.0, 0.0], [2.0, 0.0], [4.0, 0.0], [0.0, 2.0], [2.0, 2.0], [4.0, 2.0]];
    let weights = pts
        .iter()
        .map(|a| pts.iter().map(|b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()).collect())
        .collect();
    GraphFixture::new(weights, vec![0, 5]).expect("reference graph is valid")
}

/// Seeded two-UAV graphs with sizes cycling through `sizes`.
pub fn random_graphs(count: usize, sizes: &[usize], seed: u64) -> Result<Vec<GraphFixture>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| GraphFixture::random(sizes[i % sizes.len()], 2, &mut rng)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct AllocTrainConfig {
    pub model: AllocatorConfig,
    pub td3: Td3Config,
    pub episodes: usize,
    pub warmup_episodes: usize,
    /// Probability of a uniformly random choice after warm-up.
    pub epsilon: f64,
    pub buffer_capacity: usize,
    pub sizes: Vec<usize>,
    pub eval_every: usize,
    pub eval_graphs: usize,
    pub seed: u64,
}

impl AllocTrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            model: AllocatorConfig::default(),
            td3: Td3Config { action_low: 0.0, action_high: 1.0, ..Td3Config::default() },
            episodes: 20_000,
            warmup_episodes: 500,
            epsilon: 0.1,
            buffer_capacity: 100_000,
            sizes: vec![4, 5, 6],
            eval_every: 1000,
            eval_graphs: 20,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.td3.validate()?;
        if self.sizes.is_empty() || self.sizes.iter().any(|&n| n < 3) {
            return Err(Error::Precondition("graph sizes must be at least 3".into()));
        }
        if self.eval_every == 0 || self.episodes == 0 {
            return Err(Error::Precondition("episodes and eval interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct AllocTransition {
    view: TaskGraph,
    action: Vec<f64>,
    reward: f64,
    next_view: TaskGraph,
    done: bool,
}

fn padded(rows: &[&[f64]], width: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[rows.len(), width]);
    for (b, r) in rows.iter().enumerate() {
        t.data_mut()[b * width..b * width + r.len()].copy_from_slice(r);
    }
    Ok(t)
}

fn alloc_batch(items: &[&AllocTransition], weights: Vec<f64>) -> Result<Td3Batch<GraphBatch>> {
    let views: Vec<&TaskGraph> = items.iter().map(|t| &t.view).collect();
    let next: Vec<&TaskGraph> = items.iter().map(|t| &t.next_view).collect();
    let obs = GraphBatch::new(&views)?;
    let actions = padded(&items.iter().map(|t| t.action.as_slice()).collect::<Vec<_>>(), obs.width)?;
    Ok(Td3Batch {
        actions,
        next_obs: GraphBatch::new(&next)?,
        obs,
        rewards: items.iter().map(|t| t.reward).collect(),
        dones: items.iter().map(|t| f64::from(u8::from(t.done))).collect(),
        weights,
    })
}

/// Result of the two-stage evaluation of one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AllocEvaluation {
    pub episode: usize,
    pub reference_moves: usize,
    pub reference_complete: bool,
    /// Random graphs not completed within the attempt budget.
    pub failures: usize,
    /// Summed distance of the first completed attempt on each graph.
    pub distance: f64,
    /// Summed oracle distance over the same graphs.
    pub oracle: f64,
}

impl AllocEvaluation {
    pub fn retained(&self) -> bool {
        self.reference_complete && self.reference_moves < REFERENCE_MOVE_LIMIT
    }
}

/// Picks the argmax of the allocator's distribution after optional noise.
pub struct NoisyAllocator<'a> {
    pub model: &'a mut Allocator,
    pub noise: f64,
    pub rng: ChaCha8Rng,
}

impl AllocPolicy for NoisyAllocator<'_> {
    fn choose(&mut self, view: &TaskGraph) -> Result<usize> {
        let mut p = self.model.probabilities(view)?;
        if self.noise > 0.0 {
            let normal = Normal::new(0.0, self.noise).map_err(|e| Error::Precondition(e.to_string()))?;
            for v in &mut p {
                *v += normal.sample(&mut self.rng);
            }
        }
        argmax(&p, &view.masked).ok_or_else(|| Error::Precondition("every node is masked".into()))
    }
}

/// Reference-graph move count, then up to five attempts per random graph:
/// the first is the plain argmax policy, later ones add exploration noise.
pub fn evaluate_allocator(
    model: &Allocator,
    graphs: &[GraphFixture],
    noise: f64,
    seed: u64,
    episode: usize,
) -> Result<AllocEvaluation> {
    let mut m = model.clone();
    let r = rollout(&reference_graph(), &mut m)?;
    let mut failures = 0;
    let mut distance = 0.0;
    let mut oracle = 0.0;
    for (g, graph) in graphs.iter().enumerate() {
        oracle += optimal_oracle(graph)?.cost;
        let mut done = None;
        for attempt in 0..RANKING_ATTEMPTS {
            let mut policy = NoisyAllocator {
                model: &mut m,
                noise: if attempt == 0 { 0.0 } else { noise },
                rng: ChaCha8Rng::seed_from_u64(seed ^ ((g as u64) << 8) ^ attempt as u64),
            };
            let out = rollout(graph, &mut policy)?;
            if out.outcome == AllocOutcome::Complete {
                done = Some(out.distance);
                break;
            }
        }
        match done {
            Some(d) => distance += d,
            None => failures += 1,
        }
    }
    Ok(AllocEvaluation {
        episode,
        reference_moves: r.moves,
        reference_complete: r.outcome == AllocOutcome::Complete,
        failures,
        distance,
        oracle,
    })
}

/// Retained checkpoints first (reference graph done in under six moves),
/// then fewer failures, shorter distance and earlier episode.
pub fn rank_allocators(evals: &[AllocEvaluation]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..evals.len()).filter(|&i| evals[i].retained()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (&evals[a], &evals[b]);
        x.failures
            .cmp(&y.failures)
            .then(x.distance.total_cmp(&y.distance))
            .then(x.episode.cmp(&y.episode))
    });
    idx
}

pub fn allocator_id(episode: usize) -> String {
    format!("allocator-{episode}")
}

pub fn allocator_checkpoint(model: &Allocator, episode: usize, seed: u64) -> Result<Checkpoint> {
    let mut extra = BTreeMap::new();
    extra.insert("config".to_string(), serde_json::to_string(&model.cfg)?);
    extra.insert("id".to_string(), allocator_id(episode));
    Ok(Checkpoint::capture(
        model,
        CheckpointMeta { module: ALLOCATOR_MODULE.into(), step: episode as u64, seed, extra },
    ))
}

pub fn load_allocator(ck: &Checkpoint) -> Result<Allocator> {
    if ck.meta.module != ALLOCATOR_MODULE {
        return Err(Error::Checkpoint(format!("expected an {ALLOCATOR_MODULE} checkpoint, found {}", ck.meta.module)));
    }
    let cfg: AllocatorConfig = match ck.meta.extra.get("config") {
        Some(s) => serde_json::from_str(s)?,
        None => AllocatorConfig::default(),
    };
    let mut model = Allocator::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
    ck.restore(&mut model)?;
    Ok(model)
}

#[derive(Clone, Debug, Serialize)]
pub struct AllocLogRow {
    pub episode: usize,
    pub moves: usize,
    pub reward: f64,
    pub distance: f64,
    pub complete: bool,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub buffer_size: usize,
}

#[derive(Clone, Debug)]
pub struct SavedAllocator {
    pub model: Allocator,
    pub evaluation: AllocEvaluation,
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct AllocTrainReport {
    pub log: Vec<AllocLogRow>,
    pub checkpoints: Vec<SavedAllocator>,
    /// Index into `checkpoints` of the best retained model.
    pub best: Option<usize>,
}

impl AllocTrainReport {
    pub fn best_model(&self) -> Result<&SavedAllocator> {
        self.best.map(|i| &self.checkpoints[i]).ok_or_else(|| {
            Error::Precondition(format!(
                "no checkpoint completed the reference graph in under {REFERENCE_MOVE_LIMIT} moves"
            ))
        })
    }
}

pub type AllocProgress<'a> = &'a mut dyn FnMut(&SavedAllocator);

pub fn train_allocator(
    cfg: &AllocTrainConfig,
    out_dir: Option<&Path>,
    mut progress: Option<AllocProgress<'_>>,
) -> Result<AllocTrainReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let actor = Allocator::new(&cfg.model, &mut rng);
    let c1 = AllocCritic::new(&cfg.model, &mut rng);
    let c2 = AllocCritic::new(&cfg.model, &mut rng);
    let mut agent = Td3::new(actor, c1, c2, cfg.td3.clone(), rng.random())?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.td3.per_alpha, cfg.td3.per_eps)?;
    let eval_graphs = random_graphs(cfg.eval_graphs, &cfg.sizes, cfg.seed ^ 0x5eed)?;
    let mut report = AllocTrainReport { log: Vec::new(), checkpoints: Vec::new(), best: None };
    let mut updates = 0u64;
    let total_updates = (cfg.episodes * 2 * cfg.sizes.iter().max().copied().unwrap_or(4)) as u64;

    for episode in 1..=cfg.episodes {
        let n = cfg.sizes[rng.random_range(0..cfg.sizes.len())];
        let fixture = GraphFixture::random(n, 2, &mut rng)?;
        let mut ep = AllocEpisode::new(&fixture)?;
        let mut reward = 0.0;
        let mut last = (None, None);
        while !ep.is_done() {
            let uav = ep.turn;
            let view = ep.view(uav);
            let choice = if episode <= cfg.warmup_episodes || rng.random::<f64>() < cfg.epsilon {
                rng.random_range(0..n)
            } else {
                let noisy = agent.explore(&GraphBatch::single(&view)?)?;
                argmax(&noisy, &view.masked).expect("graph has nodes")
            };
            // The critic scores the move actually made, as a one-hot vector.
            let action: Vec<f64> = (0..n).map(|i| f64::from(u8::from(i == choice))).collect();
            let res = ep.step(uav, choice)?;
            reward += res.reward;
            buffer.push(AllocTransition {
                view,
                action,
                reward: res.reward,
                next_view: ep.view(ep.turn),
                done: res.outcome == AllocOutcome::Complete,
            });
            if episode > cfg.warmup_episodes && buffer.len() >= cfg.td3.batch_size {
                updates += 1;
                let beta = cfg.td3.beta_at(updates, total_updates);
                let sample = buffer.sample(cfg.td3.batch_size, beta, &mut rng)?;
                let items: Vec<&AllocTransition> =
                    sample.indices.iter().map(|&i| buffer.get(i).expect("sampled index is stored")).collect();
                let batch = alloc_batch(&items, sample.weights.clone())?;
                let stats = agent.critic_update(&batch)?;
                buffer.update_priorities(&sample.indices, &stats.td_errors)?;
                last.0 = Some(stats.loss1);
                if let Some(a) = agent.actor_update_if_due(&batch.obs)? {
                    last.1 = Some(a);
                }
            }
        }
        report.log.push(AllocLogRow {
            episode,
            moves: ep.moves,
            reward,
            distance: ep.total_distance(),
            complete: ep.outcome == AllocOutcome::Complete,
            critic_loss: last.0,
            actor_loss: last.1,
            buffer_size: buffer.len(),
        });

        if episode % cfg.eval_every == 0 || episode == cfg.episodes {
            let evaluation = evaluate_allocator(&agent.actor, &eval_graphs, cfg.td3.explore_noise, cfg.seed, episode)?;
            let path = match out_dir {
                Some(dir) => {
                    let p = dir.join(format!("{}.json", allocator_id(episode)));
                    allocator_checkpoint(&agent.actor, episode, cfg.seed)?.save(&p)?;
                    Some(p)
                }
                None => None,
            };
            let saved = SavedAllocator { model: agent.actor.clone(), evaluation, path };
            if let Some(p) = progress.as_mut() {
                p(&saved);
            }
            report.checkpoints.push(saved);
        }
    }
    let evals: Vec<AllocEvaluation> = report.checkpoints.iter().map(|c| c.evaluation.clone()).collect();
    report.best = rank_allocators(&evals).first().copied();
    Ok(report)
}

pub fn write_alloc_log(rows: &[AllocLogRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One line of the allocation benchmark.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub graph_id: usize,
    pub oracle: f64,
    pub greedy: f64,
    /// Realised distance, or NaN if the policy timed out.
    pub policy: f64,
    /// `policy / oracle`.
    pub ratio: f64,
}

pub fn bench_allocation<P: AllocPolicy + ?Sized>(graphs: &[GraphFixture], policy: &mut P) -> Result<Vec<BenchRow>> {
    graphs
        .iter()
        .enumerate()
        .map(|(graph_id, g)| {
            let oracle = optimal_oracle(g)?.cost;
            let greedy = greedy_baseline(g)?;
            let r = rollout(g, policy)?;
            let policy = if r.outcome == AllocOutcome::Complete { r.distance } else { f64::NAN };
            let ratio = if oracle > 0.0 { policy / oracle } else { 1.0 };
            Ok(BenchRow { graph_id, oracle, greedy, policy, ratio })
        })
        .collect()
}

pub fn write_bench(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
