//! Guidance training on a loop course, checkpoint evaluation and model
//! selection.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use swarm_sar_nn::{Checkpoint, CheckpointMeta, Mode, Tensor};

use super::{Actor, Critic, ReplayBuffer, Td3, Td3Batch, Td3Config};
use crate::apf::Action;
use crate::error::{Error, Result};
use crate::guidance::{encode_observation, model_id, GuidanceActor, GuidanceConfig, GuidanceCritic, ObsBatch, ACTION_DIM};
use crate::simenv::{run_episode, EnvConfig, GuidanceEnv, Outcome, Policy};
use crate::world::{Pose, World};

pub const ACTOR_MODULE: &str = "guidance-actor";

impl Actor for GuidanceActor {
    type Obs = ObsBatch;
    fn forward(&mut self, obs: &ObsBatch, mode: Mode) -> Result<Tensor> {
        GuidanceActor::forward(self, obs, mode)
    }
    fn backward(&mut self, grad: &Tensor) -> Result<()> {
        GuidanceActor::backward(self, grad)
    }
}

impl Critic<ObsBatch> for GuidanceCritic {
    fn forward(&mut self, obs: &ObsBatch, action: &Tensor, mode: Mode) -> Result<Tensor> {
        GuidanceCritic::forward(self, obs, action, mode)
    }
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        GuidanceCritic::backward(self, grad)
    }
}

/// Goals laid out as a closed loop (the world's nodes in id order). An
/// episode starts on one node facing the next and flies `legs` goals around
/// the loop in either direction.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopCourse {
    pub nodes: Vec<[f64; 3]>,
    pub legs: usize,
}

impl LoopCourse {
    pub fn from_world(world: &World, legs: usize) -> Result<Self> {
        if world.nodes.len() < 3 {
            return Err(Error::InvalidWorld("a loop course needs at least three nodes".into()));
        }
        let mut nodes: Vec<_> = world.nodes.clone();
        nodes.sort_by_key(|n| n.id);
        Ok(Self { nodes: nodes.iter().map(|n| n.xyz()).collect(), legs })
    }

    pub fn episode(&self, start: usize, forward: bool) -> (Pose, Vec<[f64; 3]>) {
        let n = self.nodes.len();
        let at = |k: usize| {
            let i = if forward { (start + k) % n } else { (start + n * self.legs - k) % n };
            self.nodes[i]
        };
        let p = at(0);
        let q = at(1);
        let yaw = (q[1] - p[1]).atan2(q[0] - p[0]);
        (Pose::new(p[0], p[1], p[2], yaw), (1..=self.legs).map(at).collect())
    }

    pub fn random_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> (Pose, Vec<[f64; 3]>) {
        let start = rng.random_range(0..self.nodes.len());
        self.episode(start, rng.random_bool(0.5))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub goals: usize,
    pub outcome: Outcome,
    pub total_reward: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub id: String,
    pub step: u64,
    pub goals: usize,
    /// Mean over episodes of the summed episode reward.
    pub mean_reward: f64,
    pub episodes: Vec<EpisodeSummary>,
}

/// Runs `episodes` seeded loop episodes with `policy`.
pub fn evaluate_policy<P: Policy + ?Sized>(
    policy: &mut P,
    world: &World,
    env: &EnvConfig,
    course: &LoopCourse,
    episodes: usize,
    seed: u64,
) -> Result<(usize, f64, Vec<EpisodeSummary>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (start, goals) = course.random_episode(&mut rng);
        let log = run_episode(policy, world, start, &goals, env)?;
        out.push(EpisodeSummary {
            goals: log.goals_reached,
            outcome: log.outcome,
            total_reward: log.total_reward,
            steps: log.rows.len(),
        });
    }
    let goals = out.iter().map(|e| e.goals).sum();
    let mean = if out.is_empty() { 0.0 } else { out.iter().map(|e| e.total_reward).sum::<f64>() / out.len() as f64 };
    Ok((goals, mean, out))
}

/// Keeps evaluations with at least `threshold` goals, best first: more goals,
/// then higher mean reward, then the lower model id.
pub fn rank_models(mut evals: Vec<Evaluation>, threshold: usize) -> Vec<Evaluation> {
    evals.retain(|e| e.goals >= threshold);
    evals.sort_by(|a, b| {
        b.goals
            .cmp(&a.goals)
            .then(b.mean_reward.total_cmp(&a.mean_reward))
            .then(a.step.cmp(&b.step))
            .then(a.id.cmp(&b.id))
    });
    evals
}

pub struct Candidate<P> {
    pub id: String,
    pub step: u64,
    pub policy: P,
}

#[derive(Clone, Debug)]
pub struct SelectionConfig {
    pub env: EnvConfig,
    pub episodes: usize,
    pub goal_threshold: usize,
    pub seed: u64,
}

/// Evaluates every candidate on the same seeded episodes and ranks the
/// survivors. Returns `(survivors, all evaluations)`.
pub fn select_models<P: Policy>(
    candidates: Vec<Candidate<P>>,
    world: &World,
    course: &LoopCourse,
    cfg: &SelectionConfig,
) -> Result<(Vec<Evaluation>, Vec<Evaluation>)> {
    let mut all = Vec::with_capacity(candidates.len());
    for mut c in candidates {
        let (goals, mean_reward, episodes) =
            evaluate_policy(&mut c.policy, world, &cfg.env, course, cfg.episodes, cfg.seed)?;
        all.push(Evaluation { id: c.id, step: c.step, goals, mean_reward, episodes });
    }
    Ok((rank_models(all.clone(), cfg.goal_threshold), all))
}

pub fn actor_checkpoint(actor: &GuidanceActor, step: u64, seed: u64) -> Result<Checkpoint> {
    let mut extra = BTreeMap::new();
    extra.insert("config".to_string(), serde_json::to_string(&actor.cfg)?);
    extra.insert("id".to_string(), model_id(step));
    Ok(Checkpoint::capture(actor, CheckpointMeta { module: ACTOR_MODULE.into(), step, seed, extra }))
}

/// Rebuilds an actor from a checkpoint written by [`actor_checkpoint`].
pub fn load_actor(ck: &Checkpoint) -> Result<GuidanceActor> {
    if ck.meta.module != ACTOR_MODULE {
        return Err(Error::Checkpoint(format!("expected a {ACTOR_MODULE} checkpoint, found {:?}", ck.meta.module)));
    }
    let cfg: GuidanceConfig = match ck.meta.extra.get("config") {
        Some(s) => serde_json::from_str(s)?,
        None => return Err(Error::Checkpoint("checkpoint carries no network config".into())),
    };
    let mut actor = GuidanceActor::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    ck.restore(&mut actor)?;
    Ok(actor)
}

#[derive(Clone, Debug)]
pub struct GuidanceTransition {
    pub obs: Vec<f32>,
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub next_obs: Vec<f32>,
    pub done: bool,
}

pub fn guidance_batch(items: &[&GuidanceTransition], weights: Vec<f64>, cfg: &GuidanceConfig) -> Result<Td3Batch<ObsBatch>> {
    let obs: Vec<&[f32]> = items.iter().map(|t| t.obs.as_slice()).collect();
    let next: Vec<&[f32]> = items.iter().map(|t| t.next_obs.as_slice()).collect();
    let actions = items.iter().flat_map(|t| t.action).collect();
    Ok(Td3Batch {
        obs: ObsBatch::from_encoded(&obs, cfg)?,
        actions: Tensor::new(&[items.len(), ACTION_DIM], actions)?,
        rewards: items.iter().map(|t| t.reward).collect(),
        next_obs: ObsBatch::from_encoded(&next, cfg)?,
        dones: items.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
        weights,
    })
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub guidance: GuidanceConfig,
    pub td3: Td3Config,
    /// Training dynamics; see [`TrainConfig::desk`].
    pub env: EnvConfig,
    pub total_steps: u64,
    /// Uniform random actions before the policy takes over.
    pub warmup_steps: u64,
    pub buffer_capacity: usize,
    pub checkpoint_every: u64,
    pub legs: usize,
    pub eval_episodes: usize,
    pub goal_threshold: usize,
    /// Stop as soon as a checkpoint reaches the goal threshold.
    pub stop_when_passing: bool,
    /// Start positions are jittered by up to this much (metres).
    pub start_jitter: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale run: narrow networks, lag-free kinematics.
    pub fn desk(seed: u64) -> Self {
        let mut env = EnvConfig { seed, ..EnvConfig::default() };
        env.dynamics.tau_v = 0.0;
        Self {
            guidance: GuidanceConfig::desk(),
            td3: Td3Config::default(),
            env,
            total_steps: 50_000,
            warmup_steps: 1_000,
            buffer_capacity: 50_000,
            checkpoint_every: 2_500,
            legs: 5,
            eval_episodes: 4,
            goal_threshold: 15,
            stop_when_passing: true,
            start_jitter: 0.2,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainLogRow {
    pub step: u64,
    pub critic_loss1: Option<f64>,
    pub critic_loss2: Option<f64>,
    pub actor_loss: Option<f64>,
    /// Mean reward over the trailing 100 environment steps.
    pub mean_reward: f64,
    pub buffer_size: usize,
}

pub fn write_train_log<W: Write>(out: W, rows: &[TrainLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SavedCheckpoint {
    pub id: String,
    pub step: u64,
    pub checkpoint: Checkpoint,
    pub path: Option<PathBuf>,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub steps: u64,
    pub episodes: u64,
    pub log: Vec<TrainLogRow>,
    pub checkpoints: Vec<SavedCheckpoint>,
}

impl TrainReport {
    /// Best evaluated checkpoint by the selection ordering, if any passed.
    pub fn best(&self, threshold: usize) -> Option<&SavedCheckpoint> {
        let ranked = rank_models(self.checkpoints.iter().map(|c| c.evaluation.clone()).collect(), threshold);
        let top = ranked.first()?;
        self.checkpoints.iter().find(|c| c.id == top.id)
    }
}

/// Progress hook: called after every checkpoint evaluation.
pub type Progress<'a> = &'a mut dyn FnMut(&SavedCheckpoint, &TrainLogRow);

/// Trains a guidance actor with TD3 on the world's loop course. Checkpoints
/// are written to `out_dir` (if given) as `guidance-<step>.json`.
pub fn train_guidance(
    world: &World,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    progress: Option<Progress<'_>>,
) -> Result<TrainReport> {
    let course = LoopCourse::from_world(world, cfg.legs)?;
    // One goal beyond the plan, so the final goal also has a successor.
    let train_course = LoopCourse { legs: cfg.legs + 1, ..course.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let actor = GuidanceActor::new(&cfg.guidance, &mut rng)?;
    let c1 = GuidanceCritic::new(&cfg.guidance, &mut rng)?;
    let c2 = GuidanceCritic::new(&cfg.guidance, &mut rng)?;
    let mut agent = Td3::new(actor, c1, c2, cfg.td3.clone(), rng.random())?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.td3.per_alpha, cfg.td3.per_eps)?;
    let mut env = GuidanceEnv::new(world, cfg.env.clone());
    let mut progress = progress;

    let mut report = TrainReport { steps: 0, episodes: 0, log: Vec::new(), checkpoints: Vec::new() };
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(100);
    let (mut goals, mut k, mut enc) = start_episode(&mut env, &train_course, cfg, &mut rng)?;
    report.episodes = 1;

    for step in 1..=cfg.total_steps {
        let action = if step <= cfg.warmup_steps {
            Action::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0))
        } else {
            let obs = ObsBatch::from_encoded(&[&enc], &cfg.guidance)?;
            let a = agent.explore(&obs)?;
            Action::new(a[0], a[1], a[2])
        };
        let res = env.step(action)?;
        // Reaching a goal does not end the flight: the next goal is switched
        // in and the transition bootstraps from that observation. Only a
        // collision is terminal; timeouts and the end of the leg plan are
        // truncations.
        let mut next = encode_observation(&res.observation, &cfg.guidance)?;
        if res.outcome == Outcome::Goal {
            k += 1;
            next = encode_observation(&env.set_goal(goals[k])?, &cfg.guidance)?;
        }
        buffer.push(GuidanceTransition {
            obs: std::mem::take(&mut enc),
            action: action.clipped().to_array(),
            reward: res.reward,
            next_obs: next.clone(),
            done: res.outcome == Outcome::Collision,
        });
        if recent.len() == 100 {
            recent.pop_front();
        }
        recent.push_back(res.reward);

        let finished = match res.outcome {
            Outcome::Running => false,
            Outcome::Goal => k >= cfg.legs,
            Outcome::Collision | Outcome::Timeout => true,
        };
        if finished {
            (goals, k, enc) = start_episode(&mut env, &train_course, cfg, &mut rng)?;
            report.episodes += 1;
        } else {
            enc = next;
        }

        let mut row = TrainLogRow {
            step,
            critic_loss1: None,
            critic_loss2: None,
            actor_loss: None,
            mean_reward: recent.iter().sum::<f64>() / recent.len() as f64,
            buffer_size: buffer.len(),
        };
        if step > cfg.warmup_steps && buffer.len() >= cfg.td3.batch_size {
            let beta = cfg.td3.beta_at(step, cfg.total_steps);
            let sample = buffer.sample(cfg.td3.batch_size, beta, &mut rng)?;
            let items: Vec<&GuidanceTransition> =
                sample.indices.iter().map(|&i| buffer.get(i).expect("sampled index is stored")).collect();
            let batch = guidance_batch(&items, sample.weights.clone(), &cfg.guidance)?;
            let stats = agent.critic_update(&batch)?;
            buffer.update_priorities(&sample.indices, &stats.td_errors)?;
            row.critic_loss1 = Some(stats.loss1);
            row.critic_loss2 = Some(stats.loss2);
            row.actor_loss = agent.actor_update_if_due(&batch.obs)?;
        }
        report.steps = step;

        if step % cfg.checkpoint_every == 0 || step == cfg.total_steps {
            let saved = checkpoint_and_evaluate(&agent.actor, step, world, &course, cfg, out_dir)?;
            let passed = saved.evaluation.goals >= cfg.goal_threshold;
            if let Some(p) = progress.as_mut() {
                p(&saved, &row);
            }
            report.checkpoints.push(saved);
            report.log.push(row);
            if passed && cfg.stop_when_passing {
                break;
            }
        } else {
            report.log.push(row);
        }
    }
    Ok(report)
}

fn start_episode(
    env: &mut GuidanceEnv<'_>,
    course: &LoopCourse,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<[f64; 3]>, usize, Vec<f32>)> {
    let (mut start, goals) = course.random_episode(rng);
    let j = cfg.start_jitter;
    if j > 0.0 {
        start.x += rng.random_range(-j..=j);
        start.y += rng.random_range(-j..=j);
        start.yaw += rng.random_range(-j..=j);
    }
    let obs = env.reset(start, goals[0])?;
    Ok((goals, 0, encode_observation(&obs, &cfg.guidance)?))
}

fn checkpoint_and_evaluate(
    actor: &GuidanceActor,
    step: u64,
    world: &World,
    course: &LoopCourse,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<SavedCheckpoint> {
    let ck = actor_checkpoint(actor, step, cfg.seed)?;
    let id = model_id(step);
    let path = match out_dir {
        Some(dir) => {
            let p = dir.join(format!("{id}.json"));
            ck.save(&p)?;
            Some(p)
        }
        None => None,
    };
    let mut policy = actor.clone();
    let (goals, mean_reward, episodes) =
        evaluate_policy(&mut policy, world, &cfg.env, course, cfg.eval_episodes, cfg.seed)?;
    Ok(SavedCheckpoint {
        evaluation: Evaluation { id: id.clone(), step, goals, mean_reward, episodes },
        id,
        step,
        checkpoint: ck,
        path,
    })
}

/// Loads every `guidance-*.json` actor checkpoint in `dir`, ordered by step.
pub fn load_candidates(dir: &Path) -> Result<Vec<Candidate<GuidanceActor>>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if !(name.starts_with("guidance-") && name.ends_with(".json")) {
            continue;
        }
        let ck = Checkpoint::load(&path)?;
        if ck.meta.module != ACTOR_MODULE {
            continue;
        }
        let actor = load_actor(&ck)?;
        out.push(Candidate { id: model_id(ck.meta.step), step: ck.meta.step, policy: actor });
    }
    out.sort_by_key(|c| c.step);
    Ok(out)
}
