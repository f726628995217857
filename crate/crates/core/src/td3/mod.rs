//! Twin delayed deep deterministic policy gradients with prioritized replay
//! and a Huber critic loss, generic over the actor and critic networks.

mod replay;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use swarm_sar_nn::param::soft_update;
use swarm_sar_nn::{Adam, Mode, Module, Tensor};

use crate::error::{Error, Result};

pub use replay::{ReplayBuffer, Sample};

/// A deterministic policy network over batches of `Self::Obs`.
pub trait Actor: Module + Clone {
    type Obs;
    fn forward(&mut self, obs: &Self::Obs, mode: Mode) -> Result<Tensor>;
    /// Accumulates parameter gradients for `d loss / d action`.
    fn backward(&mut self, grad: &Tensor) -> Result<()>;
}

/// A Q network returning one value per transition (`[B, 1]`).
pub trait Critic<O>: Module + Clone {
    fn forward(&mut self, obs: &O, action: &Tensor, mode: Mode) -> Result<Tensor>;
    /// Accumulates parameter gradients and returns `d loss / d action`.
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub per_alpha: f64,
    pub per_beta_start: f64,
    pub per_beta_end: f64,
    pub per_eps: f64,
    pub huber_delta: f64,
    /// Exploration noise added to actions while collecting experience.
    pub explore_noise: f64,
    pub action_low: f64,
    pub action_high: f64,
    pub max_grad_norm: Option<f64>,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            noise_clip: 0.5,
            batch_size: 64,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            per_alpha: 0.6,
            per_beta_start: 0.4,
            per_beta_end: 1.0,
            per_eps: 1e-3,
            huber_delta: 1.0,
            explore_noise: 0.1,
            action_low: -1.0,
            action_high: 1.0,
            max_grad_norm: None,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Precondition(format!("td3 config: {m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.policy_delay == 0 {
            return bad("policy delay must be at least 1");
        }
        if !(self.noise_clip > 0.0) {
            return bad("noise clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.action_low < self.action_high) {
            return bad("empty action range");
        }
        if !(self.target_noise >= 0.0 && self.huber_delta > 0.0) {
            return bad("noise scale and huber delta must be non-negative / positive");
        }
        Ok(())
    }

    /// Importance-sampling exponent, annealed linearly over `total` steps.
    pub fn beta_at(&self, step: u64, total: u64) -> f64 {
        let f = if total == 0 { 1.0 } else { (step as f64 / total as f64).min(1.0) };
        self.per_beta_start + f * (self.per_beta_end - self.per_beta_start)
    }
}

pub fn huber(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(x: f64, delta: f64) -> f64 {
    x.clamp(-delta, delta)
}

/// One training batch. `actions` rows line up with whatever layout the
/// critic expects; `rewards`, `dones` and `weights` have one entry per
/// transition.
#[derive(Clone, Debug)]
pub struct Td3Batch<O> {
    pub obs: O,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_obs: O,
    pub dones: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticStats {
    pub loss1: f64,
    pub loss2: f64,
    /// `Q1(s, a) - y` before the update.
    pub td_errors: Vec<f64>,
}

pub struct Td3<A: Actor, C: Critic<A::Obs>> {
    pub cfg: Td3Config,
    pub actor: A,
    pub actor_target: A,
    pub critic1: C,
    pub critic2: C,
    pub critic1_target: C,
    pub critic2_target: C,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    rng: ChaCha8Rng,
    calls: u64,
}

impl<A: Actor, C: Critic<A::Obs>> Td3<A, C> {
    /// Targets start as exact copies of the main networks.
    pub fn new(actor: A, critic1: C, critic2: C, cfg: Td3Config, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let adam = |lr: f64| {
            let mut a = Adam::new(lr);
            a.max_grad_norm = cfg.max_grad_norm;
            a
        };
        Ok(Self {
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            actor_opt: adam(cfg.actor_lr),
            critic1_opt: adam(cfg.critic_lr),
            critic2_opt: adam(cfg.critic_lr),
            rng: ChaCha8Rng::seed_from_u64(seed),
            calls: 0,
            cfg,
        })
    }

    /// Clipped Gaussian smoothing noise, one value per action entry.
    pub fn smoothing_noise(&mut self, n: usize) -> Vec<f64> {
        let c = self.cfg.noise_clip;
        if self.cfg.target_noise == 0.0 {
            return vec![0.0; n];
        }
        let normal = Normal::new(0.0, self.cfg.target_noise).expect("finite noise scale");
        (0..n).map(|_| normal.sample(&mut self.rng).clamp(-c, c)).collect()
    }

    /// `y = r + gamma (1 - done) min(Q1', Q2')(s', clip(pi'(s') + eps))`.
    pub fn compute_target(&mut self, next_obs: &A::Obs, rewards: &[f64], dones: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.actor_target.forward(next_obs, Mode::Eval)?;
        let noise = self.smoothing_noise(a.len());
        let (lo, hi) = (self.cfg.action_low, self.cfg.action_high);
        for (v, e) in a.data_mut().iter_mut().zip(noise) {
            *v = (*v + e).clamp(lo, hi);
        }
        let q1 = self.critic1_target.forward(next_obs, &a, Mode::Eval)?;
        let q2 = self.critic2_target.forward(next_obs, &a, Mode::Eval)?;
        if q1.len() != rewards.len() || dones.len() != rewards.len() {
            return Err(Error::Precondition(format!(
                "batch has {} rewards, {} dones, {} target values",
                rewards.len(),
                dones.len(),
                q1.len()
            )));
        }
        let gamma = self.cfg.gamma;
        Ok(rewards
            .iter()
            .zip(dones)
            .zip(q1.data().iter().zip(q2.data()))
            .map(|((&r, &d), (&a, &b))| if d >= 1.0 { r } else { r + gamma * (1.0 - d) * a.min(b) })
            .collect())
    }

    /// Weighted Huber regression of both critics onto the shared target.
    pub fn critic_update(&mut self, batch: &Td3Batch<A::Obs>) -> Result<CriticStats> {
        let y = self.compute_target(&batch.next_obs, &batch.rewards, &batch.dones)?;
        let delta = self.cfg.huber_delta;
        let (loss1, q1) = fit_critic(&mut self.critic1, &mut self.critic1_opt, batch, &y, delta)?;
        let (loss2, _) = fit_critic(&mut self.critic2, &mut self.critic2_opt, batch, &y, delta)?;
        let td_errors = q1.iter().zip(&y).map(|(q, y)| q - y).collect();
        Ok(CriticStats { loss1, loss2, td_errors })
    }

    /// Every `policy_delay`-th call ascends `Q1(s, pi(s))` and soft-updates
    /// all three targets. Returns the actor loss when an update happened.
    pub fn actor_update_if_due(&mut self, obs: &A::Obs) -> Result<Option<f64>> {
        self.calls += 1;
        if self.calls % self.cfg.policy_delay != 0 {
            return Ok(None);
        }
        let a = self.actor.forward(obs, Mode::Train)?;
        let q = self.critic1.forward(obs, &a, Mode::Train)?;
        let b = q.len() as f64;
        let loss = -q.data().iter().sum::<f64>() / b;
        let g = Tensor::from_fn(q.shape(), |_| -1.0 / b);
        self.critic1.zero_grad();
        let da = self.critic1.backward(&g)?;
        self.critic1.zero_grad();
        self.actor.zero_grad();
        self.actor.backward(&da)?;
        self.actor_opt.step(&mut self.actor);
        self.update_targets();
        Ok(Some(loss))
    }

    pub fn update_targets(&mut self) {
        let tau = self.cfg.tau;
        soft_update(&mut self.actor_target, &self.actor, tau);
        soft_update(&mut self.critic1_target, &self.critic1, tau);
        soft_update(&mut self.critic2_target, &self.critic2, tau);
    }

    pub fn actor_calls(&self) -> u64 {
        self.calls
    }

    /// Policy action plus clipped Gaussian exploration noise.
    pub fn explore(&mut self, obs: &A::Obs) -> Result<Vec<f64>> {
        let mut a = self.actor.forward(obs, Mode::Eval)?.into_data();
        let (lo, hi) = (self.cfg.action_low, self.cfg.action_high);
        if self.cfg.explore_noise > 0.0 {
            let normal = Normal::new(0.0, self.cfg.explore_noise).expect("finite noise scale");
            for v in &mut a {
                *v = (*v + normal.sample(&mut self.rng)).clamp(lo, hi);
            }
        }
        Ok(a)
    }
}

fn fit_critic<O, C: Critic<O>>(
    critic: &mut C,
    opt: &mut Adam,
    batch: &Td3Batch<O>,
    y: &[f64],
    delta: f64,
) -> Result<(f64, Vec<f64>)> {
    let q = critic.forward(&batch.obs, &batch.actions, Mode::Train)?;
    if batch.weights.len() != y.len() {
        return Err(Error::Precondition("importance weights do not match the batch".into()));
    }
    let b = y.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(y.len());
    for ((&qi, &yi), &w) in q.data().iter().zip(y).zip(&batch.weights) {
        loss += w * huber(qi - yi, delta) / b;
        grad.push(w * huber_grad(qi - yi, delta) / b);
    }
    critic.zero_grad();
    critic.backward(&Tensor::new(q.shape(), grad)?)?;
    opt.step(critic);
    Ok((loss, q.into_data()))
}
