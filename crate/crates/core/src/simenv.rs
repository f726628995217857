//! Episodic guidance environment: velocity-command kinematics with a
//! first-order lag, collision and goal logic, the APF-shaped reward and the
//! deployment-time emergency override.

use std::io::Write;

use serde::Serialize;

use crate::apf::{optimal_action, Action, ApfInput};
use crate::error::{Error, Result};
use crate::sensors::{
    depth_image, downward_depth, scan_lidar, DepthImage, LidarScan, RangeNoise, SensorConfig,
};
use crate::world::{wrap_angle, Pose, World, UAV_RADIUS};

pub const GOAL_REWARD: f64 = 2.0;
pub const COLLISION_REWARD: f64 = -2.0;
pub const OVERRIDE_DISTANCE: f64 = 0.6;
pub const OVERRIDE_SPEED: f64 = 0.2;
pub const OBS_VECTOR_LEN: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dynamics {
    pub dt: f64,
    /// Velocity lag time constant; 0 makes the response instantaneous.
    pub tau_v: f64,
    pub v_max_x: f64,
    pub z_limit: f64,
    pub omega_max: f64,
    pub radius: f64,
    pub goal_radius: f64,
    /// Vertical clearance below which a floor or platform top counts as hit.
    pub surface_margin: f64,
    pub near_goal_slowdown: bool,
    pub ledge_guard: bool,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            dt: 0.05,
            tau_v: 0.3,
            v_max_x: 1.0,
            z_limit: 0.3,
            omega_max: 1.0,
            radius: UAV_RADIUS,
            goal_radius: 0.2,
            surface_margin: 0.05,
            near_goal_slowdown: false,
            ledge_guard: false,
        }
    }
}

impl Dynamics {
    /// Deployment flavour: slowdown near targets and the ledge guard on.
    pub fn deployed() -> Self {
        Self { near_goal_slowdown: true, ledge_guard: true, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UavState {
    pub position: [f64; 3],
    /// Counter-clockwise from +x.
    pub yaw: f64,
    /// World-frame velocity.
    pub velocity: [f64; 3],
    /// Clockwise-positive, like the yaw command.
    pub yaw_rate: f64,
}

impl UavState {
    pub fn at_rest(pose: Pose) -> Self {
        Self { position: pose.position(), yaw: pose.yaw, velocity: [0.0; 3], yaw_rate: 0.0 }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.position[0], self.position[1], self.position[2], self.yaw)
    }

    /// Bearing of `target` from the nose, clockwise-positive.
    pub fn bearing_to(&self, target: [f64; 3]) -> f64 {
        let heading = (target[1] - self.position[1]).atan2(target[0] - self.position[0]);
        wrap_angle(self.yaw - heading)
    }

    pub fn distance_to(&self, target: [f64; 3]) -> f64 {
        let d = [0, 1, 2].map(|k| target[k] - self.position[k]);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

/// What the flight controller receives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Command {
    Guidance(Action),
    /// Body-frame horizontal velocity in m/s (forward, right); no yaw or
    /// vertical motion.
    Velocity { v_x: f64, v_y: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Running,
    Goal,
    Collision,
    Timeout,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Goal => "goal",
            Outcome::Collision => "collision",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceObservation {
    pub depth: DepthImage,
    pub lidar: LidarScan,
    /// Distance to goal, bearing to goal, goal altitude difference, height
    /// above the surface below, previous x, z and yaw commands.
    pub vector: [f64; OBS_VECTOR_LEN],
}

impl GuidanceObservation {
    pub fn apf_input(&self) -> ApfInput {
        ApfInput::from_scan(self.vector[1], self.vector[2], 0.0, &self.lidar)
    }
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub observation: GuidanceObservation,
    pub reward: f64,
    pub done: bool,
    pub outcome: Outcome,
    /// APF action at the pre-step state, the reward reference.
    pub optimal: Action,
}

/// Squared-deviation reward, clipped to `[-1.5, 1]`.
pub fn reward_fn(action: &Action, optimal: &Action) -> f64 {
    let a = action.to_array();
    let o = optimal.to_array();
    let dev: f64 = (0..3).map(|k| (a[k] - o[k]).powi(2)).sum();
    (1.0 - dev).clamp(-1.5, 1.0)
}

/// Replaces the command with a 0.2 m/s retreat from the closest return
/// whenever it is nearer than 0.6 m.
pub fn emergency_override(scan: &LidarScan, action: Action) -> Command {
    let (s, r) = scan.min_sector();
    if r < OVERRIDE_DISTANCE {
        let angle = std::f64::consts::PI * s as f64 / 36.0;
        Command::Velocity { v_x: angle.cos() * -OVERRIDE_SPEED, v_y: angle.sin() * -OVERRIDE_SPEED }
    } else {
        Command::Guidance(action)
    }
}

/// Whether the airframe disc sits across the edge of any raised level.
fn straddles_ledge(world: &World, p: [f64; 2], radius: f64) -> bool {
    world.levels.iter().any(|l| {
        let r = l.region();
        let outside = r.distance_to_point(p);
        if outside > 0.0 {
            outside < radius
        } else {
            r.interior_clearance(p) < radius
        }
    })
}

/// Advances the airframe by one control period. `goal` only matters for
/// the near-goal slowdown.
pub fn integrate(
    world: &World,
    state: &UavState,
    command: Command,
    goal: Option<[f64; 3]>,
    dyn_: &Dynamics,
) -> Result<UavState> {
    let (fwd, right) = ([state.yaw.cos(), state.yaw.sin()], [state.yaw.sin(), -state.yaw.cos()]);
    let (vx_b, vy_b, mut vz, yaw_rate) = match command {
        Command::Guidance(a) => {
            if !a.is_finite() {
                return Err(Error::NonFinite("action"));
            }
            let a = a.clipped();
            let mut vx = a.x_vel * dyn_.v_max_x;
            if dyn_.near_goal_slowdown {
                if let Some(g) = goal {
                    vx *= state.distance_to(g).min(1.0);
                }
            }
            (vx, 0.0, a.z_vel.clamp(-dyn_.z_limit, dyn_.z_limit), a.yaw_rate * dyn_.omega_max)
        }
        Command::Velocity { v_x, v_y } => {
            if !(v_x.is_finite() && v_y.is_finite()) {
                return Err(Error::NonFinite("velocity override"));
            }
            (v_x, v_y, 0.0, 0.0)
        }
    };
    let p = state.position;
    if dyn_.ledge_guard && vz < 0.0 && straddles_ledge(world, [p[0], p[1]], dyn_.radius) {
        vz = 0.0;
    }
    let cmd = [fwd[0] * vx_b + right[0] * vy_b, fwd[1] * vx_b + right[1] * vy_b, vz];
    let mut v = state.velocity;
    if dyn_.tau_v > 0.0 {
        let k = (dyn_.dt / dyn_.tau_v).min(1.0);
        for i in 0..3 {
            v[i] += k * (cmd[i] - v[i]);
        }
    } else {
        v = cmd;
    }
    let position = [p[0] + v[0] * dyn_.dt, p[1] + v[1] * dyn_.dt, p[2] + v[2] * dyn_.dt];
    Ok(UavState {
        position,
        yaw: wrap_angle(state.yaw - yaw_rate * dyn_.dt),
        velocity: v,
        yaw_rate,
    })
}

/// Whether the airframe disc touches a wall, an obstacle, the floor or a
/// platform.
pub fn in_collision(world: &World, p: [f64; 3], dyn_: &Dynamics) -> bool {
    let xy = [p[0], p[1]];
    if !world.bounds.contains(xy) || world.bounds.interior_clearance(xy) < dyn_.radius {
        return true;
    }
    if p[2] < dyn_.surface_margin {
        return true;
    }
    for o in &world.obstacles {
        if p[2] <= o.height + dyn_.surface_margin && o.footprint().distance_to_point(xy) < dyn_.radius {
            return true;
        }
    }
    world.levels.iter().any(|l| {
        p[2] < l.z + dyn_.surface_margin && l.region().distance_to_point(xy) < dyn_.radius
    })
}

#[derive(Clone, Debug)]
pub struct EnvConfig {
    pub dynamics: Dynamics,
    pub sensors: SensorConfig,
    /// Step budget for each goal leg.
    pub max_steps: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Route commands through [`emergency_override`] (deployment only).
    pub emergency: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dynamics: Dynamics::default(),
            sensors: SensorConfig::default(),
            max_steps: 600,
            noise_sigma: 0.0,
            seed: 0,
            emergency: false,
        }
    }
}

pub struct GuidanceEnv<'w> {
    world: &'w World,
    cfg: EnvConfig,
    noise: RangeNoise,
    state: UavState,
    goal: [f64; 3],
    prev_action: Action,
    steps: usize,
    last: Option<GuidanceObservation>,
}

impl<'w> GuidanceEnv<'w> {
    pub fn new(world: &'w World, cfg: EnvConfig) -> Self {
        let noise = RangeNoise::new(cfg.noise_sigma, cfg.seed);
        Self {
            world,
            cfg,
            noise,
            state: UavState::at_rest(Pose::new(0.0, 0.0, 0.0, 0.0)),
            goal: [0.0; 3],
            prev_action: Action::HOVER,
            steps: 0,
            last: None,
        }
    }

    pub fn world(&self) -> &World {
        self.world
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &UavState {
        &self.state
    }

    pub fn goal(&self) -> [f64; 3] {
        self.goal
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reset(&mut self, start: Pose, goal: [f64; 3]) -> Result<GuidanceObservation> {
        if !self.world.bounds.contains([start.x, start.y]) {
            return Err(Error::OutOfBounds { x: start.x, y: start.y });
        }
        self.state = UavState::at_rest(start);
        self.goal = goal;
        self.prev_action = Action::HOVER;
        self.steps = 0;
        let obs = self.observe()?;
        self.last = Some(obs.clone());
        Ok(obs)
    }

    /// Switches to a new goal mid-flight, keeping the airframe state.
    pub fn set_goal(&mut self, goal: [f64; 3]) -> Result<GuidanceObservation> {
        self.goal = goal;
        self.steps = 0;
        let obs = self.observe()?;
        self.last = Some(obs.clone());
        Ok(obs)
    }

    pub fn observe(&mut self) -> Result<GuidanceObservation> {
        let pose = self.state.pose();
        let sensors = self.cfg.sensors;
        let lidar = scan_lidar(self.world, &pose, sensors.lidar_max_range, Some(&mut self.noise))?;
        let depth = depth_image(self.world, &pose, &sensors, Some(&mut self.noise))?;
        let down = downward_depth(self.world, &pose, &sensors, Some(&mut self.noise))?;
        let p = self.state.position;
        let vector = [
            self.state.distance_to(self.goal),
            self.state.bearing_to(self.goal),
            self.goal[2] - p[2],
            down.fused,
            self.prev_action.x_vel,
            self.prev_action.z_vel,
            self.prev_action.yaw_rate,
        ];
        Ok(GuidanceObservation { depth, lidar, vector })
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if !action.is_finite() {
            return Err(Error::NonFinite("action"));
        }
        let action = action.clipped();
        let before = match self.last.take() {
            Some(o) => o,
            None => self.observe()?,
        };
        let optimal = optimal_action(&before.apf_input());
        let mut reward = reward_fn(&action, &optimal);
        let dyn_ = self.cfg.dynamics;
        let command = if self.cfg.emergency {
            emergency_override(&before.lidar, action)
        } else {
            Command::Guidance(action)
        };
        self.state = integrate(self.world, &self.state, command, Some(self.goal), &dyn_)?;
        self.prev_action = action;
        self.steps += 1;
        let p = self.state.position;
        let outcome = if in_collision(self.world, p, &dyn_) {
            reward = COLLISION_REWARD;
            Outcome::Collision
        } else if self.state.distance_to(self.goal) < dyn_.goal_radius {
            reward = GOAL_REWARD;
            Outcome::Goal
        } else if self.steps >= self.cfg.max_steps {
            Outcome::Timeout
        } else {
            Outcome::Running
        };
        // A crashed airframe may sit outside the bounds; clamp the sensor
        // origin so that the terminal observation is still defined.
        if outcome == Outcome::Collision {
            let b = self.world.bounds;
            self.state.position[0] = p[0].clamp(b.x, b.x1());
            self.state.position[1] = p[1].clamp(b.y, b.y1());
        }
        let observation = self.observe()?;
        self.last = Some(observation.clone());
        Ok(StepResult { observation, reward, done: outcome != Outcome::Running, outcome, optimal })
    }
}

/// Anything that maps an observation to a command.
pub trait Policy {
    fn act(&mut self, obs: &GuidanceObservation) -> Result<Action>;
}

impl<F: FnMut(&GuidanceObservation) -> Action> Policy for F {
    fn act(&mut self, obs: &GuidanceObservation) -> Result<Action> {
        Ok(self(obs))
    }
}

impl Policy for Box<dyn Policy + '_> {
    fn act(&mut self, obs: &GuidanceObservation) -> Result<Action> {
        (**self).act(obs)
    }
}

/// The APF optimal action as a controller.
#[derive(Clone, Copy, Debug, Default)]
pub struct ApfPolicy;

impl Policy for ApfPolicy {
    fn act(&mut self, obs: &GuidanceObservation) -> Result<Action> {
        Ok(optimal_action(&obs.apf_input()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub action_x: f64,
    pub action_z: f64,
    pub action_yaw: f64,
    pub reward: f64,
    pub outcome: Outcome,
}

#[derive(Clone, Debug)]
pub struct EpisodeLog {
    pub rows: Vec<TrajectoryRow>,
    pub goals_reached: usize,
    pub outcome: Outcome,
    pub total_reward: f64,
}

impl EpisodeLog {
    pub fn mean_reward(&self) -> f64 {
        if self.rows.is_empty() {
            0.0
        } else {
            self.total_reward / self.rows.len() as f64
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_trajectory_csv(out, &self.rows)
    }
}

pub fn write_trajectory_csv<W: Write>(out: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Flies `goals` in order. Each goal has its own step budget; the episode
/// ends on collision, on a timeout, or after the last goal.
pub fn run_episode<P: Policy + ?Sized>(
    policy: &mut P,
    world: &World,
    start: Pose,
    goals: &[[f64; 3]],
    cfg: &EnvConfig,
) -> Result<EpisodeLog> {
    let mut env = GuidanceEnv::new(world, cfg.clone());
    let mut log = EpisodeLog { rows: Vec::new(), goals_reached: 0, outcome: Outcome::Goal, total_reward: 0.0 };
    let Some(&first) = goals.first() else {
        return Ok(log);
    };
    let mut obs = env.reset(start, first)?;
    let dt = cfg.dynamics.dt;
    let mut t = 0.0;
    let mut k = 0;
    loop {
        let action = policy.act(&obs)?;
        let res = env.step(action)?;
        t += dt;
        let s = env.state();
        let applied = action.clipped();
        log.total_reward += res.reward;
        log.rows.push(TrajectoryRow {
            t,
            x: s.position[0],
            y: s.position[1],
            z: s.position[2],
            yaw: s.yaw,
            action_x: applied.x_vel,
            action_z: applied.z_vel,
            action_yaw: applied.yaw_rate,
            reward: res.reward,
            outcome: res.outcome,
        });
        match res.outcome {
            Outcome::Running => obs = res.observation,
            Outcome::Goal => {
                log.goals_reached += 1;
                k += 1;
                if k == goals.len() {
                    log.outcome = Outcome::Goal;
                    return Ok(log);
                }
                obs = env.set_goal(goals[k])?;
            }
            other => {
                log.outcome = other;
                return Ok(log);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_examples() {
        let o = Action::new(0.2, -0.3, 0.5);
        assert_eq!(reward_fn(&o, &o), 1.0);
        let a = Action::new(0.7, -0.3, 0.5);
        assert!((reward_fn(&a, &Action::new(0.2, -0.3, 0.0)) - 0.5).abs() < 1e-12);
        assert_eq!(reward_fn(&Action::new(1.0, 1.0, 0.0), &Action::new(-1.0, 1.0, 0.0)), -1.5);
    }

    #[test]
    fn nan_action_is_a_hard_error() {
        let w = World::empty(6.0, 6.0);
        let mut env = GuidanceEnv::new(&w, EnvConfig::default());
        env.reset(Pose::new(3.0, 3.0, 1.0, 0.0), [5.0, 3.0, 1.0]).unwrap();
        assert!(matches!(env.step(Action::new(f64::NAN, 0.0, 0.0)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn positive_yaw_command_turns_clockwise() {
        let w = World::empty(6.0, 6.0);
        let s = UavState::at_rest(Pose::new(3.0, 3.0, 1.0, 0.0));
        let d = Dynamics::default();
        let n = integrate(&w, &s, Command::Guidance(Action::new(0.0, 0.0, 1.0)), None, &d).unwrap();
        assert!(n.yaw < 0.0);
        // Target on the right has positive bearing.
        assert!(s.bearing_to([3.0, 1.0, 1.0]) > 0.0);
    }
}
