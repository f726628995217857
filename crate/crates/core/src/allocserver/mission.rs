//! In-process mission simulation: the server and one or two simulated
//! clients advance in lockstep, one control period per server tick.

use std::collections::VecDeque;
use std::io::Write;

use serde::Serialize;
use serde_json::json;

use super::{Kind, Message, MissionMode, NodeGraph, Outgoing, Server, ServerConfig, TICK_HZ};
use crate::apf::{optimal_action_with_threshold, Action};
use crate::error::{Error, Result};
use crate::simenv::{Dynamics, EnvConfig, GuidanceEnv, GuidanceObservation, Outcome, Policy};
use crate::taskalloc::AllocPolicy;
use crate::world::{Pose, World};

pub const DELIVERY_TAKEOFF_DELAY: f64 = 10.0;
pub const CLIMB_RATE: f64 = 0.3;
/// Repulsion radius of the mission APF controller. The arena corridors are
/// 2 m wide, so the training radius of 1 m would repel from both walls at
/// once and stall the airframe on the centre line.
pub const MISSION_REPULSE_DISTANCE: f64 = 0.5;

/// APF controller for missions in narrow corridors.
#[derive(Clone, Copy, Debug)]
pub struct MissionApf {
    pub threshold: f64,
}

impl Default for MissionApf {
    fn default() -> Self {
        Self { threshold: MISSION_REPULSE_DISTANCE }
    }
}

impl Policy for MissionApf {
    fn act(&mut self, obs: &GuidanceObservation) -> Result<Action> {
        Ok(optimal_action_with_threshold(&obs.apf_input(), self.threshold))
    }
}

/// How clients move between nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClientModel {
    /// Closed-loop guidance in the simulated world.
    Simulated,
    /// Straight-line flight at a fixed speed; no sensing.
    Kinematic { speed: f64 },
}

#[derive(Clone, Debug)]
pub struct MissionConfig {
    pub mode: MissionMode,
    pub starts: Vec<usize>,
    /// Take-off pose of each UAV; its height is the floor it rests on.
    pub spawns: Vec<Pose>,
    pub delivery_targets: Vec<usize>,
    pub takeoff_delays: Vec<f64>,
    pub client: ClientModel,
    pub env: EnvConfig,
    pub ready_timeout: f64,
    /// Simulated-time limit for the whole mission.
    pub max_time: f64,
    /// `(uav, t)`: the client drops its connection at time `t`.
    pub disconnect: Option<(usize, f64)>,
}

impl MissionConfig {
    /// Every UAV takes off from the floor below its start node.
    pub fn at_nodes(world: &World, mode: MissionMode, starts: Vec<usize>) -> Result<Self> {
        let mut cfg = Self::new(world, mode, starts.len())?;
        cfg.spawns = starts
            .iter()
            .map(|&k| {
                let p = world.node(k)?;
                Ok(Pose::new(p.x, p.y, world.floor_height(p.xy()), 0.0))
            })
            .collect::<Result<_>>()?;
        if mode == MissionMode::Delivery {
            cfg.delivery_targets = default_delivery_targets(world, &starts);
        }
        cfg.starts = starts;
        Ok(cfg)
    }

    /// Defaults for `world`: UAV `u` takes off from spawn `u` and is bound
    /// to the node nearest to it.
    pub fn new(world: &World, mode: MissionMode, uavs: usize) -> Result<Self> {
        if uavs == 0 || uavs > 2 {
            return Err(Error::Precondition("missions fly one or two UAVs".into()));
        }
        let spawns: Vec<Pose> = (0..uavs)
            .map(|u| {
                world.spawns.get(u).copied().unwrap_or_else(|| {
                    let p = world.nodes[u.min(world.nodes.len() - 1)];
                    Pose::new(p.x, p.y, world.floor_height(p.xy()), 0.0)
                })
            })
            .collect();
        let starts: Vec<usize> = spawns
            .iter()
            .map(|s| {
                let d = |k: usize| (world.nodes[k].x - s.x).hypot(world.nodes[k].y - s.y);
                (0..world.nodes.len()).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap_or(0)
            })
            .collect();
        let delivery_targets = if mode == MissionMode::Delivery {
            default_delivery_targets(world, &starts)
        } else {
            Vec::new()
        };
        let mut takeoff_delays = vec![0.0; uavs];
        if mode == MissionMode::Delivery && uavs == 2 {
            takeoff_delays[1] = DELIVERY_TAKEOFF_DELAY;
        }
        let env = EnvConfig {
            dynamics: Dynamics::deployed(),
            max_steps: 1200,
            emergency: true,
            ..EnvConfig::default()
        };
        Ok(Self {
            mode,
            starts,
            spawns,
            delivery_targets,
            takeoff_delays,
            client: ClientModel::Simulated,
            env,
            ready_timeout: super::DEFAULT_READY_TIMEOUT,
            max_time: 1200.0,
            disconnect: None,
        })
    }

    pub fn server_config(&self) -> ServerConfig {
        ServerConfig {
            mode: self.mode,
            starts: self.starts.clone(),
            delivery_targets: self.delivery_targets.clone(),
            ready_timeout: self.ready_timeout,
        }
    }

    pub fn validate(&self, world: &World) -> Result<()> {
        let uavs = self.starts.len();
        if self.spawns.len() != uavs || self.takeoff_delays.len() != uavs {
            return Err(Error::Precondition("one spawn and one take-off delay per UAV".into()));
        }
        if (self.env.dynamics.dt * TICK_HZ as f64 - 1.0).abs() > 1e-9 {
            return Err(Error::Precondition("the control period must equal the server tick".into()));
        }
        if self.takeoff_delays.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Precondition("take-off delays must be finite and non-negative".into()));
        }
        if let ClientModel::Kinematic { speed } = self.client {
            if !(speed > 0.0 && speed.is_finite()) {
                return Err(Error::Precondition("kinematic speed must be positive".into()));
            }
        }
        if let Some(&k) = self.starts.iter().chain(&self.delivery_targets).find(|&&k| k >= world.nodes.len()) {
            return Err(Error::UnknownNode(k));
        }
        Ok(())
    }
}

/// Two nodes far from both take-off points and from each other.
fn default_delivery_targets(world: &World, starts: &[usize]) -> Vec<usize> {
    let n = world.nodes.len();
    let d = |a: usize, b: usize| {
        let (p, q) = (world.nodes[a].xy(), world.nodes[b].xy());
        (p[0] - q[0]).hypot(p[1] - q[1])
    };
    let free: Vec<usize> = (0..n).filter(|k| !starts.contains(k)).collect();
    let far = |u: usize, taken: Option<usize>| {
        free.iter()
            .copied()
            .filter(|&k| Some(k) != taken)
            .max_by(|&a, &b| d(starts[u], a).total_cmp(&d(starts[u], b)).then(b.cmp(&a)))
            .unwrap_or(starts[u])
    };
    let first = far(0, None);
    match starts.len() {
        1 => vec![first],
        _ => vec![first, far(1, Some(first))],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub t: f64,
    pub uav: usize,
    pub event: String,
    pub node: Option<usize>,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PathRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Clone, Debug)]
pub struct MissionReport {
    pub log: Vec<LogRow>,
    pub paths: Vec<Vec<PathRow>>,
    pub visited: Vec<bool>,
    /// Time at which the last UAV touched down, if all did.
    pub completion_time: Option<f64>,
    /// Server tick on which each UAV received LAND.
    pub land_ticks: Vec<Option<u64>>,
    pub assignments: Vec<super::Assignment>,
    pub failed: Vec<usize>,
    pub aborted: bool,
    pub flown: Vec<f64>,
}

impl MissionReport {
    pub fn complete(&self) -> bool {
        self.completion_time.is_some() && self.failed.is_empty() && !self.aborted
    }

    pub fn all_visited(&self) -> bool {
        self.visited.iter().all(|&v| v)
    }

    pub fn write_log<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.log {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_path<W: Write>(&self, uav: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.paths[uav] {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Phase {
    Boot,
    AwaitHello,
    Delay { until: f64 },
    Climb { z: f64 },
    Await,
    Fly { queue: VecDeque<usize>, home: bool },
    Hover,
    Descend { floor: f64 },
    Landed,
    Failed,
}

struct Client<'w> {
    uav: usize,
    phase: Phase,
    position: [f64; 3],
    yaw: f64,
    env: Option<GuidanceEnv<'w>>,
    policy: Box<dyn Policy + 'w>,
    seq: u64,
    delay: f64,
    flown: f64,
}

impl<'w> Client<'w> {
    fn new(world: &'w World, cfg: &MissionConfig, u: usize, policy: Box<dyn Policy + 'w>) -> Self {
        let s = cfg.spawns[u];
        let env = (cfg.client == ClientModel::Simulated)
            .then(|| GuidanceEnv::new(world, EnvConfig { seed: cfg.env.seed.wrapping_add(u as u64), ..cfg.env.clone() }));
        Client {
            uav: u,
            phase: Phase::Boot,
            position: s.position(),
            yaw: s.yaw,
            env,
            policy,
            seq: 0,
            delay: cfg.takeoff_delays[u],
            flown: 0.0,
        }
    }

    fn send(&mut self, kind: Kind, payload: serde_json::Value) -> Message {
        self.seq += 1;
        Message::new(kind, self.uav, self.seq, payload)
    }
}

struct Sim<'w> {
    world: &'w World,
    cfg: &'w MissionConfig,
    /// Indexed by UAV id; `None` for UAVs flown elsewhere.
    clients: Vec<Option<Client<'w>>>,
    log: Vec<LogRow>,
    paths: Vec<Vec<PathRow>>,
    land_ticks: Vec<Option<u64>>,
    aborted: bool,
    t: f64,
}

impl<'w> Sim<'w> {
    fn cr(&self, u: usize) -> &Client<'w> {
        self.clients[u].as_ref().expect("local client")
    }

    fn c(&mut self, u: usize) -> &mut Client<'w> {
        self.clients[u].as_mut().expect("local client")
    }

    fn event(&mut self, u: usize, event: &str, node: Option<usize>) {
        let p = self.c(u).position;
        self.log.push(LogRow { t: self.t, uav: u, event: event.into(), node, x: p[0], y: p[1], z: p[2] });
    }

    fn node_pos(&self, k: usize) -> [f64; 3] {
        self.world.nodes[k].xyz()
    }

    /// Handles one server reply; returns a message to send, if any.
    fn receive(&mut self, u: usize, msg: &Message, tick: u64) -> Result<Option<Message>> {
        let kind = msg.kind().ok_or_else(|| Error::Protocol(format!("server sent kind {}", msg.kind)))?;
        match kind {
            Kind::Hello => {
                self.event(u, "hello", msg.node());
                let until = self.t + self.c(u).delay;
                self.c(u).phase = Phase::Delay { until };
            }
            Kind::TaskAssignment | Kind::ReturnHome => {
                let path = msg.path().ok_or_else(|| Error::Protocol("assignment without a path".into()))?;
                let target = msg.payload.get("target").and_then(|v| v.as_u64()).map(|v| v as usize);
                let home = kind == Kind::ReturnHome;
                self.event(u, if home { "return_home" } else { "assign" }, target);
                self.c(u).phase = Phase::Fly { queue: path.into(), home };
                if let Some(&first) = self.queue_front(u) {
                    let goal = self.node_pos(first);
                    self.start_leg(u, goal)?;
                } else {
                    return Ok(self.finish_path(u, target.unwrap_or(0)));
                }
            }
            Kind::Land => {
                self.land_ticks[u] = Some(tick);
                self.event(u, "land_cmd", msg.node());
                let p = self.c(u).position;
                let floor = self.world.floor_height([p[0], p[1]]);
                self.c(u).phase = Phase::Descend { floor };
            }
            Kind::Error => {
                let reason = msg.payload.get("reason").and_then(|r| r.as_str()).unwrap_or("");
                if reason.starts_with("abort") {
                    self.aborted = true;
                    self.event(u, "abort", None);
                    let p = self.c(u).position;
                    let floor = self.world.floor_height([p[0], p[1]]);
                    self.c(u).phase = Phase::Descend { floor };
                } else {
                    return Err(Error::Protocol(format!("server error for uav {u}: {reason}")));
                }
            }
            other => return Err(Error::Protocol(format!("server sent {other}"))),
        }
        Ok(None)
    }

    fn queue_front(&self, u: usize) -> Option<&usize> {
        match &self.cr(u).phase {
            Phase::Fly { queue, .. } => queue.front(),
            _ => None,
        }
    }

    fn start_leg(&mut self, u: usize, goal: [f64; 3]) -> Result<()> {
        if self.cfg.client != ClientModel::Simulated {
            return Ok(());
        }
        let c = &mut self.c(u);
        let pose = Pose::new(c.position[0], c.position[1], c.position[2], c.yaw);
        let env = c.env.as_mut().expect("simulated clients own an environment");
        env.reset(pose, goal)?;
        Ok(())
    }

    /// The final node of a path was reached.
    fn finish_path(&mut self, u: usize, node: usize) -> Option<Message> {
        let (kind, event, next) = match self.cfg.mode {
            MissionMode::Delivery => (Kind::Ready, "ready", Phase::Hover),
            MissionMode::Mapping => (Kind::Arrived, "arrived", Phase::Await),
        };
        let c = self.c(u);
        c.phase = next;
        let msg = c.send(kind, json!({ "node": node }));
        self.event(u, event, Some(node));
        Some(msg)
    }

    /// Advances one client by one control period.
    fn advance(&mut self, u: usize) -> Result<Option<Message>> {
        let dt = 1.0 / TICK_HZ as f64;
        let phase = self.c(u).phase.clone();
        match phase {
            Phase::Boot => {
                self.c(u).phase = Phase::AwaitHello;
                let m = self.c(u).send(Kind::Hello, json!({}));
                return Ok(Some(m));
            }
            Phase::Delay { until } => {
                if self.t + 1e-9 >= until {
                    let z = self.node_pos(self.cfg.starts[u])[2];
                    self.c(u).phase = Phase::Climb { z };
                    self.event(u, "takeoff", Some(self.cfg.starts[u]));
                }
            }
            Phase::Climb { z } => {
                let c = &mut self.c(u);
                c.position[2] = (c.position[2] + CLIMB_RATE * dt).min(z);
                c.flown += CLIMB_RATE * dt;
                if c.position[2] >= z - 1e-9 {
                    c.phase = Phase::Await;
                    let m = c.send(Kind::RequestTask, json!({}));
                    self.event(u, "request", None);
                    return Ok(Some(m));
                }
            }
            Phase::Fly { mut queue, home } => {
                let Some(&next) = queue.front() else { return Ok(None) };
                let goal = self.node_pos(next);
                let reached = match self.cfg.client {
                    ClientModel::Kinematic { speed } => {
                        let c = &mut self.c(u);
                        let d = [0, 1, 2].map(|k| goal[k] - c.position[k]);
                        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                        let step = (speed * dt).min(len);
                        if len > 0.0 {
                            for k in 0..3 {
                                c.position[k] += d[k] / len * step;
                            }
                        }
                        c.flown += step;
                        len - step < self.cfg.env.dynamics.goal_radius
                    }
                    ClientModel::Simulated => {
                        let c = &mut self.c(u);
                        let env = c.env.as_mut().expect("simulated clients own an environment");
                        let obs = env.observe()?;
                        let action = c.policy.act(&obs)?;
                        let res = env.step(action)?;
                        let s = env.state();
                        let p = s.position;
                        c.flown += (0..3).map(|k| (p[k] - c.position[k]).powi(2)).sum::<f64>().sqrt();
                        c.position = p;
                        c.yaw = s.yaw;
                        match res.outcome {
                            Outcome::Goal => true,
                            Outcome::Running => false,
                            bad => {
                                self.event(u, bad.as_str(), Some(next));
                                self.c(u).phase = Phase::Failed;
                                return Ok(None);
                            }
                        }
                    }
                };
                if reached {
                    queue.pop_front();
                    self.event(u, "waypoint", Some(next));
                    if let Some(&after) = queue.front() {
                        let goal = self.node_pos(after);
                        if let Some(env) = self.c(u).env.as_mut() {
                            env.set_goal(goal)?;
                        }
                        self.c(u).phase = Phase::Fly { queue, home };
                    } else {
                        self.c(u).phase = Phase::Fly { queue, home };
                        return Ok(self.finish_path(u, next));
                    }
                } else {
                    self.c(u).phase = Phase::Fly { queue, home };
                }
            }
            Phase::Descend { floor } => {
                let c = &mut self.c(u);
                c.position[2] = (c.position[2] - CLIMB_RATE * dt).max(floor);
                c.flown += CLIMB_RATE * dt;
                if c.position[2] <= floor + 1e-9 {
                    c.phase = Phase::Landed;
                    self.event(u, "landed", None);
                }
            }
            Phase::AwaitHello | Phase::Await | Phase::Hover | Phase::Landed | Phase::Failed => {}
        }
        Ok(None)
    }

    fn airborne(&self, u: usize) -> bool {
        !matches!(self.cr(u).phase, Phase::Boot | Phase::AwaitHello | Phase::Delay { .. } | Phase::Landed)
    }
}

/// Runs a whole mission. `policies` supplies one guidance controller per
/// UAV (ignored by kinematic clients).
pub fn run_mission<'w>(
    world: &'w World,
    cfg: &'w MissionConfig,
    allocator: Box<dyn AllocPolicy + Send>,
    policies: Vec<Box<dyn Policy + 'w>>,
) -> Result<MissionReport> {
    cfg.validate(world)?;
    let uavs = cfg.starts.len();
    if policies.len() != uavs {
        return Err(Error::Precondition("one guidance policy per UAV".into()));
    }
    let graph = NodeGraph::from_world(world)?;
    let mut server = Server::new(graph, cfg.server_config(), allocator)?;
    let clients = policies.into_iter().enumerate().map(|(u, p)| Some(Client::new(world, cfg, u, p))).collect();
    let mut sim = Sim {
        world,
        cfg,
        clients,
        log: Vec::new(),
        paths: vec![Vec::new(); uavs],
        land_ticks: vec![None; uavs],
        aborted: false,
        t: 0.0,
    };
    let dt = 1.0 / TICK_HZ as f64;
    let mut replies: Vec<Outgoing> = Vec::new();
    let mut failed = vec![false; uavs];
    let mut tick = 0u64;
    loop {
        sim.t = tick as f64 * dt;
        let mut outbox = Vec::new();
        for r in std::mem::take(&mut replies) {
            if failed[r.uav_id] {
                continue;
            }
            if let Some(m) = sim.receive(r.uav_id, &r.message, tick)? {
                outbox.push(m);
            }
        }
        for u in 0..uavs {
            if failed[u] {
                continue;
            }
            if let Some((d, at)) = cfg.disconnect {
                if d == u && sim.t + 1e-9 >= at {
                    failed[u] = true;
                    server.fail(u);
                    sim.event(u, "disconnect", None);
                    continue;
                }
            }
            let was_airborne = sim.airborne(u);
            if let Some(m) = sim.advance(u)? {
                outbox.push(m);
            }
            if sim.c(u).phase == Phase::Failed {
                failed[u] = true;
                server.fail(u);
            }
            if was_airborne || sim.airborne(u) {
                let p = sim.c(u).position;
                sim.paths[u].push(PathRow { t: sim.t, x: p[0], y: p[1], z: p[2] });
            }
        }
        for m in outbox {
            server.submit(m);
        }
        replies = server.tick();
        tick += 1;
        let settled = (0..uavs).all(|u| failed[u] || sim.c(u).phase == Phase::Landed);
        if (settled && replies.is_empty()) || sim.t >= cfg.max_time {
            break;
        }
    }
    let landed = (0..uavs).all(|u| sim.c(u).phase == Phase::Landed);
    let completion_time = landed
        .then(|| sim.log.iter().filter(|r| r.event == "landed").map(|r| r.t).fold(0.0, f64::max));
    Ok(MissionReport {
        completion_time,
        land_ticks: sim.land_ticks,
        visited: server.visited.clone(),
        assignments: server.assignments.clone(),
        failed: (0..uavs).filter(|&u| failed[u]).collect(),
        aborted: sim.aborted,
        flown: sim.clients.iter().flatten().map(|c| c.flown).collect(),
        log: sim.log,
        paths: sim.paths,
    })
}

/// Log and path of one UAV flown against a remote server.
#[derive(Clone, Debug)]
pub struct ClientReport {
    pub uav: usize,
    pub log: Vec<LogRow>,
    pub path: Vec<PathRow>,
    pub landed: bool,
    pub flown: f64,
}

/// Anything that carries messages to a server and back.
pub trait Transport {
    fn send(&mut self, msg: &Message) -> Result<()>;
    /// Blocks for the next server message.
    fn recv(&mut self) -> Result<Message>;
}

/// Flies UAV `uav` of `cfg` against a server reached through `link`.
/// Simulated time advances one control period per step and does not wait
/// for the wall clock; the client blocks only while it awaits a reply.
pub fn run_client<'w, T: Transport>(
    world: &'w World,
    cfg: &'w MissionConfig,
    uav: usize,
    policy: Box<dyn Policy + 'w>,
    link: &mut T,
) -> Result<ClientReport> {
    cfg.validate(world)?;
    if uav >= cfg.starts.len() {
        return Err(Error::Precondition(format!("uav {uav} is not part of the mission")));
    }
    let mut clients: Vec<Option<Client<'w>>> = (0..cfg.starts.len()).map(|_| None).collect();
    clients[uav] = Some(Client::new(world, cfg, uav, policy));
    let mut sim = Sim {
        world,
        cfg,
        clients,
        log: Vec::new(),
        paths: vec![Vec::new(); cfg.starts.len()],
        land_ticks: vec![None; cfg.starts.len()],
        aborted: false,
        t: 0.0,
    };
    let dt = 1.0 / TICK_HZ as f64;
    let mut tick = 0u64;
    loop {
        sim.t = tick as f64 * dt;
        match sim.cr(uav).phase {
            Phase::Landed | Phase::Failed => break,
            Phase::AwaitHello | Phase::Await | Phase::Hover => {
                let reply = link.recv()?;
                if let Some(m) = sim.receive(uav, &reply, tick)? {
                    link.send(&m)?;
                }
            }
            _ => {
                let was_airborne = sim.airborne(uav);
                if let Some(m) = sim.advance(uav)? {
                    link.send(&m)?;
                }
                if was_airborne || sim.airborne(uav) {
                    let p = sim.cr(uav).position;
                    sim.paths[uav].push(PathRow { t: sim.t, x: p[0], y: p[1], z: p[2] });
                }
                if sim.t >= cfg.max_time {
                    sim.event(uav, "timeout", None);
                    break;
                }
            }
        }
        tick += 1;
    }
    let landed = sim.cr(uav).phase == Phase::Landed;
    let flown = sim.cr(uav).flown;
    let path = std::mem::take(&mut sim.paths[uav]);
    Ok(ClientReport { uav, log: sim.log, path, landed, flown })
}
