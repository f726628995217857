//! Allocation server: one graph view per UAV, allocator-driven assignment
//! with path expansion and conflict masking, return-home routing and the
//! synchronised-delivery handshake.
//!
//! All state changes happen inside [`Server::tick`], which processes queued
//! messages in arrival order. Given the same arrival order the server is
//! deterministic.

pub mod mission;
pub mod net;

use std::collections::BinaryHeap;
use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::taskalloc::{AllocPolicy, TaskGraph};
use crate::world::{World, GRID_RESOLUTION, UAV_RADIUS};

pub const DEFAULT_PORT: u16 = 7700;
pub const TICK_HZ: u64 = 20;
pub const DEFAULT_READY_TIMEOUT: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Hello,
    RequestTask,
    TaskAssignment,
    Arrived,
    Ready,
    Land,
    ReturnHome,
    Error,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::Hello,
        Kind::RequestTask,
        Kind::TaskAssignment,
        Kind::Arrived,
        Kind::Ready,
        Kind::Land,
        Kind::ReturnHome,
        Kind::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Hello => "HELLO",
            Kind::RequestTask => "REQUEST_TASK",
            Kind::TaskAssignment => "TASK_ASSIGNMENT",
            Kind::Arrived => "ARRIVED",
            Kind::Ready => "READY",
            Kind::Land => "LAND",
            Kind::ReturnHome => "RETURN_HOME",
            Kind::Error => "ERROR",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Wire message. `kind` stays a string so that unknown kinds can be answered
/// with `ERROR` instead of failing to parse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub kind: String,
    pub uav_id: usize,
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

impl Message {
    pub fn new(kind: Kind, uav_id: usize, seq: u64, payload: Value) -> Self {
        Self { kind: kind.as_str().to_string(), uav_id, seq, payload }
    }

    pub fn kind(&self) -> Option<Kind> {
        Kind::parse(&self.kind)
    }

    /// One JSON object, no trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("messages always serialise")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Protocol(format!("malformed message: {e}")))
    }

    pub fn path(&self) -> Option<Vec<usize>> {
        serde_json::from_value(self.payload.get("path")?.clone()).ok()
    }

    pub fn node(&self) -> Option<usize> {
        self.payload.get("node")?.as_u64().map(|v| v as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissionMode {
    Mapping,
    Delivery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionState {
    Idle,
    Enroute,
    HoveringReady,
    Returning,
    Landed,
    Aborted,
}

#[derive(Clone, Debug)]
pub struct Session {
    pub uav_id: usize,
    pub view: TaskGraph,
    pub home: usize,
    pub node: usize,
    pub target: Option<usize>,
    pub path: Vec<usize>,
    pub state: SessionState,
    /// Sequence number of a request still waiting for its answer.
    pending: Option<u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ServerConfig {
    pub mode: MissionMode,
    /// Take-off node of each UAV (one or two).
    pub starts: Vec<usize>,
    /// Delivery node of each UAV in delivery mode.
    pub delivery_targets: Vec<usize>,
    pub ready_timeout: f64,
}

impl ServerConfig {
    pub fn mapping(starts: Vec<usize>) -> Self {
        Self { mode: MissionMode::Mapping, starts, delivery_targets: Vec::new(), ready_timeout: DEFAULT_READY_TIMEOUT }
    }

    pub fn delivery(starts: Vec<usize>, targets: Vec<usize>) -> Self {
        Self { mode: MissionMode::Delivery, starts, delivery_targets: targets, ready_timeout: DEFAULT_READY_TIMEOUT }
    }
}

/// Record of one assignment, kept for audits.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assignment {
    pub tick: u64,
    pub uav_id: usize,
    pub target: usize,
    pub path: Vec<usize>,
    /// Whether the target was unvisited in the merged view when assigned.
    pub unvisited: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outgoing {
    pub uav_id: usize,
    pub message: Message,
}

/// Node-graph routing data derived from a world once.
#[derive(Clone, Debug)]
pub struct NodeGraph {
    pub positions: Vec<[f64; 3]>,
    pub weights: Vec<Vec<f64>>,
    /// `sight[a][b]`: the straight segment is flyable.
    pub sight: Vec<Vec<bool>>,
}

impl NodeGraph {
    pub fn from_world(world: &World) -> Result<Self> {
        let weights = world.route_matrix(GRID_RESOLUTION)?;
        let n = world.nodes.len();
        let positions: Vec<[f64; 3]> = world.nodes.iter().map(|p| p.xyz()).collect();
        let sight = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| a == b || world.line_of_sight(world.nodes[a].xy(), world.nodes[b].xy(), UAV_RADIUS))
                    .collect()
            })
            .collect();
        Ok(Self { positions, weights, sight })
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// Node sequence from `from` to `to`, excluding `from`. A direct hop
    /// when the segment is clear, otherwise Dijkstra over line-of-sight
    /// edges weighted by route length.
    pub fn expand(&self, from: usize, to: usize) -> Vec<usize> {
        if from == to {
            return Vec::new();
        }
        if self.sight[from][to] {
            return vec![to];
        }
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
            }
        }
        let n = self.n();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[from] = 0.0;
        heap.push(Item(0.0, from));
        while let Some(Item(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            if u == to {
                break;
            }
            for v in 0..n {
                if v != u && self.sight[u][v] {
                    let nd = d + self.weights[u][v];
                    if nd < dist[v] {
                        dist[v] = nd;
                        prev[v] = u;
                        heap.push(Item(nd, v));
                    }
                }
            }
        }
        if !dist[to].is_finite() {
            // No chain of clear hops; fly the target directly and let the
            // guidance layer handle it.
            return vec![to];
        }
        let mut seq = vec![to];
        let mut v = to;
        while prev[v] != from {
            v = prev[v];
            seq.push(v);
        }
        seq.reverse();
        seq
    }
}

pub struct Server {
    pub cfg: ServerConfig,
    pub graph: NodeGraph,
    allocator: Box<dyn AllocPolicy + Send>,
    pub sessions: Vec<Session>,
    pub visited: Vec<bool>,
    pub tick: u64,
    pub assignments: Vec<Assignment>,
    /// Tick on which each UAV was sent LAND.
    pub land_ticks: Vec<Option<u64>>,
    inbox: Vec<Message>,
    /// First READY: `(uav, seq, tick)`.
    ready: Option<(usize, u64, u64)>,
    ready_seen: Vec<Option<u64>>,
}

impl Server {
    pub fn new(graph: NodeGraph, cfg: ServerConfig, allocator: Box<dyn AllocPolicy + Send>) -> Result<Self> {
        let n = graph.n();
        let uavs = cfg.starts.len();
        if uavs == 0 || uavs > 2 {
            return Err(Error::Precondition("the server handles one or two UAVs".into()));
        }
        if let Some(&s) = cfg.starts.iter().chain(&cfg.delivery_targets).find(|&&s| s >= n) {
            return Err(Error::UnknownNode(s));
        }
        if uavs == 2 && cfg.starts[0] == cfg.starts[1] {
            return Err(Error::Precondition("UAVs must take off from different nodes".into()));
        }
        if cfg.mode == MissionMode::Delivery && cfg.delivery_targets.len() != uavs {
            return Err(Error::Precondition("delivery mode needs one target per UAV".into()));
        }
        if !(cfg.ready_timeout > 0.0) {
            return Err(Error::Precondition("ready timeout must be positive".into()));
        }
        let mut visited = vec![false; n];
        for &s in &cfg.starts {
            visited[s] = true;
        }
        let sessions = (0..uavs)
            .map(|u| Session {
                uav_id: u,
                view: TaskGraph {
                    weights: graph.weights.clone(),
                    visited: visited.clone(),
                    self_node: cfg.starts[u],
                    other_node: (uavs == 2).then(|| cfg.starts[1 - u]),
                    masked: vec![false; n],
                },
                home: cfg.starts[u],
                node: cfg.starts[u],
                target: None,
                path: Vec::new(),
                state: SessionState::Idle,
                pending: None,
            })
            .collect();
        Ok(Self {
            graph,
            allocator,
            sessions,
            visited,
            tick: 0,
            assignments: Vec::new(),
            land_ticks: vec![None; uavs],
            inbox: Vec::new(),
            ready: None,
            ready_seen: vec![None; uavs],
            cfg,
        })
    }

    pub fn ready_timeout_ticks(&self) -> u64 {
        (self.cfg.ready_timeout * TICK_HZ as f64).round() as u64
    }

    /// Queues a message for the next tick.
    pub fn submit(&mut self, msg: Message) {
        self.inbox.push(msg);
    }

    /// Processes everything queued since the last tick, then timeouts and
    /// deferred requests, and returns the replies produced on this tick.
    pub fn tick(&mut self) -> Vec<Outgoing> {
        self.tick += 1;
        let mut out = Vec::new();
        for msg in std::mem::take(&mut self.inbox) {
            self.handle(msg, &mut out);
        }
        self.check_ready_timeout(&mut out);
        for u in 0..self.sessions.len() {
            if let Some(seq) = self.sessions[u].pending {
                if let Some(reply) = self.next_task(u, seq) {
                    self.sessions[u].pending = None;
                    out.push(reply);
                }
            }
        }
        out
    }

    pub fn is_finished(&self) -> bool {
        self.sessions.iter().all(|s| matches!(s.state, SessionState::Landed | SessionState::Aborted))
    }

    /// Marks a session as failed (client disconnect).
    pub fn fail(&mut self, uav: usize) {
        if let Some(s) = self.sessions.get_mut(uav) {
            s.state = SessionState::Aborted;
            s.target = None;
            s.pending = None;
        }
    }

    fn error(uav: usize, seq: u64, reason: impl Into<String>) -> Outgoing {
        Outgoing { uav_id: uav, message: Message::new(Kind::Error, uav, seq, json!({ "reason": reason.into() })) }
    }

    fn handle(&mut self, msg: Message, out: &mut Vec<Outgoing>) {
        let u = msg.uav_id;
        if u >= self.sessions.len() {
            out.push(Self::error(u, msg.seq, format!("unknown uav {u}")));
            return;
        }
        let Some(kind) = msg.kind() else {
            out.push(Self::error(u, msg.seq, format!("unknown kind {}", msg.kind)));
            return;
        };
        if self.sessions[u].state == SessionState::Aborted {
            out.push(Self::error(u, msg.seq, "session aborted"));
            return;
        }
        match kind {
            Kind::Hello => {
                let s = &self.sessions[u];
                out.push(Outgoing {
                    uav_id: u,
                    message: Message::new(Kind::Hello, u, msg.seq, json!({ "node": s.home, "n": self.graph.n() })),
                });
            }
            Kind::RequestTask => self.request(u, msg.seq, out),
            Kind::Arrived => {
                if self.cfg.mode != MissionMode::Mapping {
                    out.push(Self::error(u, msg.seq, "ARRIVED is only used in mapping missions"));
                    return;
                }
                let Some(node) = msg.node().filter(|&k| k < self.graph.n()) else {
                    out.push(Self::error(u, msg.seq, "ARRIVED needs a valid node"));
                    return;
                };
                if self.sessions[u].state == SessionState::Returning {
                    if node == self.sessions[u].home {
                        self.sessions[u].node = node;
                        self.sessions[u].state = SessionState::Landed;
                        self.land_ticks[u] = Some(self.tick);
                        out.push(Outgoing { uav_id: u, message: Message::new(Kind::Land, u, msg.seq, json!({ "node": node })) });
                    } else {
                        out.push(Self::error(u, msg.seq, "returning UAV arrived away from home"));
                    }
                    return;
                }
                self.arrive(u, node);
                self.request(u, msg.seq, out);
            }
            Kind::Ready => self.ready(u, msg, out),
            Kind::TaskAssignment | Kind::Land | Kind::ReturnHome | Kind::Error => {
                out.push(Self::error(u, msg.seq, format!("{kind} is a server message")));
            }
        }
    }

    fn arrive(&mut self, u: usize, node: usize) {
        let path = std::mem::take(&mut self.sessions[u].path);
        for k in path.into_iter().chain([node]) {
            self.visited[k] = true;
        }
        let s = &mut self.sessions[u];
        s.node = node;
        s.target = None;
        s.state = SessionState::Idle;
        self.sync_views();
    }

    /// Copies the merged visited set and both positions into every view.
    fn sync_views(&mut self) {
        let nodes: Vec<usize> = self.sessions.iter().map(|s| s.node).collect();
        let two = nodes.len() == 2;
        for (u, s) in self.sessions.iter_mut().enumerate() {
            s.view.visited.clone_from(&self.visited);
            s.view.self_node = nodes[u];
            s.view.other_node = two.then(|| nodes[1 - u]);
        }
    }

    fn request(&mut self, u: usize, seq: u64, out: &mut Vec<Outgoing>) {
        if self.sessions[u].pending.is_some() {
            out.push(Self::error(u, seq, "a request is already pending"));
            return;
        }
        match self.next_task(u, seq) {
            Some(reply) => out.push(reply),
            None => self.sessions[u].pending = Some(seq),
        }
    }

    /// Answer to a task request, or `None` to defer it (every remaining node
    /// is the other UAV's target).
    fn next_task(&mut self, u: usize, seq: u64) -> Option<Outgoing> {
        let here = self.sessions[u].node;
        if self.cfg.mode == MissionMode::Delivery {
            let target = self.cfg.delivery_targets[u];
            let path = self.graph.expand(here, target);
            self.record(u, target, path.clone());
            return Some(Outgoing {
                uav_id: u,
                message: Message::new(Kind::TaskAssignment, u, seq, json!({ "target": target, "path": path })),
            });
        }
        if self.visited.iter().all(|&v| v) {
            let home = self.sessions[u].home;
            let path = self.graph.expand(here, home);
            let s = &mut self.sessions[u];
            s.state = SessionState::Returning;
            s.target = Some(home);
            return Some(Outgoing {
                uav_id: u,
                message: Message::new(Kind::ReturnHome, u, seq, json!({ "target": home, "path": path })),
            });
        }
        let other = (self.sessions.len() == 2).then(|| &self.sessions[1 - u]);
        // The other UAV's position, target and intermediate hops.
        let blocked: Vec<usize> = other
            .map(|o| o.target.into_iter().chain([o.node]).chain(o.path.iter().copied()).collect())
            .unwrap_or_default();
        let mut view = self.sessions[u].view.clone();
        view.masked = self.visited.clone();
        view.masked[here] = true;
        let target = loop {
            if view.masked.iter().all(|&m| m) {
                return None;
            }
            let k = match self.allocator.choose(&view) {
                Ok(k) if k < view.n() && !view.masked[k] => k,
                // A policy that ignores the mask falls back to the first
                // eligible node.
                _ => view.masked.iter().position(|&m| !m).expect("an eligible node exists"),
            };
            if blocked.contains(&k) {
                view.masked[k] = true;
                continue;
            }
            break k;
        };
        let path = self.graph.expand(here, target);
        self.record(u, target, path.clone());
        Some(Outgoing {
            uav_id: u,
            message: Message::new(Kind::TaskAssignment, u, seq, json!({ "target": target, "path": path })),
        })
    }

    fn record(&mut self, u: usize, target: usize, path: Vec<usize>) {
        self.assignments.push(Assignment {
            tick: self.tick,
            uav_id: u,
            target,
            path: path.clone(),
            unvisited: !self.visited[target],
        });
        let s = &mut self.sessions[u];
        s.target = Some(target);
        // Intermediate hops only; the target is added on arrival.
        s.path = path.split_last().map(|(_, rest)| rest.to_vec()).unwrap_or_default();
        s.state = SessionState::Enroute;
    }

    fn ready(&mut self, u: usize, msg: Message, out: &mut Vec<Outgoing>) {
        if self.cfg.mode != MissionMode::Delivery {
            out.push(Self::error(u, msg.seq, "READY is only used in delivery missions"));
            return;
        }
        if self.ready_seen[u].is_some() {
            out.push(Self::error(u, msg.seq, "READY already received"));
            return;
        }
        if let Some(node) = msg.node().filter(|&k| k < self.graph.n()) {
            self.visited[node] = true;
            self.sessions[u].node = node;
            self.sync_views();
        }
        self.ready_seen[u] = Some(msg.seq);
        self.sessions[u].state = SessionState::HoveringReady;
        let all_ready = self.ready_seen.iter().all(Option::is_some);
        if all_ready {
            // Everyone lands on this tick.
            for (v, seq) in self.ready_seen.clone().into_iter().enumerate() {
                let s = &mut self.sessions[v];
                s.state = SessionState::Landed;
                self.land_ticks[v] = Some(self.tick);
                out.push(Outgoing {
                    uav_id: v,
                    message: Message::new(Kind::Land, v, seq.expect("all ready"), json!({ "node": s.node, "tick": self.tick })),
                });
            }
            self.ready = None;
        } else if self.ready.is_none() {
            self.ready = Some((u, msg.seq, self.tick));
        }
    }

    fn check_ready_timeout(&mut self, out: &mut Vec<Outgoing>) {
        let Some((_, _, since)) = self.ready else { return };
        if self.tick - since < self.ready_timeout_ticks() {
            return;
        }
        self.ready = None;
        for v in 0..self.sessions.len() {
            let seq = self.ready_seen[v].or(self.sessions[v].pending).unwrap_or(0);
            let s = &mut self.sessions[v];
            s.state = SessionState::Aborted;
            s.pending = None;
            out.push(Outgoing {
                uav_id: v,
                message: Message::new(Kind::Error, v, seq, json!({ "reason": "abort: second READY timed out" })),
            });
        }
    }
}
