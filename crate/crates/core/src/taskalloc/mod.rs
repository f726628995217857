//! Two-UAV task allocation: the graph environment and its reward schedule,
//! the greedy and exhaustive baselines, and the GAT allocator.

mod baseline;
mod model;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::World;

pub use baseline::{greedy_baseline, greedy_plan, optimal_makespan, optimal_oracle, Plan, ORACLE_MAX_NODES};
pub use model::{AllocCritic, Allocator, AllocatorConfig, GraphBatch};

pub const VISIT_REWARD: f64 = 1.0;
pub const REVISIT_PENALTY: f64 = -1.0;
pub const DISTANCE_SHAPING: f64 = 0.1;
pub const COMPLETION_BONUS: f64 = 2.0;

/// Symmetric edge-weight matrix of a complete graph, plus take-off nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFixture {
    pub n: usize,
    pub weights: Vec<Vec<f64>>,
    pub starts: Vec<usize>,
}

impl GraphFixture {
    pub fn new(weights: Vec<Vec<f64>>, starts: Vec<usize>) -> Result<Self> {
        let g = Self { n: weights.len(), weights, starts };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n < 2 || self.weights.len() != n || self.weights.iter().any(|r| r.len() != n) {
            return Err(Error::Precondition(format!("weights must be an {n}x{n} matrix with n >= 2")));
        }
        for i in 0..n {
            if self.weights[i][i] != 0.0 {
                return Err(Error::Precondition(format!("weight ({i}, {i}) must be zero")));
            }
            for j in i + 1..n {
                let w = self.weights[i][j];
                if !(w.is_finite() && w > 0.0) || w != self.weights[j][i] {
                    return Err(Error::Precondition(format!("weight ({i}, {j}) must be positive and symmetric")));
                }
            }
        }
        if self.starts.is_empty() || self.starts.len() > 2 {
            return Err(Error::Precondition("one or two start nodes are required".into()));
        }
        if let Some(&s) = self.starts.iter().find(|&&s| s >= n) {
            return Err(Error::UnknownNode(s));
        }
        if self.starts.len() == 2 && self.starts[0] == self.starts[1] {
            return Err(Error::Precondition("the two UAVs must start on different nodes".into()));
        }
        Ok(())
    }

    /// Route-length graph over a world's nodes.
    pub fn from_world(world: &World, starts: Vec<usize>) -> Result<Self> {
        let weights = world.route_matrix(crate::world::GRID_RESOLUTION)?;
        Self::new(weights, starts)
    }

    /// Random points in a `10 x 6` m hall; weights are Euclidean distances.
    pub fn random<R: Rng + ?Sized>(n: usize, uavs: usize, rng: &mut R) -> Result<Self> {
        if n < uavs.max(2) {
            return Err(Error::Precondition(format!("{n} nodes cannot host {uavs} UAVs")));
        }
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..6.0)]).collect();
        let weights = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let (a, b) = if i < j { (pts[i], pts[j]) } else { (pts[j], pts[i]) };
                        if i == j { 0.0 } else { ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt().max(1e-3) }
                    })
                    .collect()
            })
            .collect();
        let first = rng.random_range(0..n);
        let mut starts = vec![first];
        if uavs == 2 {
            let second = (first + rng.random_range(1..n)) % n;
            starts.push(second);
        }
        Self::new(weights, starts)
    }

    pub fn mean_weight(&self) -> f64 {
        let n = self.n;
        let sum: f64 = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| self.weights[i][j]).sum();
        sum / (n * (n - 1) / 2) as f64
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, k: f64) -> Self {
        let weights = self.weights.iter().map(|r| r.iter().map(|w| w * k).collect()).collect();
        Self { n: self.n, weights, starts: self.starts.clone() }
    }
}

/// One UAV's view of the task graph.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskGraph {
    pub weights: Vec<Vec<f64>>,
    pub visited: Vec<bool>,
    pub self_node: usize,
    pub other_node: Option<usize>,
    /// Nodes excluded from selection (conflict masking).
    pub masked: Vec<bool>,
}

impl TaskGraph {
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// Rows of `[visited, self_here, other_here]`.
    pub fn node_features(&self) -> Vec<[f64; 3]> {
        (0..self.n())
            .map(|i| {
                [
                    f64::from(u8::from(self.visited[i])),
                    f64::from(u8::from(i == self.self_node)),
                    f64::from(u8::from(self.other_node == Some(i))),
                ]
            })
            .collect()
    }

    pub fn unvisited(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(|&i| !self.visited[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AllocOutcome {
    Running,
    Complete,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub moved: bool,
    pub outcome: AllocOutcome,
}

/// Episode state for one or two UAVs taking strictly alternating turns.
#[derive(Clone, Debug)]
pub struct AllocEpisode {
    pub fixture: GraphFixture,
    pub at: Vec<usize>,
    pub visited: Vec<bool>,
    pub distance: Vec<f64>,
    pub moves: usize,
    pub turn: usize,
    pub outcome: AllocOutcome,
    pub baseline: f64,
    mean_weight: f64,
}

impl AllocEpisode {
    pub fn new(fixture: &GraphFixture) -> Result<Self> {
        fixture.validate()?;
        let mut visited = vec![false; fixture.n];
        for &s in &fixture.starts {
            visited[s] = true;
        }
        let outcome = if visited.iter().all(|&v| v) { AllocOutcome::Complete } else { AllocOutcome::Running };
        Ok(Self {
            at: fixture.starts.clone(),
            distance: vec![0.0; fixture.starts.len()],
            visited,
            moves: 0,
            turn: 0,
            outcome,
            baseline: greedy_baseline(fixture)?,
            mean_weight: fixture.mean_weight(),
            fixture: fixture.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.fixture.n
    }

    pub fn uavs(&self) -> usize {
        self.at.len()
    }

    pub fn move_cap(&self) -> usize {
        4 * self.n()
    }

    pub fn total_distance(&self) -> f64 {
        self.distance.iter().sum()
    }

    pub fn is_done(&self) -> bool {
        self.outcome != AllocOutcome::Running
    }

    pub fn view(&self, uav: usize) -> TaskGraph {
        TaskGraph {
            weights: self.fixture.weights.clone(),
            visited: self.visited.clone(),
            self_node: self.at[uav],
            other_node: (self.uavs() == 2).then(|| self.at[1 - uav]),
            masked: vec![false; self.n()],
        }
    }

    /// Moves `uav` to `chosen` and scores the move.
    pub fn step(&mut self, uav: usize, chosen: usize) -> Result<StepResult> {
        if self.is_done() {
            return Err(Error::Precondition("episode already finished".into()));
        }
        if uav != self.turn {
            return Err(Error::Precondition(format!("it is UAV {}'s turn, not UAV {uav}'s", self.turn)));
        }
        if chosen >= self.n() {
            return Err(Error::UnknownNode(chosen));
        }
        let here = self.at[uav];
        let occupied = self.uavs() == 2 && self.at[1 - uav] == chosen;
        let mut reward;
        let moved = chosen != here;
        if !moved {
            reward = REVISIT_PENALTY;
        } else {
            let w = self.fixture.weights[here][chosen];
            self.distance[uav] += w;
            self.at[uav] = chosen;
            reward = -DISTANCE_SHAPING * w / self.mean_weight;
            if occupied || self.visited[chosen] {
                reward += REVISIT_PENALTY;
            } else {
                reward += VISIT_REWARD;
                self.visited[chosen] = true;
            }
        }
        self.moves += 1;
        self.turn = (self.turn + 1) % self.uavs();
        if self.visited.iter().all(|&v| v) {
            self.outcome = AllocOutcome::Complete;
            reward += COMPLETION_BONUS + efficiency_bonus(self.baseline, self.total_distance());
        } else if self.moves >= self.move_cap() {
            self.outcome = AllocOutcome::Timeout;
        }
        Ok(StepResult { reward, moved, outcome: self.outcome })
    }
}

/// `clip((baseline - actual) / baseline, -1, 1)`, zero for an empty baseline.
pub fn efficiency_bonus(baseline: f64, actual: f64) -> f64 {
    if baseline <= 0.0 {
        return 0.0;
    }
    ((baseline - actual) / baseline).clamp(-1.0, 1.0)
}

/// Lowest-id argmax over the unmasked entries.
pub fn argmax(p: &[f64], masked: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in p.iter().enumerate() {
        if masked.get(i).copied().unwrap_or(false) {
            continue;
        }
        if best.is_none_or(|b| v > p[b]) {
            best = Some(i);
        }
    }
    best
}

/// Anything that picks the next node from a UAV's view.
pub trait AllocPolicy {
    fn choose(&mut self, view: &TaskGraph) -> Result<usize>;
}

impl<F: FnMut(&TaskGraph) -> Result<usize>> AllocPolicy for F {
    fn choose(&mut self, view: &TaskGraph) -> Result<usize> {
        self(view)
    }
}

/// Nearest unvisited node, ties to the lowest id.
#[derive(Clone, Copy, Debug, Default)]
pub struct GreedyPolicy;

impl AllocPolicy for GreedyPolicy {
    fn choose(&mut self, view: &TaskGraph) -> Result<usize> {
        let row = &view.weights[view.self_node];
        view.unvisited()
            .filter(|&j| !view.masked[j])
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if row[b] <= row[j] => Some(b),
                _ => Some(j),
            })
            .ok_or_else(|| Error::Precondition("no unvisited node to choose".into()))
    }
}

/// Uniform choice among the eligible nodes; a seeded stress policy.
#[derive(Clone, Debug)]
pub struct RandomPolicy<R> {
    pub rng: R,
}

impl<R: Rng> AllocPolicy for RandomPolicy<R> {
    fn choose(&mut self, view: &TaskGraph) -> Result<usize> {
        let open: Vec<usize> = view.unvisited().filter(|&j| !view.masked[j]).collect();
        if open.is_empty() {
            return Err(Error::Precondition("no unvisited node to choose".into()));
        }
        Ok(open[self.rng.random_range(0..open.len())])
    }
}

/// Follows a precomputed plan. The UAV is recognised by its current node
/// (its start or a node of its own sequence); anything the plan does not
/// cover falls back to greedy.
#[derive(Clone, Debug)]
pub struct PlanPolicy {
    starts: Vec<usize>,
    sequences: Vec<Vec<usize>>,
}

impl PlanPolicy {
    pub fn new(plan: &Plan, starts: &[usize]) -> Self {
        Self { starts: starts.to_vec(), sequences: plan.sequences.clone() }
    }
}

impl AllocPolicy for PlanPolicy {
    fn choose(&mut self, view: &TaskGraph) -> Result<usize> {
        let here = view.self_node;
        let owner = (0..self.sequences.len())
            .find(|&u| self.starts.get(u) == Some(&here) || self.sequences[u].contains(&here));
        if let Some(u) = owner {
            if let Some(&k) = self.sequences[u].iter().find(|&&k| !view.visited[k] && !view.masked[k]) {
                return Ok(k);
            }
        }
        GreedyPolicy.choose(view)
    }
}

/// Result of running a policy to completion or timeout.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub outcome: AllocOutcome,
    pub moves: usize,
    pub distance: f64,
    pub reward: f64,
    pub choices: Vec<(usize, usize)>,
}

pub fn rollout<P: AllocPolicy + ?Sized>(fixture: &GraphFixture, policy: &mut P) -> Result<Rollout> {
    let mut ep = AllocEpisode::new(fixture)?;
    let mut reward = 0.0;
    let mut choices = Vec::new();
    while !ep.is_done() {
        let uav = ep.turn;
        let c = policy.choose(&ep.view(uav))?;
        choices.push((uav, c));
        reward += ep.step(uav, c)?.reward;
    }
    Ok(Rollout { outcome: ep.outcome, moves: ep.moves, distance: ep.total_distance(), reward, choices })
}
