//! Greedy heuristic and exhaustive optimum for the allocation problem.

use super::GraphFixture;
use crate::error::{Error, Result};

/// Largest graph the exhaustive search accepts.
pub const ORACLE_MAX_NODES: usize = 10;

/// Visit sequences (excluding start nodes) and their cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    /// Summed distance, or the larger route length for makespan plans.
    pub cost: f64,
    pub lengths: Vec<f64>,
    pub sequences: Vec<Vec<usize>>,
}

/// Greedy plan: UAVs alternate, each taking its shortest edge to any
/// unvisited node (ties to the lowest id) until every node is visited.
pub fn greedy_plan(g: &GraphFixture) -> Result<Plan> {
    g.validate()?;
    let mut visited = vec![false; g.n];
    let mut at = g.starts.clone();
    for &s in &at {
        visited[s] = true;
    }
    let mut lengths = vec![0.0; at.len()];
    let mut sequences = vec![Vec::new(); at.len()];
    let mut turn = 0;
    while let Some(next) = nearest_unvisited(&g.weights[at[turn]], &visited) {
        lengths[turn] += g.weights[at[turn]][next];
        visited[next] = true;
        at[turn] = next;
        sequences[turn].push(next);
        turn = (turn + 1) % at.len();
    }
    Ok(Plan { cost: lengths.iter().sum(), lengths, sequences })
}

pub fn greedy_baseline(g: &GraphFixture) -> Result<f64> {
    Ok(greedy_plan(g)?.cost)
}

fn nearest_unvisited(row: &[f64], visited: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &w) in row.iter().enumerate() {
        if !visited[j] && best.is_none_or(|b| w < row[b]) {
            best = Some(j);
        }
    }
    best
}

/// Cheapest open path from `start` through every subset of `targets`.
struct PathTable {
    /// `cost[mask]`, best over end nodes.
    cost: Vec<f64>,
    dp: Vec<f64>,
    parent: Vec<usize>,
    m: usize,
}

const NONE: usize = usize::MAX;

impl PathTable {
    fn new(w: &[Vec<f64>], start: usize, targets: &[usize]) -> Self {
        let m = targets.len();
        let full = 1usize << m;
        let mut dp = vec![f64::INFINITY; full * m.max(1)];
        let mut parent = vec![NONE; full * m.max(1)];
        for k in 0..m {
            dp[(1 << k) * m + k] = w[start][targets[k]];
        }
        for mask in 1..full {
            for k in 0..m {
                let cur = dp[mask * m + k];
                if mask & (1 << k) == 0 || !cur.is_finite() {
                    continue;
                }
                for j in 0..m {
                    if mask & (1 << j) != 0 {
                        continue;
                    }
                    let next = mask | (1 << j);
                    let c = cur + w[targets[k]][targets[j]];
                    if c < dp[next * m + j] {
                        dp[next * m + j] = c;
                        parent[next * m + j] = k;
                    }
                }
            }
        }
        let cost = (0..full)
            .map(|mask| if mask == 0 { 0.0 } else { (0..m).map(|k| dp[mask * m + k]).fold(f64::INFINITY, f64::min) })
            .collect();
        Self { cost, dp, parent, m }
    }

    fn sequence(&self, mut mask: usize, targets: &[usize]) -> Vec<usize> {
        let m = self.m;
        if mask == 0 {
            return Vec::new();
        }
        let mut k = (0..m)
            .filter(|&k| mask & (1 << k) != 0)
            .fold(NONE, |b, k| if b == NONE || self.dp[mask * m + k] < self.dp[mask * m + b] { k } else { b });
        let mut seq = Vec::new();
        while k != NONE {
            seq.push(targets[k]);
            let p = self.parent[mask * m + k];
            mask &= !(1 << k);
            k = p;
        }
        seq.reverse();
        seq
    }
}

fn exhaustive(g: &GraphFixture, makespan: bool) -> Result<Plan> {
    g.validate()?;
    if g.n > ORACLE_MAX_NODES {
        return Err(Error::TooLarge { n: g.n, max: ORACLE_MAX_NODES });
    }
    let targets: Vec<usize> = (0..g.n).filter(|i| !g.starts.contains(i)).collect();
    let tables: Vec<PathTable> = g.starts.iter().map(|&s| PathTable::new(&g.weights, s, &targets)).collect();
    let full = (1usize << targets.len()) - 1;
    if tables.len() == 1 {
        let c = tables[0].cost[full];
        return Ok(Plan { cost: c, lengths: vec![c], sequences: vec![tables[0].sequence(full, &targets)] });
    }
    let mut best = (f64::INFINITY, 0);
    for mask in 0..=full {
        let (a, b) = (tables[0].cost[mask], tables[1].cost[full ^ mask]);
        let c = if makespan { a.max(b) } else { a + b };
        if c < best.0 {
            best = (c, mask);
        }
    }
    let mask = best.1;
    Ok(Plan {
        cost: best.0,
        lengths: vec![tables[0].cost[mask], tables[1].cost[full ^ mask]],
        sequences: vec![tables[0].sequence(mask, &targets), tables[1].sequence(full ^ mask, &targets)],
    })
}

/// Exact minimum summed distance over every split of the unvisited nodes
/// between the UAVs and every visit order. Refuses graphs above
/// [`ORACLE_MAX_NODES`].
pub fn optimal_oracle(g: &GraphFixture) -> Result<Plan> {
    exhaustive(g, false)
}

/// Exact minimum over splits and orders of the longer UAV route.
pub fn optimal_makespan(g: &GraphFixture) -> Result<Plan> {
    exhaustive(g, true)
}
