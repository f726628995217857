//! Occupancy rasterization and grid routing with line-of-sight shortcutting.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Rect, World};
use crate::error::{Result, Error};

/// Boolean occupancy over the world bounds. Cell `(i, j)` covers
/// `[ox + i r, ox + (i+1) r] x [oy + j r, oy + (j+1) r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    /// Inflation used while rasterizing; routes keep this clearance.
    pub inflation: f64,
    cells: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Route {
    pub from: usize,
    pub to: usize,
    pub length: f64,
    pub waypoints: Vec<[f64; 2]>,
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    cell: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost, then on cell index for determinism.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl OccupancyGrid {
    /// Rasterizes every obstacle, inflated by `inflation` metres.
    pub fn rasterize(world: &World, resolution: f64, inflation: f64) -> Result<Self> {
        Self::rasterize_band(world, resolution, inflation, (0.0, f64::INFINITY))
    }

    /// Only obstacles whose prism reaches into `[band.0, band.1]` count.
    pub fn rasterize_band(
        world: &World,
        resolution: f64,
        inflation: f64,
        band: (f64, f64),
    ) -> Result<Self> {
        if !(resolution > 0.0) || !(inflation >= 0.0) {
            return Err(Error::Precondition(
                "resolution must be positive and inflation non-negative".into(),
            ));
        }
        let b = world.bounds;
        let width = (b.w / resolution - 1e-9).ceil().max(1.0) as usize;
        let height = (b.h / resolution - 1e-9).ceil().max(1.0) as usize;
        let relevant: Vec<Rect> = world
            .obstacles
            .iter()
            .filter(|o| o.height > band.0 && band.1 >= 0.0)
            .map(|o| o.footprint())
            .collect();
        let mut cells = vec![false; width * height];
        for j in 0..height {
            for i in 0..width {
                let cell = Rect::new(
                    b.x + i as f64 * resolution,
                    b.y + j as f64 * resolution,
                    resolution,
                    resolution,
                );
                let wall_gap = (cell.x - b.x)
                    .min(b.x1() - cell.x1())
                    .min(cell.y - b.y)
                    .min(b.y1() - cell.y1());
                let mut occ = wall_gap < inflation;
                for r in &relevant {
                    if occ {
                        break;
                    }
                    let overlap = cell.x < r.x1() && r.x < cell.x1() && cell.y < r.y1() && r.y < cell.y1();
                    occ = overlap || cell.distance_to_rect(r) < inflation;
                }
                cells[j * width + i] = occ;
            }
        }
        Ok(Self { resolution, origin: [b.x, b.y], width, height, inflation, cells })
    }

    pub fn occupied(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.width + i]
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let i = ((p[0] - self.origin[0]) / self.resolution).floor();
        let j = ((p[1] - self.origin[1]) / self.resolution).floor();
        (
            (i.max(0.0) as usize).min(self.width - 1),
            (j.max(0.0) as usize).min(self.height - 1),
        )
    }

    pub fn center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.resolution,
        ]
    }

    /// Raw 8-connected Dijkstra over free cells. Returns the grid cost and
    /// the visited cell sequence.
    pub fn grid_path(&self, from: (usize, usize), to: (usize, usize)) -> Option<(f64, Vec<(usize, usize)>)> {
        if self.occupied(from.0, from.1) || self.occupied(to.0, to.1) {
            return None;
        }
        let n = self.width * self.height;
        let start = from.1 * self.width + from.0;
        let goal = to.1 * self.width + to.0;
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[start] = 0.0;
        heap.push(Frontier { cost: 0.0, cell: start });
        let diag = std::f64::consts::SQRT_2 * self.resolution;
        while let Some(Frontier { cost, cell }) = heap.pop() {
            if cell == goal {
                break;
            }
            if cost > dist[cell] {
                continue;
            }
            let (ci, cj) = ((cell % self.width) as i64, (cell / self.width) as i64);
            for (di, dj) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
                let (ni, nj) = (ci + di, cj + dj);
                if ni < 0 || nj < 0 || ni >= self.width as i64 || nj >= self.height as i64 {
                    continue;
                }
                let (ni, nj) = (ni as usize, nj as usize);
                if self.occupied(ni, nj) {
                    continue;
                }
                let step = if di != 0 && dj != 0 { diag } else { self.resolution };
                let next = nj * self.width + ni;
                let c = cost + step;
                if c < dist[next] {
                    dist[next] = c;
                    prev[next] = cell;
                    heap.push(Frontier { cost: c, cell: next });
                }
            }
        }
        if !dist[goal].is_finite() {
            return None;
        }
        let mut path = vec![goal];
        let mut c = goal;
        while c != start {
            c = prev[c];
            path.push(c);
        }
        path.reverse();
        Some((dist[goal], path.into_iter().map(|c| (c % self.width, c / self.width)).collect()))
    }

    /// Obstacle-free route between two points. The grid search is always
    /// run in a canonical direction so that routes are symmetric.
    pub fn route_points(&self, world: &World, a: [f64; 2], b: [f64; 2]) -> Option<(f64, Vec<[f64; 2]>)> {
        let swap = (b[0], b[1]) < (a[0], a[1]);
        let (p, q) = if swap { (b, a) } else { (a, b) };
        let (_, cells) = self.grid_path(self.cell_of(p), self.cell_of(q))?;
        let mut chain = Vec::with_capacity(cells.len() + 2);
        chain.push(p);
        chain.extend(cells.iter().map(|&(i, j)| self.center(i, j)));
        chain.push(q);
        let mut pts = shortcut(world, &chain, self.inflation);
        let length = polyline_length(&pts);
        if swap {
            pts.reverse();
        }
        Some((length, pts))
    }

    pub fn route_between_nodes(&self, world: &World, a: usize, b: usize) -> Result<Route> {
        if a == b {
            return Err(Error::Precondition(format!("route endpoints coincide (node {a})")));
        }
        let pa = world.node(a)?.xy();
        let pb = world.node(b)?.xy();
        let (length, waypoints) = self
            .route_points(world, pa, pb)
            .ok_or(Error::Unreachable { from: a, to: b })?;
        Ok(Route { from: a, to: b, length, waypoints })
    }
}

pub fn polyline_length(pts: &[[f64; 2]]) -> f64 {
    pts.windows(2).map(|w| super::dist2(w[0], w[1])).sum()
}

/// Shortest subsequence of `chain` (keeping both ends) whose consecutive
/// points are mutually visible. Falls back to the raw neighbour when the
/// exact test disagrees with the grid on a boundary case.
fn shortcut(world: &World, chain: &[[f64; 2]], clearance: f64) -> Vec<[f64; 2]> {
    let n = chain.len();
    if n <= 2 {
        return chain.to_vec();
    }
    let mut best = vec![f64::INFINITY; n];
    let mut prev = vec![0usize; n];
    best[0] = 0.0;
    for j in 1..n {
        for i in 0..j {
            if !best[i].is_finite() {
                continue;
            }
            if i + 1 != j && !world.line_of_sight(chain[i], chain[j], clearance) {
                continue;
            }
            let c = best[i] + super::dist2(chain[i], chain[j]);
            if c < best[j] {
                best[j] = c;
                prev[j] = i;
            }
        }
    }
    let mut out = vec![chain[n - 1]];
    let mut k = n - 1;
    while k != 0 {
        k = prev[k];
        out.push(chain[k]);
    }
    out.reverse();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{NodePos, Obstacle, GRID_RESOLUTION};

    #[test]
    fn straight_line_in_empty_world() {
        let mut w = World::empty(10.0, 10.0);
        w.nodes = vec![
            NodePos { id: 0, x: 3.0, y: 5.0, z: 1.0 },
            NodePos { id: 1, x: 7.0, y: 5.0, z: 1.0 },
        ];
        let r = w.shortest_route(0, 1, GRID_RESOLUTION).unwrap();
        assert!((r.length - 4.0).abs() <= GRID_RESOLUTION);
        assert_eq!(r.waypoints.len(), 2);
    }

    #[test]
    fn same_node_is_a_precondition_error() {
        let mut w = World::empty(10.0, 10.0);
        w.nodes = vec![NodePos { id: 0, x: 3.0, y: 5.0, z: 1.0 }];
        assert!(matches!(w.shortest_route(0, 0, 0.1), Err(Error::Precondition(_))));
    }

    #[test]
    fn sealed_room_is_unreachable() {
        let mut w = World::empty(10.0, 4.0);
        w.obstacles.push(Obstacle { x: 5.0, y: 0.0, w: 0.2, h: 4.0, height: 2.0 });
        w.nodes = vec![
            NodePos { id: 0, x: 2.0, y: 2.0, z: 1.0 },
            NodePos { id: 1, x: 8.0, y: 2.0, z: 1.0 },
        ];
        assert!(matches!(w.shortest_route(0, 1, 0.1), Err(Error::Unreachable { .. })));
    }

    #[test]
    fn zero_inflation_marks_exactly_the_overlapped_cells() {
        let mut w = World::empty(2.0, 2.0);
        w.obstacles.push(Obstacle { x: 0.5, y: 0.5, w: 0.5, h: 0.25, height: 1.0 });
        let g = OccupancyGrid::rasterize(&w, 0.25, 0.0).unwrap();
        assert_eq!(g.occupied_count(), 2);
        assert!(g.occupied(2, 2) && g.occupied(3, 2));
    }
}
