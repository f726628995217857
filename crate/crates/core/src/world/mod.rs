//! Indoor arena model: bounds, prism obstacles, raised floor levels, task
//! nodes, ray casting and grid route planning.

mod geometry;
mod route;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use geometry::{dist2, point_segment_distance, ray_box, wrap_angle, Rect};
pub use route::{OccupancyGrid, Route};

use crate::error::{Result, Error};

/// Collision radius of the airframe (13-inch props).
pub const UAV_RADIUS: f64 = 0.35;
/// Default planning grid resolution.
pub const GRID_RESOLUTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub height: f64,
}

impl Obstacle {
    pub fn footprint(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }

    /// A wall of the given thickness centred on the segment `a`-`b`.
    /// Only axis-aligned segments are representable.
    pub fn wall(a: [f64; 2], b: [f64; 2], thickness: f64, height: f64) -> Result<Self> {
        let half = thickness / 2.0;
        if a[1] == b[1] {
            let x = a[0].min(b[0]);
            Ok(Self { x, y: a[1] - half, w: (a[0] - b[0]).abs(), h: thickness, height })
        } else if a[0] == b[0] {
            let y = a[1].min(b[1]);
            Ok(Self { x: a[0] - half, y, w: thickness, h: (a[1] - b[1]).abs(), height })
        } else {
            Err(Error::InvalidWorld("walls must be axis-aligned".into()))
        }
    }
}

/// Raised floor region; `z` is the height of its top surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub z: f64,
}

impl Level {
    pub fn region(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodePos {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl NodePos {
    pub fn xy(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Counter-clockwise from +x, radians.
    #[serde(default)]
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self { x, y, z, yaw }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    /// Free-form provenance note carried by bundled maps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub bounds: Rect,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub levels: Vec<Level>,
    #[serde(default)]
    pub nodes: Vec<NodePos>,
    #[serde(default)]
    pub spawns: Vec<Pose>,
}

const ARENA_JSON: &str = include_str!("../../assets/arena.json");
const DESK_JSON: &str = include_str!("../../assets/desk.json");

impl World {
    /// Builds and validates a world.
    pub fn new(
        bounds: Rect,
        obstacles: Vec<Obstacle>,
        levels: Vec<Level>,
        nodes: Vec<NodePos>,
        spawns: Vec<Pose>,
    ) -> Result<Self> {
        let w = Self { note: None, bounds, obstacles, levels, nodes, spawns };
        w.validate()?;
        Ok(w)
    }

    /// Empty rectangular room with the minimum corner at the origin.
    pub fn empty(width: f64, depth: f64) -> Self {
        Self {
            note: None,
            bounds: Rect::new(0.0, 0.0, width, depth),
            obstacles: Vec::new(),
            levels: Vec::new(),
            nodes: Vec::new(),
            spawns: Vec::new(),
        }
    }

    /// Reference competition arena (best-effort reconstruction).
    pub fn arena() -> Self {
        Self::from_json(ARENA_JSON).expect("bundled arena is valid")
    }

    /// Reduced 8 x 6 m training world with two obstacles.
    pub fn desk() -> Self {
        Self::from_json(DESK_JSON).expect("bundled desk world is valid")
    }

    /// Resolves `arena`, `desk` or a path to a world file.
    pub fn resolve(name: &str) -> Result<Self> {
        match name {
            "arena" => Ok(Self::arena()),
            "desk" => Ok(Self::desk()),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let w: World =
            serde_json::from_str(s).map_err(|e| Error::InvalidWorld(e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidWorld(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        let finite = [b.x, b.y, b.w, b.h].iter().all(|v| v.is_finite());
        if !finite || b.w <= 0.0 || b.h <= 0.0 {
            return Err(Error::InvalidWorld("bounds must have positive area".into()));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.w > 0.0 && o.h > 0.0 && o.height > 0.0) {
                return Err(Error::InvalidWorld(format!(
                    "obstacle {i} needs positive area and height"
                )));
            }
            if !b.contains_rect(&o.footprint()) {
                return Err(Error::InvalidWorld(format!("obstacle {i} leaves the bounds")));
            }
        }
        for (i, l) in self.levels.iter().enumerate() {
            if !(l.z >= 0.0) || !(l.w > 0.0 && l.h > 0.0) {
                return Err(Error::InvalidWorld(format!("level {i} is degenerate")));
            }
            if !b.contains_rect(&l.region()) {
                return Err(Error::InvalidWorld(format!("level {i} leaves the bounds")));
            }
        }
        for (k, n) in self.nodes.iter().enumerate() {
            if n.id != k {
                return Err(Error::InvalidWorld(format!(
                    "node ids must be contiguous from 0 (position {k} has id {})",
                    n.id
                )));
            }
            if !b.contains(n.xy()) || !(n.z >= 0.0) {
                return Err(Error::InvalidWorld(format!("node {k} lies outside the bounds")));
            }
        }
        for (k, s) in self.spawns.iter().enumerate() {
            if !b.contains([s.x, s.y]) || !s.yaw.is_finite() {
                return Err(Error::InvalidWorld(format!("spawn {k} lies outside the bounds")));
            }
        }
        Ok(())
    }

    pub fn node(&self, id: usize) -> Result<&NodePos> {
        self.nodes.get(id).ok_or(Error::UnknownNode(id))
    }

    /// Height of the floor surface below `p` (0 outside every level).
    pub fn floor_height(&self, p: [f64; 2]) -> f64 {
        self.levels
            .iter()
            .filter(|l| l.region().contains(p))
            .map(|l| l.z)
            .fold(0.0, f64::max)
    }

    /// Distance along a horizontal ray at the origin's altitude.
    /// `bearing` is a world-frame angle, counter-clockwise from +x.
    pub fn raycast(&self, origin: [f64; 3], bearing: f64, max_range: f64) -> Result<f64> {
        self.raycast3(origin, [bearing.cos(), bearing.sin(), 0.0], max_range)
    }

    /// Distance to the first surface along a unit 3-D direction. Bounds act
    /// as infinitely tall walls, the floor is the plane z = 0, obstacles and
    /// levels are solid prisms standing on the floor.
    pub fn raycast3(&self, origin: [f64; 3], dir: [f64; 3], max_range: f64) -> Result<f64> {
        if !(max_range > 0.0) {
            return Err(Error::Precondition("max_range must be positive".into()));
        }
        if !self.bounds.contains([origin[0], origin[1]]) || !origin.iter().all(|v| v.is_finite())
        {
            return Err(Error::OutOfBounds { x: origin[0], y: origin[1] });
        }
        let mut best = max_range;
        let b = &self.bounds;
        // Exit through the bounding walls.
        for (k, lo, hi) in [(0, b.x, b.x1()), (1, b.y, b.y1())] {
            if dir[k] > 0.0 {
                best = best.min((hi - origin[k]) / dir[k]);
            } else if dir[k] < 0.0 {
                best = best.min((lo - origin[k]) / dir[k]);
            }
        }
        if dir[2] < 0.0 {
            best = best.min(-origin[2] / dir[2]);
        }
        let prisms = self
            .obstacles
            .iter()
            .map(|o| (o.footprint(), o.height))
            .chain(self.levels.iter().map(|l| (l.region(), l.z)));
        for (r, top) in prisms {
            if let Some(t) = ray_box(origin, dir, [r.x, r.y, 0.0], [r.x1(), r.y1(), top]) {
                best = best.min(t);
            }
        }
        Ok(best.max(0.0))
    }

    /// Smallest horizontal distance from `p` to an obstacle that reaches
    /// altitude `z`, or to the bounding walls.
    pub fn clearance(&self, p: [f64; 2], z: f64) -> f64 {
        let b = &self.bounds;
        let mut d = b.interior_clearance(p);
        for o in &self.obstacles {
            if z <= o.height {
                d = d.min(o.footprint().distance_to_point(p));
            }
        }
        d
    }

    /// Whether a disc of radius `clearance` can sweep the segment `a`-`b`
    /// without touching an obstacle or the bounding walls.
    pub fn line_of_sight(&self, a: [f64; 2], b: [f64; 2], clearance: f64) -> bool {
        let inner = Rect::new(
            self.bounds.x + clearance,
            self.bounds.y + clearance,
            self.bounds.w - 2.0 * clearance,
            self.bounds.h - 2.0 * clearance,
        );
        if !inner.contains(a) || !inner.contains(b) {
            return false;
        }
        self.obstacles
            .iter()
            .all(|o| o.footprint().distance_to_segment(a, b) > clearance)
    }

    /// Shortest obstacle-free route between two nodes on the default grid.
    pub fn shortest_route(&self, a: usize, b: usize, resolution: f64) -> Result<Route> {
        let grid = OccupancyGrid::rasterize(self, resolution, UAV_RADIUS)?;
        grid.route_between_nodes(self, a, b)
    }

    /// All pairwise route lengths between nodes (symmetric, zero diagonal).
    pub fn route_matrix(&self, resolution: f64) -> Result<Vec<Vec<f64>>> {
        let grid = OccupancyGrid::rasterize(self, resolution, UAV_RADIUS)?;
        let n = self.nodes.len();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let r = grid.route_between_nodes(self, i, j)?;
                m[i][j] = r.length;
                m[j][i] = r.length;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room_with_wall_at_x5() -> World {
        World::new(
            Rect::new(0.0, 0.0, 10.0, 10.0),
            vec![Obstacle { x: 5.0, y: 0.0, w: 0.2, h: 10.0, height: 3.0 }],
            vec![],
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn empty_world_clamps_to_max_range() {
        let w = World::empty(10.0, 10.0);
        for k in 0..16 {
            let d = w.raycast([5.0, 5.0, 1.0], k as f64 * 0.4, 3.0).unwrap();
            assert_eq!(d, 3.0);
        }
    }

    #[test]
    fn wall_dead_ahead_and_tilted() {
        let w = room_with_wall_at_x5();
        assert!((w.raycast([3.0, 5.0, 1.0], 0.0, 10.0).unwrap() - 2.0).abs() < 1e-12);
        let tilted = w.raycast([3.0, 5.0, 1.0], std::f64::consts::FRAC_PI_4, 10.0).unwrap();
        assert!((tilted - 2.0 / std::f64::consts::FRAC_PI_4.cos()).abs() < 1e-12);
    }

    #[test]
    fn low_obstacle_is_below_the_beam() {
        let w = World::new(
            Rect::new(0.0, 0.0, 10.0, 10.0),
            vec![Obstacle { x: 5.0, y: 4.0, w: 1.0, h: 2.0, height: 0.5 }],
            vec![],
            vec![],
            vec![],
        )
        .unwrap();
        assert_eq!(w.raycast([3.0, 5.0, 1.0], 0.0, 4.0).unwrap(), 4.0);
        assert!((w.raycast([3.0, 5.0, 0.3], 0.0, 4.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn origin_outside_bounds_is_rejected() {
        let w = World::empty(10.0, 10.0);
        assert!(matches!(w.raycast([11.0, 5.0, 1.0], 0.0, 3.0), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn bundled_worlds_validate() {
        let a = World::arena();
        assert_eq!(a.nodes.len(), 10);
        assert_eq!((a.bounds.w, a.bounds.h), (10.8, 6.0));
        assert!(a.note.is_some());
        let d = World::desk();
        assert_eq!((d.bounds.w, d.bounds.h), (8.0, 6.0));
        assert_eq!(d.obstacles.len(), 2);
    }

    #[test]
    fn world_json_round_trip() {
        let a = World::arena();
        assert_eq!(World::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn invalid_worlds_are_rejected() {
        let bad_ids = r#"{"bounds":{"x":0,"y":0,"w":5,"h":5},"nodes":[{"id":1,"x":1,"y":1,"z":1}]}"#;
        assert!(World::from_json(bad_ids).is_err());
        let outside = r#"{"bounds":{"x":0,"y":0,"w":5,"h":5},"obstacles":[{"x":4,"y":4,"w":2,"h":1,"height":1}]}"#;
        assert!(World::from_json(outside).is_err());
        let neg = r#"{"bounds":{"x":0,"y":0,"w":5,"h":5},"levels":[{"x":1,"y":1,"w":1,"h":1,"z":-1}]}"#;
        assert!(World::from_json(neg).is_err());
        assert!(World::from_json(r#"{"bounds":{"x":0,"y":0,"w":5,"h":5},"extra":1}"#).is_err());
    }

    #[test]
    fn floor_height_reads_levels() {
        let a = World::arena();
        let l = a.levels[0];
        assert_eq!(a.floor_height([l.x + l.w / 2.0, l.y + l.h / 2.0]), l.z);
        assert_eq!(a.floor_height([0.5, 0.5]), 0.0);
    }
}
