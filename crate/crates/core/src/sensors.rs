//! Simulated perception: a 72-sector planar lidar, a forward depth camera
//! and a downward depth camera reduced to five patch medians.
//!
//! Body-frame bearings are measured clockwise from forward (right is
//! positive); world headings are counter-clockwise from +x.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::world::{wrap_angle, Pose, World};

pub const LIDAR_SECTORS: usize = 72;
pub const SECTOR_WIDTH: f64 = std::f64::consts::PI / 36.0;
/// Returns are clamped here so that a range is always strictly positive.
pub const MIN_RANGE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorConfig {
    pub lidar_max_range: f64,
    pub depth_width: usize,
    pub depth_height: usize,
    pub depth_fov_h: f64,
    pub depth_fov_v: f64,
    pub depth_max_range: f64,
    pub down_size: usize,
    pub down_fov: f64,
    pub down_max_range: f64,
    pub patch: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            lidar_max_range: 8.0,
            depth_width: 32,
            depth_height: 32,
            depth_fov_h: 90f64.to_radians(),
            depth_fov_v: 60f64.to_radians(),
            depth_max_range: 10.0,
            down_size: 64,
            down_fov: 60f64.to_radians(),
            down_max_range: 10.0,
            patch: 11,
        }
    }
}

/// Seeded per-ray Gaussian range noise. `sigma == 0` leaves every reading
/// untouched and draws nothing from the generator.
#[derive(Clone, Debug)]
pub struct RangeNoise {
    sigma: f64,
    rng: ChaCha8Rng,
}

impl RangeNoise {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self { sigma: sigma.max(0.0), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn apply(&mut self, v: f64, max: f64) -> f64 {
        if self.sigma == 0.0 {
            return v;
        }
        let n = Normal::new(0.0, self.sigma).expect("sigma is finite");
        (v + n.sample(&mut self.rng)).clamp(MIN_RANGE, max)
    }
}

fn perturb(noise: &mut Option<&mut RangeNoise>, v: f64, max: f64) -> f64 {
    match noise {
        Some(n) => n.apply(v, max),
        None => v,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LidarScan {
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

impl LidarScan {
    /// Centre bearing of sector `s`, wrapped to `[-pi, pi]`.
    pub fn sector_bearing(s: usize) -> f64 {
        wrap_angle((s as f64 + 0.5) * SECTOR_WIDTH)
    }

    /// Closest return; ties go to the lowest sector index.
    pub fn min_sector(&self) -> (usize, f64) {
        let mut best = (0, self.ranges[0]);
        for (s, &r) in self.ranges.iter().enumerate().skip(1) {
            if r < best.1 {
                best = (s, r);
            }
        }
        best
    }

    /// `(distance, theta_obs)` of the closest return.
    pub fn nearest_obstacle(&self) -> (f64, f64) {
        let (s, r) = self.min_sector();
        (r, Self::sector_bearing(s))
    }
}

pub fn scan_lidar(
    world: &World,
    pose: &Pose,
    max_range: f64,
    mut noise: Option<&mut RangeNoise>,
) -> Result<LidarScan> {
    let mut ranges = Vec::with_capacity(LIDAR_SECTORS);
    for s in 0..LIDAR_SECTORS {
        let heading = pose.yaw - LidarScan::sector_bearing(s);
        let r = world.raycast(pose.position(), heading, max_range)?.max(MIN_RANGE);
        ranges.push(perturb(&mut noise, r, max_range));
    }
    Ok(LidarScan { ranges, max_range })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub fov_h: f64,
    pub fov_v: f64,
    pub max_range: f64,
    /// Row-major, row 0 at the top of the frame. Euclidean ray length.
    pub depths: Vec<f64>,
}

impl DepthImage {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.depths[row * self.width + col]
    }

    /// Camera-frame ray through the pixel centre as (forward, right, up),
    /// with unit forward component.
    pub fn pixel_ray(&self, row: usize, col: usize) -> [f64; 3] {
        pinhole(row, col, self.width, self.height, self.fov_h, self.fov_v)
    }
}

fn pinhole(row: usize, col: usize, w: usize, h: usize, fov_h: f64, fov_v: f64) -> [f64; 3] {
    let u = ((col as f64 + 0.5) / w as f64) * 2.0 - 1.0;
    let v = 1.0 - ((row as f64 + 0.5) / h as f64) * 2.0;
    [1.0, u * (fov_h / 2.0).tan(), v * (fov_v / 2.0).tan()]
}

fn body_axes(yaw: f64) -> ([f64; 2], [f64; 2]) {
    let fwd = [yaw.cos(), yaw.sin()];
    let right = [yaw.sin(), -yaw.cos()];
    (fwd, right)
}

pub fn depth_image(
    world: &World,
    pose: &Pose,
    cfg: &SensorConfig,
    mut noise: Option<&mut RangeNoise>,
) -> Result<DepthImage> {
    let (w, h) = (cfg.depth_width, cfg.depth_height);
    let (fwd, right) = body_axes(pose.yaw);
    let mut depths = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let [f, r, u] = pinhole(row, col, w, h, cfg.depth_fov_h, cfg.depth_fov_v);
            let d = [f * fwd[0] + r * right[0], f * fwd[1] + r * right[1], u];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let dir = [d[0] / norm, d[1] / norm, d[2] / norm];
            let range = world.raycast3(pose.position(), dir, cfg.depth_max_range)?.max(MIN_RANGE);
            depths.push(perturb(&mut noise, range, cfg.depth_max_range));
        }
    }
    Ok(DepthImage {
        width: w,
        height: h,
        fov_h: cfg.depth_fov_h,
        fov_v: cfg.depth_fov_v,
        max_range: cfg.depth_max_range,
        depths,
    })
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DownwardDepth {
    /// Centre, then the quadrant centres (front-left, front-right,
    /// back-left, back-right).
    pub patches: [f64; 5],
    pub fused: f64,
}

impl DownwardDepth {
    pub fn from_patches(patches: [f64; 5]) -> Self {
        Self { patches, fused: median(&patches) }
    }
}

/// Vertical distance to whatever lies below each pixel, reduced to five
/// patch medians and their median.
pub fn downward_depth(
    world: &World,
    pose: &Pose,
    cfg: &SensorConfig,
    mut noise: Option<&mut RangeNoise>,
) -> Result<DownwardDepth> {
    let n = cfg.down_size;
    if cfg.patch % 2 == 0 || cfg.patch > n / 2 {
        return Err(crate::Error::Precondition(format!(
            "patch must be odd and fit in a quadrant (got {} for a {n}px image)",
            cfg.patch
        )));
    }
    let (fwd, right) = body_axes(pose.yaw);
    let half = cfg.patch / 2;
    let t = (cfg.down_fov / 2.0).tan();
    let centres = [(n / 2, n / 2), (n / 4, n / 4), (n / 4, 3 * n / 4), (3 * n / 4, n / 4), (3 * n / 4, 3 * n / 4)];
    let mut patches = [0.0; 5];
    let mut buf = Vec::with_capacity(cfg.patch * cfg.patch);
    for (k, &(cr, cc)) in centres.iter().enumerate() {
        buf.clear();
        for row in cr - half..=cr + half {
            for col in cc - half..=cc + half {
                let u = (((col as f64 + 0.5) / n as f64) * 2.0 - 1.0) * t;
                let v = (1.0 - ((row as f64 + 0.5) / n as f64) * 2.0) * t;
                let d = [u * right[0] + v * fwd[0], u * right[1] + v * fwd[1], -1.0];
                let norm = (d[0] * d[0] + d[1] * d[1] + 1.0).sqrt();
                let dir = [d[0] / norm, d[1] / norm, -1.0 / norm];
                let range = world.raycast3(pose.position(), dir, cfg.down_max_range * norm)?;
                let z = (range / norm).clamp(MIN_RANGE, cfg.down_max_range);
                buf.push(perturb(&mut noise, z, cfg.down_max_range));
            }
        }
        patches[k] = median(&buf);
    }
    Ok(DownwardDepth::from_patches(patches))
}
