//! Altitude correction without satellite positioning.
//!
//! SLAM z drifts, and downward depth only measures height above whatever
//! floor is below. The fuser compares IMU vertical velocity with the rate
//! implied by the depth readings; a disagreement means the floor itself
//! moved (a ledge or platform edge), and the unexplained depth jump is
//! folded into the level offset.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdomSample {
    pub t: f64,
    pub slam_z_raw: f64,
    /// Flight-controller vertical velocity, positive down (NED).
    pub imu_vz: f64,
    pub depth_fused: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AltitudeConfig {
    /// Mean IMU/depth velocity disagreement (m/s) that signals a level change.
    pub threshold: f64,
    /// Samples in the comparison window.
    pub window: usize,
    /// Level offsets are snapped to multiples of this (m).
    pub quantum: f64,
}

impl Default for AltitudeConfig {
    fn default() -> Self {
        Self { threshold: 0.3, window: 5, quantum: 0.05 }
    }
}

#[derive(Clone, Copy, Debug)]
struct Residual {
    dt: f64,
    /// `imu_vz - depth_vz` for one sample interval, both positive down.
    dv: f64,
}

#[derive(Clone, Debug)]
pub struct AltitudeFuser {
    pub cfg: AltitudeConfig,
    pub level_offset: f64,
    /// `slam_z_raw - corrected_z` at the last update.
    pub drift_estimate: f64,
    /// Detections that actually moved the offset.
    pub level_changes: usize,
    window: VecDeque<Residual>,
    last: Option<(f64, f64)>,
}

impl AltitudeFuser {
    /// Fuser whose take-off floor sits at `level_offset`.
    pub fn new(cfg: AltitudeConfig, level_offset: f64) -> Result<Self> {
        if !(cfg.threshold > 0.0 && cfg.window > 0 && cfg.quantum > 0.0) {
            return Err(Error::Precondition(format!("invalid altitude config {cfg:?}")));
        }
        Ok(Self {
            cfg,
            level_offset,
            drift_estimate: 0.0,
            level_changes: 0,
            window: VecDeque::with_capacity(cfg.window),
            last: None,
        })
    }

    /// Ingests one sample and returns the corrected global altitude.
    pub fn update(&mut self, s: &OdomSample) -> Result<f64> {
        if ![s.t, s.slam_z_raw, s.imu_vz, s.depth_fused].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("odometry sample"));
        }
        if let Some((t0, d0)) = self.last {
            if s.t <= t0 {
                return Err(Error::NonMonotonicTime { last: t0, got: s.t });
            }
            let dt = s.t - t0;
            let depth_vz = -(s.depth_fused - d0) / dt;
            if self.window.len() == self.cfg.window {
                self.window.pop_front();
            }
            self.window.push_back(Residual { dt, dv: s.imu_vz - depth_vz });
            // Backward difference over the whole window.
            let span: f64 = self.window.iter().map(|r| r.dt).sum();
            let unexplained: f64 = self.window.iter().map(|r| r.dv * r.dt).sum();
            if (unexplained / span).abs() > self.cfg.threshold {
                // `unexplained` is the depth change the IMU cannot account
                // for; the floor moved by the opposite amount.
                let offset = self.level_offset - unexplained;
                let snapped = (offset / self.cfg.quantum).round() * self.cfg.quantum;
                if snapped != self.level_offset {
                    self.level_offset = snapped;
                    self.level_changes += 1;
                }
                self.window.clear();
            }
        }
        self.last = Some((s.t, s.depth_fused));
        let z = self.level_offset + s.depth_fused;
        self.drift_estimate = s.slam_z_raw - z;
        Ok(z)
    }
}

/// A sample with its ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub t: f64,
    pub slam_z_raw: f64,
    pub imu_vz: f64,
    pub depth_fused: f64,
    pub true_z: f64,
    pub floor: f64,
}

impl ScenarioRow {
    pub fn sample(&self) -> OdomSample {
        OdomSample { t: self.t, slam_z_raw: self.slam_z_raw, imu_vz: self.imu_vz, depth_fused: self.depth_fused }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub duration: f64,
    pub rate: f64,
    /// Per-step standard deviation of the SLAM z random walk.
    pub drift_sigma: f64,
    /// Steady SLAM z creep (m/s); its sign is drawn per scenario.
    pub drift_rate: f64,
    pub depth_noise: f64,
    pub imu_noise: f64,
    pub platform_height: f64,
    pub climb_rate: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration: 120.0,
            rate: 20.0,
            drift_sigma: 0.02,
            drift_rate: 0.02,
            depth_noise: 0.005,
            imu_noise: 0.02,
            platform_height: 1.0,
            climb_rate: 0.3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Leg {
    Hold(f64),
    /// Move vertically to an altitude at the climb rate.
    Vertical(f64),
    /// Cruise, then switch the floor under the airframe.
    Cross(f64, f64),
}

/// Take off from the ground floor, cross onto the raised platform and land
/// there, take off again, cross back and land where the flight started.
pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Vec<ScenarioRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cruise = rng.random_range(1.6..2.0);
    let h = cfg.platform_height;
    let legs = [
        Leg::Hold(rng.random_range(1.0..3.0)),
        Leg::Vertical(cruise),
        Leg::Cross(rng.random_range(8.0..20.0), h),
        Leg::Hold(rng.random_range(2.0..6.0)),
        Leg::Vertical(h),
        Leg::Hold(rng.random_range(4.0..8.0)),
        Leg::Vertical(cruise),
        Leg::Cross(rng.random_range(8.0..20.0), 0.0),
        Leg::Hold(rng.random_range(2.0..6.0)),
        Leg::Vertical(0.0),
    ];
    let dt = 1.0 / cfg.rate;
    let steps = (cfg.duration * cfg.rate).round() as usize;
    let depth_noise = Normal::new(0.0, cfg.depth_noise).map_err(|e| Error::Precondition(e.to_string()))?;
    let imu_noise = Normal::new(0.0, cfg.imu_noise).map_err(|e| Error::Precondition(e.to_string()))?;
    let drift = Normal::new(0.0, cfg.drift_sigma).map_err(|e| Error::Precondition(e.to_string()))?;

    let creep = if rng.random::<bool>() { cfg.drift_rate } else { -cfg.drift_rate } * dt;
    let (mut z, mut floor, mut slam_bias) = (0.0f64, 0.0f64, 0.0f64);
    let mut leg = 0;
    let mut leg_t = 0.0;
    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        let t = k as f64 * dt;
        let mut vz = 0.0;
        if k > 0 {
            if let Some(&l) = legs.get(leg) {
                leg_t += dt;
                let advance = match l {
                    Leg::Hold(d) => leg_t >= d,
                    Leg::Vertical(target) => {
                        let step = (target - z).clamp(-cfg.climb_rate * dt, cfg.climb_rate * dt);
                        z += step;
                        vz = step / dt;
                        (target - z).abs() < 1e-9
                    }
                    Leg::Cross(d, new_floor) => {
                        if leg_t >= d {
                            floor = new_floor;
                            true
                        } else {
                            false
                        }
                    }
                };
                if advance {
                    leg += 1;
                    leg_t = 0.0;
                }
            }
            slam_bias += creep + drift.sample(&mut rng);
        }
        let depth = (z - floor).max(0.0) + depth_noise.sample(&mut rng);
        rows.push(ScenarioRow {
            t,
            slam_z_raw: z + slam_bias,
            imu_vz: -vz + imu_noise.sample(&mut rng),
            depth_fused: depth,
            true_z: z,
            floor,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AltitudeReport {
    pub samples: usize,
    pub raw_rmse: f64,
    pub corrected_rmse: f64,
    pub level_changes: usize,
    /// `|corrected - floor|` at every touchdown.
    pub touchdown_errors: Vec<f64>,
}

/// Per-sample output of [`run_scenario`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FusedRow {
    pub t: f64,
    pub true_z: f64,
    pub raw_z: f64,
    pub corrected_z: f64,
    pub level_offset: f64,
}

fn rmse(it: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for e in it {
        s += e * e;
        n += 1;
    }
    if n == 0 { 0.0 } else { (s / n as f64).sqrt() }
}

/// Runs a fuser over a scenario. A touchdown is the first sample resting on
/// the floor after a sample above it.
pub fn run_scenario(rows: &[ScenarioRow], cfg: AltitudeConfig) -> Result<(AltitudeReport, Vec<FusedRow>)> {
    let first = rows.first().ok_or_else(|| Error::Precondition("empty scenario".into()))?;
    let mut fuser = AltitudeFuser::new(cfg, first.floor)?;
    let mut out = Vec::with_capacity(rows.len());
    let mut touchdowns = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let z = fuser.update(&r.sample())?;
        let on_floor = (r.true_z - r.floor).abs() < 1e-9;
        if i > 0 && on_floor && rows[i - 1].true_z - rows[i - 1].floor > 1e-9 {
            touchdowns.push((z - r.floor).abs());
        }
        out.push(FusedRow { t: r.t, true_z: r.true_z, raw_z: r.slam_z_raw, corrected_z: z, level_offset: fuser.level_offset });
    }
    let report = AltitudeReport {
        samples: rows.len(),
        raw_rmse: rmse(out.iter().map(|o| o.raw_z - o.true_z)),
        corrected_rmse: rmse(out.iter().map(|o| o.corrected_z - o.true_z)),
        level_changes: fuser.level_changes,
        touchdown_errors: touchdowns,
    };
    Ok((report, out))
}

pub fn write_scenario(rows: &[ScenarioRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scenario(path: &Path) -> Result<Vec<ScenarioRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_fused(rows: &[FusedRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
