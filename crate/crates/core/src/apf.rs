//! Action-level artificial potential field: the optimal action used both
//! as the guidance reward oracle and as a classical baseline controller.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::sensors::LidarScan;

/// Obstacles closer than this (inclusive) switch the field to repulsion.
pub const REPULSE_DISTANCE: f64 = 1.0;

/// Normalised guidance command. Yaw rate is clockwise-positive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub x_vel: f64,
    pub z_vel: f64,
    pub yaw_rate: f64,
}

impl Action {
    pub const HOVER: Action = Action { x_vel: 0.0, z_vel: 0.0, yaw_rate: 0.0 };

    pub fn new(x_vel: f64, z_vel: f64, yaw_rate: f64) -> Self {
        Self { x_vel, z_vel, yaw_rate }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x_vel, self.z_vel, self.yaw_rate]
    }

    pub fn clipped(self) -> Self {
        Self::from_array(self.to_array().map(|v| v.clamp(-1.0, 1.0)))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn in_range(&self) -> bool {
        self.to_array().iter().all(|v| (-1.0..=1.0).contains(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApfInput {
    /// Bearing of the target relative to body-forward, clockwise-positive.
    pub theta: f64,
    pub target_z: f64,
    pub uav_z: f64,
    pub obstacle_distance: f64,
    /// Bearing of the closest lidar return, clockwise-positive.
    pub theta_obs: f64,
}

impl ApfInput {
    pub fn from_scan(theta: f64, target_z: f64, uav_z: f64, scan: &LidarScan) -> Self {
        let (obstacle_distance, theta_obs) = scan.nearest_obstacle();
        Self { theta, target_z, uav_z, obstacle_distance, theta_obs }
    }
}

fn climb(input: &ApfInput) -> f64 {
    (2.0 * (input.target_z - input.uav_z)).clamp(-1.0, 1.0)
}

pub fn attractive_action(input: &ApfInput) -> Action {
    Action {
        x_vel: input.theta.cos().clamp(0.0, 1.0),
        z_vel: climb(input),
        yaw_rate: (input.theta * 3.0 / PI).clamp(-1.0, 1.0),
    }
}

/// Yaw rate that turns away from an obstacle at bearing `theta_obs`.
/// Directly ahead resolves to a right turn; obstacles behind or exactly
/// abeam need no turn.
pub fn repulsive_yaw(theta_obs: f64) -> f64 {
    if theta_obs.abs() >= FRAC_PI_2 {
        0.0
    } else if theta_obs <= 0.0 {
        0.5 + theta_obs / PI
    } else {
        -0.5 + theta_obs / PI
    }
}

pub fn repulsive_action(input: &ApfInput) -> Action {
    Action {
        x_vel: -0.5 * input.theta_obs.cos(),
        z_vel: climb(input),
        yaw_rate: repulsive_yaw(input.theta_obs),
    }
}

pub fn optimal_action(input: &ApfInput) -> Action {
    optimal_action_with_threshold(input, REPULSE_DISTANCE)
}

pub fn optimal_action_with_threshold(input: &ApfInput, threshold: f64) -> Action {
    if input.obstacle_distance > threshold {
        attractive_action(input)
    } else {
        repulsive_action(input)
    }
}
