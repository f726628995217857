//! Hand-evaluated APF actions. Expected values are written from exact
//! trigonometric identities, never from the implementation's formulas.
#![allow(dead_code)]

use std::f64::consts::PI;

use swarm_sar::apf::ApfInput;

pub struct Case {
    pub name: &'static str,
    pub input: ApfInput,
    /// (x_vel, z_vel, yaw_rate)
    pub expect: (f64, f64, f64),
}

fn input(theta: f64, dz: f64, distance: f64, theta_obs: f64) -> ApfInput {
    ApfInput { theta, target_z: 1.5 + dz, uav_z: 1.5, obstacle_distance: distance, theta_obs }
}

pub fn cases() -> Vec<Case> {
    let r2 = 2f64.sqrt();
    let r3 = 3f64.sqrt();
    let r6 = 6f64.sqrt();
    let c = |name, theta, dz, d, obs, expect| Case { name, input: input(theta, dz, d, obs), expect };
    vec![
        // attractive regime
        c("facing target", 0.0, 0.0, 5.0, 0.0, (1.0, 0.0, 0.0)),
        c("30 deg right, climb 0.3", PI / 6.0, 0.3, 5.0, 0.0, (r3 / 2.0, 0.6, 0.5)),
        c("30 deg right, sink 0.1", PI / 6.0, -0.1, 5.0, 0.0, (r3 / 2.0, -0.2, 0.5)),
        c("abeam right", PI / 2.0, 0.0, 5.0, 0.0, (0.0, 0.0, 1.0)),
        c("abeam left", -PI / 2.0, 0.0, 5.0, 0.0, (0.0, 0.0, -1.0)),
        c("60 deg right, sink 0.25", PI / 3.0, -0.25, 3.0, 0.0, (0.5, -0.5, 1.0)),
        c("60 deg left, climb 0.5", -PI / 3.0, 0.5, 3.0, 0.0, (0.5, 1.0, -1.0)),
        c("45 deg right, climb clipped", PI / 4.0, 0.75, 2.0, 0.0, (r2 / 2.0, 1.0, 0.75)),
        c("15 deg left, sink clipped", -PI / 12.0, -1.0, 2.0, 0.0, ((r6 + r2) / 4.0, -1.0, -0.25)),
        c("target behind", PI, 0.0, 2.0, 0.0, (0.0, 0.0, 1.0)),
        c("target behind, wrapped left", -PI, 0.0, 2.0, 0.0, (0.0, 0.0, -1.0)),
        c("120 deg right", 2.0 * PI / 3.0, 0.0, 2.0, 0.0, (0.0, 0.0, 1.0)),
        c("just outside threshold", PI / 6.0, 0.0, 1.0 + 1e-9, 0.0, (r3 / 2.0, 0.0, 0.5)),
        // repulsive regime
        c("obstacle abeam left", 0.0, 0.0, 0.8, -PI / 2.0, (0.0, 0.0, 0.0)),
        c("obstacle 45 deg left", 0.0, 0.0, 0.8, -PI / 4.0, (-r2 / 4.0, 0.0, 0.25)),
        c("obstacle 45 deg right", 0.0, 0.0, 0.8, PI / 4.0, (-r2 / 4.0, 0.0, -0.25)),
        c("obstacle dead ahead", 0.0, 0.0, 0.8, 0.0, (-0.5, 0.0, 0.5)),
        c("obstacle abeam right", 0.0, 0.0, 0.8, PI / 2.0, (0.0, 0.0, 0.0)),
        c("obstacle 30 deg left", 1.0, 0.0, 0.5, -PI / 6.0, (-r3 / 4.0, 0.0, 1.0 / 3.0)),
        c("obstacle 60 deg right", -1.0, 0.0, 0.5, PI / 3.0, (-0.25, 0.0, -1.0 / 6.0)),
        c("obstacle behind right", 0.0, 0.0, 0.5, 3.0 * PI / 4.0, (r2 / 4.0, 0.0, 0.0)),
        c("obstacle behind left", 0.0, 0.0, 0.5, -5.0 * PI / 6.0, (r3 / 4.0, 0.0, 0.0)),
        c("obstacle straight behind", 0.0, 0.0, 0.5, PI, (0.5, 0.0, 0.0)),
        c("exactly at threshold", 0.0, 0.0, 1.0, -PI / 3.0, (-0.25, 0.0, 1.0 / 6.0)),
        c("close obstacle while climbing", 0.0, 0.4, 0.2, PI / 6.0, (-r3 / 4.0, 0.8, -1.0 / 3.0)),
        c("close obstacle while sinking hard", 0.0, -2.0, 0.3, -PI / 4.0, (-r2 / 4.0, -1.0, 0.25)),
    ]
}
