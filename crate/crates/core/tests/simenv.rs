use proptest::prelude::*;
use swarm_sar::apf::Action;
use swarm_sar::sensors::{LidarScan, LIDAR_SECTORS};
use swarm_sar::simenv::{
    emergency_override, integrate, reward_fn, run_episode, ApfPolicy, Command, Dynamics,
    EnvConfig, GuidanceEnv, GuidanceObservation, Outcome, UavState,
};
use swarm_sar::world::{Obstacle, Pose, World};

fn open_room() -> World {
    World::empty(20.0, 20.0)
}

#[test]
fn hover_in_open_space_stays_put() {
    let w = open_room();
    let mut env = GuidanceEnv::new(&w, EnvConfig::default());
    env.reset(Pose::new(10.0, 10.0, 1.2, 0.3), [15.0, 10.0, 1.2]).unwrap();
    for _ in 0..20 {
        let r = env.step(Action::HOVER).unwrap();
        assert_eq!(r.outcome, Outcome::Running);
        assert!(!r.done);
    }
    assert_eq!(env.state().position, [10.0, 10.0, 1.2]);
}

#[test]
fn stepping_onto_the_goal_pays_two() {
    let w = open_room();
    let mut env = GuidanceEnv::new(&w, EnvConfig::default());
    env.reset(Pose::new(10.0, 10.0, 1.2, 0.0), [10.1, 10.0, 1.2]).unwrap();
    let r = env.step(Action::HOVER).unwrap();
    assert_eq!(r.outcome, Outcome::Goal);
    assert_eq!(r.reward, 2.0);
    assert!(r.done);
}

#[test]
fn flying_into_a_wall_costs_two() {
    let mut w = open_room();
    w.obstacles.push(Obstacle { x: 12.0, y: 5.0, w: 0.2, h: 10.0, height: 3.0 });
    let cfg = EnvConfig { max_steps: 1000, ..Default::default() };
    let mut policy = |_: &GuidanceObservation| Action::new(1.0, 0.0, 0.0);
    let log = run_episode(&mut policy, &w, Pose::new(10.0, 10.0, 1.2, 0.0), &[[18.0, 10.0, 1.2]], &cfg).unwrap();
    assert_eq!(log.outcome, Outcome::Collision);
    assert_eq!(log.rows.last().unwrap().reward, -2.0);
    assert!(log.rows.last().unwrap().x < 12.0);
}

#[test]
fn apf_reaches_a_goal_four_metres_ahead() {
    let w = open_room();
    let cfg = EnvConfig::default();
    let log = run_episode(&mut ApfPolicy, &w, Pose::new(8.0, 10.0, 1.2, 0.0), &[[12.0, 10.0, 1.2]], &cfg).unwrap();
    assert_eq!(log.outcome, Outcome::Goal);
    assert!(log.rows.len() <= 200, "{} steps", log.rows.len());
    assert!(log.rows.iter().all(|r| r.reward <= 2.0));
}

#[test]
fn apf_turns_around_and_climbs() {
    let w = open_room();
    let cfg = EnvConfig::default();
    let log = run_episode(&mut ApfPolicy, &w, Pose::new(10.0, 10.0, 1.0, 0.0), &[[7.0, 12.0, 1.8], [12.0, 8.0, 1.2]], &cfg).unwrap();
    assert_eq!(log.outcome, Outcome::Goal);
    assert_eq!(log.goals_reached, 2);
}

#[test]
fn exhausting_the_budget_times_out() {
    let w = open_room();
    let cfg = EnvConfig { max_steps: 15, ..Default::default() };
    let mut policy = |_: &GuidanceObservation| Action::HOVER;
    let log = run_episode(&mut policy, &w, Pose::new(10.0, 10.0, 1.2, 0.0), &[[15.0, 10.0, 1.2]], &cfg).unwrap();
    assert_eq!(log.outcome, Outcome::Timeout);
    assert_eq!(log.rows.len(), 15);
}

#[test]
fn episodes_are_bit_identical() {
    let w = World::desk();
    let cfg = EnvConfig { noise_sigma: 0.01, seed: 11, ..Default::default() };
    let goals: Vec<[f64; 3]> = w.nodes.iter().map(|n| n.xyz()).collect();
    let run = || {
        let log = run_episode(&mut ApfPolicy, &w, w.spawns[0], &goals, &cfg).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        buf
    };
    let a = run();
    assert_eq!(a, run());
    let header = String::from_utf8(a[..a.iter().position(|&b| b == b'\n').unwrap()].to_vec()).unwrap();
    assert_eq!(header, "t,x,y,z,yaw,action_x,action_z,action_yaw,reward,outcome");
}

#[test]
fn without_lag_velocity_equals_the_command() {
    let w = open_room();
    let d = Dynamics { tau_v: 0.0, ..Default::default() };
    let mut s = UavState::at_rest(Pose::new(10.0, 10.0, 1.2, 0.7));
    for k in 0..30 {
        let a = Action::new((k as f64 * 0.3).sin(), (k as f64 * 0.2).cos(), 0.4);
        s = integrate(&w, &s, Command::Guidance(a), None, &d).unwrap();
        let yaw_before = s.yaw + s.yaw_rate * d.dt;
        let expect = [yaw_before.cos() * a.x_vel, yaw_before.sin() * a.x_vel, a.z_vel.clamp(-0.3, 0.3)];
        for i in 0..3 {
            assert!((s.velocity[i] - expect[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn lag_relaxes_toward_the_command() {
    let w = open_room();
    let d = Dynamics::default();
    let mut s = UavState::at_rest(Pose::new(5.0, 10.0, 1.2, 0.0));
    let mut last = 0.0;
    for _ in 0..40 {
        s = integrate(&w, &s, Command::Guidance(Action::new(1.0, 0.0, 0.0)), None, &d).unwrap();
        assert!(s.velocity[0] > last && s.velocity[0] < 1.0);
        last = s.velocity[0];
    }
    assert!(last > 0.99);
}

#[test]
fn near_goal_slowdown_scales_forward_speed() {
    let w = open_room();
    let d = Dynamics { tau_v: 0.0, near_goal_slowdown: true, ..Default::default() };
    let s = UavState::at_rest(Pose::new(10.0, 10.0, 1.2, 0.0));
    let n = integrate(&w, &s, Command::Guidance(Action::new(1.0, 0.0, 0.0)), Some([10.5, 10.0, 1.2]), &d).unwrap();
    assert!((n.velocity[0] - 0.5).abs() < 1e-12);
}

#[test]
fn ledge_guard_holds_altitude_over_the_edge() {
    let w = World::arena();
    let lvl = w.levels[0];
    let d = Dynamics { tau_v: 0.0, ledge_guard: true, ..Default::default() };
    let down = Command::Guidance(Action::new(0.0, -1.0, 0.0));
    let over_edge = UavState::at_rest(Pose::new(lvl.x + 0.1, lvl.y + 2.0, 2.0, 0.0));
    assert_eq!(integrate(&w, &over_edge, down, None, &d).unwrap().position[2], 2.0);
    let clear = UavState::at_rest(Pose::new(lvl.x - 0.5, lvl.y + 3.0, 2.0, 0.0));
    assert!(integrate(&w, &clear, down, None, &d).unwrap().position[2] < 2.0);
}

#[test]
fn override_retreats_from_the_closest_return() {
    let mut ranges = vec![3.0; LIDAR_SECTORS];
    ranges[0] = 0.55;
    let scan = LidarScan { ranges: ranges.clone(), max_range: 8.0 };
    let a = Action::new(1.0, 0.5, 0.3);
    match emergency_override(&scan, a) {
        Command::Velocity { v_x, v_y } => assert!((v_x + 0.2).abs() < 1e-15 && v_y.abs() < 1e-15),
        c => panic!("expected override, got {c:?}"),
    }
    ranges[0] = 3.0;
    ranges[18] = 0.55;
    match emergency_override(&LidarScan { ranges: ranges.clone(), max_range: 8.0 }, a) {
        Command::Velocity { v_x, v_y } => assert!(v_x.abs() < 1e-15 && (v_y + 0.2).abs() < 1e-15),
        c => panic!("expected override, got {c:?}"),
    }
    ranges[18] = 0.8;
    assert_eq!(emergency_override(&LidarScan { ranges, max_range: 8.0 }, a), Command::Guidance(a));
}

#[test]
fn override_moves_the_airframe_away() {
    // Wall 0.5 m to the right.
    let mut w = open_room();
    w.obstacles.push(Obstacle { x: 0.0, y: 9.0, w: 20.0, h: 0.5, height: 3.0 });
    let pose = Pose::new(10.0, 10.0, 1.2, 0.0);
    let scan = swarm_sar::sensors::scan_lidar(&w, &pose, 8.0, None).unwrap();
    let cmd = emergency_override(&scan, Action::new(1.0, 0.0, 0.0));
    let d = Dynamics { tau_v: 0.0, ..Default::default() };
    let n = integrate(&w, &UavState::at_rest(pose), cmd, None, &d).unwrap();
    assert!(n.position[1] > 10.0);
}

proptest! {
    #[test]
    fn reward_stays_in_bounds(a in prop::array::uniform3(-1.0f64..=1.0), o in prop::array::uniform3(-1.0f64..=1.0)) {
        let r = reward_fn(&Action::from_array(a), &Action::from_array(o));
        prop_assert!((-1.5..=1.0).contains(&r));
        prop_assert_eq!(r == 1.0, a == o);
    }

    #[test]
    fn override_speed_is_exact(s in 0usize..LIDAR_SECTORS, r in 0.01f64..0.599) {
        let mut ranges = vec![5.0; LIDAR_SECTORS];
        ranges[s] = r;
        match emergency_override(&LidarScan { ranges, max_range: 8.0 }, Action::HOVER) {
            Command::Velocity { v_x, v_y } => prop_assert!((v_x.hypot(v_y) - 0.2).abs() < 1e-15),
            _ => prop_assert!(false),
        }
    }
}
