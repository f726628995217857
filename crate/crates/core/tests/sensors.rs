use proptest::prelude::*;
use swarm_sar::sensors::{
    depth_image, downward_depth, scan_lidar, DownwardDepth, LidarScan, RangeNoise, SensorConfig,
    LIDAR_SECTORS,
};
use swarm_sar::world::{Level, Obstacle, Pose, World};

fn big_room() -> World {
    World::empty(40.0, 40.0)
}

#[test]
fn open_space_reads_max_range_everywhere() {
    let scan = scan_lidar(&big_room(), &Pose::new(20.0, 20.0, 1.0, 0.3), 8.0, None).unwrap();
    assert_eq!(scan.ranges.len(), LIDAR_SECTORS);
    assert!(scan.ranges.iter().all(|&r| r == 8.0));
}

#[test]
fn wall_ahead_matches_plane_intersection() {
    // The east boundary is 2 m in front; every other surface is out of range.
    let pose = Pose::new(38.0, 20.0, 1.0, 0.0);
    let scan = scan_lidar(&big_room(), &pose, 8.0, None).unwrap();
    for (s, &r) in scan.ranges.iter().enumerate() {
        let b = (s as f64 + 0.5) * 5f64.to_radians();
        let expect = if b.cos() > 0.0 { (2.0 / b.cos()).min(8.0) } else { 8.0 };
        assert!((r - expect).abs() < 1e-9, "sector {s}: {r} vs {expect}");
    }
    assert!((scan.ranges[0] - 2.0).abs() < 0.01 && (scan.ranges[71] - 2.0).abs() < 0.01);
    assert!(scan.ranges[9] > 2.5);
}

#[test]
fn sectors_run_clockwise() {
    // Wall on the right-hand side when facing +x is the south boundary.
    let pose = Pose::new(20.0, 1.0, 1.0, 0.0);
    let scan = scan_lidar(&big_room(), &pose, 8.0, None).unwrap();
    assert!((scan.ranges[17] - 1.0 / 87.5f64.to_radians().sin()).abs() < 1e-9);
    assert_eq!(scan.ranges[54], 8.0);
    let (d, theta) = scan.nearest_obstacle();
    assert!(d < 1.001 && theta > 0.0);
}

#[test]
fn rotating_five_degrees_shifts_one_sector() {
    let w = World::arena();
    let pose = Pose::new(3.0, 1.2, 1.5, 0.4);
    let a = scan_lidar(&w, &pose, 8.0, None).unwrap();
    let turned = Pose { yaw: pose.yaw + 5f64.to_radians(), ..pose };
    let b = scan_lidar(&w, &turned, 8.0, None).unwrap();
    for s in 0..LIDAR_SECTORS {
        let prev = (s + LIDAR_SECTORS - 1) % LIDAR_SECTORS;
        assert!((b.ranges[s] - a.ranges[prev]).abs() < 1e-9, "sector {s}");
    }
}

#[test]
fn zero_sigma_noise_is_bit_exact_and_seeded_noise_repeats() {
    let w = World::arena();
    let pose = Pose::new(3.0, 1.2, 1.5, 0.4);
    let clean = scan_lidar(&w, &pose, 8.0, None).unwrap();
    let mut zero = RangeNoise::new(0.0, 99);
    let same = scan_lidar(&w, &pose, 8.0, Some(&mut zero)).unwrap();
    assert!(clean.ranges.iter().zip(&same.ranges).all(|(a, b)| a.to_bits() == b.to_bits()));
    let run = |seed| scan_lidar(&w, &pose, 8.0, Some(&mut RangeNoise::new(0.01, seed))).unwrap();
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

fn wall_world(wall_x: f64) -> World {
    let mut w = big_room();
    w.obstacles.push(Obstacle { x: wall_x, y: 5.0, w: 0.2, h: 30.0, height: 8.0 });
    w
}

#[test]
fn depth_of_a_frontal_wall_follows_the_pinhole_model() {
    let cfg = SensorConfig::default();
    let pose = Pose::new(20.0, 20.0, 2.0, 0.0);
    let img = depth_image(&wall_world(23.0), &pose, &cfg, None).unwrap();
    for row in 0..img.height {
        for col in 0..img.width {
            let [f, r, u] = img.pixel_ray(row, col);
            let expect = 3.0 * (f * f + r * r + u * u).sqrt() / f;
            assert!((img.at(row, col) - expect).abs() < 1e-9);
        }
    }
    // Odd-sized frames have a true centre pixel.
    let odd = SensorConfig { depth_width: 33, depth_height: 33, ..cfg };
    let img = depth_image(&wall_world(23.0), &pose, &odd, None).unwrap();
    assert!((img.at(16, 16) - 3.0).abs() < 1e-12);
}

#[test]
fn moving_toward_the_wall_reduces_axial_depth() {
    let cfg = SensorConfig::default();
    let far = depth_image(&wall_world(23.0), &Pose::new(20.0, 20.0, 2.0, 0.0), &cfg, None).unwrap();
    let near = depth_image(&wall_world(23.0), &Pose::new(21.0, 20.0, 2.0, 0.0), &cfg, None).unwrap();
    for row in 0..far.height {
        for col in 0..far.width {
            let [f, r, u] = far.pixel_ray(row, col);
            let scale = f / (f * f + r * r + u * u).sqrt();
            let drop = (far.at(row, col) - near.at(row, col)) * scale;
            assert!((drop - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn short_range_camera_in_open_space_saturates() {
    let cfg = SensorConfig { depth_max_range: 1.0, ..Default::default() };
    let img = depth_image(&big_room(), &Pose::new(20.0, 20.0, 1.5, 1.0), &cfg, None).unwrap();
    assert!(img.depths.iter().all(|&d| d == 1.0));
}

#[test]
fn downward_depth_reads_height_above_floor() {
    let cfg = SensorConfig::default();
    let d = downward_depth(&big_room(), &Pose::new(20.0, 20.0, 1.5, 0.7), &cfg, None).unwrap();
    assert!((d.fused - 1.5).abs() < 1e-9);
    let mut w = big_room();
    w.levels.push(Level { x: 18.0, y: 17.6, w: 3.6, h: 4.8, z: 1.0 });
    let d = downward_depth(&w, &Pose::new(19.8, 20.0, 1.5, 0.0), &cfg, None).unwrap();
    assert!((d.fused - 0.5).abs() < 1e-9);
}

#[test]
fn one_patch_over_a_ledge_is_outvoted() {
    let d = DownwardDepth::from_patches([1.2, 1.2, 1.21, 1.19, 3.4]);
    assert_eq!(d.fused, 1.2);
}

#[test]
fn straddling_a_ledge_splits_the_patches() {
    // Front half of the footprint over a 1 m platform.
    let mut w = big_room();
    w.levels.push(Level { x: 20.0, y: 10.0, w: 10.0, h: 20.0, z: 1.0 });
    let cfg = SensorConfig::default();
    let d = downward_depth(&w, &Pose::new(19.9, 20.0, 1.5, 0.0), &cfg, None).unwrap();
    let low = d.patches.iter().filter(|&&p| (p - 0.5).abs() < 1e-9).count();
    let high = d.patches.iter().filter(|&&p| (p - 1.5).abs() < 1e-9).count();
    assert_eq!(low + high, 5);
    assert_eq!(low, 2);
    assert!((d.fused - 1.5).abs() < 1e-9);
}

proptest! {
    #[test]
    fn median_fusion_bounds_a_single_corruption(
        base in prop::array::uniform5(0.2f64..3.0),
        k in 0usize..5,
        bad in -100.0f64..100.0,
    ) {
        let clean = DownwardDepth::from_patches(base);
        let mut corrupted = base;
        corrupted[k] = bad;
        let dirty = DownwardDepth::from_patches(corrupted);
        let rest: Vec<f64> = (0..5).filter(|&i| i != k).map(|i| base[i]).collect();
        let spread = rest.iter().cloned().fold(f64::MIN, f64::max) - rest.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!((dirty.fused - clean.fused).abs() <= spread + 1e-12);
    }

    #[test]
    fn lidar_ranges_stay_in_range(x in 0.5f64..10.3, y in 0.5f64..5.5, yaw in -3.2f64..3.2) {
        let w = World::arena();
        let scan = scan_lidar(&w, &Pose::new(x, y, 1.5, yaw), 8.0, None).unwrap();
        prop_assert!(scan.ranges.iter().all(|&r| r > 0.0 && r <= 8.0));
        prop_assert!(LidarScan::sector_bearing(scan.min_sector().0).abs() <= std::f64::consts::PI);
    }
}
