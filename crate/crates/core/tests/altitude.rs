use proptest::prelude::*;
use swarm_sar::altitude::{
    generate_scenario, read_scenario, run_scenario, write_scenario, AltitudeConfig, AltitudeFuser, OdomSample,
    ScenarioConfig,
};
use swarm_sar::Error;

fn sample(t: f64, imu_vz: f64, depth: f64) -> OdomSample {
    OdomSample { t, slam_z_raw: depth, imu_vz, depth_fused: depth }
}

fn fuser() -> AltitudeFuser {
    AltitudeFuser::new(AltitudeConfig::default(), 0.0).unwrap()
}

#[test]
fn hover_over_flat_floor() {
    let mut f = fuser();
    for k in 0..100 {
        let z = f.update(&sample(k as f64 * 0.05, 0.0, 1.5)).unwrap();
        assert_eq!(z, 1.5);
    }
    assert_eq!(f.level_changes, 0);
    assert_eq!(f.level_offset, 0.0);
}

#[test]
fn ledge_crossing_moves_the_offset() {
    let mut f = fuser();
    for k in 0..10 {
        f.update(&sample(k as f64 * 0.05, 0.0, 1.5)).unwrap();
    }
    let z = f.update(&sample(0.5, 0.0, 0.5)).unwrap();
    assert_eq!(f.level_changes, 1);
    assert!((f.level_offset - 1.0).abs() < 1e-12);
    assert!((z - 1.5).abs() < 1e-12);
    for k in 11..40 {
        let z = f.update(&sample(k as f64 * 0.05, 0.0, 0.5)).unwrap();
        assert!((z - 1.5).abs() < 1e-12);
    }
    assert_eq!(f.level_changes, 1);
}

#[test]
fn genuine_climb_is_tracked() {
    let mut f = fuser();
    let mut depth = 1.0;
    for k in 0..200 {
        let t = k as f64 * 0.05;
        if k > 0 {
            depth += 0.3 * 0.05;
        }
        let z = f.update(&sample(t, -0.3, depth)).unwrap();
        assert!((z - depth).abs() < 1e-12);
    }
    assert_eq!(f.level_changes, 0);
}

#[test]
fn stepping_off_a_platform_lowers_the_offset() {
    let mut f = AltitudeFuser::new(AltitudeConfig::default(), 1.0).unwrap();
    f.update(&sample(0.0, 0.0, 0.6)).unwrap();
    let z = f.update(&sample(0.05, 0.0, 1.6)).unwrap();
    assert!(f.level_offset.abs() < 1e-12);
    assert!((z - 1.6).abs() < 1e-12);
}

#[test]
fn offsets_snap_to_five_centimetres() {
    let mut f = fuser();
    f.update(&sample(0.0, 0.0, 1.5)).unwrap();
    f.update(&sample(0.05, 0.0, 0.52)).unwrap();
    assert!((f.level_offset - 1.0).abs() < 1e-12, "{}", f.level_offset);
}

#[test]
fn time_must_increase() {
    let mut f = fuser();
    f.update(&sample(1.0, 0.0, 1.0)).unwrap();
    assert!(matches!(f.update(&sample(1.0, 0.0, 1.0)), Err(Error::NonMonotonicTime { .. })));
    assert!(matches!(f.update(&sample(0.5, 0.0, 1.0)), Err(Error::NonMonotonicTime { .. })));
}

#[test]
fn non_finite_input_is_rejected() {
    let mut f = fuser();
    assert!(f.update(&sample(0.0, f64::NAN, 1.0)).is_err());
}

#[test]
fn scenario_suite() {
    let cfg = ScenarioConfig::default();
    for seed in 0..5 {
        let rows = generate_scenario(&cfg, seed).unwrap();
        assert_eq!(rows.len(), 2400);
        let (report, _) = run_scenario(&rows, AltitudeConfig::default()).unwrap();
        println!("seed {seed}: {report:?}");
        assert!(report.corrected_rmse <= 0.15, "seed {seed}: {report:?}");
        assert!(report.raw_rmse >= 0.5, "seed {seed}: {report:?}");
        assert_eq!(report.touchdown_errors.len(), 2, "seed {seed}");
        assert!(report.touchdown_errors.iter().all(|&e| e <= 0.1), "seed {seed}: {report:?}");
        assert_eq!(report.level_changes, 2, "seed {seed}");
    }
}

#[test]
fn scenario_csv_round_trip() {
    let rows = generate_scenario(&ScenarioConfig::default(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.csv");
    write_scenario(&rows, &p).unwrap();
    assert_eq!(read_scenario(&p).unwrap(), rows);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    /// While IMU and depth agree, the offset never moves.
    #[test]
    fn agreement_never_changes_level(
        start in 0.5f64..2.5,
        rates in prop::collection::vec(-0.3f64..0.3, 1..40),
        noise in prop::collection::vec(-0.05f64..0.05, 40),
    ) {
        let mut f = fuser();
        let mut depth = start;
        let mut t = 0.0;
        f.update(&sample(t, 0.0, depth)).unwrap();
        for (k, &vz) in rates.iter().enumerate() {
            for _ in 0..10 {
                t += 0.05;
                depth += vz * 0.05;
                let imu = -vz + noise[k];
                let z = f.update(&sample(t, imu, depth)).unwrap();
                prop_assert_eq!(z, depth);
            }
        }
        prop_assert_eq!(f.level_offset, 0.0);
    }
}
