mod common;

use common::checks::{measured_eccentricity_by_force, round_trip_errors};
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_2;
use teleop_core::experiment::task::probe_orientation;
use teleop_core::phantom::{PhantomConfig, PhantomScene};
use teleop_core::spatial::{Pose, Vec3};
use teleop_core::ultrasound::{eccentricity, render_frame, CompressionModel, SpeckleBank, UltrasoundConfig};

#[test]
fn noise_free_round_trip_recovers_the_section() {
    let (c, e) = round_trip_errors(300, 41);
    assert!(c <= 1.0, "centroid off by {c} px");
    assert!(e <= 2.0, "extent off by {e} px");
}

#[test]
fn eccentricity_rises_with_force() {
    let forces: Vec<f64> = (0..=10).map(|i| 2.0 * i as f64).collect();
    let e = measured_eccentricity_by_force(&forces);
    assert!(e[0] < 0.1, "round vessel at rest, got {}", e[0]);
    assert!(e.windows(2).all(|w| w[1] > w[0]), "{e:?}");
}

#[test]
fn compression_examples() {
    let c = CompressionModel { f0: 8.0 };
    assert!((c.squash(8.0) - 0.5).abs() < 1e-15);
    assert_eq!(c.squash(0.0), 1.0);
    // h halves, w doubles: e = √(1 − 1/16)
    let e = eccentricity(2.0 * 40.0, 0.5 * 40.0).unwrap();
    assert!((e - 0.968_245_836_551_854_2).abs() < 1e-12);
    assert!((eccentricity(40.0, 20.0).unwrap() - 3f64.sqrt() / 2.0).abs() < 1e-12);
}

#[test]
fn pgm_frames_carry_a_p5_header() {
    let cfg = UltrasoundConfig::default();
    let scene = PhantomScene::build(&PhantomConfig::default()).unwrap();
    let probe = Pose::new(Vec3::new(0.11, 0.05, scene.top_z()), probe_orientation(FRAC_PI_2));
    let frame = render_frame(&scene, &probe, 1.0, &cfg, &SpeckleBank::new(&cfg, 3), 9);
    let pgm = frame.to_pgm();
    let header = b"P5\n512 512\n255\n";
    assert_eq!(&pgm[..header.len()], header);
    assert_eq!(pgm.len(), header.len() + 512 * 512);
}

proptest! {
    #[test]
    fn eccentricity_is_scale_free(w in 1.0f64..500.0, h in 1.0f64..500.0, k in 0.01f64..100.0) {
        let e = eccentricity(w, h).unwrap();
        prop_assert!((eccentricity(w * k, h * k).unwrap() - e).abs() < 1e-12);
        prop_assert!((0.0..1.0).contains(&e) || e == 0.0);
    }

    #[test]
    fn model_eccentricity_grows_with_force(f in 0.0f64..100.0, df in 1e-3f64..10.0, f0 in 0.5f64..50.0) {
        let c = CompressionModel { f0 };
        let e = |f: f64| { let s = c.squash(f); eccentricity(1.0 / s, s).unwrap() };
        prop_assert!(e(f + df) > e(f));
    }
}
