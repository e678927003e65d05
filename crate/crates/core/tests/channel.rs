mod common;

use common::checks::{arrival_order, codec_mismatches, measured_mean_delay};
use proptest::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use teleop_core::channel::{
    decode, encode, read_frame, write_frame, ChannelMessage, LatencyModel, Payload, TcpRelay, TransportKind,
};
use teleop_core::spatial::{Pose, Vec3};
use teleop_core::ultrasound::VesselMeasure;

/// Mean of `max(X, 0)` for `X ~ N(μ, σ)`.
fn clamped_normal_mean(mu: f64, sigma: f64) -> f64 {
    let z = Normal::new(0.0, 1.0).unwrap();
    mu * z.cdf(mu / sigma) + sigma * z.pdf(mu / sigma)
}

#[test]
fn delay_mean_matches_configuration() {
    let model = LatencyModel { seed: 99, ..LatencyModel::default() };
    let mean = measured_mean_delay(model, 100_000, 20_000);
    assert!((mean - 2500.0).abs() <= 0.05 * 2500.0, "mean {mean}");
    // the clamp at zero lifts the mean to a known value
    let expected = clamped_normal_mean(2500.0, 2000.0);
    assert!((mean - expected).abs() <= 0.01 * expected, "mean {mean} vs {expected}");
}

#[test]
fn zero_jitter_is_exact() {
    let model = LatencyModel { one_way_mean_us: 1234.0, one_way_std_us: 0.0, seed: 1 };
    assert_eq!(measured_mean_delay(model, 1000, 5000), 1234.0);
}

#[test]
fn delivery_is_fifo_even_under_heavy_jitter() {
    for seed in 0..5 {
        let seen = arrival_order(seed, 20_000, TransportKind::InProcess);
        assert_eq!(seen.len(), 20_000);
        assert!(seen.windows(2).all(|w| w[1] == w[0] + 1));
    }
}

#[test]
fn tcp_loopback_delivers_what_inproc_does() {
    let relay = TcpRelay::start(0).unwrap();
    let tcp = arrival_order(4, 500, TransportKind::Tcp(relay.port()));
    assert_eq!(tcp, arrival_order(4, 500, TransportKind::InProcess));
}

#[test]
fn codec_round_trip_is_bit_exact() {
    assert_eq!(codec_mismatches(10_000, 8), 0);
}

#[test]
fn pose_command_layout() {
    let pose = Pose::from_raw(Vec3::new(1.0, 2.0, 3.0), 1.0, 0.0, 0.0, 0.0);
    let bytes = encode(&ChannelMessage { seq: 7, timestamp: 0x0102_0304, payload: Payload::PoseCmd(pose) });
    assert_eq!(bytes.len(), 71);
    assert_eq!(&bytes[..3], &[0x55, 0x53, 1]);
    assert_eq!(&bytes[3..7], &7u32.to_le_bytes());
    assert_eq!(&bytes[7..15], &0x0102_0304u64.to_le_bytes());
    assert_eq!(&bytes[15..23], &1.0f64.to_le_bytes());
    assert_eq!(&bytes[39..47], &1.0f64.to_le_bytes());
}

#[test]
fn length_prefix_is_four_bytes_little_endian() {
    let mut buf = Vec::new();
    write_frame(&mut buf, &[9, 8, 7]).unwrap();
    assert_eq!(buf, [3, 0, 0, 0, 9, 8, 7]);
    assert_eq!(read_frame(&mut buf.as_slice()).unwrap(), [9, 8, 7]);
}

#[test]
fn malformed_input_is_rejected() {
    let good = encode(&ChannelMessage { seq: 1, timestamp: 2, payload: Payload::ForceFb(Vec3::zeros()) });
    assert!(decode(&good[..good.len() - 1]).is_err());
    let mut bad = good.clone();
    bad[0] = 0;
    assert!(decode(&bad).is_err());
    let mut bad = good.clone();
    bad[2] = 9;
    assert!(decode(&bad).is_err());
    let mut meta = encode(&ChannelMessage {
        seq: 1,
        timestamp: 2,
        payload: Payload::FrameMeta { frame_id: 3, measure: VesselMeasure::not_found() },
    });
    let n = meta.len();
    meta[n - 8..].copy_from_slice(&0.5f64.to_le_bytes());
    assert!(decode(&meta).is_err());
}

proptest! {
    #[test]
    fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..100)) {
        let _ = decode(&bytes);
    }

    #[test]
    fn delays_are_pure_in_seed_and_sequence(seed in any::<u64>(), seq in any::<u32>()) {
        let m = LatencyModel { seed, ..LatencyModel::default() };
        prop_assert_eq!(m.sample_us(seq), m.sample_us(seq));
    }
}
