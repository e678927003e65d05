//! Check routines shared by the focused suites and the acceptance run.
//! Each returns the worst deviation it saw so callers pick the bound.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::channel::{encode, decode, ChannelEndpoint, ChannelMessage, LatencyModel, Payload, TransportKind};
use teleop_core::experiment::stats::ks_two_sample;
use teleop_core::experiment::task::probe_orientation;
use teleop_core::phantom::{mesh_contact_force, ContactModel, PhantomConfig, PhantomScene, SurfaceRelief, TriangleMesh, VesselLabel};
use teleop_core::robot::ik::{solutions, solve_ik, weighted_distance, IkParams};
use teleop_core::robot::{impedance_step, plan_segment, ImpedanceParams, ImpedanceState, JointState, JointVec, KinematicChain, MotionLimits, DOF};
use teleop_core::spatial::{pose_error, Pose, SimClock, Vec3};
use teleop_core::ultrasound::{render_frame, segment_vessel, SpeckleBank, UltrasoundConfig, VesselMeasure};

use super::{expected_section, ks_d, ks_permutation_p, self_motion};

pub fn random_q(chain: &KinematicChain, rng: &mut impl Rng, frac: f64) -> JointVec {
    JointVec::from_fn(|i, _| {
        let l = chain.joints[i].upper * frac;
        rng.random_range(-l..l)
    })
}

/// Random feasible start: within limits, and able to stop its acceleration
/// without overshooting the velocity bound.
fn random_start(rng: &mut impl Rng, lim: &MotionLimits) -> JointState {
    let mut s = JointState::at_rest(JointVec::from_fn(|_, _| rng.random_range(-2.0..2.0)));
    for i in 0..DOF {
        loop {
            let v = rng.random_range(-0.9..0.9) * lim.vmax[i];
            let a = rng.random_range(-0.9..0.9) * lim.amax[i];
            if (v + a * a.abs() / (2.0 * lim.jmax[i])).abs() <= lim.vmax[i] {
                s.qd[i] = v;
                s.qdd[i] = a;
                break;
            }
        }
    }
    s
}

/// Samples at 1 kHz and returns the worst relative excess over (v, a, j).
pub fn worst_limit_excess(rng: &mut impl Rng, instances: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let dt = 1e-3;
    for _ in 0..instances {
        let lim = MotionLimits {
            vmax: std::array::from_fn(|_| rng.random_range(0.2..2.0)),
            amax: std::array::from_fn(|_| rng.random_range(0.5..5.0)),
            jmax: std::array::from_fn(|_| rng.random_range(2.0..50.0)),
        };
        let from = random_start(rng, &lim);
        let to = JointVec::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let traj = plan_segment(&from, &to, &lim).unwrap();
        let n = (traj.duration() / dt).ceil() as usize + 1;
        let mut prev = traj.sample(0.0);
        for k in 1..=n {
            let s = traj.sample(k as f64 * dt);
            for i in 0..DOF {
                let jerk = (s.qdd[i] - prev.qdd[i]) / dt;
                worst = worst
                    .max(s.qd[i].abs() / lim.vmax[i] - 1.0)
                    .max(s.qdd[i].abs() / lim.amax[i] - 1.0)
                    .max(jerk.abs() / lim.jmax[i] - 1.0);
            }
            prev = s;
        }
        let end = traj.sample(traj.duration());
        assert!((end.q - to).amax() < 1e-9 && end.qd.amax() < 1e-9 && end.qdd.amax() < 1e-9);
    }
    worst
}

/// Worst (position, rotation) residual over every converged solution for
/// `targets` FK-generated poses, each solved from a perturbed seed.
pub fn worst_ik_residual(targets: usize, seed: u64) -> (f64, f64) {
    let chain = KinematicChain::default_arm(Pose::identity());
    let params = IkParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut rot) = (0.0f64, 0.0f64);
    for _ in 0..targets {
        let q = random_q(&chain, &mut rng, 0.8);
        let target = chain.fk_unchecked(&q);
        let current = q + JointVec::from_fn(|_, _| rng.random_range(-0.3..0.3));
        let sols = solutions(&chain, &target, &current, &params);
        if sols.is_empty() {
            return (f64::INFINITY, f64::INFINITY);
        }
        for s in &sols {
            let e = pose_error(&target, &chain.fk_unchecked(s));
            pos = pos.max(e.translation_norm());
            rot = rot.max(e.rotation_angle());
        }
    }
    (pos, rot)
}

/// Dense self-motion sweep step used by the selection check, rad.
pub const SWEEP_STEP: f64 = 2e-3;

/// Worst (distance excess, joint offset) of the selected solution against
/// the closest point of a dense self-motion sweep. Each case has two
/// solutions far apart along the redundancy and starts near one of them.
pub fn worst_selection_miss(cases: usize, seed: u64) -> (f64, f64) {
    let chain = KinematicChain::default_arm(Pose::identity());
    let params = IkParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut excess, mut offset) = (f64::NEG_INFINITY, 0.0f64);
    for case in 0..cases {
        let q1 = random_q(&chain, &mut rng, 0.6);
        let target = chain.fk_unchecked(&q1);
        let curve = self_motion(&chain, &target, q1, SWEEP_STEP, 6.0);
        // joint limits can cut the curve short; then take its far end
        let mut q2 = curve[curve.len() / 4];
        if (q1 - q2).norm() < 0.5 {
            q2 = *curve.iter().max_by(|a, b| (*a - q1).norm().total_cmp(&(*b - q1).norm())).unwrap();
        }
        let mut current = if case % 2 == 0 { q1 } else { q2 };
        for v in current.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let (closest, d_min) = curve
            .iter()
            .map(|q| (*q, weighted_distance(q, &current, &params.weights)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let Ok(s) = solve_ik(&chain, &target, &current, &params) else {
            return (f64::INFINITY, f64::INFINITY);
        };
        excess = excess.max(weighted_distance(&s, &current, &params.weights) - d_min);
        offset = offset.max((s - closest).norm());
    }
    (excess, offset)
}

/// Settled (contact depth, impedance offset) for a push `depth` into a flat
/// block of stiffness `k` through an arm of stiffness `big_k`.
pub fn settle(k: f64, big_k: f64, depth: f64) -> (f64, f64) {
    // flat block with its top at z = 0; command `depth` below the top
    let mesh = TriangleMesh::cuboid(Vec3::new(-0.1, -0.1, -0.1), Vec3::new(0.1, 0.1, 0.0)).unwrap();
    let contact = ContactModel { stiffness: k, damping: 0.0 };
    let params = ImpedanceParams {
        stiffness: big_k,
        ..ImpedanceParams::default()
    };
    let cmd = Pose::from_translation(Vec3::new(0.0, 0.0, -depth));
    let mut s = ImpedanceState::at_rest(Pose::identity());
    let mut f = Vec3::zeros();
    for _ in 0..20_000 {
        s = impedance_step(&cmd, &s, &f, &params, 1e-3);
        f = mesh_contact_force(&mesh, &contact, &s.pose.position, &s.velocity);
    }
    let d = -s.pose.position.z;
    (d, depth - d)
}

/// Worst (centroid, extent) error in px over `n` noise-free transverse views
/// of the large vessel at random offsets, yaws, radii, depths and forces.
/// Forces span 0..F0, so sections keep at least half their height; flatter
/// ones lose their thin ends to the opening step.
pub fn round_trip_errors(n: usize, seed: u64) -> (f64, f64) {
    let cfg = UltrasoundConfig::default();
    let bank = SpeckleBank::flat(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_c, mut worst_e) = (0.0f64, 0.0f64);
    let per_scene = 50;
    for k in 0..n.div_ceil(per_scene) {
        let pc = PhantomConfig {
            large_radius_mm: rng.random_range(2.0..5.0),
            vessel_depth_mm: rng.random_range(12.0..30.0),
            relief: SurfaceRelief { amplitude_mm: 0.0, ..SurfaceRelief::default() },
            ..PhantomConfig::default()
        };
        let scene = PhantomScene::build(&pc).unwrap();
        let large = scene.vessel(VesselLabel::Large);
        let (a, b) = (large.centerline[1], large.centerline[2]);
        let r = pc.large_radius_mm * 1e-3;
        for i in 0..per_scene.min(n - k * per_scene) {
            let x = rng.random_range(a.x + 0.02..b.x - 0.02);
            let y = a.y + rng.random_range(-0.012..0.012);
            let yaw = FRAC_PI_2 + rng.random_range(-0.35..0.35);
            let probe = Pose::new(Vec3::new(x, y, scene.top_z()), probe_orientation(yaw));
            let force = rng.random_range(0.0..cfg.compression.f0);
            let frame = render_frame(&scene, &probe, force, &cfg, &bank, i as u64);
            let m = segment_vessel(&frame, &cfg.segment);
            assert!(m.found);
            let (col, row, w, h) = expected_section(&a, &b, r, &probe, force, cfg.compression.f0, cfg.probe.px(), cfg.probe.image_width);
            worst_c = worst_c.max((m.centroid.0 - col).abs()).max((m.centroid.1 - row).abs());
            worst_e = worst_e.max((m.w - w).abs()).max((m.h - h).abs());
        }
    }
    (worst_c, worst_e)
}

/// Eccentricity measured on rendered frames of one view at rising force.
pub fn measured_eccentricity_by_force(forces: &[f64]) -> Vec<f64> {
    let cfg = UltrasoundConfig::default();
    let bank = SpeckleBank::flat(&cfg);
    let scene = PhantomScene::build(&PhantomConfig::default()).unwrap();
    let probe = Pose::new(Vec3::new(0.11, 0.05, scene.top_z()), probe_orientation(FRAC_PI_2));
    forces
        .iter()
        .map(|&f| segment_vessel(&render_frame(&scene, &probe, f, &cfg, &bank, 0), &cfg.segment).e)
        .collect()
}

/// Mean one-way delay over `n` sends at `period_us`, read from the
/// scheduled delivery times.
pub fn measured_mean_delay(model: LatencyModel, n: usize, period_us: u64) -> f64 {
    let mut clock = SimClock::new(period_us).unwrap();
    let mut ep = ChannelEndpoint::new(model);
    let mut total = 0u64;
    for _ in 0..n {
        ep.send_payload(Payload::ForceFb(Vec3::zeros()), &clock).unwrap();
        total += ep.pending().last().unwrap() - clock.now_us();
        clock.advance();
        ep.poll(&clock).unwrap();
    }
    total as f64 / n as f64
}

/// Sends one message per tick at `rate`, polls every tick, and returns the
/// sequence numbers in arrival order.
pub fn arrival_order(seed: u64, sends: usize, transport: TransportKind) -> Vec<u32> {
    let model = LatencyModel { seed, ..LatencyModel::default() };
    let mut ep = ChannelEndpoint::with_transport(model, transport).unwrap();
    let mut clock = SimClock::new(500).unwrap();
    let mut seen = Vec::new();
    for k in 0..sends + 100 {
        if k < sends {
            ep.send_payload(Payload::ForceFb(Vec3::new(k as f64, 0.0, 0.0)), &clock).unwrap();
        }
        seen.extend(ep.poll(&clock).unwrap().into_iter().map(|m| m.seq));
        clock.advance();
    }
    seen
}

pub fn any_f64(rng: &mut impl Rng) -> f64 {
    loop {
        let v = f64::from_bits(rng.random());
        if !v.is_nan() {
            return v;
        }
    }
}

pub fn random_message(rng: &mut impl Rng, seq: u32) -> ChannelMessage {
    let payload = match rng.random_range(0..3) {
        0 => Payload::PoseCmd(Pose::from_raw(
            Vec3::new(any_f64(rng), any_f64(rng), any_f64(rng)),
            any_f64(rng),
            any_f64(rng),
            any_f64(rng),
            any_f64(rng),
        )),
        1 => Payload::ForceFb(Vec3::new(any_f64(rng), any_f64(rng), any_f64(rng))),
        _ => Payload::FrameMeta {
            frame_id: rng.random(),
            measure: VesselMeasure {
                centroid: (any_f64(rng), any_f64(rng)),
                w: any_f64(rng),
                h: any_f64(rng),
                e: any_f64(rng),
                found: rng.random(),
            },
        },
    };
    ChannelMessage { seq, timestamp: rng.random(), payload }
}

/// Number of random messages whose encode/decode round trip is not bit-exact.
pub fn codec_mismatches(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .filter(|&i| {
            let seq = i as u32 ^ rng.random::<u32>();
            let msg = random_message(&mut rng, seq);
            let bytes = encode(&msg);
            let back = decode(&bytes);
            !matches!(back, Ok(m) if m == msg && encode(&m) == bytes)
        })
        .count()
}

/// Largest |Δp| between the library and full label enumeration over every
/// size pair up to `max_n`, with `reps` random samples per pair. Samples mix
/// ties (integers) and continuous values.
pub fn worst_p_gap(max_n: usize, reps: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for n in 1..=max_n {
        for m in 1..=max_n {
            for r in 0..reps {
                let draw = |rng: &mut ChaCha8Rng, k: usize, shift: f64| -> Vec<f64> {
                    (0..k)
                        .map(|_| if r % 2 == 0 { rng.random_range(0..6) as f64 } else { rng.random_range(0.0..1.0) + shift })
                        .collect()
                };
                let a = draw(&mut rng, n, 0.0);
                let b = draw(&mut rng, m, 0.3);
                let got = ks_two_sample(&a, &b).unwrap();
                assert!((got.d - ks_d(&a, &b)).abs() < 1e-12);
                worst = worst.max((got.p - ks_permutation_p(&a, &b)).abs());
            }
        }
    }
    worst
}

