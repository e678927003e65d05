//! One scan, start to finish, on a fixed-step clock.

use std::collections::VecDeque;
use std::path::PathBuf;

use super::config::Scenario;
use super::policy::{ExpertPolicy, Observation};
use super::task::{advance_task, probe_orientation, Judge, TaskGeometry, TaskStage, TaskState};
use crate::channel::{ChannelEndpoint, ChannelMessage, LatencyModel, Payload, TransportKind};
use crate::error::{ConfigError, Error, Result};
use crate::haptics::{fixture_force, update_proxy, ProxyState};
use crate::human::{human_step, HandContact, HumanFollower, HumanParams, HumanState};
use crate::phantom::{contact_force, PhantomScene, VesselLabel};
use crate::rng::{mix, sub_seed};
use crate::robot::RobotFollower;
use crate::spatial::{Pose, SimClock, Vec3};
use crate::ultrasound::{render_frame, segment_vessel_near, signed_centroid_deviation, SpeckleBank, VesselMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Human,
    Robotic,
    Direct,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Human, Method::Robotic, Method::Direct];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Human => "human",
            Method::Robotic => "robotic",
            Method::Direct => "direct",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// One frame taken during a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub stage: TaskStage,
    pub t_s: f64,
    pub found: bool,
    /// Signed centroid offset from the image center, px; NaN when not found.
    pub deviation_px: f64,
    /// NaN when not found.
    pub eccentricity: f64,
    /// Normal contact force on the probe, N.
    pub force: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialMetrics {
    pub method: Method,
    pub seed: u64,
    /// Completion time of each scored stage, s.
    pub stage_times: [f64; 5],
    pub total: f64,
    pub timeout: bool,
    /// Sweep frames only.
    pub frames: Vec<FrameRecord>,
    pub sweep_restarts: usize,
    /// Commands the robot could not reach.
    pub rejected_commands: usize,
}

impl TrialMetrics {
    /// Finding both longitudinal views plus centering the bifurcation.
    pub fn finding(&self) -> f64 {
        self.stage_times[0] + self.stage_times[2] + self.stage_times[4]
    }

    pub fn sweeping(&self) -> f64 {
        self.stage_times[1] + self.stage_times[3]
    }

    pub fn deviations(&self) -> Vec<f64> {
        self.frames.iter().filter(|f| f.found).map(|f| f.deviation_px).collect()
    }

    pub fn eccentricities(&self, label: VesselLabel) -> Vec<f64> {
        self.frames
            .iter()
            .filter(|f| f.found && f.stage.vessel() == label)
            .map(|f| f.eccentricity)
            .collect()
    }

    pub fn forces(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.force).collect()
    }
}

/// Where to write frame images, and how sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDump {
    pub dir: PathBuf,
    /// Keep every `stride`-th frame.
    pub stride: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialOptions {
    pub transport: TransportKind,
    pub dump: Option<FrameDump>,
}

enum Follower {
    Human(Box<HumanFollower>),
    Robot(Box<RobotFollower>),
    /// Expert's own hand on the probe.
    Direct { hand: Box<HumanState>, params: HumanParams, last: Pose },
}

/// Scenario with its phantom built once, shared by all trials.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    scene: PhantomScene,
    judge: Judge,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> std::result::Result<Self, ConfigError> {
        let scene = scenario.validate()?;
        let us = &scenario.ultrasound;
        let judge = Judge {
            geom: TaskGeometry::new(&scene, &scenario.task),
            cfg: scenario.task,
            image_width: us.probe.image_width,
            center_box_px: us.center_box_px,
            longitudinal_tolerance: us.longitudinal_tolerance_deg.to_radians(),
        };
        Ok(Self { scenario, scene, judge })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn scene(&self) -> &PhantomScene {
        &self.scene
    }

    pub fn run_trial(&self, method: Method, seed: u64) -> Result<TrialMetrics> {
        self.run_trial_with(method, seed, &TrialOptions::default())
    }

    pub fn run_trial_with(&self, method: Method, seed: u64, opts: &TrialOptions) -> Result<TrialMetrics> {
        let scn = &self.scenario;
        let scene = &self.scene;
        let us = &scn.ultrasound;
        let task = &scn.task;
        let fixture = scn.fixture_params();

        let mut clock = SimClock::new(task.tick_us)?;
        let dt = clock.dt_s();
        let period = |hz: f64| ((1e6 / hz).round() as u64).max(task.tick_us);
        let command_period = period(scn.channel.command_rate_hz);
        let telemetry_period = period(scn.channel.telemetry_rate_hz);
        let frame_period = period(us.frame_rate_hz);
        let timeout_us = (task.timeout_s * 1e6).round() as u64;

        let start = Pose::new(Vec3::from(task.start_mm) * 1e-3, probe_orientation(0.0));
        let mut expert = ExpertPolicy::new(
            scn.expert,
            self.judge.geom.clone(),
            &start,
            scene.top_z(),
            us.probe.image_width,
            us.probe.mm_per_px,
            seed,
        );
        let latency = |tag: &str| LatencyModel {
            one_way_mean_us: scn.channel.one_way_mean_us,
            one_way_std_us: scn.channel.one_way_std_us,
            seed: sub_seed(seed, tag),
        };
        let mut forward = ChannelEndpoint::with_transport(latency("latency-forward"), opts.transport)?;
        let mut back = ChannelEndpoint::with_transport(latency("latency-back"), opts.transport)?;

        let mut follower = match method {
            Method::Human => {
                let params = HumanParams {
                    seed: sub_seed(mix(seed, scn.human.seed), "human"),
                    ..scn.human
                };
                Follower::Human(Box::new(HumanFollower::new(start, params)))
            }
            Method::Robotic => {
                let mut cfg = scn.robot.clone();
                cfg.ik.seed = sub_seed(mix(seed, cfg.ik.seed), "ik");
                Follower::Robot(Box::new(RobotFollower::new(&cfg, &start)?))
            }
            Method::Direct => {
                let params = HumanParams {
                    reaction_delay: 0.0,
                    tracking_bandwidth: f64::INFINITY,
                    max_hand_speed: f64::INFINITY,
                    seed: sub_seed(mix(seed, scn.human.seed), "direct-hand"),
                    ..scn.human.scaled_noise(task.direct_noise_scale)
                };
                Follower::Direct {
                    hand: Box::new(HumanState::new(start, &params)),
                    params,
                    last: start,
                }
            }
        };

        let bank = SpeckleBank::new(us, sub_seed(seed, "speckle"));
        let default_hint = (
            us.probe.image_width as f64 / 2.0,
            scn.phantom.vessel_depth_mm / us.probe.mm_per_px,
        );
        let mut hint = default_hint;
        let mut state = TaskState::default();
        let mut proxy = ProxyState::free(start.position);
        let mut felt = 0.0;
        let mut frame_id = 0u64;
        let mut views: VecDeque<(u64, u64, bool)> = VecDeque::new();
        let mut frames = Vec::new();
        let mut restarts = 0;
        let mut timeout = false;

        loop {
            let now = clock.now_us();
            if now >= timeout_us {
                timeout = true;
                break;
            }

            for msg in back.poll(&clock)? {
                if let Payload::FrameMeta { frame_id: id, measure } = msg.payload {
                    let Some(&(vid, captured, good)) = views.front() else {
                        return Err(Error::Invariant(format!("frame {id} arrived without a view record")));
                    };
                    if vid != id {
                        return Err(Error::Invariant(format!("frame {id} arrived out of order, expected {vid}")));
                    }
                    views.pop_front();
                    expert.observe(
                        now,
                        Observation {
                            frame_id: id,
                            captured_us: captured,
                            measure,
                            good_view: good,
                        },
                    );
                }
            }

            let hand = expert.step(&state, now, dt, felt);
            let hand_velocity = (hand.position - proxy.tip) / dt;
            proxy = update_proxy(&proxy, hand.position, &scene.fixture_mesh);
            let haptic = fixture_force(&proxy, &hand_velocity, &fixture);

            if method != Method::Direct && clock.on_period(command_period) {
                forward.send_payload(Payload::PoseCmd(hand), &clock)?;
            }

            let (probe, force) = match &mut follower {
                Follower::Human(h) => {
                    for msg in forward.poll(&clock)? {
                        h.ingest(&msg)?;
                    }
                    h.control_step(scene, now, dt)
                }
                Follower::Robot(r) => {
                    for msg in forward.poll(&clock)? {
                        let ChannelMessage {
                            payload: Payload::PoseCmd(cmd),
                            ..
                        } = msg
                        else {
                            return Err(Error::Invariant("robot received a non-pose command".into()));
                        };
                        // an unreachable command keeps the previous goal
                        let _ = r.ingest(&cmd);
                    }
                    r.control_step(scene, dt)
                }
                Follower::Direct { hand: state, params, last } => {
                    let surface = scene.mesh.closest_point(&hand.position);
                    let contact = (surface.signed_distance < 0.0).then_some(HandContact {
                        normal: surface.normal,
                        stiffness: scene.contact.stiffness,
                    });
                    let out = human_step(state, &hand, params, now, dt, contact);
                    let velocity = (out.position - last.position) / dt;
                    *last = out;
                    (out, contact_force(scene, &out, &velocity))
                }
            };
            felt = if method == Method::Direct { force.norm() } else { haptic.norm() };

            if method != Method::Direct && clock.on_period(telemetry_period) {
                back.send_payload(Payload::PoseCmd(probe), &clock)?;
                back.send_payload(Payload::ForceFb(force), &clock)?;
            }

            if clock.on_period(frame_period) {
                let stage = state.stage;
                let frame = render_frame(scene, &probe, force.norm(), us, &bank, frame_id);
                // until a sweep starts, follow whatever sits under the probe
                if stage.is_sweep() && !state.sweep.started {
                    hint = default_hint;
                }
                let measure = segment_vessel_near(&frame, &us.segment, hint);
                if measure.found {
                    hint = measure.centroid;
                }
                let good = self.judge.view_ok(stage, &measure, &probe);
                if let Some(dump) = &opts.dump {
                    if frame_id.is_multiple_of(dump.stride.max(1)) {
                        let name = format!("{}-{}_{}_{:06}.pgm", method.as_str(), seed, stage.name(), frame_id);
                        std::fs::write(dump.dir.join(name), frame.to_pgm())?;
                    }
                }
                let before = state.sweep.restarts;
                let next = advance_task(&mut state, &measure, good, &probe, &self.judge.geom, task, now);
                let restarted = state.sweep.restarts > before;
                if restarted {
                    restarts += 1;
                }
                // the judge counted this frame iff the sweep is running or it just ended
                if stage.is_sweep() && (next != stage || restarted || state.sweep.started) {
                    frames.push(record(stage, now, &measure, us.probe.image_width, force.norm()));
                }
                if next != stage {
                    hint = default_hint;
                }
                if method == Method::Direct {
                    expert.observe(
                        now,
                        Observation {
                            frame_id,
                            captured_us: now,
                            measure,
                            good_view: good,
                        },
                    );
                } else {
                    views.push_back((frame_id, now, good));
                    back.send_payload(Payload::FrameMeta { frame_id, measure }, &clock)?;
                }
                frame_id += 1;
                if next == TaskStage::Done {
                    clock.advance();
                    break;
                }
            }
            clock.advance();
        }

        let end = clock.now_us();
        state.censor(end);
        let total = end as f64 * 1e-6;
        let metrics = TrialMetrics {
            method,
            seed,
            stage_times: state.stage_times,
            total,
            timeout,
            frames,
            sweep_restarts: restarts,
            rejected_commands: match &follower {
                Follower::Robot(r) => r.rejected(),
                _ => 0,
            },
        };
        let sum: f64 = metrics.stage_times.iter().sum();
        if (sum - total).abs() > dt + 1e-9 {
            return Err(Error::Invariant(format!("stage times sum to {sum} s, total is {total} s")));
        }
        Ok(metrics)
    }
}

fn record(stage: TaskStage, now_us: u64, m: &VesselMeasure, width: usize, force: f64) -> FrameRecord {
    FrameRecord {
        stage,
        t_s: now_us as f64 * 1e-6,
        found: m.found,
        deviation_px: signed_centroid_deviation(m, width).unwrap_or(f64::NAN),
        eccentricity: if m.found { m.e } else { f64::NAN },
        force,
    }
}

/// Convenience wrapper building the phantom for a single trial.
pub fn run_trial(scenario: &Scenario, method: Method, seed: u64) -> Result<TrialMetrics> {
    Simulator::new(scenario.clone())?.run_trial(method, seed)
}
