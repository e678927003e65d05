//! Scripted expert at the haptic device.
//!
//! The same policy drives every method so that differences between
//! methods come only from the channel and the follower. Random draws come
//! from streams keyed by the trial seed alone: two methods run with the
//! same seed see the same search errors, hand drift and misjudgements.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::ExpertParams;
use super::task::{probe_orientation, wrap_half_turn, TaskGeometry, TaskStage, TaskState};
use crate::rng::{mix, stream};
use crate::spatial::{Pose, Vec3};
use crate::ultrasound::VesselMeasure;

/// What the expert sees on screen for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub frame_id: u64,
    /// Capture time of the frame.
    pub captured_us: u64,
    pub measure: VesselMeasure,
    /// Whether the frame shows what the stage asks for.
    pub good_view: bool,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Smooth zero-mean random function of arc length: a stationary
/// Ornstein–Uhlenbeck sequence on a fixed grid, linearly interpolated.
#[derive(Debug, Clone)]
struct ArcField {
    step: f64,
    values: Vec<f64>,
}

impl ArcField {
    fn new(rng: &mut ChaCha8Rng, std: f64, correlation_length: f64, span: f64) -> Self {
        let step = 1e-3;
        let rho = (-step / correlation_length).exp();
        let n = (span / step).ceil() as usize + 2;
        let mut values = Vec::with_capacity(n);
        let mut x = normal(rng) * std;
        for _ in 0..n {
            values.push(x);
            x = rho * x + (1.0 - rho * rho).sqrt() * std * normal(rng);
        }
        Self { step, values }
    }

    fn at(&self, s: f64) -> f64 {
        let u = (s.max(0.0) / self.step).min((self.values.len() - 2) as f64);
        let i = u.floor() as usize;
        let f = u - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    /// Trying one placement: moving there, then judging the view.
    Search {
        attempt: u32,
        arrived_us: Option<u64>,
        holding: bool,
        lost_since_us: Option<u64>,
    },
    /// Moving to the start of a sweep.
    Align,
    /// Sweeping along the path at arc length `s`.
    Scan { s: f64 },
    Idle,
}

pub struct ExpertPolicy {
    params: ExpertParams,
    geom: TaskGeometry,
    image_width: usize,
    px: f64,
    top_z: f64,
    // hand state
    xy: Vec3,
    z: f64,
    yaw: f64,
    goal_xy: Vec3,
    goal_yaw: f64,
    wander: Vec3,
    // perception
    inbox: VecDeque<(u64, Observation)>,
    latest: Option<Observation>,
    next_decision_us: u64,
    /// Believed lateral offset of the vessel from the nominal path.
    offset: Vec3,
    fields: [ArcField; 2],
    // protocol bookkeeping
    stage: Option<TaskStage>,
    restarts: usize,
    phase: Phase,
    wander_rng: ChaCha8Rng,
    attempt_rng: ChaCha8Rng,
}

const ARRIVE_POS: f64 = 3e-4;
const ARRIVE_YAW: f64 = 0.5 * std::f64::consts::PI / 180.0;

fn transverse_yaw(tangent: &Vec3) -> f64 {
    wrap_half_turn(tangent.y.atan2(tangent.x) + std::f64::consts::FRAC_PI_2)
}

fn flat(v: Vec3) -> Vec3 {
    Vec3::new(v.x, v.y, 0.0)
}

impl ExpertPolicy {
    pub fn new(
        params: ExpertParams,
        geom: TaskGeometry,
        start: &Pose,
        top_z: f64,
        image_width: usize,
        mm_per_px: f64,
        trial_seed: u64,
    ) -> Self {
        let seed = mix(trial_seed, params.seed);
        let mut field_rng = stream(seed, "expert-perception");
        let length = params.perception_length_mm * 1e-3;
        let span_large = geom.large_sweep.length() + 0.05;
        let span_branch = geom.branch_sweep.length() + 0.05;
        let fields = [
            ArcField::new(&mut field_rng, params.perception_noise_px, length, span_large),
            ArcField::new(&mut field_rng, params.perception_noise_px, length, span_branch),
        ];
        let mut wander_rng = stream(seed, "expert-wander");
        let wander = Vec3::new(normal(&mut wander_rng), normal(&mut wander_rng), 0.0) * (params.wander_std_mm * 1e-3);
        let yaw = super::task::probe_yaw(start);
        Self {
            params,
            geom,
            image_width,
            px: mm_per_px * 1e-3,
            top_z,
            xy: flat(start.position),
            z: start.position.z,
            yaw,
            goal_xy: flat(start.position),
            goal_yaw: yaw,
            wander,
            inbox: VecDeque::new(),
            latest: None,
            next_decision_us: 0,
            offset: Vec3::zeros(),
            fields,
            stage: None,
            restarts: 0,
            phase: Phase::Idle,
            wander_rng,
            attempt_rng: stream(seed, "expert-attempts"),
        }
    }

    /// A frame reaches the expert's screen at `now_us`; it is acted upon
    /// one reaction delay later.
    pub fn observe(&mut self, now_us: u64, obs: Observation) {
        let ready = now_us + (self.params.reaction_delay_s * 1e6).round() as u64;
        self.inbox.push_back((ready, obs));
    }

    /// Noise-free hand pose without drift.
    pub fn intended(&self) -> Pose {
        Pose::new(Vec3::new(self.xy.x, self.xy.y, self.z), probe_orientation(self.yaw))
    }

    /// Nominal placement for a finding stage: position and heading.
    fn nominal(&self, stage: TaskStage) -> (Vec3, f64) {
        match stage {
            TaskStage::FindLongitudinalLarge => (flat(self.geom.large_marker), 0.0),
            TaskStage::FindLongitudinalBranch => (flat(self.geom.branch_marker), 0.0),
            _ => (flat(self.geom.bifurcation), std::f64::consts::FRAC_PI_2),
        }
    }

    fn new_attempt(&mut self, stage: TaskStage, attempt: u32) {
        let (p, yaw) = self.nominal(stage);
        let travel = (p - self.xy).norm();
        let shrink = self.params.search_shrink.powi(attempt as i32);
        let pos_std = self.params.search_pos_std_mm * 1e-3 * shrink + self.params.overshoot_std * travel;
        let yaw_std = self.params.search_yaw_std_deg.to_radians() * shrink;
        let r = &mut self.attempt_rng;
        let err = Vec3::new(normal(r), normal(r), 0.0) * pos_std;
        self.goal_xy = p + err;
        self.goal_yaw = wrap_half_turn(yaw + normal(r) * yaw_std);
        self.phase = Phase::Search {
            attempt,
            arrived_us: None,
            holding: false,
            lost_since_us: None,
        };
    }

    fn enter(&mut self, state: &TaskState) {
        self.stage = Some(state.stage);
        self.restarts = state.sweep.restarts;
        match state.stage {
            TaskStage::SweepLarge | TaskStage::SweepBranch => {
                self.offset = Vec3::zeros();
                let path = self.geom.sweep(state.stage).expect("sweep stage has a path");
                let (p, t) = path.at(0.0);
                self.goal_xy = p;
                self.goal_yaw = transverse_yaw(&t);
                self.phase = Phase::Align;
            }
            TaskStage::Done => self.phase = Phase::Idle,
            stage => self.new_attempt(stage, 0),
        }
    }

    fn arrived(&self) -> bool {
        (self.goal_xy - self.xy).norm() < ARRIVE_POS && wrap_half_turn(self.goal_yaw - self.yaw).abs() < ARRIVE_YAW
    }

    /// One control tick of the expert. `felt_force` is the force magnitude
    /// rendered to the hand on the previous tick. Returns the device pose.
    pub fn step(&mut self, state: &TaskState, now_us: u64, dt: f64, felt_force: f64) -> Pose {
        while self.inbox.front().is_some_and(|(t, _)| *t <= now_us) {
            self.latest = self.inbox.pop_front().map(|(_, o)| o);
        }
        if self.stage != Some(state.stage) || self.restarts != state.sweep.restarts {
            self.enter(state);
        }
        let decide = now_us >= self.next_decision_us;
        if decide {
            self.next_decision_us = now_us + (self.params.decision_interval_s * 1e6).round() as u64;
        }
        match self.phase {
            Phase::Search {
                attempt,
                arrived_us,
                holding,
                lost_since_us,
            } => {
                let arrived_us = arrived_us.or_else(|| self.arrived().then_some(now_us));
                let mut next = Phase::Search {
                    attempt,
                    arrived_us,
                    holding,
                    lost_since_us,
                };
                if let (Some(t0), true) = (arrived_us, decide) {
                    let fresh = self.latest.filter(|o| o.captured_us >= t0);
                    let good = fresh.is_some_and(|o| o.good_view);
                    let since_arrival = (now_us - t0) as f64 * 1e-6;
                    if good {
                        next = Phase::Search {
                            attempt,
                            arrived_us,
                            holding: true,
                            lost_since_us: None,
                        };
                    } else if holding {
                        let lost = lost_since_us.unwrap_or(now_us);
                        next = Phase::Search {
                            attempt,
                            arrived_us,
                            holding,
                            lost_since_us: Some(lost),
                        };
                        if (now_us - lost) as f64 * 1e-6 > self.params.loss_patience_s {
                            self.new_attempt(state.stage, attempt + 1);
                            next = self.phase;
                        }
                    } else if since_arrival >= self.params.look_time_s {
                        self.new_attempt(state.stage, attempt + 1);
                        next = self.phase;
                    }
                }
                self.phase = next;
            }
            Phase::Align => {
                if self.arrived() {
                    self.phase = Phase::Scan { s: 0.0 };
                }
            }
            Phase::Scan { s } => {
                let s = s + self.params.scan_speed * dt;
                let which = (state.stage == TaskStage::SweepBranch) as usize;
                if decide {
                    if let Some(o) = self.latest.take() {
                        if o.measure.found {
                            let dev = o.measure.centroid.0 - self.image_width as f64 / 2.0 + self.fields[which].at(s);
                            let across = Vec3::new(self.yaw.cos(), self.yaw.sin(), 0.0);
                            self.offset += across * (self.params.lateral_gain_m_per_px * dev);
                        } else {
                            self.offset *= 0.8;
                        }
                    }
                }
                let path = self.geom.sweep(state.stage).expect("sweep stage has a path");
                let (p, t) = path.at(s);
                self.goal_xy = p + self.offset;
                self.goal_yaw = transverse_yaw(&t);
                self.phase = Phase::Scan { s };
            }
            Phase::Idle => {}
        }

        // rate-limited hand motion toward the goal
        let d = self.goal_xy - self.xy;
        let max_step = self.params.move_speed * dt;
        self.xy += if d.norm() > max_step { d * (max_step / d.norm()) } else { d };
        let dyaw = wrap_half_turn(self.goal_yaw - self.yaw);
        let max_turn = self.params.yaw_rate_deg.to_radians() * dt;
        self.yaw += dyaw.clamp(-max_turn, max_turn);

        // press until the felt force reaches the setpoint
        let approach = self.params.approach_speed;
        let vz = if felt_force <= 0.0 {
            -approach
        } else {
            (self.params.depth_gain * (felt_force - self.params.depth_setpoint_n)).clamp(-approach, approach)
        };
        self.z = (self.z + vz * dt).max(self.top_z - 0.02);

        let rho = (-dt / self.params.wander_tau_s).exp();
        let kick = Vec3::new(normal(&mut self.wander_rng), normal(&mut self.wander_rng), 0.0);
        self.wander = self.wander * rho + kick * (self.params.wander_std_mm * 1e-3 * (1.0 - rho * rho).sqrt());

        let p = self.xy + self.wander;
        Pose::new(Vec3::new(p.x, p.y, self.z), probe_orientation(self.yaw))
    }

    /// Lateral correction believed necessary; exposed for diagnostics.
    pub fn lateral_offset(&self) -> Vec3 {
        self.offset
    }

    pub fn pixel_size(&self) -> f64 {
        self.px
    }
}
