//! Novice human follower tracking a virtual probe: pure reaction delay,
//! rate-limited first-order lag and correlated (Ornstein–Uhlenbeck) hand
//! noise. The follower sees only the virtual probe, never the image.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use crate::channel::{ChannelMessage, Payload};
use crate::error::{ConfigError, Error};
use crate::phantom::{contact_force, PhantomScene};
use crate::rng::stream;
use crate::spatial::{rotation_exp, Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HumanParams {
    pub reaction_delay: f64,
    pub pos_noise_std: f64,
    pub rot_noise_std_deg: f64,
    pub force_noise_std: f64,
    /// Cutoff of the first-order tracking lag, Hz. `inf` disables the lag.
    pub tracking_bandwidth: f64,
    pub max_hand_speed: f64,
    /// Correlation time of the hand noise, s.
    pub noise_time_constant: f64,
    /// Time constant of the perceived insertion depth filter, s.
    pub depth_filter: f64,
    pub seed: u64,
}

impl Default for HumanParams {
    fn default() -> Self {
        Self {
            reaction_delay: 0.350,
            pos_noise_std: 0.003,
            rot_noise_std_deg: 6.0,
            force_noise_std: 0.3,
            tracking_bandwidth: 1.5,
            max_hand_speed: 0.25,
            noise_time_constant: 1.0,
            depth_filter: 0.3,
            seed: 0,
        }
    }
}

impl HumanParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fields = [
            ("reaction_delay", self.reaction_delay),
            ("pos_noise_std", self.pos_noise_std),
            ("rot_noise_std_deg", self.rot_noise_std_deg),
            ("force_noise_std", self.force_noise_std),
            ("tracking_bandwidth", self.tracking_bandwidth),
            ("max_hand_speed", self.max_hand_speed),
            ("noise_time_constant", self.noise_time_constant),
            ("depth_filter", self.depth_filter),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) {
                return Err(ConfigError::Invalid(format!("human.{name} must be >= 0, got {v}")));
            }
        }
        if self.noise_time_constant == 0.0 {
            return Err(ConfigError::Invalid("human.noise_time_constant must be > 0".into()));
        }
        Ok(())
    }

    /// Same hand with reduced noise.
    pub fn scaled_noise(&self, factor: f64) -> Self {
        Self {
            pos_noise_std: self.pos_noise_std * factor,
            rot_noise_std_deg: self.rot_noise_std_deg * factor,
            force_noise_std: self.force_noise_std * factor,
            ..*self
        }
    }
}

/// Stationary OU process with exact discretization.
#[derive(Debug, Clone)]
struct Ou {
    x: Vec3,
    std: f64,
    tau: f64,
}

impl Ou {
    fn new(std: f64, tau: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            x: gaussian3(rng) * std,
            std,
            tau,
        }
    }

    fn step(&mut self, dt: f64, rng: &mut ChaCha8Rng) -> Vec3 {
        let rho = (-dt / self.tau).exp();
        self.x = self.x * rho + gaussian3(rng) * (self.std * (1.0 - rho * rho).sqrt());
        self.x
    }
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

/// Hand model state: delay line, lagged hand pose and noise processes.
#[derive(Debug, Clone)]
pub struct HumanState {
    buffer: VecDeque<(u64, Pose)>,
    target: Pose,
    hand: Pose,
    pos_noise: Ou,
    rot_noise: Ou,
    normal_noise: Ou,
    rng: ChaCha8Rng,
}

impl HumanState {
    pub fn new(initial: Pose, params: &HumanParams) -> Self {
        let mut rng = stream(params.seed, "human-hand");
        let tau = params.noise_time_constant;
        Self {
            buffer: VecDeque::new(),
            target: initial,
            hand: initial,
            pos_noise: Ou::new(params.pos_noise_std, tau, &mut rng),
            rot_noise: Ou::new(params.rot_noise_std_deg.to_radians(), tau, &mut rng),
            normal_noise: Ou::new(1.0, tau, &mut rng),
            rng,
        }
    }

    /// Noise-free hand pose.
    pub fn hand(&self) -> Pose {
        self.hand
    }
}

/// Surface contact seen by the hand: outward normal and stiffness.
#[derive(Debug, Clone, Copy)]
pub struct HandContact {
    pub normal: Vec3,
    pub stiffness: f64,
}

pub fn human_step(
    state: &mut HumanState,
    virtual_probe: &Pose,
    params: &HumanParams,
    now_us: u64,
    dt: f64,
    contact: Option<HandContact>,
) -> Pose {
    state.buffer.push_back((now_us, *virtual_probe));
    let delay_us = (params.reaction_delay * 1e6).round() as u64;
    while let Some(&(t, p)) = state.buffer.front() {
        if t + delay_us > now_us {
            break;
        }
        state.target = p;
        state.buffer.pop_front();
    }

    let alpha = 1.0 - (-std::f64::consts::TAU * params.tracking_bandwidth * dt).exp();
    let mut step = (state.target.position - state.hand.position) * alpha;
    let max_step = params.max_hand_speed * dt;
    if step.norm() > max_step {
        step *= max_step / step.norm();
    }
    let orientation = state.hand.orientation.slerp(&state.target.orientation, alpha);
    state.hand = Pose::new(state.hand.position + step, orientation);

    let mut pos_noise = state.pos_noise.step(dt, &mut state.rng);
    let rot_noise = state.rot_noise.step(dt, &mut state.rng);
    let normal_unit = state.normal_noise.step(dt, &mut state.rng);
    if let Some(c) = contact {
        // the surface carries the hand; along the normal only force jitter remains
        let n = c.normal;
        pos_noise -= n * pos_noise.dot(&n);
        pos_noise += n * (normal_unit.x * params.force_noise_std / c.stiffness);
    }
    Pose::new(
        state.hand.position + pos_noise,
        rotation_exp(&rot_noise) * state.hand.orientation,
    )
}

/// Human follower in the loop: consumes only virtual-probe poses.
pub struct HumanFollower {
    params: HumanParams,
    state: HumanState,
    virtual_probe: Pose,
    depth: f64,
    last_output: Pose,
    force: Vec3,
}

impl HumanFollower {
    pub fn new(initial: Pose, params: HumanParams) -> Self {
        Self {
            state: HumanState::new(initial, &params),
            params,
            virtual_probe: initial,
            depth: 0.0,
            last_output: initial,
            force: Vec3::zeros(),
        }
    }

    /// Accepts a channel message. Anything other than a pose command would
    /// break the blinding and is an invariant violation.
    pub fn ingest(&mut self, msg: &ChannelMessage) -> Result<(), Error> {
        match msg.payload {
            Payload::PoseCmd(p) => {
                self.virtual_probe = p;
                Ok(())
            }
            _ => Err(Error::Invariant(format!(
                "human follower received a non-pose message (kind {})",
                msg.payload.kind()
            ))),
        }
    }

    pub fn control_step(&mut self, scene: &PhantomScene, now_us: u64, dt: f64) -> (Pose, Vec3) {
        let v = self.virtual_probe;
        let fixture = scene.fixture_mesh.closest_point(&v.position);
        let inserted = (-fixture.signed_distance).max(0.0);
        let beta = if self.params.depth_filter > 0.0 {
            1.0 - (-dt / self.params.depth_filter).exp()
        } else {
            1.0
        };
        self.depth += (inserted - self.depth) * beta;
        // the follower reproduces how deep the virtual probe sits, measured
        // from the real surface under their own probe
        let (target, contact) = if inserted > 0.0 {
            let real = scene.mesh.closest_point(&(v.position + fixture.normal * inserted));
            let t = Pose::new(real.point - real.normal * self.depth, v.orientation);
            let c = HandContact {
                normal: real.normal,
                stiffness: scene.contact.stiffness,
            };
            (t, Some(c))
        } else {
            (v, None)
        };
        let out = human_step(&mut self.state, &target, &self.params, now_us, dt, contact);
        let velocity = (out.position - self.last_output.position) / dt;
        self.last_output = out;
        self.force = contact_force(scene, &out, &velocity);
        (out, self.force)
    }

    pub fn force(&self) -> Vec3 {
        self.force
    }
}
