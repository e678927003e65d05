//! Telerobotic follower: kinematics, inverse kinematics, jerk-limited joint
//! interpolation and task-space impedance.

pub mod ik;
pub mod impedance;
pub mod kinematics;
pub mod trajectory;

use crossbeam_queue::ArrayQueue;
use serde::Deserialize;
use thiserror::Error;

pub use ik::{solve_ik, IkParams};
pub use impedance::{impedance_step, ImpedanceParams, ImpedanceState};
pub use kinematics::{DhJoint, JointVec, KinematicChain, DOF};
pub use trajectory::{plan_segment, JointState, MotionLimits, Trajectory};

use crate::phantom::{contact_force, PhantomScene};
use crate::spatial::{Pose, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobotError {
    #[error("joint {joint} at {value} rad is outside its limits")]
    JointLimit { joint: usize, value: f64 },
    #[error("pose unreachable: {0}")]
    Unreachable(String),
    #[error("start state of joint {joint} violates the motion limits")]
    InfeasibleState { joint: usize },
    #[error("invalid robot model: {0}")]
    InvalidChain(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    pub base_mm: [f64; 3],
    /// Overrides the built-in seven-joint arm when present.
    pub dh: Option<Vec<DhJoint>>,
    pub tool_mm: [f64; 3],
    /// Initial IK guess, degrees.
    pub home_deg: [f64; DOF],
    pub limits: MotionLimits,
    pub impedance: ImpedanceParams,
    pub ik: IkParams,
    pub queue_capacity: usize,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            base_mm: [75.0, -250.0, 0.0],
            dh: None,
            tool_mm: [0.0, 0.0, 80.0],
            home_deg: [90.0, 40.0, 0.0, -90.0, 0.0, 50.0, 0.0],
            limits: MotionLimits::uniform(0.5, 2.0, 20.0),
            impedance: ImpedanceParams::default(),
            ik: IkParams::default(),
            queue_capacity: 64,
        }
    }
}

impl RobotConfig {
    pub fn chain(&self) -> Result<KinematicChain, RobotError> {
        let base = Pose::from_translation(Vec3::from(self.base_mm) * 1e-3);
        let mut chain = KinematicChain::default_arm(base);
        if let Some(rows) = &self.dh {
            chain.joints = rows
                .as_slice()
                .try_into()
                .map_err(|_| RobotError::InvalidChain(format!("expected {DOF} DH rows, got {}", rows.len())))?;
        }
        chain.tool = Pose::from_translation(Vec3::from(self.tool_mm) * 1e-3);
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<(), RobotError> {
        self.chain()?;
        self.limits.validate()?;
        self.impedance.validate()?;
        if self.ik.seeds == 0 || self.ik.max_iterations == 0 || !(self.ik.damping >= 0.0) {
            return Err(RobotError::InvalidChain("ik needs seeds, iterations > 0 and damping >= 0".into()));
        }
        if self.queue_capacity == 0 {
            return Err(RobotError::InvalidChain("queue capacity must be > 0".into()));
        }
        Ok(())
    }
}

/// Two-rate follower. Command ingestion solves IK and pushes joint goals
/// into a bounded single-producer/single-consumer queue; the control tick
/// drains it, replans from the current joint state and runs the impedance
/// loop against the phantom.
pub struct RobotFollower {
    chain: KinematicChain,
    limits: MotionLimits,
    impedance: ImpedanceParams,
    ik: IkParams,
    goals: ArrayQueue<JointVec>,
    trajectory: Trajectory,
    elapsed: f64,
    joint: JointState,
    state: ImpedanceState,
    force: Vec3,
    rejected: usize,
}

impl RobotFollower {
    /// Places the arm at the IK solution for `start`, at rest.
    pub fn new(cfg: &RobotConfig, start: &Pose) -> Result<Self, RobotError> {
        cfg.validate()?;
        let chain = cfg.chain()?;
        let home = JointVec::from_iterator(cfg.home_deg.iter().map(|d| d.to_radians()));
        let wide = IkParams {
            max_iterations: 2000,
            seeds: cfg.ik.seeds.max(32),
            ..cfg.ik.clone()
        };
        let q = solve_ik(&chain, start, &home, &wide)?;
        let joint = JointState::at_rest(q);
        let pose = chain.fk_unchecked(&q);
        Ok(Self {
            trajectory: Trajectory::hold(&joint),
            chain,
            limits: cfg.limits,
            impedance: cfg.impedance,
            ik: cfg.ik.clone(),
            goals: ArrayQueue::new(cfg.queue_capacity),
            elapsed: 0.0,
            joint,
            state: ImpedanceState::at_rest(pose),
            force: Vec3::zeros(),
            rejected: 0,
        })
    }

    /// Command-rate side. An unreachable pose is dropped and the previous
    /// goal is kept.
    pub fn ingest(&mut self, cmd: &Pose) -> Result<(), RobotError> {
        // consecutive commands are close, so descending from the current
        // joints alone nearly always converges to the nearest branch
        let warm = IkParams {
            seeds: 1,
            ..self.ik.clone()
        };
        let solved = solve_ik(&self.chain, cmd, &self.joint.q, &warm).or_else(|_| solve_ik(&self.chain, cmd, &self.joint.q, &self.ik));
        match solved {
            Ok(q) => {
                self.goals.force_push(q);
                Ok(())
            }
            Err(e) => {
                self.rejected += 1;
                Err(e)
            }
        }
    }

    /// Control-rate side: one tick of interpolation and impedance.
    pub fn control_step(&mut self, scene: &PhantomScene, dt: f64) -> (Pose, Vec3) {
        let mut newest = None;
        while let Some(q) = self.goals.pop() {
            newest = Some(q);
        }
        if let Some(q) = newest {
            match plan_segment(&self.joint, &q, &self.limits) {
                Ok(t) => {
                    self.trajectory = t;
                    self.elapsed = 0.0;
                }
                Err(_) => self.rejected += 1,
            }
        }
        self.elapsed += dt;
        self.joint = self.trajectory.sample(self.elapsed);
        let commanded = self.chain.fk_unchecked(&self.joint.q);
        self.state = impedance_step(&commanded, &self.state, &self.force, &self.impedance, dt);
        self.force = contact_force(scene, &self.state.pose, &self.state.velocity);
        (self.state.pose, self.force)
    }

    pub fn pose(&self) -> Pose {
        self.state.pose
    }

    pub fn force(&self) -> Vec3 {
        self.force
    }

    pub fn joint_state(&self) -> &JointState {
        &self.joint
    }

    pub fn commanded_pose(&self) -> Pose {
        self.chain.fk_unchecked(&self.joint.q)
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }
}
