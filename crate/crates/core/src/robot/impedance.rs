use serde::Deserialize;

use super::RobotError;
use crate::spatial::{pose_error, rotation_exp, Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpedanceParams {
    /// N/m
    pub stiffness: f64,
    /// N·m/rad
    pub rot_stiffness: f64,
    pub damping_ratio: f64,
    /// kg
    pub mass: f64,
    /// kg·m²
    pub inertia: f64,
}

impl Default for ImpedanceParams {
    fn default() -> Self {
        Self {
            stiffness: 1000.0,
            rot_stiffness: 50.0,
            damping_ratio: 1.0,
            mass: 1.0,
            inertia: 0.05,
        }
    }
}

impl ImpedanceParams {
    pub fn validate(&self) -> Result<(), RobotError> {
        let pos = [self.stiffness, self.rot_stiffness, self.damping_ratio, self.mass, self.inertia];
        if pos.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(RobotError::InvalidChain("impedance parameters must be finite and > 0".into()))
        }
    }

    pub fn natural_frequency(&self) -> f64 {
        (self.stiffness / self.mass).sqrt()
    }
}

/// Probe pose with linear and angular velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceState {
    pub pose: Pose,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
}

impl ImpedanceState {
    pub fn at_rest(pose: Pose) -> Self {
        Self {
            pose,
            velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
        }
    }
}

/// Backward-Euler step of `M·ẍ = K·(x_cmd − x) − D·ẋ + F`, `D = 2ζ√(KM)`.
/// The implicit update is unconditionally stable and dissipative.
fn implicit_axis(m: f64, k: f64, zeta: f64, err: &Vec3, v: &Vec3, f: &Vec3, dt: f64) -> Vec3 {
    let d = 2.0 * zeta * (k * m).sqrt();
    (v * m + (err * k + f) * dt) / (m + dt * d + dt * dt * k)
}

pub fn impedance_step(
    commanded: &Pose,
    state: &ImpedanceState,
    contact_force: &Vec3,
    params: &ImpedanceParams,
    dt: f64,
) -> ImpedanceState {
    debug_assert!(dt > 0.0);
    let e = pose_error(commanded, &state.pose);
    let v = implicit_axis(params.mass, params.stiffness, params.damping_ratio, &e.translational, &state.velocity, contact_force, dt);
    let w = implicit_axis(
        params.inertia,
        params.rot_stiffness,
        params.damping_ratio,
        &e.rotational,
        &state.angular_velocity,
        &Vec3::zeros(),
        dt,
    );
    let pose = Pose::new(state.pose.position + v * dt, rotation_exp(&(w * dt)) * state.pose.orientation);
    ImpedanceState {
        pose,
        velocity: v,
        angular_velocity: w,
    }
}
