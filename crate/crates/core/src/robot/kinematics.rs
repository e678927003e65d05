use nalgebra::{Isometry3, SMatrix, SVector, Translation3, UnitQuaternion};
use serde::Deserialize;

use super::RobotError;
use crate::spatial::{Pose, Vec3};

pub const DOF: usize = 7;
pub type JointVec = SVector<f64, DOF>;
pub type Jacobian = SMatrix<f64, 6, DOF>;

/// Standard DH row, `T = Rz(θ + offset) · Tz(d) · Tx(a) · Rx(α)`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhJoint {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    #[serde(default)]
    pub theta_offset: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub joints: [DhJoint; DOF],
    pub base: Pose,
    /// Flange to probe tip.
    pub tool: Pose,
}

fn dh(j: &DhJoint, q: f64) -> Isometry3<f64> {
    let theta = q + j.theta_offset;
    let (s, c) = theta.sin_cos();
    let rot = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), theta)
        * UnitQuaternion::from_axis_angle(&Vec3::x_axis(), j.alpha);
    Isometry3::from_parts(Translation3::new(j.a * c, j.a * s, j.d), rot)
}

fn iso(p: &Pose) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::from(p.position), p.orientation)
}

impl KinematicChain {
    /// Seven alternating-axis revolute joints with about 0.8 m reach.
    pub fn default_arm(base: Pose) -> Self {
        use std::f64::consts::FRAC_PI_2 as H;
        let deg = f64::to_radians;
        let row = |d: f64, alpha: f64, lim: f64| DhJoint {
            a: 0.0,
            d,
            alpha,
            theta_offset: 0.0,
            lower: -deg(lim),
            upper: deg(lim),
        };
        Self {
            joints: [
                row(0.24, -H, 170.0),
                row(0.0, H, 120.0),
                row(0.21, H, 170.0),
                row(0.0, -H, 120.0),
                row(0.21, -H, 170.0),
                row(0.0, H, 120.0),
                row(0.06, 0.0, 175.0),
            ],
            base,
            tool: Pose::from_translation(Vec3::new(0.0, 0.0, 0.08)),
        }
    }

    pub fn validate(&self) -> Result<(), RobotError> {
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.lower < j.upper) {
                return Err(RobotError::InvalidChain(format!("joint {} has lower >= upper", i + 1)));
            }
        }
        if !(self.reach() > 0.0 && self.reach().is_finite()) {
            return Err(RobotError::InvalidChain("reach must be finite and positive".into()));
        }
        Ok(())
    }

    /// Upper bound on the tip distance from the base origin.
    pub fn reach(&self) -> f64 {
        self.joints.iter().map(|j| j.a.hypot(j.d)).sum::<f64>() + self.tool.position.norm()
    }

    pub fn within_limits(&self, q: &JointVec) -> bool {
        self.joints
            .iter()
            .zip(q.iter())
            .all(|(j, v)| *v >= j.lower && *v <= j.upper)
    }

    pub fn clamp(&self, q: &mut JointVec) {
        for (j, v) in self.joints.iter().zip(q.iter_mut()) {
            *v = v.clamp(j.lower, j.upper);
        }
    }

    pub fn forward_kinematics(&self, q: &JointVec) -> Result<Pose, RobotError> {
        if let Some(i) = (0..DOF).find(|&i| q[i] < self.joints[i].lower || q[i] > self.joints[i].upper) {
            return Err(RobotError::JointLimit { joint: i + 1, value: q[i] });
        }
        Ok(self.fk_unchecked(q))
    }

    pub fn fk_unchecked(&self, q: &JointVec) -> Pose {
        let mut t = iso(&self.base);
        for (j, v) in self.joints.iter().zip(q.iter()) {
            t *= dh(j, *v);
        }
        t *= iso(&self.tool);
        Pose::new(t.translation.vector, t.rotation)
    }

    /// Tip pose and the world-frame geometric Jacobian (linear rows first).
    pub fn fk_jacobian(&self, q: &JointVec) -> (Pose, Jacobian) {
        let mut t = iso(&self.base);
        let mut axes = [(Vec3::zeros(), Vec3::zeros()); DOF];
        for (i, (j, v)) in self.joints.iter().zip(q.iter()).enumerate() {
            axes[i] = (t.translation.vector, t.rotation * Vec3::z());
            t *= dh(j, *v);
        }
        t *= iso(&self.tool);
        let tip = t.translation.vector;
        let mut jac = Jacobian::zeros();
        for (i, (o, z)) in axes.iter().enumerate() {
            let lin = z.cross(&(tip - o));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(z);
        }
        (Pose::new(tip, t.rotation), jac)
    }
}
