//! Rigid-body poses, pose errors and the logical simulation clock.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::ConfigError;

pub type Vec3 = Vector3<f64>;

/// Position in meters plus a unit quaternion, canonicalized to `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Builds a pose, renormalizing and canonicalizing the rotation.
    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation: canonical(orientation.into_inner()),
        }
    }

    pub fn from_translation(position: Vec3) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    /// Pose from raw `(w, x, y, z)` components, kept bit-for-bit.
    ///
    /// Used by the wire decoder, which must not perturb the stored bits.
    pub fn from_raw(position: Vec3, w: f64, x: f64, y: f64, z: f64) -> Self {
        Self {
            position,
            orientation: UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)),
        }
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::new(
            Vec3::zeros(),
            UnitQuaternion::from_axis_angle(&Vec3::z_axis(), angle),
        )
    }

    pub fn inverse(&self) -> Self {
        let inv = self.orientation.inverse();
        Self::new(-(inv * self.position), inv)
    }

    /// Rigid transform `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.orientation * p
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.orientation * v
    }

    /// Local x/y/z axes expressed in the parent frame.
    pub fn axis_x(&self) -> Vec3 {
        self.orientation * Vec3::x()
    }

    pub fn axis_y(&self) -> Vec3 {
        self.orientation * Vec3::y()
    }

    pub fn axis_z(&self) -> Vec3 {
        self.orientation * Vec3::z()
    }

    pub fn quaternion_norm(&self) -> f64 {
        self.orientation.as_ref().norm()
    }

    pub fn is_valid(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && (self.quaternion_norm() - 1.0).abs() <= 1e-9
            && self.orientation.w >= 0.0
    }
}

fn canonical(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let u = UnitQuaternion::new_normalize(q);
    if u.w < 0.0 {
        UnitQuaternion::new_unchecked(-u.into_inner())
    } else {
        u
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::new(
        a.position + a.orientation * b.position,
        a.orientation * b.orientation,
    )
}

/// Translational and rotational (axis-angle) error between two poses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    pub translational: Vec3,
    pub rotational: Vec3,
}

impl PoseError {
    pub fn translation_norm(&self) -> f64 {
        self.translational.norm()
    }

    pub fn rotation_angle(&self) -> f64 {
        self.rotational.norm()
    }
}

/// `target − actual`; the rotational part is the log map of
/// `target · actual⁻¹`, expressed in the common parent frame.
pub fn pose_error(target: &Pose, actual: &Pose) -> PoseError {
    PoseError {
        translational: target.position - actual.position,
        rotational: rotation_log(&(target.orientation * actual.orientation.inverse())),
    }
}

/// Axis-angle vector with angle in `[0, π]`.
pub fn rotation_log(q: &UnitQuaternion<f64>) -> Vec3 {
    // q and -q are the same rotation; pick the short way round
    let q = if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    };
    let v = q.imag();
    let s = v.norm();
    if s < 1e-12 {
        return v * 2.0;
    }
    let angle = 2.0 * s.atan2(q.w);
    v * (angle / s)
}

pub fn rotation_exp(v: &Vec3) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*v)
}

/// Integer-microsecond logical clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimClock {
    now_us: u64,
    tick_us: u64,
}

impl SimClock {
    pub fn new(tick_us: u64) -> Result<Self, ConfigError> {
        if tick_us == 0 {
            return Err(ConfigError::Invalid("clock tick must be > 0".into()));
        }
        Ok(Self { now_us: 0, tick_us })
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn tick_us(&self) -> u64 {
        self.tick_us
    }

    pub fn now_s(&self) -> f64 {
        self.now_us as f64 * 1e-6
    }

    pub fn dt_s(&self) -> f64 {
        self.tick_us as f64 * 1e-6
    }

    pub fn advance(&mut self) {
        self.now_us += self.tick_us;
    }

    /// True when `now` is a multiple of `period_us`.
    pub fn on_period(&self, period_us: u64) -> bool {
        period_us > 0 && self.now_us.is_multiple_of(period_us)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn random_pose(rng: &mut impl Rng) -> Pose {
        let p = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Pose::new(p, UnitQuaternion::new_normalize(q))
    }

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let c = compose(&Pose::identity(), &p);
            assert!((c.position - p.position).norm() < 1e-12);
            assert!(c.orientation.angle_to(&p.orientation) < 1e-12);
            let i = compose(&p, &p.inverse());
            assert!(i.position.norm() < 1e-9);
            assert!(i.orientation.angle() < 1e-9);
        }
    }

    #[test]
    fn quarter_turns_add_up() {
        let q = Pose::rot_z(PI / 2.0);
        let r = compose(&q, &q);
        assert!(r.orientation.angle_to(&Pose::rot_z(PI).orientation) < 1e-12);
        assert!(r.orientation.w >= 0.0);
    }

    #[test]
    fn pose_error_examples() {
        let p = Pose::new(Vec3::new(0.1, 0.2, 0.3), Pose::rot_z(0.4).orientation);
        let e = pose_error(&p, &p);
        assert_eq!(e.translation_norm(), 0.0);
        assert!(e.rotation_angle() < 1e-12);

        let q = Pose::new(p.position + Vec3::new(0.003, 0.0, 0.0), p.orientation);
        assert!((pose_error(&q, &p).translation_norm() - 0.003).abs() < 1e-15);

        let a = Pose::rot_z(0.1);
        let b = Pose::rot_z(0.1 + 6f64.to_radians());
        let e = pose_error(&b, &a);
        assert!((e.rotation_angle() - 6.0 * PI / 180.0).abs() < 1e-12);
        assert!((pose_error(&a, &b).rotation_angle() - e.rotation_angle()).abs() < 1e-15);
    }

    #[test]
    fn rotation_log_handles_half_turn() {
        let q = UnitQuaternion::from_axis_angle(&Vec3::x_axis(), PI);
        assert!((rotation_log(&q).norm() - PI).abs() < 1e-12);
    }

    #[test]
    fn norm_survives_long_compose_chains() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut acc = Pose::identity();
        for i in 0..1_000_000 {
            let step = if i % 1000 == 0 {
                random_pose(&mut rng)
            } else {
                Pose::new(
                    Vec3::zeros(),
                    UnitQuaternion::from_euler_angles(1e-3, -2e-3, 3e-3),
                )
            };
            acc = compose(&acc, &step);
            acc.position = Vec3::zeros();
            assert!((acc.quaternion_norm() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn clock_rejects_zero_tick() {
        assert!(SimClock::new(0).is_err());
        let mut c = SimClock::new(1000).unwrap();
        c.advance();
        assert_eq!(c.now_us(), 1000);
        assert!(c.on_period(1000));
        assert!(!c.on_period(3000));
    }

    proptest! {
        #[test]
        fn error_magnitude_invariant_under_common_left_transform(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (c, t, a) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            let e0 = pose_error(&t, &a);
            let e1 = pose_error(&compose(&c, &t), &compose(&c, &a));
            prop_assert!((e0.translation_norm() - e1.translation_norm()).abs() < 1e-9);
            prop_assert!((e0.rotation_angle() - e1.rotation_angle()).abs() < 1e-9);
        }

        #[test]
        fn composed_poses_stay_valid(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = compose(&random_pose(&mut rng), &random_pose(&mut rng));
            prop_assert!(p.is_valid());
        }
    }
}
