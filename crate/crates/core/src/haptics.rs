//! Proxy-point virtual fixture rendered to the expert's haptic device.

use serde::Deserialize;

use crate::error::ConfigError;
use crate::phantom::TriangleMesh;
use crate::spatial::Vec3;

const MAX_PROJECTIONS: usize = 3;
const BISECTION_STEPS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureParams {
    /// N/m
    pub k: f64,
    /// N·s/m
    pub b: f64,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self { k: 1200.0, b: 10.0 }
    }
}

impl FixtureParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.k > 0.0 && self.b >= 0.0 && self.b.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "fixture needs k > 0 and b >= 0, got k = {}, b = {}",
                self.k, self.b
            )));
        }
        Ok(())
    }
}

/// Proxy stays on or outside the surface; equals the tip in free space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyState {
    pub proxy: Vec3,
    pub tip: Vec3,
    pub in_contact: bool,
    /// Outward surface normal at the proxy, meaningful in contact.
    pub normal: Vec3,
}

impl ProxyState {
    pub fn free(tip: Vec3) -> Self {
        Self {
            proxy: tip,
            tip,
            in_contact: false,
            normal: Vec3::z(),
        }
    }

    pub fn penetration(&self) -> f64 {
        if self.in_contact {
            (self.proxy - self.tip).norm()
        } else {
            0.0
        }
    }
}

/// Surface crossing on the segment `outside → inside`, found by bisection on
/// the signed distance.
fn entry_point(mesh: &TriangleMesh, outside: &Vec3, inside: &Vec3) -> Vec3 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mesh.signed_distance(&(outside + (inside - outside) * mid)) < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    mesh.closest_point(&(outside + (inside - outside) * lo)).point
}

pub fn update_proxy(state: &ProxyState, new_tip: Vec3, mesh: &TriangleMesh) -> ProxyState {
    let tip_query = mesh.closest_point(&new_tip);
    if tip_query.signed_distance >= 0.0 {
        return ProxyState::free(new_tip);
    }
    let mut proxy = if state.in_contact {
        state.proxy
    } else if mesh.signed_distance(&state.proxy) >= 0.0 {
        entry_point(mesh, &state.proxy, &new_tip)
    } else {
        tip_query.point
    };
    let mut normal = mesh.closest_point(&proxy).normal;
    // slide along the tangent plane, then snap back onto the surface
    for _ in 0..MAX_PROJECTIONS {
        let goal = new_tip - normal * (new_tip - proxy).dot(&normal);
        let snapped = mesh.closest_point(&goal);
        let moved = (snapped.point - proxy).norm();
        proxy = snapped.point;
        normal = snapped.normal;
        if moved < 1e-9 {
            break;
        }
    }
    // Sliding stops at the first local minimum, which on a faceted convex
    // patch can be a neighbouring face. Take the nearer global projection
    // when the jump is shorter than the penetration; the far side of a thin
    // wall is always farther than that, so it cannot pop through.
    let depth = (new_tip - proxy).norm();
    if (tip_query.point - new_tip).norm() < depth && (tip_query.point - proxy).norm() <= depth {
        proxy = tip_query.point;
        normal = tip_query.normal;
    }
    ProxyState {
        proxy,
        tip: new_tip,
        in_contact: true,
        normal,
    }
}

/// Spring from tip to proxy plus damping along the same direction. The
/// total is unilateral: it never pulls the tip into the surface.
pub fn fixture_force(state: &ProxyState, tip_velocity: &Vec3, params: &FixtureParams) -> Vec3 {
    if !state.in_contact {
        return Vec3::zeros();
    }
    let diff = state.proxy - state.tip;
    let d = diff.norm();
    let u = if d > 0.0 { diff / d } else { state.normal };
    let magnitude = params.k * d - params.b * tip_velocity.dot(&u);
    u * magnitude.max(0.0)
}
