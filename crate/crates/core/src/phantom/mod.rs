//! Branched two-vessel phantom: surface mesh, vessel centerlines and the
//! unilateral spring-damper contact law.

mod mesh;

pub use mesh::{closest_point_on_triangle, Feature, MeshError, SurfacePoint, TriangleMesh};

use serde::Deserialize;

use crate::spatial::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VesselLabel {
    Large,
    Branch,
}

impl VesselLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VesselLabel::Large => "large",
            VesselLabel::Branch => "branch",
        }
    }
}

/// Closest point on a vessel centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterlinePoint {
    pub point: Vec3,
    pub distance: f64,
    /// Unit tangent of the segment the point lies on.
    pub tangent: Vec3,
    /// Interpolated radius, meters.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesselSpec {
    pub centerline: Vec<Vec3>,
    /// Per-vertex radius in millimeters.
    pub radius_mm: Vec<f64>,
    pub label: VesselLabel,
}

impl VesselSpec {
    pub fn max_radius(&self) -> f64 {
        self.radius_mm.iter().copied().fold(0.0, f64::max) * 1e-3
    }

    pub fn closest(&self, p: &Vec3) -> CenterlinePoint {
        let mut best = CenterlinePoint {
            point: self.centerline[0],
            distance: f64::INFINITY,
            tangent: Vec3::x(),
            radius: self.radius_mm[0] * 1e-3,
        };
        for (i, w) in self.centerline.windows(2).enumerate() {
            let seg = w[1] - w[0];
            let len2 = seg.norm_squared();
            let t = ((p - w[0]).dot(&seg) / len2).clamp(0.0, 1.0);
            let q = w[0] + seg * t;
            let d = (p - q).norm();
            if d < best.distance {
                let r = self.radius_mm[i] + (self.radius_mm[i + 1] - self.radius_mm[i]) * t;
                best = CenterlinePoint {
                    point: q,
                    distance: d,
                    tangent: seg / len2.sqrt(),
                    radius: r * 1e-3,
                };
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactModel {
    /// N/m
    pub stiffness: f64,
    /// N·s/m
    pub damping: f64,
}

impl Default for ContactModel {
    fn default() -> Self {
        Self {
            stiffness: 1200.0,
            damping: 10.0,
        }
    }
}

impl ContactModel {
    pub fn validate(&self) -> Result<(), MeshError> {
        if !(self.stiffness > 0.0 && self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(MeshError::Phantom(format!(
                "contact needs k > 0 and b >= 0, got k = {}, b = {}",
                self.stiffness, self.damping
            )));
        }
        Ok(())
    }
}

/// One-sided sinusoidal bumps on the real phantom surface. The fixture mesh
/// rendered to the expert stays flat, so a stiff follower feels them as
/// force transients while a compliant hand rides over them.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceRelief {
    pub amplitude_mm: f64,
    pub wavelength_mm: f64,
    pub x_range_mm: [f64; 2],
    pub y_range_mm: [f64; 2],
    /// Width of the smooth fade at the region border.
    pub taper_mm: f64,
}

impl Default for SurfaceRelief {
    fn default() -> Self {
        Self {
            amplitude_mm: 0.0,
            wavelength_mm: 12.0,
            x_range_mm: [0.0, 75.0],
            y_range_mm: [60.0, 100.0],
            taper_mm: 5.0,
        }
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl SurfaceRelief {
    /// Height above the nominal top, meters.
    pub fn height(&self, x: f64, y: f64) -> f64 {
        if self.amplitude_mm <= 0.0 {
            return 0.0;
        }
        let (x, y) = (x * 1e3, y * 1e3);
        let [x0, x1] = self.x_range_mm;
        let [y0, y1] = self.y_range_mm;
        let tw = self.taper_mm.max(1e-9);
        let win = smoothstep((x - x0) / tw)
            * smoothstep((x1 - x) / tw)
            * smoothstep((y - y0) / tw)
            * smoothstep((y1 - y) / tw);
        let phase = std::f64::consts::TAU * (x - x0) / self.wavelength_mm;
        self.amplitude_mm * 1e-3 * win * 0.5 * (1.0 - phase.cos())
    }
}

/// Scenario-level phantom geometry. Lengths in millimeters.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub size_mm: [f64; 3],
    pub large_radius_mm: f64,
    pub branch_radius_mm: f64,
    pub vessel_depth_mm: f64,
    /// Lateral (y) offset of the straight branch section from the large vessel.
    pub branch_offset_mm: f64,
    /// x where the branch finishes diverging and runs parallel.
    pub branch_knee_x_mm: f64,
    pub sweep_marker_x_mm: f64,
    pub grid_mm: f64,
    pub contact: ContactModel,
    pub relief: SurfaceRelief,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size_mm: [150.0, 100.0, 60.0],
            large_radius_mm: 4.0,
            branch_radius_mm: 2.0,
            vessel_depth_mm: 20.0,
            branch_offset_mm: 30.0,
            branch_knee_x_mm: 45.0,
            sweep_marker_x_mm: 25.0,
            grid_mm: 2.5,
            contact: ContactModel::default(),
            relief: SurfaceRelief::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhantomScene {
    /// Physical surface touched by the follower.
    pub mesh: TriangleMesh,
    /// Nominal surface rendered as the expert's virtual fixture.
    pub fixture_mesh: TriangleMesh,
    pub vessels: [VesselSpec; 2],
    pub contact: ContactModel,
    pub sweep_marker_x: f64,
    pub size: Vec3,
}

impl PhantomScene {
    pub fn build(cfg: &PhantomConfig) -> Result<Self, MeshError> {
        let [sx, sy, sz] = cfg.size_mm.map(|v| v * 1e-3);
        if !(sx > 0.0 && sy > 0.0 && sz > 0.0 && cfg.grid_mm > 0.0) {
            return Err(MeshError::Phantom("phantom size and grid must be positive".into()));
        }
        cfg.contact.validate()?;
        if cfg.relief.amplitude_mm < 0.0 || cfg.relief.wavelength_mm <= 0.0 {
            return Err(MeshError::Phantom("relief needs amplitude >= 0 and wavelength > 0".into()));
        }
        let nx = ((cfg.size_mm[0] / cfg.grid_mm).round() as usize).max(1);
        let ny = ((cfg.size_mm[1] / cfg.grid_mm).round() as usize).max(1);
        let relief = cfg.relief;
        // a flat top needs no grid; the 12-triangle box answers queries faster
        let fixture_mesh = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(sx, sy, sz))?;
        let mesh = if relief.amplitude_mm > 0.0 {
            TriangleMesh::heightfield_box(0.0, sx, 0.0, sy, 0.0, nx, ny, |x, y| sz + relief.height(x, y))?
        } else {
            fixture_mesh.clone()
        };

        let z = sz - cfg.vessel_depth_mm * 1e-3;
        let yc = 0.5 * sy;
        let fork = Vec3::new(0.5 * sx, yc, z);
        let yb = yc + cfg.branch_offset_mm * 1e-3;
        let large = VesselSpec {
            centerline: vec![Vec3::new(0.0, yc, z), fork, Vec3::new(sx, yc, z)],
            radius_mm: vec![cfg.large_radius_mm; 3],
            label: VesselLabel::Large,
        };
        let branch = VesselSpec {
            centerline: vec![fork, Vec3::new(cfg.branch_knee_x_mm * 1e-3, yb, z), Vec3::new(0.0, yb, z)],
            radius_mm: vec![cfg.branch_radius_mm; 3],
            label: VesselLabel::Branch,
        };
        let scene = Self {
            mesh,
            fixture_mesh,
            vessels: [large, branch],
            contact: cfg.contact,
            sweep_marker_x: cfg.sweep_marker_x_mm * 1e-3,
            size: Vec3::new(sx, sy, sz),
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Checks the vessel invariants and that the bifurcation is unique.
    pub fn validate(&self) -> Result<(), MeshError> {
        for v in &self.vessels {
            if v.centerline.len() < 2 || v.centerline.len() != v.radius_mm.len() {
                return Err(MeshError::Phantom(format!("{} vessel centerline malformed", v.label.as_str())));
            }
            for (p, r) in v.centerline.iter().zip(&v.radius_mm) {
                if !(*r > 0.0) {
                    return Err(MeshError::Phantom(format!("{} vessel radius must be > 0", v.label.as_str())));
                }
                if self.size.z - p.z < r * 1e-3 {
                    return Err(MeshError::Phantom(format!(
                        "{} vessel is closer to the top than its radius",
                        v.label.as_str()
                    )));
                }
            }
        }
        let shared = self.vessels[0]
            .centerline
            .iter()
            .filter(|p| self.vessels[1].centerline.contains(p))
            .count();
        if shared != 1 {
            return Err(MeshError::Phantom(format!("vessels share {shared} centerline points, expected 1")));
        }
        Ok(())
    }

    pub fn vessel(&self, label: VesselLabel) -> &VesselSpec {
        match label {
            VesselLabel::Large => &self.vessels[0],
            VesselLabel::Branch => &self.vessels[1],
        }
    }

    pub fn bifurcation(&self) -> Vec3 {
        *self.vessels[0]
            .centerline
            .iter()
            .find(|p| self.vessels[1].centerline.contains(p))
            .expect("validated scene has a bifurcation")
    }

    /// Nominal top surface height.
    pub fn top_z(&self) -> f64 {
        self.size.z
    }
}

pub fn build_default_phantom() -> PhantomScene {
    PhantomScene::build(&PhantomConfig::default()).expect("default phantom is valid")
}

/// Closest-point query against a mesh.
pub fn closest_surface_point(mesh: &TriangleMesh, p: &Vec3) -> SurfacePoint {
    mesh.closest_point(p)
}

/// Unilateral spring-damper reaction of `mesh` on a probe tip.
pub fn mesh_contact_force(mesh: &TriangleMesh, contact: &ContactModel, tip: &Vec3, velocity: &Vec3) -> Vec3 {
    let s = mesh.closest_point(tip);
    if s.signed_distance >= 0.0 {
        return Vec3::zeros();
    }
    let depth = -s.signed_distance;
    let n = s.normal;
    let magnitude = contact.stiffness * depth - contact.damping * velocity.dot(&n);
    n * magnitude.max(0.0)
}

/// Reaction force of the physical phantom on the probe tip.
pub fn contact_force(scene: &PhantomScene, probe_tip: &Pose, tip_velocity: &Vec3) -> Vec3 {
    mesh_contact_force(&scene.mesh, &scene.contact, &probe_tip.position, tip_velocity)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_phantom_topology() {
        let s = build_default_phantom();
        assert!(s.mesh.signed_volume() > 0.0);
        let b = s.bifurcation();
        assert!((b - Vec3::new(0.075, 0.05, 0.04)).norm() < 1e-12);
        assert!(s.vessel(VesselLabel::Branch).max_radius() < s.vessel(VesselLabel::Large).max_radius());
    }

    #[test]
    fn contact_law_examples() {
        let mut s = build_default_phantom();
        s.contact.stiffness = 1000.0;
        let above = Pose::from_translation(Vec3::new(0.03, 0.03, 0.065));
        assert_eq!(contact_force(&s, &above, &Vec3::zeros()), Vec3::zeros());
        let inside = Pose::from_translation(Vec3::new(0.03, 0.03, 0.058));
        let f = contact_force(&s, &inside, &Vec3::zeros());
        assert!((f - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-9);
        let retracting = contact_force(&s, &inside, &Vec3::new(0.0, 0.0, 0.5));
        assert_eq!(retracting, Vec3::zeros());
    }

    #[test]
    fn relief_only_touches_physical_mesh() {
        let mut cfg = PhantomConfig::default();
        cfg.relief.amplitude_mm = 1.0;
        let s = PhantomScene::build(&cfg).unwrap();
        let p = Vec3::new(0.025 + 0.006, 0.08, 0.0605);
        assert!(s.mesh.contains(&p));
        assert!(!s.fixture_mesh.contains(&p));
        assert_eq!(cfg.relief.height(0.12, 0.02), 0.0);
    }

    #[test]
    fn rejects_shallow_vessel() {
        let cfg = PhantomConfig {
            vessel_depth_mm: 3.0,
            ..PhantomConfig::default()
        };
        assert!(PhantomScene::build(&cfg).is_err());
    }
}
