//! Five-stage scan protocol and its per-frame judge.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::UnitQuaternion;

use super::config::TaskConfig;
use crate::phantom::{PhantomScene, VesselLabel};
use crate::spatial::{Pose, Vec3};
use crate::ultrasound::{signed_centroid_deviation, VesselMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskStage {
    FindLongitudinalLarge,
    SweepLarge,
    HoldBifurcation,
    SweepBranch,
    FindLongitudinalBranch,
    Done,
}

impl TaskStage {
    pub const SCORED: [TaskStage; 5] = [
        TaskStage::FindLongitudinalLarge,
        TaskStage::SweepLarge,
        TaskStage::HoldBifurcation,
        TaskStage::SweepBranch,
        TaskStage::FindLongitudinalBranch,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn next(self) -> TaskStage {
        match self {
            TaskStage::FindLongitudinalLarge => TaskStage::SweepLarge,
            TaskStage::SweepLarge => TaskStage::HoldBifurcation,
            TaskStage::HoldBifurcation => TaskStage::SweepBranch,
            TaskStage::SweepBranch => TaskStage::FindLongitudinalBranch,
            TaskStage::FindLongitudinalBranch | TaskStage::Done => TaskStage::Done,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskStage::FindLongitudinalLarge => "find_large",
            TaskStage::SweepLarge => "sweep_large",
            TaskStage::HoldBifurcation => "hold_bifurcation",
            TaskStage::SweepBranch => "sweep_branch",
            TaskStage::FindLongitudinalBranch => "find_branch",
            TaskStage::Done => "done",
        }
    }

    pub fn is_sweep(self) -> bool {
        matches!(self, TaskStage::SweepLarge | TaskStage::SweepBranch)
    }

    /// Vessel the stage is about.
    pub fn vessel(self) -> VesselLabel {
        match self {
            TaskStage::FindLongitudinalLarge | TaskStage::SweepLarge | TaskStage::HoldBifurcation => VesselLabel::Large,
            _ => VesselLabel::Branch,
        }
    }
}

/// Heading slack for a transverse view at the start of a sweep.
const SWEEP_START_YAW_DEG: f64 = 10.0;

/// Probe pointing straight down with its array along heading `yaw`.
pub fn probe_orientation(yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vec3::z_axis(), yaw) * UnitQuaternion::from_axis_angle(&Vec3::x_axis(), PI)
}

/// Heading of the probe array projected on the table.
pub fn probe_yaw(probe: &Pose) -> f64 {
    let x = probe.axis_x();
    x.y.atan2(x.x)
}

/// Wraps an angle to (−π/2, π/2]: a probe and its 180° turn image the
/// same plane.
pub fn wrap_half_turn(a: f64) -> f64 {
    let mut a = a.rem_euclid(PI);
    if a > FRAC_PI_2 {
        a -= PI;
    }
    a
}

/// Planar polyline with arc-length parameterization; z is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPath {
    points: Vec<Vec3>,
    cumulative: Vec<f64>,
}

impl SweepPath {
    pub fn new(points: Vec<Vec3>) -> Self {
        assert!(points.len() >= 2, "a path needs two points");
        let points: Vec<Vec3> = points.into_iter().map(|p| Vec3::new(p.x, p.y, 0.0)).collect();
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            cumulative.push(cumulative.last().unwrap() + (w[1] - w[0]).norm());
        }
        Self { points, cumulative }
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    fn segment(&self, s: f64) -> usize {
        let i = self.cumulative.partition_point(|&c| c <= s);
        i.clamp(1, self.points.len() - 1) - 1
    }

    /// Point and unit tangent at arc length `s`; beyond either end the
    /// path continues straight.
    pub fn at(&self, s: f64) -> (Vec3, Vec3) {
        let i = self.segment(s);
        let (a, b) = (self.points[i], self.points[i + 1]);
        let t = (b - a).normalize();
        (a + t * (s - self.cumulative[i]), t)
    }

    /// Arc length of the closest path point to `p` in the plane.
    pub fn project(&self, p: &Vec3) -> f64 {
        let q = Vec3::new(p.x, p.y, 0.0);
        let mut best = (f64::INFINITY, 0.0);
        for (i, w) in self.points.windows(2).enumerate() {
            let seg = w[1] - w[0];
            let t = ((q - w[0]).dot(&seg) / seg.norm_squared()).clamp(0.0, 1.0);
            let d = (q - (w[0] + seg * t)).norm();
            if d < best.0 {
                best = (d, self.cumulative[i] + t * seg.norm());
            }
        }
        best.1
    }
}

/// Landmarks of the protocol, in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGeometry {
    /// Where the longitudinal views are taken, one per vessel.
    pub large_marker: Vec3,
    pub branch_marker: Vec3,
    pub bifurcation: Vec3,
    pub large_sweep: SweepPath,
    pub branch_sweep: SweepPath,
    pub large_radius: f64,
    pub branch_radius: f64,
}

impl TaskGeometry {
    pub fn new(scene: &PhantomScene, cfg: &TaskConfig) -> Self {
        let marker_x = scene.sweep_marker_x;
        let fork = scene.bifurcation();
        let on_vessel_at_x = |label: VesselLabel| {
            let line = &scene.vessel(label).centerline;
            line.windows(2)
                .find_map(|w| {
                    let (lo, hi) = (w[0].x.min(w[1].x), w[0].x.max(w[1].x));
                    (lo <= marker_x && marker_x <= hi && w[1].x != w[0].x)
                        .then(|| w[0] + (w[1] - w[0]) * ((marker_x - w[0].x) / (w[1].x - w[0].x)))
                })
                .unwrap_or(line[0])
        };
        let large_marker = on_vessel_at_x(VesselLabel::Large);
        let branch_marker = on_vessel_at_x(VesselLabel::Branch);
        let large_end = Vec3::new(cfg.large_sweep_end_mm * 1e-3, large_marker.y, large_marker.z);
        let branch = &scene.vessel(VesselLabel::Branch).centerline;
        let start = fork + (branch[1] - fork).normalize() * (cfg.branch_sweep_start_mm * 1e-3);
        let mut branch_points = vec![start];
        branch_points.extend(branch[1..branch.len() - 1].iter().copied());
        branch_points.push(branch_marker);
        Self {
            large_marker,
            branch_marker,
            bifurcation: fork,
            large_sweep: SweepPath::new(vec![large_marker, large_end]),
            branch_sweep: SweepPath::new(branch_points),
            large_radius: scene.vessel(VesselLabel::Large).max_radius(),
            branch_radius: scene.vessel(VesselLabel::Branch).max_radius(),
        }
    }

    pub fn sweep(&self, stage: TaskStage) -> Option<&SweepPath> {
        match stage {
            TaskStage::SweepLarge => Some(&self.large_sweep),
            TaskStage::SweepBranch => Some(&self.branch_sweep),
            _ => None,
        }
    }

    pub fn marker(&self, label: VesselLabel) -> Vec3 {
        match label {
            VesselLabel::Large => self.large_marker,
            VesselLabel::Branch => self.branch_marker,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepProgress {
    /// Set once the probe sits at the path start in a transverse view;
    /// frames before that are travel, not sweep.
    pub started: bool,
    /// Farthest arc length reached, m.
    pub reached: f64,
    pub frames: usize,
    pub found: usize,
    pub restarts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskState {
    pub stage: TaskStage,
    pub stage_started_us: u64,
    /// Start of the current uninterrupted run of good frames.
    pub hold_since_us: Option<u64>,
    pub sweep: SweepProgress,
    /// Completion time of each scored stage, s.
    pub stage_times: [f64; 5],
}

impl Default for TaskState {
    fn default() -> Self {
        Self {
            stage: TaskStage::FindLongitudinalLarge,
            stage_started_us: 0,
            hold_since_us: None,
            sweep: SweepProgress::default(),
            stage_times: [0.0; 5],
        }
    }
}

impl TaskState {
    fn enter_next(&mut self, now_us: u64) {
        self.stage_times[self.stage.index()] = (now_us - self.stage_started_us) as f64 * 1e-6;
        self.stage = self.stage.next();
        self.stage_started_us = now_us;
        self.hold_since_us = None;
        self.sweep = SweepProgress::default();
    }

    /// Closes the books on a censored trial: the unfinished stage gets the
    /// remaining time, later stages zero.
    pub fn censor(&mut self, now_us: u64) {
        if self.stage != TaskStage::Done {
            self.stage_times[self.stage.index()] = (now_us - self.stage_started_us) as f64 * 1e-6;
        }
    }
}

/// Observer who sees the image and knows the phantom; decides whether a
/// frame shows what the current stage asks for.
#[derive(Debug, Clone, PartialEq)]
pub struct Judge {
    pub geom: TaskGeometry,
    pub cfg: TaskConfig,
    pub image_width: usize,
    pub center_box_px: usize,
    /// Largest heading error of a longitudinal view, rad.
    pub longitudinal_tolerance: f64,
}

impl Judge {
    pub fn view_ok(&self, stage: TaskStage, measure: &VesselMeasure, probe: &Pose) -> bool {
        if !measure.found {
            return false;
        }
        let (geom, cfg) = (&self.geom, &self.cfg);
        let p = probe.position;
        match stage {
            TaskStage::FindLongitudinalLarge | TaskStage::FindLongitudinalBranch => {
                let label = stage.vessel();
                let marker = geom.marker(label);
                let radius = match label {
                    VesselLabel::Large => geom.large_radius,
                    VesselLabel::Branch => geom.branch_radius,
                };
                let yaw_error = wrap_half_turn(probe_yaw(probe)).abs();
                measure.w >= cfg.band_fraction * self.image_width as f64
                    && (p.x - marker.x).abs() <= cfg.marker_tolerance_mm * 1e-3
                    && (p.y - marker.y).abs() < radius
                    && yaw_error <= self.longitudinal_tolerance
            }
            TaskStage::HoldBifurcation => {
                let dev = signed_centroid_deviation(measure, self.image_width).unwrap_or(f64::INFINITY);
                let d = Vec3::new(p.x - geom.bifurcation.x, p.y - geom.bifurcation.y, 0.0).norm();
                dev.abs() <= self.center_box_px as f64 / 2.0 && d <= cfg.bifurcation_tolerance_mm * 1e-3
            }
            TaskStage::SweepLarge | TaskStage::SweepBranch => true,
            TaskStage::Done => false,
        }
    }
}

/// Feeds one frame to the judge and returns the resulting stage.
///
/// Holding stages complete after `hold_time_s` of uninterrupted good
/// frames; sweeps complete once the probe has passed the end of the path
/// with the vessel visible in enough frames, and restart otherwise.
pub fn advance_task(
    state: &mut TaskState,
    measure: &VesselMeasure,
    good_view: bool,
    probe: &Pose,
    geom: &TaskGeometry,
    cfg: &TaskConfig,
    now_us: u64,
) -> TaskStage {
    match state.stage {
        TaskStage::Done => {}
        TaskStage::SweepLarge | TaskStage::SweepBranch => {
            let path = geom.sweep(state.stage).expect("sweep stage has a path");
            let sweep = &mut state.sweep;
            if !sweep.started {
                let (start, tangent) = path.at(0.0);
                let d = probe.position - start;
                let near = d.x.hypot(d.y) <= cfg.marker_tolerance_mm * 1e-3;
                let transverse = tangent.y.atan2(tangent.x) + FRAC_PI_2;
                let aligned = wrap_half_turn(probe_yaw(probe) - transverse).abs() <= SWEEP_START_YAW_DEG.to_radians();
                if !(near && aligned) {
                    return state.stage;
                }
                sweep.started = true;
            }
            sweep.frames += 1;
            sweep.found += measure.found as usize;
            sweep.reached = sweep.reached.max(path.project(&probe.position));
            if sweep.reached >= path.length() - 1e-9 {
                if sweep.found as f64 >= cfg.sweep_found_fraction * sweep.frames as f64 {
                    state.enter_next(now_us);
                } else {
                    let restarts = sweep.restarts + 1;
                    *sweep = SweepProgress {
                        restarts,
                        ..SweepProgress::default()
                    };
                }
            }
        }
        _ => {
            if good_view {
                let since = *state.hold_since_us.get_or_insert(now_us);
                if (now_us - since) as f64 * 1e-6 >= cfg.hold_time_s - 1e-9 {
                    state.enter_next(now_us);
                }
            } else {
                state.hold_since_us = None;
            }
        }
    }
    state.stage
}
