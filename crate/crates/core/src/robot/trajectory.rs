//! Time-synchronized, jerk-limited joint trajectories.
//!
//! Each axis follows piecewise-constant jerk: a velocity change from the
//! start state to a cruise velocity (acceleration back at zero), a cruise,
//! and a velocity change down to rest at the goal. The slowest axis sets the
//! duration; the others lower their cruise velocity to finish with it.

use serde::Deserialize;

use super::kinematics::{JointVec, DOF};
use super::RobotError;

const BISECTIONS: usize = 100;
const LIMIT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionLimits {
    pub vmax: [f64; DOF],
    pub amax: [f64; DOF],
    pub jmax: [f64; DOF],
}

impl MotionLimits {
    pub fn uniform(vmax: f64, amax: f64, jmax: f64) -> Self {
        Self {
            vmax: [vmax; DOF],
            amax: [amax; DOF],
            jmax: [jmax; DOF],
        }
    }

    pub fn validate(&self) -> Result<(), RobotError> {
        let ok = |v: &[f64; DOF]| v.iter().all(|x| *x > 0.0 && x.is_finite());
        if ok(&self.vmax) && ok(&self.amax) && ok(&self.jmax) {
            Ok(())
        } else {
            Err(RobotError::InvalidChain("motion limits must be finite and > 0".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointState {
    pub q: JointVec,
    pub qd: JointVec,
    pub qdd: JointVec,
}

impl JointState {
    pub fn at_rest(q: JointVec) -> Self {
        Self {
            q,
            qd: JointVec::zeros(),
            qdd: JointVec::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JerkSegment {
    pub duration: f64,
    pub jerk: f64,
}

/// Position, velocity and acceleration of one axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AxisState {
    pub p: f64,
    pub v: f64,
    pub a: f64,
}

impl AxisState {
    pub fn advance(&self, jerk: f64, t: f64) -> AxisState {
        AxisState {
            p: self.p + t * (self.v + t * (self.a / 2.0 + t * jerk / 6.0)),
            v: self.v + t * (self.a + t * jerk / 2.0),
            a: self.a + t * jerk,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct AxisLimits {
    v: f64,
    a: f64,
    j: f64,
}

/// Segments that take `(v, a)` to `(target, 0)` in minimum time.
fn velocity_change(v: f64, a: f64, target: f64, lim: AxisLimits, out: &mut Vec<JerkSegment>) {
    let j = lim.j;
    let v_stop = v + a * a.abs() / (2.0 * j);
    let gap = target - v_stop;
    if gap == 0.0 {
        if a != 0.0 {
            out.push(JerkSegment {
                duration: a.abs() / j,
                jerk: -a.signum() * j,
            });
        }
        return;
    }
    let s = gap.signum();
    let a_s = s * a;
    let dv = s * (target - v);
    let mut peak = ((2.0 * j * dv + a_s * a_s) / 2.0).max(0.0).sqrt();
    let mut hold = 0.0;
    if peak > lim.a {
        peak = lim.a;
        hold = ((dv - (2.0 * peak * peak - a_s * a_s) / (2.0 * j)) / peak).max(0.0);
    }
    let rise = ((peak - a_s) / j).max(0.0);
    for (duration, jerk) in [(rise, s * j), (hold, 0.0), (peak / j, -s * j)] {
        if duration > 0.0 {
            out.push(JerkSegment { duration, jerk });
        }
    }
}

fn run(start: AxisState, segs: &[JerkSegment]) -> (AxisState, f64) {
    segs.iter().fold((start, 0.0), |(s, t), g| (s.advance(g.jerk, g.duration), t + g.duration))
}

fn profile(start: AxisState, cruise_v: f64, cruise_t: f64, lim: AxisLimits) -> Vec<JerkSegment> {
    let mut segs = Vec::with_capacity(7);
    velocity_change(start.v, start.a, cruise_v, lim, &mut segs);
    if cruise_t > 0.0 {
        segs.push(JerkSegment {
            duration: cruise_t,
            jerk: 0.0,
        });
    }
    velocity_change(cruise_v, 0.0, 0.0, lim, &mut segs);
    segs
}

/// Distance covered and time spent with no cruise phase.
fn no_cruise(start: AxisState, cruise_v: f64, lim: AxisLimits) -> (f64, f64) {
    let (end, t) = run(start, &profile(start, cruise_v, 0.0, lim));
    (end.p - start.p, t)
}

/// Cruise velocity and cruise time of the minimum-time profile.
fn min_time_cruise(start: AxisState, goal: f64, lim: AxisLimits) -> (f64, f64) {
    let dist = goal - start.p;
    let (d_hi, _) = no_cruise(start, lim.v, lim);
    if dist >= d_hi {
        return (lim.v, (dist - d_hi) / lim.v);
    }
    let (d_lo, _) = no_cruise(start, -lim.v, lim);
    if dist <= d_lo {
        return (-lim.v, (dist - d_lo) / -lim.v);
    }
    let (mut lo, mut hi) = (-lim.v, lim.v);
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if no_cruise(start, mid, lim).0 < dist {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi), 0.0)
}

/// Profile duration when cruising at `vc`, if the goal is reachable that way.
fn duration_with(start: AxisState, goal: f64, vc: f64, lim: AxisLimits) -> Option<(f64, f64)> {
    if vc == 0.0 {
        return None;
    }
    let (d, t) = no_cruise(start, vc, lim);
    let tc = (goal - start.p - d) / vc;
    (tc >= 0.0).then_some((t + tc, tc))
}

fn check_start(start: AxisState, lim: AxisLimits, axis: usize) -> Result<(), RobotError> {
    let v_stop = start.v + start.a * start.a.abs() / (2.0 * lim.j);
    if start.v.abs() > lim.v * (1.0 + LIMIT_SLACK)
        || start.a.abs() > lim.a * (1.0 + LIMIT_SLACK)
        || v_stop.abs() > lim.v * (1.0 + LIMIT_SLACK)
    {
        return Err(RobotError::InfeasibleState { joint: axis + 1 });
    }
    Ok(())
}

/// Minimum-time single-axis profile to rest at `goal`.
pub fn plan_axis(start: AxisState, goal: f64, vmax: f64, amax: f64, jmax: f64) -> Result<Vec<JerkSegment>, RobotError> {
    let lim = AxisLimits {
        v: vmax,
        a: amax,
        j: jmax,
    };
    check_start(start, lim, 0)?;
    if start.p == goal && start.v == 0.0 && start.a == 0.0 {
        return Ok(Vec::new());
    }
    let (vc, tc) = min_time_cruise(start, goal, lim);
    Ok(profile(start, vc, tc, lim))
}

/// Single-axis profile stretched to `duration`, or `None` when the axis
/// cannot be slowed to match.
fn stretch_axis(start: AxisState, goal: f64, lim: AxisLimits, vc_fast: f64, duration: f64) -> Option<Vec<JerkSegment>> {
    let (lo_t, _) = duration_with(start, goal, vc_fast * 1e-9, lim)?;
    if lo_t < duration {
        return None;
    }
    // total time falls as the cruise scale grows
    let (mut lo, mut hi) = (1e-9, 1.0);
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (lo + hi);
        match duration_with(start, goal, vc_fast * mid, lim) {
            Some((t, _)) if t > duration => lo = mid,
            Some(_) => hi = mid,
            None => return None,
        }
    }
    let vc = vc_fast * hi;
    let (_, tc) = duration_with(start, goal, vc, lim)?;
    Some(profile(start, vc, tc, lim))
}

#[derive(Debug, Clone, PartialEq)]
struct Knot {
    t: f64,
    state: AxisState,
    jerk: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct AxisPlan {
    knots: Vec<Knot>,
    end: f64,
    rest: AxisState,
}

impl AxisPlan {
    fn new(start: AxisState, segs: &[JerkSegment]) -> Self {
        let mut knots = Vec::with_capacity(segs.len());
        let (mut s, mut t) = (start, 0.0);
        for g in segs {
            knots.push(Knot {
                t,
                state: s,
                jerk: g.jerk,
            });
            s = s.advance(g.jerk, g.duration);
            t += g.duration;
        }
        Self {
            knots,
            end: t,
            rest: AxisState { p: s.p, v: 0.0, a: 0.0 },
        }
    }

    fn sample(&self, t: f64) -> AxisState {
        if t >= self.end {
            return self.rest;
        }
        let k = match self.knots.iter().rposition(|k| k.t <= t) {
            Some(i) => &self.knots[i],
            None => &self.knots[0],
        };
        k.state.advance(k.jerk, (t - k.t).max(0.0))
    }
}

/// Multi-axis trajectory; holds the final state after `duration`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    axes: Vec<AxisPlan>,
    duration: f64,
}

impl Trajectory {
    pub fn hold(state: &JointState) -> Self {
        let axes = (0..DOF)
            .map(|i| {
                AxisPlan::new(
                    AxisState {
                        p: state.q[i],
                        v: 0.0,
                        a: 0.0,
                    },
                    &[],
                )
            })
            .collect();
        Self { axes, duration: 0.0 }
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn sample(&self, t: f64) -> JointState {
        let mut out = JointState::default();
        for (i, ax) in self.axes.iter().enumerate() {
            let s = ax.sample(t);
            out.q[i] = s.p;
            out.qd[i] = s.v;
            out.qdd[i] = s.a;
        }
        out
    }

    pub fn final_q(&self) -> JointVec {
        JointVec::from_iterator(self.axes.iter().map(|a| a.rest.p))
    }
}

pub fn plan_segment(from: &JointState, to_q: &JointVec, limits: &MotionLimits) -> Result<Trajectory, RobotError> {
    let mut starts = [AxisState::default(); DOF];
    let mut lims = [AxisLimits { v: 0.0, a: 0.0, j: 0.0 }; DOF];
    for i in 0..DOF {
        starts[i] = AxisState {
            p: from.q[i],
            v: from.qd[i],
            a: from.qdd[i],
        };
        lims[i] = AxisLimits {
            v: limits.vmax[i],
            a: limits.amax[i],
            j: limits.jmax[i],
        };
        check_start(starts[i], lims[i], i)?;
    }
    let mut fast = Vec::with_capacity(DOF);
    let mut duration: f64 = 0.0;
    for i in 0..DOF {
        let s = starts[i];
        if s.p == to_q[i] && s.v == 0.0 && s.a == 0.0 {
            fast.push((0.0, Vec::new()));
            continue;
        }
        let (vc, tc) = min_time_cruise(s, to_q[i], lims[i]);
        let segs = profile(s, vc, tc, lims[i]);
        duration = duration.max(run(s, &segs).1);
        fast.push((vc, segs));
    }
    let axes = (0..DOF)
        .map(|i| {
            let (vc, segs) = &fast[i];
            let t = run(starts[i], segs).1;
            let segs = if t < duration && *vc != 0.0 {
                stretch_axis(starts[i], to_q[i], lims[i], *vc, duration).unwrap_or_else(|| segs.clone())
            } else {
                segs.clone()
            };
            AxisPlan::new(starts[i], &segs)
        })
        .collect::<Vec<_>>();
    let duration = axes.iter().map(|a| a.end).fold(0.0, f64::max);
    Ok(Trajectory { axes, duration })
}
