//! Independent oracles shared by the integration suites. None of them call
//! the routine they check; where a solver is needed it is a slower, dumber
//! one (dense sweeps, brute force, enumeration).
#![allow(dead_code)]

pub mod checks;

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use teleop_core::phantom::TriangleMesh;
use teleop_core::robot::{JointVec, KinematicChain, DOF};
use teleop_core::spatial::{pose_error, Pose, Vec3};

// ---- kinematics -----------------------------------------------------------

/// Homogeneous matrix of a pose, built from the quaternion components.
pub fn pose_matrix(p: &Pose) -> Matrix4<f64> {
    let q = p.orientation.quaternion();
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix4::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        p.position.x,
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        p.position.y,
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
        p.position.z,
        0.0,
        0.0,
        0.0,
        1.0,
    )
}

/// Classic DH product `Rz(θ)·Tz(d)·Tx(a)·Rx(α)` per joint, in plain matrices.
pub fn dh_forward(chain: &KinematicChain, q: &JointVec) -> Matrix4<f64> {
    let mut t = pose_matrix(&chain.base);
    for (j, qi) in chain.joints.iter().zip(q.iter()) {
        let th = qi + j.theta_offset;
        let (st, ct) = th.sin_cos();
        let (sa, ca) = j.alpha.sin_cos();
        let link = Matrix4::new(
            ct,
            -st * ca,
            st * sa,
            j.a * ct,
            st,
            ct * ca,
            -ct * sa,
            j.a * st,
            0.0,
            sa,
            ca,
            j.d,
            0.0,
            0.0,
            0.0,
            1.0,
        );
        t *= link;
    }
    t * pose_matrix(&chain.tool)
}

pub fn matrix_position(m: &Matrix4<f64>) -> Vec3 {
    let c: Vector4<f64> = m.column(3).into_owned();
    Vec3::new(c.x, c.y, c.z)
}

fn err6(chain: &KinematicChain, target: &Pose, q: &JointVec) -> SVector<f64, 6> {
    let e = pose_error(target, &chain.fk_unchecked(q));
    SVector::<f64, 6>::from_iterator(e.translational.iter().chain(e.rotational.iter()).copied())
}

/// Undamped Newton projection onto the pose manifold.
fn project(chain: &KinematicChain, target: &Pose, mut q: JointVec) -> Option<JointVec> {
    for _ in 0..50 {
        let e = err6(chain, target, &q);
        if e.amax() < 1e-13 {
            return Some(q);
        }
        let (_, j) = chain.fk_jacobian(&q);
        q += j.transpose() * (j * j.transpose()).try_inverse()? * e;
    }
    (err6(chain, target, &q).amax() < 1e-10).then_some(q)
}

fn null_dir(chain: &KinematicChain, q: &JointVec) -> JointVec {
    let (_, j) = chain.fk_jacobian(q);
    let jtj: SMatrix<f64, DOF, DOF> = j.transpose() * j;
    let eig = jtj.symmetric_eigen();
    eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned()
}

/// Dense walk along the self-motion curve through `q0` in both directions,
/// stopping at joint limits or after `reach` rad of joint-space arc.
pub fn self_motion(chain: &KinematicChain, target: &Pose, q0: JointVec, step: f64, reach: f64) -> Vec<JointVec> {
    let mut out = vec![q0];
    for sign in [1.0, -1.0] {
        let mut q = q0;
        let mut dir = null_dir(chain, &q) * sign;
        let mut s = 0.0;
        while s < reach {
            let mut n = null_dir(chain, &q);
            if n.dot(&dir) < 0.0 {
                n = -n;
            }
            dir = n;
            let Some(next) = project(chain, target, q + n * step) else { break };
            if !chain.within_limits(&next) {
                break;
            }
            s += (next - q).norm();
            q = next;
            out.push(q);
        }
    }
    out
}

// ---- jerk-limited motion --------------------------------------------------

/// Exact constant-jerk advance of (p, v, a).
pub fn advance(s: (f64, f64, f64), j: f64, t: f64) -> (f64, f64, f64) {
    let (p, v, a) = s;
    (p + v * t + a * t * t / 2.0 + j * t * t * t / 6.0, v + a * t + j * t * t / 2.0, a + j * t)
}

/// Integrates the symmetric seven-phase profile with no cruise and returns
/// (distance, peak velocity).
fn ramp_pair(t1: f64, t2: f64, j: f64) -> (f64, f64) {
    let mut s = (0.0, 0.0, 0.0);
    s = advance(s, j, t1);
    s = advance(s, 0.0, t2);
    s = advance(s, -j, t1);
    let vp = s.1;
    s = advance(s, -j, t1);
    s = advance(s, 0.0, t2);
    s = advance(s, j, t1);
    (s.0, vp)
}

/// Minimum rest-to-rest time over distance `d`, found by searching the
/// switch times numerically: for each jerk-phase length the constant-
/// acceleration phase is pushed to its largest admissible value by
/// bisection, and the jerk-phase length is then scanned and refined by
/// golden section.
pub fn bang_bang_duration(d: f64, vmax: f64, amax: f64, jmax: f64) -> f64 {
    let total = |t1: f64| -> f64 {
        let ok = |t2: f64| {
            let (dist, vp) = ramp_pair(t1, t2, jmax);
            vp <= vmax && dist <= d
        };
        if !ok(0.0) {
            return f64::INFINITY;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        while ok(hi) {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (dist, vp) = ramp_pair(t1, lo, jmax);
        2.0 * (2.0 * t1 + lo) + (d - dist).max(0.0) / vp
    };
    let t1_max = amax / jmax;
    let n = 4000;
    let grid: Vec<f64> = (1..=n).map(|i| t1_max * i as f64 / n as f64).collect();
    let best = (0..n).min_by(|&a, &b| total(grid[a]).total_cmp(&total(grid[b]))).unwrap();
    let (mut a, mut b) = (
        if best == 0 { 0.0 } else { grid[best - 1] },
        grid[(best + 1).min(n - 1)],
    );
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let e = a + g * (b - a);
        if total(c) <= total(e) {
            b = e;
        } else {
            a = c;
        }
    }
    total(0.5 * (a + b)).min(total(grid[best]))
}

// ---- geometry -------------------------------------------------------------

/// Closest point by visiting every triangle, using barycentric projection
/// when the foot lies inside and the best edge point otherwise.
pub fn brute_closest(mesh: &TriangleMesh, p: &Vec3) -> (Vec3, f64) {
    let mut best = (Vec3::zeros(), f64::INFINITY);
    for i in 0..mesh.triangles().len() {
        let [a, b, c] = mesh.triangle(i);
        let q = triangle_point(p, &a, &b, &c);
        let d = (q - p).norm();
        if d < best.1 {
            best = (q, d);
        }
    }
    best
}

fn segment_point(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    a + ab * t
}

fn triangle_point(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let n = (b - a).cross(&(c - a));
    let foot = p - n * ((p - a).dot(&n) / n.norm_squared());
    // inside test: the foot is on the same side of all three edges
    let side = |u: &Vec3, v: &Vec3| (v - u).cross(&(foot - u)).dot(&n);
    if side(a, b) >= 0.0 && side(b, c) >= 0.0 && side(c, a) >= 0.0 {
        return foot;
    }
    [segment_point(p, a, b), segment_point(p, b, c), segment_point(p, c, a)]
        .into_iter()
        .min_by(|x, y| (x - p).norm().total_cmp(&(y - p).norm()))
        .unwrap()
}

// ---- statistics -----------------------------------------------------------

/// Two-sample KS statistic from the definition: the largest CDF gap over
/// every pooled value.
pub fn ks_d(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |xs: &[f64], t: f64| xs.iter().filter(|x| **x <= t).count() as f64 / xs.len() as f64;
    a.iter().chain(b).map(|&t| (cdf(a, t) - cdf(b, t)).abs()).fold(0.0, f64::max)
}

/// Permutation p-value by listing every way of labelling the pooled sample.
pub fn ks_permutation_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = a.len();
    let total = pooled.len();
    let d_obs = ks_d(a, b);
    let (mut hits, mut all) = (0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let (mut x, mut y) = (Vec::with_capacity(n), Vec::new());
        for (i, v) in pooled.iter().enumerate() {
            if mask & (1 << i) != 0 { x.push(*v) } else { y.push(*v) }
        }
        all += 1;
        if ks_d(&x, &y) >= d_obs - 1e-12 {
            hits += 1;
        }
    }
    hits as f64 / all as f64
}

/// Inside test by ray parity along a fixed skew direction (Möller–Trumbore).
pub fn inside_by_parity(mesh: &TriangleMesh, p: &Vec3) -> bool {
    let dir = Vec3::new(0.5773, 0.3141, 0.7537).normalize();
    let mut hits = 0;
    for i in 0..mesh.triangles().len() {
        let [a, b, c] = mesh.triangle(i);
        let (e1, e2) = (b - a, c - a);
        let h = dir.cross(&e2);
        let det = e1.dot(&h);
        if det.abs() < 1e-15 {
            continue;
        }
        let s = p - a;
        let u = s.dot(&h) / det;
        let q = s.cross(&e1);
        let v = dir.dot(&q) / det;
        let t = e2.dot(&q) / det;
        if (0.0..=1.0).contains(&u) && v >= 0.0 && u + v <= 1.0 && t > 0.0 {
            hits += 1;
        }
    }
    hits % 2 == 1
}

/// UV sphere whose vertices sit at random radii: closed, star-shaped and
/// no longer convex.
pub fn lumpy_sphere(rng: &mut impl rand::Rng, n_lon: usize, n_lat: usize) -> TriangleMesh {
    let base = TriangleMesh::uv_sphere(Vec3::zeros(), 1.0, n_lon, n_lat).unwrap();
    let verts = base.vertices().iter().map(|v| v * rng.random_range(0.03..0.05)).collect();
    TriangleMesh::new(verts, base.triangles().to_vec()).unwrap()
}

// ---- imaging --------------------------------------------------------------

/// Expected (column, row, width, height) in pixels of a straight tube of
/// `radius` along the world line `a → b`, cut by the image plane of `probe`
/// and squashed by `force` under the law `h' = h·F0/(F + F0)` with the
/// width growing by the inverse factor.
#[allow(clippy::too_many_arguments)]
pub fn expected_section(a: &Vec3, b: &Vec3, radius: f64, probe: &Pose, force: f64, f0: f64, px: f64, width: usize) -> (f64, f64, f64, f64) {
    let inv = probe.inverse();
    let (pa, pb) = (inv.transform_point(a), inv.transform_point(b));
    let t = -pa.y / (pb.y - pa.y);
    let c = pa + (pb - pa) * t;
    let u = (pb - pa).normalize();
    // an oblique cut through a tube is an ellipse with major axis r/|u·n|
    // lying along the in-plane direction of the axis
    let cos_n = u.y.abs();
    let major = 2.0 * radius / cos_n;
    let s = f0 / (force + f0);
    let along_x = (u.x * u.x) / (u.x * u.x + u.z * u.z).max(1e-300);
    let w0 = (along_x * major * major + (1.0 - along_x) * 4.0 * radius * radius).sqrt();
    let h0 = ((1.0 - along_x) * major * major + along_x * 4.0 * radius * radius).sqrt();
    (c.x / px + width as f64 / 2.0, c.z / px, w0 / s / px, h0 * s / px)
}
