use nalgebra::{SMatrix, SVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use super::kinematics::{JointVec, KinematicChain, DOF};
use super::RobotError;
use crate::rng::mix;
use crate::spatial::{pose_error, Pose};

/// Residual below which a seed counts as converged.
pub const POS_TOL: f64 = 1e-6;
pub const ROT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IkParams {
    pub damping: f64,
    pub max_iterations: usize,
    pub seeds: usize,
    /// Std of the Gaussian perturbation applied to `current` for extra seeds, rad.
    pub seed_spread: f64,
    /// Per-joint weights of the closest-configuration metric.
    pub weights: [f64; DOF],
    pub seed: u64,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            max_iterations: 200,
            seeds: 8,
            seed_spread: 0.5,
            weights: [1.0; DOF],
            seed: 0,
        }
    }
}

fn residual(chain: &KinematicChain, target: &Pose, q: &JointVec) -> (f64, f64) {
    let e = pose_error(target, &chain.fk_unchecked(q));
    (e.translation_norm(), e.rotation_angle())
}

/// Damped least-squares descent from one seed. Returns the final joints.
pub fn descend(chain: &KinematicChain, target: &Pose, seed: JointVec, params: &IkParams) -> JointVec {
    let lambda2 = params.damping * params.damping;
    let mut q = seed;
    for _ in 0..params.max_iterations {
        let (p, jac) = chain.fk_jacobian(&q);
        let e = pose_error(target, &p);
        if e.translation_norm() < 1e-13 && e.rotation_angle() < 1e-13 {
            break;
        }
        let err = SVector::<f64, 6>::from_iterator(e.translational.iter().chain(e.rotational.iter()).copied());
        let a = jac * jac.transpose() + SMatrix::<f64, 6, 6>::identity() * lambda2;
        let Some(chol) = a.cholesky() else { break };
        let mut dq = jac.transpose() * chol.solve(&err);
        let big = dq.amax();
        if big > 0.4 {
            dq *= 0.4 / big;
        }
        let prev = q;
        q += dq;
        chain.clamp(&mut q);
        if (q - prev).amax() < 1e-15 {
            break;
        }
    }
    q
}

/// Slides a converged solution along its self-motion manifold toward the
/// weighted-closest point to `current`. Each step moves along the null-space
/// projection of the metric gradient, then re-projects onto the target pose.
pub fn refine_toward(chain: &KinematicChain, target: &Pose, q: JointVec, current: &JointVec, params: &IkParams) -> JointVec {
    let w = JointVec::from_column_slice(&params.weights);
    let mut q = q;
    for _ in 0..REFINE_STEPS {
        let (_, jac) = chain.fk_jacobian(&q);
        let Some(chol) = (jac * jac.transpose()).cholesky() else { break };
        let g = (q - current).component_mul(&w);
        let d = g - jac.transpose() * chol.solve(&(jac * g));
        let curv = d.dot(&d.component_mul(&w));
        if curv <= 0.0 {
            break;
        }
        let t = -d.dot(&g) / curv;
        if (d * t).amax() < 1e-12 {
            break;
        }
        let Some(next) = reproject(chain, target, q + d * t) else { break };
        if !chain.within_limits(&next) || weighted_distance(&next, current, &params.weights) >= weighted_distance(&q, current, &params.weights) {
            break;
        }
        q = next;
    }
    q
}

const REFINE_STEPS: usize = 30;

/// Undamped Newton back onto `target`; `None` if it does not reach 1e-12.
fn reproject(chain: &KinematicChain, target: &Pose, mut q: JointVec) -> Option<JointVec> {
    for _ in 0..8 {
        let (p, jac) = chain.fk_jacobian(&q);
        let e = pose_error(target, &p);
        if e.translation_norm() < 1e-12 && e.rotation_angle() < 1e-12 {
            return Some(q);
        }
        let err = SVector::<f64, 6>::from_iterator(e.translational.iter().chain(e.rotational.iter()).copied());
        q += jac.transpose() * (jac * jac.transpose()).cholesky()?.solve(&err);
    }
    let (ep, er) = residual(chain, target, &q);
    (ep < 1e-12 && er < 1e-12).then_some(q)
}

pub fn weighted_distance(a: &JointVec, b: &JointVec, w: &[f64; DOF]) -> f64 {
    (0..DOF).map(|i| w[i] * (a[i] - b[i]).powi(2)).sum()
}

/// All converged solutions from `current` and the perturbed seeds.
pub fn solutions(chain: &KinematicChain, target: &Pose, current: &JointVec, params: &IkParams) -> Vec<JointVec> {
    let key = target
        .position
        .iter()
        .chain(target.orientation.as_ref().coords.iter())
        .fold(params.seed, |h, v| mix(h, v.to_bits()));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let spread = Normal::new(0.0, params.seed_spread.max(0.0)).expect("finite spread");
    let mut out = Vec::new();
    for k in 0..params.seeds.max(1) {
        let mut seed = *current;
        if k > 0 {
            for v in seed.iter_mut() {
                *v += spread.sample(&mut rng);
            }
        }
        chain.clamp(&mut seed);
        let q = descend(chain, target, seed, params);
        let (ep, er) = residual(chain, target, &q);
        if ep < POS_TOL && er < ROT_TOL && chain.within_limits(&q) {
            out.push(refine_toward(chain, target, q, current, params));
        }
    }
    out
}

/// Converged solution closest to `current` in the weighted joint metric.
pub fn solve_ik(chain: &KinematicChain, target: &Pose, current: &JointVec, params: &IkParams) -> Result<JointVec, RobotError> {
    if (target.position - chain.base.position).norm() > chain.reach() {
        return Err(RobotError::Unreachable("target beyond chain reach".into()));
    }
    solutions(chain, target, current, params)
        .into_iter()
        .min_by(|a, b| {
            weighted_distance(a, current, &params.weights).total_cmp(&weighted_distance(b, current, &params.weights))
        })
        .ok_or_else(|| RobotError::Unreachable("no seed converged".into()))
}
