//! Scan protocol, scripted expert, trial runner and study statistics.

pub mod config;
pub mod policy;
pub mod report;
pub mod stats;
pub mod task;
pub mod trial;

pub use config::{ChannelConfig, ExpertParams, Scenario, TaskConfig};
pub use policy::{ExpertPolicy, Observation};
pub use report::{aggregate, render_markdown, summarize, AggregateReport, MethodSummary, TrialSummary};
pub use stats::{ks_two_sample, KsResult};
pub use task::{advance_task, Judge, TaskGeometry, TaskStage, TaskState};
pub use trial::{run_trial, FrameDump, FrameRecord, Method, Simulator, TrialMetrics, TrialOptions};

use crate::error::Result;

/// Every (method, seed) pair of a study, methods outermost; trial `i` of a
/// method uses seed `base_seed + i`.
pub fn trial_plan(methods: &[Method], trials: usize, base_seed: u64) -> Vec<(Method, u64)> {
    methods
        .iter()
        .flat_map(|&m| (0..trials as u64).map(move |i| (m, base_seed + i)))
        .collect()
}

/// Runs the plan one trial after another.
pub fn run_batch_sequential(sim: &Simulator, plan: &[(Method, u64)], opts: &TrialOptions) -> Result<Vec<TrialMetrics>> {
    plan.iter().map(|&(m, s)| sim.run_trial_with(m, s, opts)).collect()
}

/// Runs the plan with trials spread over the rayon pool. Results come back
/// in plan order and equal the sequential ones, since each trial is a
/// pure function of its inputs.
#[cfg(feature = "parallel")]
pub fn run_batch(sim: &Simulator, plan: &[(Method, u64)], opts: &TrialOptions) -> Result<Vec<TrialMetrics>> {
    use rayon::prelude::*;
    plan.par_iter().map(|&(m, s)| sim.run_trial_with(m, s, opts)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn run_batch(sim: &Simulator, plan: &[(Method, u64)], opts: &TrialOptions) -> Result<Vec<TrialMetrics>> {
    run_batch_sequential(sim, plan, opts)
}
