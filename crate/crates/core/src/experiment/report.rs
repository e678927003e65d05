//! Per-trial rows, grouped statistics and the markdown report.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{ks_two_sample, mean, rms, std_dev, KsResult};
use super::trial::{Method, TrialMetrics};
use crate::error::{Error, Result};
use crate::phantom::VesselLabel;

/// One row of `trials.csv`. Counts are kept next to every per-frame
/// statistic so that pooled values can be rebuilt from the file alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub method: String,
    pub seed: u64,
    pub t_find_large: f64,
    pub t_sweep_large: f64,
    pub t_hold_bifurcation: f64,
    pub t_sweep_branch: f64,
    pub t_find_branch: f64,
    pub finding: f64,
    pub sweeping: f64,
    pub total: f64,
    pub rmse_px: f64,
    pub rmse_norm: f64,
    pub n_dev: usize,
    pub ecc_large_mean: f64,
    pub ecc_large_std: f64,
    pub n_ecc_large: usize,
    pub ecc_branch_mean: f64,
    pub ecc_branch_std: f64,
    pub n_ecc_branch: usize,
    pub force_mean: f64,
    pub force_std: f64,
    pub sweep_restarts: usize,
    pub timeout: bool,
}

impl TrialSummary {
    pub fn from_metrics(m: &TrialMetrics, image_width: usize) -> Self {
        let dev = m.deviations();
        let large = m.eccentricities(VesselLabel::Large);
        let branch = m.eccentricities(VesselLabel::Branch);
        let force = m.forces();
        let t = m.stage_times;
        let rmse = rms(&dev);
        Self {
            method: m.method.as_str().to_string(),
            seed: m.seed,
            t_find_large: t[0],
            t_sweep_large: t[1],
            t_hold_bifurcation: t[2],
            t_sweep_branch: t[3],
            t_find_branch: t[4],
            finding: m.finding(),
            sweeping: m.sweeping(),
            total: m.total,
            rmse_px: rmse,
            rmse_norm: rmse / image_width as f64,
            n_dev: dev.len(),
            ecc_large_mean: mean(&large),
            ecc_large_std: std_dev(&large),
            n_ecc_large: large.len(),
            ecc_branch_mean: mean(&branch),
            ecc_branch_std: std_dev(&branch),
            n_ecc_branch: branch.len(),
            force_mean: mean(&force),
            force_std: std_dev(&force),
            sweep_restarts: m.sweep_restarts,
            timeout: m.timeout,
        }
    }

    pub fn method(&self) -> Option<Method> {
        Method::parse(&self.method)
    }
}

pub fn write_trials_csv(path: &Path, rows: &[TrialSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials_csv(path: &Path) -> Result<Vec<TrialSummary>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<TrialSummary>, _>>()?;
    Ok(rows)
}

/// Per-frame sweep records of every trial.
pub fn write_frames_csv(path: &Path, trials: &[TrialMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "seed", "stage", "t_s", "found", "deviation_px", "eccentricity", "force"])?;
    for t in trials {
        for f in &t.frames {
            w.write_record([
                t.method.as_str().to_string(),
                t.seed.to_string(),
                f.stage.name().to_string(),
                f.t_s.to_string(),
                f.found.to_string(),
                f.deviation_px.to_string(),
                f.eccentricity.to_string(),
                f.force.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            std: std_dev(xs),
            n: xs.len(),
        }
    }

    /// Pools groups given as (count, mean, sample std) into one.
    pub fn pooled(groups: impl IntoIterator<Item = (usize, f64, f64)>) -> Self {
        let groups: Vec<_> = groups.into_iter().filter(|g| g.0 > 0).collect();
        let n: usize = groups.iter().map(|g| g.0).sum();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n: 0,
            };
        }
        let m = groups.iter().map(|&(k, mu, _)| k as f64 * mu).sum::<f64>() / n as f64;
        let ss: f64 = groups
            .iter()
            .map(|&(k, mu, sd)| (k as f64 - 1.0) * sd * sd + k as f64 * (mu - m).powi(2))
            .sum();
        let std = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        Self { mean: m, std, n }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub timeouts: usize,
    pub finding: MeanStd,
    pub sweeping: MeanStd,
    pub total: MeanStd,
    /// Pooled over all sweep frames of the method.
    pub rmse_px: f64,
    pub rmse_norm: f64,
    pub ecc_large: MeanStd,
    pub ecc_branch: MeanStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeMetric {
    Finding,
    Sweeping,
    Total,
}

impl TimeMetric {
    pub const ALL: [TimeMetric; 3] = [TimeMetric::Finding, TimeMetric::Sweeping, TimeMetric::Total];

    pub fn label(self) -> &'static str {
        match self {
            TimeMetric::Finding => "Vessel Finding",
            TimeMetric::Sweeping => "Sweeping",
            TimeMetric::Total => "Total",
        }
    }

    fn of(self, r: &TrialSummary) -> f64 {
        match self {
            TimeMetric::Finding => r.finding,
            TimeMetric::Sweeping => r.sweeping,
            TimeMetric::Total => r.total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsRow {
    pub metric: TimeMetric,
    pub a: Method,
    pub b: Method,
    pub result: KsResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    /// In the order human, robotic, direct; absent methods are skipped.
    pub methods: Vec<MethodSummary>,
    /// Pairwise tests on completion times; empty when a method has fewer
    /// than two trials.
    pub ks: Vec<KsRow>,
}

impl AggregateReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    pub fn ks(&self, metric: TimeMetric, a: Method, b: Method) -> Option<KsResult> {
        self.ks
            .iter()
            .find(|r| r.metric == metric && ((r.a, r.b) == (a, b) || (r.a, r.b) == (b, a)))
            .map(|r| r.result)
    }
}

fn group(rows: &[TrialSummary]) -> Result<Vec<(Method, Vec<&TrialSummary>)>> {
    let mut out: Vec<(Method, Vec<&TrialSummary>)> = Vec::new();
    for r in rows {
        let m = r
            .method()
            .ok_or_else(|| Error::InsufficientData(format!("unknown method {:?}", r.method)))?;
        match out.iter_mut().find(|(k, _)| *k == m) {
            Some((_, v)) => v.push(r),
            None => out.push((m, vec![r])),
        }
    }
    out.sort_by_key(|(m, _)| *m);
    Ok(out)
}

fn summarize_method(method: Method, rows: &[&TrialSummary]) -> MethodSummary {
    let times = |f: TimeMetric| MeanStd::of(&rows.iter().map(|r| f.of(r)).collect::<Vec<_>>());
    let n_dev: usize = rows.iter().map(|r| r.n_dev).sum();
    let pooled_sq = |f: fn(&TrialSummary) -> f64| {
        let s: f64 = rows.iter().filter(|r| r.n_dev > 0).map(|r| r.n_dev as f64 * f(r).powi(2)).sum();
        if n_dev == 0 {
            f64::NAN
        } else {
            (s / n_dev as f64).sqrt()
        }
    };
    MethodSummary {
        method,
        trials: rows.len(),
        timeouts: rows.iter().filter(|r| r.timeout).count(),
        finding: times(TimeMetric::Finding),
        sweeping: times(TimeMetric::Sweeping),
        total: times(TimeMetric::Total),
        rmse_px: pooled_sq(|r| r.rmse_px),
        rmse_norm: pooled_sq(|r| r.rmse_norm),
        ecc_large: MeanStd::pooled(rows.iter().map(|r| (r.n_ecc_large, r.ecc_large_mean, r.ecc_large_std))),
        ecc_branch: MeanStd::pooled(rows.iter().map(|r| (r.n_ecc_branch, r.ecc_branch_mean, r.ecc_branch_std))),
    }
}

/// Grouped statistics without significance tests; valid for any number of
/// trials.
pub fn summarize(rows: &[TrialSummary]) -> Result<AggregateReport> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no trials".into()));
    }
    let methods = group(rows)?.iter().map(|(m, r)| summarize_method(*m, r)).collect();
    Ok(AggregateReport { methods, ks: Vec::new() })
}

/// Grouped statistics plus pairwise two-sample KS tests on completion
/// times. Every method present needs at least two trials.
pub fn aggregate(rows: &[TrialSummary]) -> Result<AggregateReport> {
    let groups = group(rows)?;
    if groups.is_empty() {
        return Err(Error::InsufficientData("no trials".into()));
    }
    if let Some((m, r)) = groups.iter().find(|(_, r)| r.len() < 2) {
        return Err(Error::InsufficientData(format!(
            "{} has {} trial(s), the KS test needs 2",
            m.as_str(),
            r.len()
        )));
    }
    let mut report = summarize(rows)?;
    for metric in TimeMetric::ALL {
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                let a: Vec<f64> = groups[i].1.iter().map(|r| metric.of(r)).collect();
                let b: Vec<f64> = groups[j].1.iter().map(|r| metric.of(r)).collect();
                report.ks.push(KsRow {
                    metric,
                    a: groups[i].0,
                    b: groups[j].0,
                    result: ks_two_sample(&a, &b)?,
                });
            }
        }
    }
    Ok(report)
}

fn title(m: Method) -> &'static str {
    match m {
        Method::Human => "Human",
        Method::Robotic => "Robotic",
        Method::Direct => "Direct",
    }
}

fn pm(v: &MeanStd, digits: usize) -> String {
    if v.n == 0 {
        return "n/a".into();
    }
    format!("{:.*} ± {:.*}", digits, v.mean, digits, v.std)
}

pub fn render_markdown(report: &AggregateReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Scan study report\n");
    let counts: Vec<String> = report
        .methods
        .iter()
        .map(|m| format!("{} {} ({} timed out)", title(m.method), m.trials, m.timeouts))
        .collect();
    let _ = writeln!(s, "Trials per method: {}.\n", counts.join(", "));

    let _ = writeln!(s, "## Completion times (s)\n");
    let _ = writeln!(s, "| Method | Vessel Finding | Sweeping | Total |");
    let _ = writeln!(s, "|---|---|---|---|");
    for m in &report.methods {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            title(m.method),
            pm(&m.finding, 0),
            pm(&m.sweeping, 0),
            pm(&m.total, 0)
        );
    }
    let _ = writeln!(
        s,
        "\nVessel Finding counts both longitudinal views and centering the bifurcation; \
         Sweeping counts the two transverse sweeps.\n"
    );

    let _ = writeln!(s, "## Lateral deviation during sweeps\n");
    let _ = writeln!(s, "| Method | RMSE (px) | RMSE / image width |");
    let _ = writeln!(s, "|---|---|---|");
    for m in &report.methods {
        let _ = writeln!(s, "| {} | {:.1} | {:.4} |", title(m.method), m.rmse_px, m.rmse_norm);
    }

    let _ = writeln!(s, "\n## Vessel eccentricity\n");
    let header: Vec<&str> = report.methods.iter().map(|m| title(m.method)).collect();
    let _ = writeln!(s, "| Vessel | {} |", header.join(" | "));
    let _ = writeln!(s, "|---|{}", "---|".repeat(header.len()));
    for (name, pick) in [
        ("Large", (|m: &MethodSummary| m.ecc_large) as fn(&MethodSummary) -> MeanStd),
        ("Branch", |m: &MethodSummary| m.ecc_branch),
    ] {
        let cells: Vec<String> = report.methods.iter().map(|m| pm(&pick(m), 2)).collect();
        let _ = writeln!(s, "| {} | {} |", name, cells.join(" | "));
    }

    let _ = writeln!(s, "\n## Two-sample Kolmogorov–Smirnov tests on completion times\n");
    if report.ks.is_empty() {
        let _ = writeln!(s, "Not computed: every method needs at least two trials.");
    } else {
        let _ = writeln!(s, "| Metric | Pair | D | p |");
        let _ = writeln!(s, "|---|---|---|---|");
        for r in &report.ks {
            let _ = writeln!(
                s,
                "| {} | {} vs {} | {:.3} | {:.3} |",
                r.metric.label(),
                r.a.as_str(),
                r.b.as_str(),
                r.result.d,
                r.result.p
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, seed: u64, total: f64) -> TrialSummary {
        TrialSummary {
            method: method.into(),
            seed,
            t_find_large: 10.0,
            t_sweep_large: 50.0,
            t_hold_bifurcation: 10.0,
            t_sweep_branch: 60.0,
            t_find_branch: total - 130.0,
            finding: total - 110.0,
            sweeping: 110.0,
            total,
            rmse_px: 50.0,
            rmse_norm: 50.0 / 512.0,
            n_dev: 100,
            ecc_large_mean: 0.2,
            ecc_large_std: 0.1,
            n_ecc_large: 50,
            ecc_branch_mean: 0.3,
            ecc_branch_std: 0.1,
            n_ecc_branch: 50,
            force_mean: 1.0,
            force_std: 0.1,
            sweep_restarts: 0,
            timeout: false,
        }
    }

    #[test]
    fn identical_trials_have_zero_spread_and_unit_p() {
        let rows: Vec<_> = (0..4).map(|s| row("human", s, 200.0)).collect();
        let r = aggregate(&rows).unwrap();
        let h = r.method(Method::Human).unwrap();
        assert_eq!(h.total.std, 0.0);
        assert_eq!(h.total.mean, 200.0);
        assert!(r.ks.is_empty());
        let mut both = rows.clone();
        both.extend((0..4).map(|s| row("robotic", s, 200.0)));
        let r = aggregate(&both).unwrap();
        assert!(r.ks.iter().all(|k| k.result.p == 1.0 && k.result.d == 0.0));
        assert_eq!(r.ks.len(), 3);
    }

    #[test]
    fn single_trial_is_insufficient_for_ks() {
        let rows = vec![row("human", 0, 200.0), row("human", 1, 210.0), row("direct", 0, 190.0)];
        assert!(matches!(aggregate(&rows), Err(Error::InsufficientData(_))));
        assert_eq!(summarize(&rows).unwrap().methods.len(), 2);
    }

    #[test]
    fn pooling_matches_direct_computation() {
        let a = [0.1, 0.4, 0.35];
        let b = [0.2, 0.9];
        let all: Vec<f64> = a.iter().chain(&b).copied().collect();
        let p = MeanStd::pooled([(3, mean(&a), std_dev(&a)), (2, mean(&b), std_dev(&b))]);
        assert!((p.mean - mean(&all)).abs() < 1e-15);
        assert!((p.std - std_dev(&all)).abs() < 1e-15);
    }

    #[test]
    fn table_layout() {
        let rows: Vec<_> = (0..3).map(|s| row("human", s, 200.0 + s as f64)).collect();
        let md = render_markdown(&aggregate(&rows).unwrap());
        assert!(md.contains("| Method | Vessel Finding | Sweeping | Total |"));
        assert!(md.contains("| Vessel | Human |"));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut rows = vec![row("human", 3, 201.5), row("direct", 4, 180.25)];
        rows[1].ecc_branch_mean = f64::NAN;
        write_trials_csv(&p, &rows).unwrap();
        let back = read_trials_csv(&p).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(back[1].ecc_branch_mean.is_nan());
    }
}
