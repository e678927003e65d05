//! Summary statistics and the two-sample Kolmogorov–Smirnov test.

use crate::error::Error;

/// Largest combined size for which the exact null distribution is used.
pub const EXACT_LIMIT: usize = 10;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1); zero for a single value.
pub fn std_dev(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let m = mean(xs);
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    }
}

pub fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    /// Supremum gap between the empirical CDFs.
    pub d: f64,
    pub p: f64,
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `sup |F_a − F_b|`, evaluated at every distinct pooled value.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Kolmogorov tail `Q(λ) = 2 Σ (−1)^{k−1} exp(−2k²λ²)` with the effective
/// sample size correction, clamped to `[0, 1]`.
pub fn ks_asymptotic_p(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Exact permutation p-value `P(D ≥ d_obs)` under random relabelling of
/// the pooled sample, counting lattice paths that stay below `d_obs` at
/// every tie-group boundary.
pub fn ks_exact_p(a: &[f64], b: &[f64], d_obs: f64) -> f64 {
    let (n, m) = (a.len(), b.len());
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let total = n + m;
    let boundary: Vec<bool> = (1..=total).map(|k| k == total || pooled[k - 1] < pooled[k]).collect();
    let tol = 1e-12;
    // paths[i] = ways to place i samples of `a` among the first k pooled
    let mut paths = vec![0.0f64; n + 1];
    paths[0] = 1.0;
    for k in 1..=total {
        let mut next = vec![0.0f64; n + 1];
        for i in 0..=n.min(k) {
            let j = k - i;
            if j > m {
                continue;
            }
            let mut ways = 0.0;
            if i > 0 {
                ways += paths[i - 1];
            }
            if j > 0 && i < k {
                ways += paths[i];
            }
            if boundary[k - 1] && (i as f64 / n as f64 - j as f64 / m as f64).abs() >= d_obs - tol {
                ways = 0.0;
            }
            next[i] = ways;
        }
        paths = next;
    }
    let below = paths[n];
    let all: f64 = (0..n).fold(1.0, |c, i| c * (total - i) as f64 / (i + 1) as f64);
    (1.0 - below / all).clamp(0.0, 1.0)
}

/// Two-sample KS test: exact for samples of up to [`EXACT_LIMIT`] values,
/// asymptotic beyond.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, Error> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let d = ks_statistic(a, b);
    let p = if d == 0.0 {
        1.0
    } else if a.len() <= EXACT_LIMIT && b.len() <= EXACT_LIMIT {
        ks_exact_p(a, b, d)
    } else {
        ks_asymptotic_p(d, a.len(), b.len())
    };
    Ok(KsResult { d, p })
}
