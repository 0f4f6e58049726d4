use serde::{Deserialize, Serialize};

use crate::fit::{linear_fit, LinearFit};
use crate::trace::FrequencyTrace;
use crate::{Error, Result};

/// Coverage of the reported confidence intervals (±1σ equivalent).
pub const CONFIDENCE: f64 = 0.683;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllanEstimate {
    pub taus: Vec<f64>,
    pub sigma: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Equivalent χ² degrees of freedom used for the intervals.
    pub edf: Vec<f64>,
    pub overlapping: bool,
}

/// Averaging times `m·dt` spaced roughly evenly in log from `dt` to `duration/5`.
pub fn log_tau_grid(dt: f64, n_samples: usize, points_per_decade: f64) -> Vec<f64> {
    let m_max = n_samples / 5;
    let mut ms: Vec<usize> = Vec::new();
    if m_max == 0 {
        return Vec::new();
    }
    let decades = (m_max as f64).log10();
    let steps = (decades * points_per_decade).ceil() as usize;
    for i in 0..=steps {
        let m = 10f64.powf(i as f64 / points_per_decade).round() as usize;
        let m = m.clamp(1, m_max);
        if ms.last() != Some(&m) {
            ms.push(m);
        }
    }
    ms.into_iter().map(|m| m as f64 * dt).collect()
}

fn averaging_factor(trace: &FrequencyTrace, tau: f64) -> Result<usize> {
    let out = |reason: &str| Error::TauOutOfRange {
        tau,
        reason: reason.to_string(),
    };
    let ratio = tau / trace.dt;
    let m = ratio.round();
    if !(m >= 1.0) {
        return Err(out("shorter than the sample interval"));
    }
    if (ratio - m).abs() > 1e-6 * m {
        return Err(out("not an integer multiple of the sample interval"));
    }
    if tau > trace.duration() / 5.0 * (1.0 + 1e-9) {
        return Err(out("longer than a fifth of the trace"));
    }
    Ok(m as usize)
}

/// `χ²_p(ν)` by the Wilson–Hilferty approximation for standard-normal quantile `z`.
fn chi2_quantile(nu: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * nu);
    (nu * (1.0 - a + z * a.sqrt()).powi(3)).max(f64::MIN_POSITIVE)
}

fn finish(taus: &[f64], var: Vec<f64>, edf: Vec<f64>, overlapping: bool) -> AllanEstimate {
    let mut ci_low = Vec::with_capacity(var.len());
    let mut ci_high = Vec::with_capacity(var.len());
    for (v, nu) in var.iter().zip(&edf) {
        ci_low.push((nu * v / chi2_quantile(*nu, 1.0)).sqrt());
        ci_high.push((nu * v / chi2_quantile(*nu, -1.0)).sqrt());
    }
    AllanEstimate {
        taus: taus.to_vec(),
        sigma: var.iter().map(|v| v.sqrt()).collect(),
        ci_low,
        ci_high,
        edf,
        overlapping,
    }
}

fn prefix_sums(v: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(v.len() + 1);
    c.push(0.0);
    let mut acc = 0.0;
    for x in v {
        acc += x;
        c.push(acc);
    }
    c
}

/// Overlapping Allan deviation `σ²(τ) = ½⟨(ȳ_{k+m} − ȳ_k)²⟩` over all start indices.
pub fn allan(trace: &FrequencyTrace, taus: &[f64]) -> Result<AllanEstimate> {
    let n = trace.len();
    // offset removal keeps the prefix sums well conditioned
    let mean = trace.mean();
    let centred: Vec<f64> = trace.values.iter().map(|v| v - mean).collect();
    let c = prefix_sums(&centred);
    let mut var = Vec::with_capacity(taus.len());
    let mut edf = Vec::with_capacity(taus.len());
    for &tau in taus {
        let m = averaging_factor(trace, tau)?;
        let mf = m as f64;
        let terms = n + 1 - 2 * m;
        let mut acc = 0.0;
        for j in 0..terms {
            let d = c[j + 2 * m] - 2.0 * c[j + m] + c[j];
            acc += d * d;
        }
        var.push(acc / (2.0 * mf * mf * terms as f64));
        edf.push((n as f64 / mf - 1.0).max(1.0));
    }
    Ok(finish(taus, var, edf, true))
}

/// Allan deviation from adjacent, non-overlapping windows.
pub fn allan_non_overlapping(trace: &FrequencyTrace, taus: &[f64]) -> Result<AllanEstimate> {
    let mut var = Vec::with_capacity(taus.len());
    let mut edf = Vec::with_capacity(taus.len());
    for &tau in taus {
        let m = averaging_factor(trace, tau)?;
        let means: Vec<f64> = trace
            .values
            .chunks_exact(m)
            .map(|w| w.iter().sum::<f64>() / m as f64)
            .collect();
        let diffs = means.len() - 1;
        let acc: f64 = means.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        var.push(acc / (2.0 * diffs as f64));
        edf.push(diffs as f64);
    }
    Ok(finish(taus, var, edf, false))
}

/// Straight-line fit of `log10 σ` against `log10 τ` over `[lo, hi]`.
pub fn log_slope(est: &AllanEstimate, lo: f64, hi: f64) -> Result<LinearFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = est
        .taus
        .iter()
        .zip(&est.sigma)
        .filter(|(t, s)| **t >= lo && **t <= hi && **s > 0.0)
        .map(|(t, s)| (t.log10(), s.log10()))
        .unzip();
    linear_fit(&x, &y)
}

/// Averaging time of the largest Allan deviation, refined by a parabola through the
/// maximum and its neighbours in `log τ`.
pub fn peak_tau(est: &AllanEstimate) -> Option<f64> {
    let k = (0..est.sigma.len()).max_by(|a, b| est.sigma[*a].total_cmp(&est.sigma[*b]))?;
    if k == 0 || k + 1 >= est.sigma.len() {
        return Some(est.taus[k]);
    }
    let x: Vec<f64> = (k - 1..=k + 1).map(|i| est.taus[i].ln()).collect();
    let y: Vec<f64> = (k - 1..=k + 1).map(|i| est.sigma[i]).collect();
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let curv = (d2 - d1) / (x[2] - x[0]);
    if curv >= 0.0 {
        return Some(est.taus[k]);
    }
    // vertex of the interpolating parabola
    let xv = 0.5 * (x[0] + x[1]) - d1 / (2.0 * curv);
    Some(xv.clamp(x[0], x[2]).exp())
}
