use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::trace::FrequencyTrace;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges, one more than the counts.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Equal-width histogram over the data range.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() || bins == 0 {
        return Err(Error::invalid("histogram needs data and at least one bin"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let w = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * w).collect();
    let mut counts = vec![0u64; bins];
    for v in values {
        let i = (((v - lo) / w) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

impl MixtureComponent {
    pub fn density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        self.weight * (-0.5 * z * z).exp() / (self.std * (2.0 * PI).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    /// Sorted by mean.
    pub components: Vec<MixtureComponent>,
    /// Log-likelihood of the binned data after each iteration.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Indices of components with weight below [`MixtureOptions::weak_weight`].
    pub weak: Vec<usize>,
}

impl GaussianMixture {
    pub fn density(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.density(x)).sum()
    }

    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureOptions {
    pub bins: usize,
    pub max_iterations: usize,
    pub rel_tol: f64,
    /// Components below this weight are reported as weak.
    pub weak_weight: f64,
    /// Collapse threshold relative to the data range.
    pub std_floor: f64,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        MixtureOptions {
            bins: 256,
            max_iterations: 500,
            rel_tol: 1e-8,
            weak_weight: 0.01,
            std_floor: 1e-6,
        }
    }
}

/// Gaussian mixture fitted to the value histogram of a trace.
pub fn fit_mixture(trace: &FrequencyTrace, k: usize) -> Result<GaussianMixture> {
    fit_mixture_with(&trace.values, k, &MixtureOptions::default())
}

/// Expectation–maximisation on histogram bin centres weighted by counts. Two
/// deterministic starts are tried (k-quantiles, evenly spaced means) and the one with
/// the higher final likelihood is kept.
pub fn fit_mixture_with(values: &[f64], k: usize, opts: &MixtureOptions) -> Result<GaussianMixture> {
    if k == 0 {
        return Err(Error::invalid("mixture needs k >= 1"));
    }
    if values.len() < 100 * k {
        return Err(Error::TooShort {
            len: values.len(),
            min: 100 * k,
        });
    }
    let hist = histogram(values, opts.bins)?;
    let x = hist.centers();
    let n: Vec<f64> = hist.counts.iter().map(|c| *c as f64).collect();
    let total: f64 = n.iter().sum();
    let range = hist.edges[hist.edges.len() - 1] - hist.edges[0];
    let floor = opts.std_floor * range;

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean_all = values.iter().sum::<f64>() / values.len() as f64;
    let std_all = (values.iter().map(|v| (v - mean_all).powi(2)).sum::<f64>() / values.len() as f64).sqrt();
    let std0 = (std_all / k as f64).max(hist.bin_width());
    let start = |mean: &dyn Fn(usize) -> f64| -> Vec<MixtureComponent> {
        (0..k)
            .map(|i| MixtureComponent {
                weight: 1.0 / k as f64,
                mean: mean(i),
                std: std0,
            })
            .collect()
    };
    // k-quantiles first; evenly spaced means over the range as a second start, which
    // catches weak modes the quantiles merge
    let lo = hist.edges[0];
    let starts = [
        start(&|i| sorted[((i as f64 + 0.5) / k as f64 * (sorted.len() - 1) as f64).round() as usize]),
        start(&|i| lo + (i as f64 + 0.5) / k as f64 * range),
    ];
    let em = Em {
        x: &x,
        n: &n,
        total,
        bin_width: hist.bin_width(),
        floor,
        opts,
    };
    let mut best: Option<GaussianMixture> = None;
    let mut first_err = None;
    for init in starts.iter().take(if k == 1 { 1 } else { 2 }) {
        match em.run(init.clone()) {
            Ok(g) => {
                if best.as_ref().is_none_or(|b| g.final_log_likelihood() > b.final_log_likelihood()) {
                    best = Some(g);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.expect("at least one start"))
}

struct Em<'a> {
    x: &'a [f64],
    n: &'a [f64],
    total: f64,
    bin_width: f64,
    floor: f64,
    opts: &'a MixtureOptions,
}

impl Em<'_> {
    fn log_likelihood(&self, comps: &[MixtureComponent]) -> f64 {
        self.x
            .iter()
            .zip(self.n)
            .filter(|(_, c)| **c > 0.0)
            .map(|(xi, c)| {
                let d: f64 = comps.iter().map(|m| m.density(*xi)).sum();
                c * (d * self.bin_width).max(f64::MIN_POSITIVE).ln()
            })
            .sum()
    }

    fn run(&self, mut comps: Vec<MixtureComponent>) -> Result<GaussianMixture> {
        let (x, n, k) = (self.x, self.n, comps.len());
        let mut history = vec![self.log_likelihood(&comps)];
        let mut resp = vec![vec![0.0; x.len()]; k];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < self.opts.max_iterations {
            iterations += 1;
            for (j, xj) in x.iter().enumerate() {
                let d: Vec<f64> = comps.iter().map(|m| m.density(*xj)).collect();
                let s: f64 = d.iter().sum();
                for i in 0..k {
                    resp[i][j] = if s > 0.0 { d[i] / s } else { 1.0 / k as f64 };
                }
            }
            for i in 0..k {
                let w: f64 = (0..x.len()).map(|j| resp[i][j] * n[j]).sum();
                if w <= 0.0 {
                    return Err(Error::Degenerate { component: i, std: 0.0 });
                }
                let mean = (0..x.len()).map(|j| resp[i][j] * n[j] * x[j]).sum::<f64>() / w;
                let var = (0..x.len()).map(|j| resp[i][j] * n[j] * (x[j] - mean).powi(2)).sum::<f64>() / w;
                let std = var.sqrt();
                if !(std >= self.floor) || std == 0.0 {
                    return Err(Error::Degenerate { component: i, std });
                }
                comps[i] = MixtureComponent {
                    weight: w / self.total,
                    mean,
                    std,
                };
            }
            let ll = self.log_likelihood(&comps);
            let prev = *history.last().expect("non-empty");
            history.push(ll);
            if ((ll - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < self.opts.rel_tol {
                converged = true;
                break;
            }
        }
        comps.sort_by(|a, b| a.mean.total_cmp(&b.mean));
        let weak = comps
            .iter()
            .enumerate()
            .filter(|(_, c)| c.weight < self.opts.weak_weight)
            .map(|(i, _)| i)
            .collect();
        Ok(GaussianMixture {
            components: comps,
            log_likelihood: history,
            iterations,
            converged,
            weak,
        })
    }
}
