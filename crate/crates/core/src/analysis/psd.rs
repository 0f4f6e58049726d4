use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{digamma, trigamma};
use crate::fit::weighted_linear_fit;
use crate::trace::FrequencyTrace;
use crate::{Error, Result};

const MIN_LEN: usize = 64;

/// Raw one-sided spectrum, DC excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
    /// Degrees of freedom of the χ² distribution of each value.
    pub dof: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PsdMethod {
    Periodogram,
    /// Hann-windowed segments with 50% overlap.
    Welch { segment_len: usize },
}

/// Smoothed one-sided PSD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
    /// Approximate χ² degrees of freedom of each smoothed value.
    pub dof: Vec<f64>,
    /// Number of raw spectral bins averaged into each value.
    pub counts: Vec<usize>,
    pub method: PsdMethod,
    /// Log-spaced averaging bins per decade; `None` for the raw spectrum.
    pub bins_per_decade: Option<f64>,
    pub frequency_resolution: f64,
}

impl PsdEstimate {
    /// `∫S df` over `[lo, hi]` by the rectangle rule on the raw resolution.
    pub fn integrated_power(&self, lo: f64, hi: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.values)
            .zip(&self.counts)
            .filter(|((f, _), _)| **f >= lo && **f <= hi)
            .map(|((_, v), c)| v * *c as f64 * self.frequency_resolution)
            .sum()
    }
}

fn check_len(t: &FrequencyTrace, min: usize) -> Result<()> {
    if t.len() < min {
        return Err(Error::TooShort { len: t.len(), min });
    }
    Ok(())
}

/// Mean-subtracted one-sided periodogram `P_k = 2·dt/N·|X_k|²` (Nyquist bin not doubled).
pub fn periodogram(trace: &FrequencyTrace) -> Result<Spectrum> {
    check_len(trace, MIN_LEN)?;
    let n = trace.len();
    let mean = trace.mean();
    let mut buf: Vec<Complex64> = trace.values.iter().map(|v| Complex64::new(v - mean, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let df = 1.0 / (n as f64 * trace.dt);
    let scale = trace.dt / n as f64;
    let (freqs, values) = (1..=n / 2)
        .map(|k| {
            let p = buf[k].norm_sqr() * scale;
            (k as f64 * df, if 2 * k == n { p } else { 2.0 * p })
        })
        .unzip();
    Ok(Spectrum { freqs, values, dof: 2.0 })
}

fn welch_spectrum(trace: &FrequencyTrace, segment_len: usize) -> Result<Spectrum> {
    check_len(trace, MIN_LEN)?;
    if segment_len < 16 || segment_len > trace.len() {
        return Err(Error::invalid(format!(
            "Welch segment length {segment_len} must be in [16, {}]",
            trace.len()
        )));
    }
    let m = segment_len;
    let hop = m / 2;
    let window: Vec<f64> = (0..m).map(|j| 0.5 - 0.5 * (2.0 * PI * j as f64 / m as f64).cos()).collect();
    let u: f64 = window.iter().map(|w| w * w).sum();
    let mean = trace.mean();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(m);
    let mut acc = vec![0.0; m / 2];
    let mut segments = 0;
    let mut start = 0;
    while start + m <= trace.len() {
        let mut buf: Vec<Complex64> = (0..m)
            .map(|j| Complex64::new((trace.values[start + j] - mean) * window[j], 0.0))
            .collect();
        fft.process(&mut buf);
        for k in 1..=m / 2 {
            let p = buf[k].norm_sqr() * trace.dt / u;
            acc[k - 1] += if 2 * k == m { p } else { 2.0 * p };
        }
        segments += 1;
        start += hop;
    }
    let df = 1.0 / (m as f64 * trace.dt);
    Ok(Spectrum {
        freqs: (1..=m / 2).map(|k| k as f64 * df).collect(),
        values: acc.into_iter().map(|v| v / segments as f64).collect(),
        // overlapping Hann segments: roughly 1.9 independent estimates per pair
        dof: 2.0 * segments as f64 * if segments > 1 { 0.95 } else { 1.0 },
    })
}

/// Average a spectrum over log-spaced bins. Bin values are the arithmetic mean of
/// their members; bin frequencies the geometric mean. Returns the member counts.
pub fn smooth_log(freqs: &[f64], values: &[f64], bins_per_decade: f64) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let mut out_f = Vec::new();
    let mut out_v = Vec::new();
    let mut counts = Vec::new();
    if freqs.is_empty() {
        return (out_f, out_v, counts);
    }
    let f0 = freqs[0];
    let bin_of = |f: f64| ((f / f0).log10() * bins_per_decade + 1e-9).floor() as i64;
    let mut i = 0;
    while i < freqs.len() {
        let b = bin_of(freqs[i]);
        let mut j = i;
        let (mut sl, mut sv) = (0.0, 0.0);
        while j < freqs.len() && bin_of(freqs[j]) == b {
            sl += freqs[j].ln();
            sv += values[j];
            j += 1;
        }
        let c = j - i;
        out_f.push((sl / c as f64).exp());
        out_v.push(sv / c as f64);
        counts.push(c);
        i = j;
    }
    (out_f, out_v, counts)
}

fn estimate(spec: Spectrum, method: PsdMethod, bins_per_decade: Option<f64>, resolution: f64) -> PsdEstimate {
    match bins_per_decade {
        Some(bpd) => {
            let (freqs, values, counts) = smooth_log(&spec.freqs, &spec.values, bpd);
            PsdEstimate {
                freqs,
                values,
                dof: counts.iter().map(|c| *c as f64 * spec.dof).collect(),
                counts,
                method,
                bins_per_decade,
                frequency_resolution: resolution,
            }
        }
        None => PsdEstimate {
            dof: vec![spec.dof; spec.freqs.len()],
            counts: vec![1; spec.freqs.len()],
            freqs: spec.freqs,
            values: spec.values,
            method,
            bins_per_decade,
            frequency_resolution: resolution,
        },
    }
}

/// Periodogram of the mean-subtracted trace, averaged over log-spaced bins.
pub fn psd(trace: &FrequencyTrace, bins_per_decade: Option<f64>) -> Result<PsdEstimate> {
    if bins_per_decade.is_some_and(|b| !(b > 0.0)) {
        return Err(Error::invalid("bins_per_decade must be > 0"));
    }
    let spec = periodogram(trace)?;
    let res = 1.0 / trace.duration();
    Ok(estimate(spec, PsdMethod::Periodogram, bins_per_decade, res))
}

/// Welch estimate with optional log-bin smoothing.
pub fn welch(trace: &FrequencyTrace, segment_len: usize, bins_per_decade: Option<f64>) -> Result<PsdEstimate> {
    let spec = welch_spectrum(trace, segment_len)?;
    let res = 1.0 / (segment_len as f64 * trace.dt);
    Ok(estimate(spec, PsdMethod::Welch { segment_len }, bins_per_decade, res))
}

/// Result of fitting `S(f) = a_p/f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlickerFit {
    pub a_p: f64,
    pub a_p_stderr: f64,
    pub band: (f64, f64),
    pub points: usize,
    /// Log-log slope with the exponent left free.
    pub free_slope: f64,
    pub free_slope_stderr: f64,
    /// Reduced χ² of the fixed-slope fit under the χ² model of the estimate.
    pub reduced_chi2: f64,
    /// Set when the residuals exceed what estimator noise explains.
    pub excess: bool,
}

/// Threshold on the reduced χ² above which [`FlickerFit::excess`] is set.
pub const EXCESS_CHI2: f64 = 3.0;

/// Least squares of `ln S + ln f` against a constant over `band`, weighted by the
/// variance of the log of a scaled χ² variable and corrected for its bias.
pub fn fit_flicker(est: &PsdEstimate, band: (f64, f64)) -> Result<FlickerFit> {
    let (lo, hi) = band;
    let idx: Vec<usize> = (0..est.freqs.len())
        .filter(|&i| est.freqs[i] >= lo && est.freqs[i] <= hi && est.values[i] > 0.0)
        .collect();
    if idx.len() < 2 {
        return Err(Error::BandEmpty { lo, hi });
    }
    let mut x = Vec::with_capacity(idx.len());
    let mut y = Vec::with_capacity(idx.len());
    let mut w = Vec::with_capacity(idx.len());
    for &i in &idx {
        // infinite dof marks a noiseless (model) spectrum
        let (bias, var) = if est.dof[i].is_finite() {
            let half = est.dof[i] / 2.0;
            (digamma(half) - half.ln(), trigamma(half))
        } else {
            (0.0, 1.0)
        };
        x.push(est.freqs[i].ln());
        y.push(est.values[i].ln() - bias);
        w.push(1.0 / var);
    }
    let sw: f64 = w.iter().sum();
    let ln_a = x.iter().zip(&y).zip(&w).map(|((xi, yi), wi)| wi * (yi + xi)).sum::<f64>() / sw;
    let chi2: f64 = x
        .iter()
        .zip(&y)
        .zip(&w)
        .map(|((xi, yi), wi)| wi * (yi + xi - ln_a).powi(2))
        .sum();
    let reduced_chi2 = chi2 / (idx.len() - 1) as f64;
    let a_p = ln_a.exp();
    let free = if idx.len() >= 3 {
        weighted_linear_fit(&x, &y, &w)?
    } else {
        crate::fit::LinearFit {
            slope: -1.0,
            intercept: ln_a,
            slope_stderr: f64::INFINITY,
            intercept_stderr: f64::INFINITY,
            r_squared: 1.0,
            residual_rms: 0.0,
        }
    };
    Ok(FlickerFit {
        a_p,
        a_p_stderr: a_p / sw.sqrt(),
        band,
        points: idx.len(),
        free_slope: free.slope,
        free_slope_stderr: free.slope_stderr,
        reduced_chi2,
        excess: reduced_chi2 > EXCESS_CHI2,
    })
}

/// Height of a spectral line above the local continuum of the raw periodogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSignificance {
    pub frequency: f64,
    pub line_power: f64,
    pub continuum_mean: f64,
    pub continuum_std: f64,
    /// `(line − mean)/std`.
    pub z: f64,
}

/// Compare the periodogram bin nearest `f_line` with `neighbours` bins on each side,
/// skipping the two directly adjacent bins.
pub fn line_significance(trace: &FrequencyTrace, f_line: f64, neighbours: usize) -> Result<LineSignificance> {
    let spec = periodogram(trace)?;
    let df = spec.freqs[0];
    let k = (f_line / df).round() as usize;
    if k < 1 || k > spec.freqs.len() || neighbours < 2 {
        return Err(Error::invalid(format!("line at {f_line} Hz outside spectrum or too few neighbours")));
    }
    let i = k - 1;
    let mut cont = Vec::with_capacity(2 * neighbours);
    for d in 2..2 + neighbours {
        if i >= d {
            cont.push(spec.values[i - d]);
        }
        if i + d < spec.values.len() {
            cont.push(spec.values[i + d]);
        }
    }
    if cont.len() < 4 {
        return Err(Error::invalid("not enough continuum bins around the line"));
    }
    let n = cont.len() as f64;
    let mean = cont.iter().sum::<f64>() / n;
    let std = (cont.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let line = spec.values[i];
    Ok(LineSignificance {
        frequency: spec.freqs[i],
        line_power: line,
        continuum_mean: mean,
        continuum_std: std,
        z: (line - mean) / std,
    })
}
