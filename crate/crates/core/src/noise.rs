//! Seeded generators for resonator frequency noise and common-mode disturbances.
//!
//! Frequency noise is the sum of random telegraph signals (single two-level systems),
//! a `1/f` background and a white floor. Every component gets its own generator,
//! seeded from the master seed and the component index, so adding a component leaves
//! the others untouched.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::trace::{FrequencyTrace, TraceMeta};
use crate::{Error, Result};

/// Identifier of the pseudo-random generator, recorded in run manifests.
pub const PRNG_ID: &str = "ChaCha12 (rand_chacha 0.9, seed_from_u64), splitmix64 stream split";

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of component `index` of a master seed.
pub fn component_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Two-level fluctuator: the frequency jumps between 0 and `delta_f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RtsParams {
    /// Jump amplitude (Hz).
    pub delta_f: f64,
    /// Rate of the 0 → `delta_f` transition (1/s).
    pub rate_up: f64,
    /// Rate of the `delta_f` → 0 transition (1/s).
    pub rate_down: f64,
}

impl RtsParams {
    /// Symmetric fluctuator with Lorentzian corner `f_c`.
    pub fn symmetric(delta_f: f64, f_c: f64) -> Self {
        let rate = TAU * f_c / 2.0;
        RtsParams {
            delta_f,
            rate_up: rate,
            rate_down: rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_up > 0.0 && self.rate_down > 0.0) || !self.rate_up.is_finite() || !self.rate_down.is_finite() {
            return Err(Error::invalid("RTS rates must be positive and finite"));
        }
        if !self.delta_f.is_finite() {
            return Err(Error::invalid("RTS delta_f must be finite"));
        }
        Ok(())
    }

    /// Corner frequency `(rate_up + rate_down)/2π` of the Lorentzian spectrum.
    pub fn corner_hz(&self) -> f64 {
        (self.rate_up + self.rate_down) / TAU
    }

    /// Correlation time `1/(rate_up + rate_down)`.
    pub fn correlation_time(&self) -> f64 {
        1.0 / (self.rate_up + self.rate_down)
    }

    /// Equilibrium probability of the `delta_f` state.
    pub fn occupancy_up(&self) -> f64 {
        self.rate_up / (self.rate_up + self.rate_down)
    }

    /// Variance of the stationary process.
    pub fn variance(&self) -> f64 {
        let p = self.occupancy_up();
        self.delta_f * self.delta_f * p * (1.0 - p)
    }

    /// One-sided PSD `4σ²τc / (1 + (2πfτc)²)`.
    pub fn psd(&self, f: f64) -> f64 {
        let tc = self.correlation_time();
        4.0 * self.variance() * tc / (1.0 + (TAU * f * tc).powi(2))
    }

    /// Allan variance of the stationary process at averaging time `tau`.
    pub fn allan_variance(&self, tau: f64) -> f64 {
        let x = tau / self.correlation_time();
        self.variance() / (x * x) * (2.0 * x - 3.0 + 4.0 * (-x).exp() - (-2.0 * x).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlickerParams {
    /// `S(f) = a_p/f` (Hz²).
    pub a_p: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl FlickerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_p >= 0.0 && self.a_p.is_finite()) {
            return Err(Error::invalid("flicker a_p must be >= 0"));
        }
        if !(self.f_min > 0.0 && self.f_max > self.f_min) {
            return Err(Error::invalid("flicker band needs 0 < f_min < f_max"));
        }
        Ok(())
    }

    /// Target one-sided PSD: `a_p/f` in band, held at `a_p/f_min` below it, zero above
    /// `f_max` and at DC.
    pub fn psd(&self, f: f64) -> f64 {
        if f <= 0.0 || f > self.f_max {
            0.0
        } else {
            self.a_p / f.max(self.f_min)
        }
    }

    /// Flat Allan deviation `sqrt(2·ln2·a_p)` of ideal `1/f` noise.
    pub fn allan_deviation(&self) -> f64 {
        (2.0 * std::f64::consts::LN_2 * self.a_p).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhiteParams {
    /// One-sided PSD (Hz²/Hz).
    pub psd_level: f64,
}

/// Full frequency-noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub rts_list: Vec<RtsParams>,
    pub flicker: FlickerParams,
    #[serde(default)]
    pub white: WhiteParams,
    pub seed: u64,
}

impl NoiseSpec {
    /// No noise at all.
    pub fn silent(seed: u64) -> Self {
        NoiseSpec {
            rts_list: Vec::new(),
            flicker: FlickerParams {
                a_p: 0.0,
                f_min: 1e-3,
                f_max: 1e3,
            },
            white: WhiteParams::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.rts_list {
            r.validate()?;
        }
        self.flicker.validate()?;
        if !(self.white.psd_level >= 0.0 && self.white.psd_level.is_finite()) {
            return Err(Error::invalid("white psd_level must be >= 0"));
        }
        Ok(())
    }

    /// Sum of the component PSDs.
    pub fn psd(&self, f: f64) -> f64 {
        self.rts_list.iter().map(|r| r.psd(f)).sum::<f64>() + self.flicker.psd(f) + self.white.psd_level
    }
}

/// Component indices used for seed splitting.
pub const WHITE_INDEX: u64 = 0;
pub const FLICKER_INDEX: u64 = 1;
pub const fn rts_index(i: usize) -> u64 {
    2 + i as u64
}

fn check_grid(n: usize, dt: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n_samples must be > 0"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt must be > 0"));
    }
    Ok(())
}

fn trace<T: Serialize>(values: Vec<f64>, dt: f64, seed: u64, params: &T) -> Result<FrequencyTrace> {
    FrequencyTrace::new(0.0, dt, values, TraceMeta::new(seed, params))
}

/// Random telegraph signal sampled on a uniform grid.
pub fn gen_rts(p: &RtsParams, n_samples: usize, dt: f64, seed: u64) -> Result<FrequencyTrace> {
    p.validate()?;
    check_grid(n_samples, dt)?;
    let mut r = rng(seed);
    let exp_up = Exp::new(p.rate_up).map_err(|e| Error::invalid(e.to_string()))?;
    let exp_down = Exp::new(p.rate_down).map_err(|e| Error::invalid(e.to_string()))?;
    let mut up = r.random::<f64>() < p.occupancy_up();
    let dwell = |up: bool, r: &mut ChaCha12Rng| if up { exp_down.sample(r) } else { exp_up.sample(r) };
    let mut next = dwell(up, &mut r);
    let mut values = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let t = k as f64 * dt;
        while t >= next {
            up = !up;
            next += dwell(up, &mut r);
        }
        values.push(if up { p.delta_f } else { 0.0 });
    }
    trace(values, dt, seed, p)
}

/// Gaussian `1/f` noise by spectral shaping of white noise.
pub fn gen_flicker(p: &FlickerParams, n_samples: usize, dt: f64, seed: u64) -> Result<FrequencyTrace> {
    p.validate()?;
    check_grid(n_samples, dt)?;
    let n = n_samples;
    if p.a_p == 0.0 || n < 2 {
        return trace(vec![0.0; n], dt, seed, p);
    }
    let mut r = rng(seed);
    let nf = n as f64;
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let s = p.psd(k as f64 / (nf * dt));
        let g1: f64 = r.sample(StandardNormal);
        let g2: f64 = r.sample(StandardNormal);
        if 2 * k == n {
            spec[k] = Complex64::new((s / (dt * nf)).sqrt() * g1, 0.0);
        } else {
            let a = (s / (2.0 * dt * nf)).sqrt() / std::f64::consts::SQRT_2;
            spec[k] = Complex64::new(a * g1, a * g2);
            spec[n - k] = spec[k].conj();
        }
    }
    FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut spec);
    trace(spec.iter().map(|c| c.re).collect(), dt, seed, p)
}

/// White Gaussian noise with the given one-sided PSD.
pub fn gen_white(p: &WhiteParams, n_samples: usize, dt: f64, seed: u64) -> Result<FrequencyTrace> {
    check_grid(n_samples, dt)?;
    if !(p.psd_level >= 0.0) {
        return Err(Error::invalid("white psd_level must be >= 0"));
    }
    let sigma = (p.psd_level / (2.0 * dt)).sqrt();
    let mut r = rng(seed);
    let values = (0..n_samples)
        .map(|_| {
            let g: f64 = r.sample(StandardNormal);
            sigma * g
        })
        .collect();
    trace(values, dt, seed, p)
}

/// Sum of all components of `spec`, each on its own split seed.
pub fn compose(spec: &NoiseSpec, n_samples: usize, dt: f64) -> Result<FrequencyTrace> {
    spec.validate()?;
    check_grid(n_samples, dt)?;
    let mut values = gen_white(&spec.white, n_samples, dt, component_seed(spec.seed, WHITE_INDEX))?.values;
    let add = |acc: &mut Vec<f64>, t: FrequencyTrace| {
        for (a, v) in acc.iter_mut().zip(t.values) {
            *a += v;
        }
    };
    add(
        &mut values,
        gen_flicker(&spec.flicker, n_samples, dt, component_seed(spec.seed, FLICKER_INDEX))?,
    );
    for (i, r) in spec.rts_list.iter().enumerate() {
        add(&mut values, gen_rts(r, n_samples, dt, component_seed(spec.seed, rts_index(i)))?);
    }
    trace(values, dt, spec.seed, spec)
}

/// Which common-mode quantity a disturbance acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommonModeKind {
    /// Relative amplitude `eps`: both sidebands scale by `1 + eps`.
    Amplitude,
    /// Common phase `theta` (rad) on the shared signal path.
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommonModeModel {
    /// `magnitude·sin(2πft + phase)`.
    Sine {
        frequency_hz: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Brownian motion; `magnitude` is the increment per √s.
    RandomWalk,
    /// 0 before `at_s`, `magnitude` afterwards.
    Step { at_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommonModeSpec {
    pub kind: CommonModeKind,
    pub model: CommonModeModel,
    pub magnitude: f64,
}

impl CommonModeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(Error::invalid("common-mode magnitude must be >= 0"));
        }
        if let CommonModeModel::Sine { frequency_hz, .. } = self.model {
            if !frequency_hz.is_finite() || frequency_hz < 0.0 {
                return Err(Error::invalid("common-mode sine frequency must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Per-sample common-mode disturbance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommonModeStream {
    pub dt: f64,
    pub eps_amp: Vec<f64>,
    pub theta_phase: Vec<f64>,
}

impl CommonModeStream {
    /// No disturbance.
    pub fn identity(n_samples: usize, dt: f64) -> Self {
        CommonModeStream {
            dt,
            eps_amp: vec![0.0; n_samples],
            theta_phase: vec![0.0; n_samples],
        }
    }

    pub fn len(&self) -> usize {
        self.eps_amp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps_amp.is_empty()
    }

    /// Elementwise sum of two streams on the same grid.
    pub fn combine(mut self, other: &CommonModeStream) -> Self {
        for (a, b) in self.eps_amp.iter_mut().zip(&other.eps_amp) {
            *a += b;
        }
        for (a, b) in self.theta_phase.iter_mut().zip(&other.theta_phase) {
            *a += b;
        }
        self
    }
}

/// Generate a common-mode disturbance stream.
pub fn common_mode_stream(spec: &CommonModeSpec, n_samples: usize, dt: f64, seed: u64) -> Result<CommonModeStream> {
    spec.validate()?;
    check_grid(n_samples, dt)?;
    let a = spec.magnitude;
    let values: Vec<f64> = match spec.model {
        CommonModeModel::Sine { frequency_hz, phase } => (0..n_samples)
            .map(|k| a * (TAU * frequency_hz * k as f64 * dt + phase).sin())
            .collect(),
        CommonModeModel::Step { at_s } => (0..n_samples)
            .map(|k| if k as f64 * dt >= at_s { a } else { 0.0 })
            .collect(),
        CommonModeModel::RandomWalk => {
            let mut r = rng(seed);
            let step = a * dt.sqrt();
            let mut x = 0.0;
            (0..n_samples)
                .map(|k| {
                    if k > 0 {
                        let g: f64 = r.sample(StandardNormal);
                        x += step * g;
                    }
                    x
                })
                .collect()
        }
    };
    let mut s = CommonModeStream::identity(n_samples, dt);
    match spec.kind {
        CommonModeKind::Amplitude => s.eps_amp = values,
        CommonModeKind::Phase => s.theta_phase = values,
    }
    Ok(s)
}
