//! Time-stepped baseband simulation of the readout chain.
//!
//! The RF carrier is never sampled. At every internal step the resonator state is
//! updated from the frequency-noise trace, the two sideband responses are evaluated,
//! the closed-form output phasor is formed with the common-mode disturbance applied,
//! white readout noise is added and the result is fed through the lock-in filter.
//! The filter output is decimated to the output sample rate.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::noise::{self, CommonModeSpec, CommonModeStream, NoiseSpec};
use crate::phasor::{eval_sidebands, CarrierSettings, DemodOutput, ModulationSettings};
use crate::resonator::{sideband_responses, ResonatorParams, ResonatorState};
use crate::trace::{digest_of, FrequencyTrace, TraceMeta};
use crate::{Error, Result};

/// Seed-split indices of engine-owned random streams (noise components use 0, 1, 2…).
const READOUT_INDEX: u64 = 1 << 32;
const COMMON_MODE_INDEX: u64 = (1 << 32) + 1;
const MEASURE_INDEX: u64 = (1 << 32) + 1024;

fn default_order() -> usize {
    4
}

fn default_steps_per_tau() -> f64 {
    20.0
}

/// Sampling and lock-in settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsConfig {
    /// Output sample rate (Hz).
    pub f_sample: f64,
    /// Lock-in time constant per filter stage (s).
    pub tau_lockin: f64,
    #[serde(default = "default_order")]
    pub filter_order: usize,
    /// Internal steps per lock-in time constant.
    #[serde(default = "default_steps_per_tau")]
    pub steps_per_tau: f64,
}

impl BandsConfig {
    /// 100 Hz sampling with a 10 ms, fourth-order lock-in.
    pub fn monitoring() -> Self {
        BandsConfig {
            f_sample: 100.0,
            tau_lockin: 0.01,
            filter_order: 4,
            steps_per_tau: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_sample > 0.0 && self.f_sample.is_finite()) {
            return Err(Error::Config("f_sample must be > 0".into()));
        }
        if !(self.tau_lockin > 0.0 && self.tau_lockin.is_finite()) {
            return Err(Error::Config("tau_lockin must be > 0".into()));
        }
        if !(1..=8).contains(&self.filter_order) {
            return Err(Error::Config(format!("filter_order {} outside 1..=8", self.filter_order)));
        }
        if !(self.steps_per_tau >= 10.0) {
            return Err(Error::Config(format!(
                "internal step must be <= tau_lockin/10, got tau/{}",
                self.steps_per_tau
            )));
        }
        Ok(())
    }

    /// Advisory notes on the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.f_sample > 1.0 / self.tau_lockin {
            w.push(format!(
                "f_sample {} Hz exceeds 1/tau_lockin = {} Hz; consecutive samples are correlated",
                self.f_sample,
                1.0 / self.tau_lockin
            ));
        }
        let alias = magnitude_response(self.f_sample / 2.0, self.tau_lockin, self.filter_order);
        if alias > 0.01 {
            w.push(format!(
                "lock-in attenuates content at f_sample/2 by only {:.1} dB",
                -20.0 * alias.log10()
            ));
        }
        w
    }

    pub fn dt_out(&self) -> f64 {
        1.0 / self.f_sample
    }

    /// Internal steps per output sample.
    pub fn internal_steps(&self) -> usize {
        ((self.dt_out() * self.steps_per_tau / self.tau_lockin).ceil() as usize).max(1)
    }

    pub fn dt_internal(&self) -> f64 {
        self.dt_out() / self.internal_steps() as f64
    }

    /// Measurement bandwidth: equivalent noise bandwidth of the lock-in (Hz).
    pub fn mbw_hz(&self) -> f64 {
        enbw_hz(self.tau_lockin, self.filter_order)
    }

    /// −3 dB bandwidth of the lock-in (Hz).
    pub fn cutoff_hz(&self) -> f64 {
        cutoff_hz(self.tau_lockin, self.filter_order)
    }
}

/// `|H(f)|` of `order` cascaded one-pole stages.
pub fn magnitude_response(f: f64, tau: f64, order: usize) -> f64 {
    (1.0 + (TAU * f * tau).powi(2)).powf(-(order as f64) / 2.0)
}

/// One-sided equivalent noise bandwidth `∫|H|² df` (Hz).
pub fn enbw_hz(tau: f64, order: usize) -> f64 {
    // Γ(n − ½) / (4√π·τ·Γ(n)) = C(2n−2, n−1)/4^{n−1} / (4τ)
    let n = order.max(1);
    let mut c = 1.0;
    for k in 1..n {
        c *= (2 * k - 1) as f64 / (2 * k) as f64;
    }
    c / (4.0 * tau)
}

/// −3 dB frequency of the cascade (Hz).
pub fn cutoff_hz(tau: f64, order: usize) -> f64 {
    (2f64.powf(1.0 / order.max(1) as f64) - 1.0).sqrt() / (TAU * tau)
}

/// Cascade of identical one-pole low-pass stages, each with time constant `tau`.
///
/// The input is held constant over each step, which makes the update exact:
/// `y ← y + (1 − e^{−dt/τ})·(x − y)` per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct LockinFilter {
    alpha: f64,
    stages: Vec<Complex64>,
}

impl LockinFilter {
    pub fn new(tau: f64, dt: f64, order: usize) -> Result<Self> {
        if !(tau > 0.0 && dt > 0.0) || order == 0 {
            return Err(Error::invalid("lock-in filter needs tau > 0, dt > 0, order >= 1"));
        }
        Ok(LockinFilter {
            alpha: 1.0 - (-dt / tau).exp(),
            stages: vec![Complex64::new(0.0, 0.0); order],
        })
    }

    /// Put every stage in steady state for a constant input `x`.
    pub fn settle(&mut self, x: Complex64) {
        self.stages.iter_mut().for_each(|s| *s = x);
    }

    pub fn output(&self) -> Complex64 {
        *self.stages.last().expect("order >= 1")
    }

    /// Advance by one step with input `x`; returns the state at the end of the step.
    pub fn step(&mut self, x: Complex64) -> Complex64 {
        let mut u = x;
        for s in self.stages.iter_mut() {
            *s += self.alpha * (u - *s);
            u = *s;
        }
        u
    }
}

/// Filter a sampled stream from rest. Output `k` is the state at the end of step `k`,
/// i.e. at time `(k + 1)·dt`.
pub fn lockin_filter(input: &[Complex64], dt: f64, tau: f64, order: usize) -> Result<Vec<Complex64>> {
    let mut f = LockinFilter::new(tau, dt, order)?;
    Ok(input.iter().map(|x| f.step(*x)).collect())
}

fn default_floor() -> f64 {
    1e-5
}

/// IQ mixer with hidden optimum DC offsets.
///
/// The optimum offsets drift with the drive amplitudes, `dc* = base + coupling·a`, so a
/// change of `a2` calls for re-balancing. The residual carrier is
/// `hypot(k·|Δdc|, floor·a1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixerModel {
    pub dc_i_base: f64,
    pub dc_q_base: f64,
    #[serde(default)]
    pub coupling: f64,
    /// Leakage per volt of offset error (V/V).
    pub gain: f64,
    /// Best achievable suppression relative to the sideband amplitude.
    #[serde(default = "default_floor")]
    pub floor: f64,
}

impl Default for MixerModel {
    fn default() -> Self {
        MixerModel {
            dc_i_base: 0.0,
            dc_q_base: 0.0,
            coupling: 0.0,
            gain: 1.0,
            floor: default_floor(),
        }
    }
}

impl MixerModel {
    /// Optimum `(dc_i*, dc_q*)` for the given drive.
    pub fn true_offsets(&self, m: &ModulationSettings) -> (f64, f64) {
        (
            self.dc_i_base + self.coupling * m.a1,
            self.dc_q_base + self.coupling * m.a2,
        )
    }
}

/// Residual carrier amplitude (V) for the offsets stored in `m`.
pub fn carrier_leakage_signal(m: &ModulationSettings, mixer: &MixerModel) -> f64 {
    let (ti, tq) = mixer.true_offsets(m);
    let err = Complex64::new(m.dc_i - ti, m.dc_q - tq).norm();
    (mixer.gain * err).hypot(mixer.floor * m.a1)
}

/// Everything the simulator needs besides the duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSetup {
    pub modulation: ModulationSettings,
    pub carrier: CarrierSettings,
    /// `None` leaves both sidebands untouched.
    #[serde(default)]
    pub resonator: Option<ResonatorParams>,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub common_mode: Vec<CommonModeSpec>,
    pub bands: BandsConfig,
    /// One-sided PSD of additive white noise per quadrature at the lock-in input (V²/Hz).
    #[serde(default)]
    pub readout_noise_psd: f64,
    /// Overall voltage gain of the detection chain.
    #[serde(default = "one")]
    pub gain: f64,
    #[serde(default)]
    pub mixer: MixerModel,
    /// Multiplier on `Qi` during the run.
    #[serde(default = "one")]
    pub qi_factor: f64,
}

fn one() -> f64 {
    1.0
}

impl SimSetup {
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.modulation.validate().map_err(cfg)?;
        self.carrier.validate().map_err(cfg)?;
        if let Some(r) = &self.resonator {
            r.validate(f64::INFINITY).map_err(cfg)?;
        }
        self.noise.validate().map_err(cfg)?;
        for c in &self.common_mode {
            c.validate().map_err(cfg)?;
        }
        self.bands.validate()?;
        if !(self.readout_noise_psd >= 0.0) || !(self.gain > 0.0) || !(self.qi_factor > 0.0) {
            return Err(Error::Config("readout_noise_psd >= 0, gain > 0 and qi_factor > 0 required".into()));
        }
        Ok(())
    }

    /// Noise-free steady-state output for a resonator state and common-mode values.
    pub fn steady_output(&self, state: &ResonatorState, eps_amp: f64, theta: f64) -> Complex64 {
        let g = 1.0 + eps_amp;
        let m = ModulationSettings {
            a1: self.modulation.a1 * g,
            a2: self.modulation.a2 * g,
            ..self.modulation
        };
        let c = self.carrier.with_delta(self.carrier.delta + theta);
        let (r, p) = sideband_responses(self.resonator.as_ref(), state, &m, &c);
        self.gain * eval_sidebands(&m, &c, r, p).as_complex()
    }

    fn state(&self, delta_r: f64) -> ResonatorState {
        ResonatorState {
            delta_r,
            qi_factor: self.qi_factor,
        }
    }
}

/// Maps a desk-scale run onto physical time. Scaled time is physical time divided by
/// `factor`: every rate is multiplied by `factor` and every duration divided by it.
/// White PSDs shrink by `factor`; the `1/f` amplitude is scale invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeCompression {
    pub factor: f64,
}

impl TimeCompression {
    pub fn new(factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::Config(format!("compression factor must be > 0, got {factor}")));
        }
        Ok(TimeCompression { factor })
    }

    /// Setup and duration in scaled units for a physical setup and duration.
    pub fn compress(&self, setup: &SimSetup, physical_duration: f64) -> (SimSetup, f64) {
        let c = self.factor;
        let mut s = setup.clone();
        for r in s.noise.rts_list.iter_mut() {
            r.rate_up *= c;
            r.rate_down *= c;
        }
        s.noise.flicker.f_min *= c;
        s.noise.flicker.f_max *= c;
        s.noise.white.psd_level /= c;
        s.readout_noise_psd /= c;
        for cm in s.common_mode.iter_mut() {
            use crate::noise::CommonModeModel::*;
            match &mut cm.model {
                Sine { frequency_hz, .. } => *frequency_hz *= c,
                Step { at_s } => *at_s /= c,
                RandomWalk => cm.magnitude *= c.sqrt(),
            }
        }
        s.bands.f_sample *= c;
        s.bands.tau_lockin /= c;
        (s, physical_duration / c)
    }

    pub fn physical_time(&self, scaled: f64) -> f64 {
        scaled * self.factor
    }

    /// Same samples on the physical time axis.
    pub fn to_physical(&self, t: &FrequencyTrace) -> FrequencyTrace {
        FrequencyTrace {
            t0: t.t0 * self.factor,
            dt: t.dt * self.factor,
            values: t.values.clone(),
            meta: t.meta.clone(),
        }
    }
}

/// Provenance of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub seed: u64,
    pub software_version: String,
    pub prng: String,
}

impl RunManifest {
    pub fn new<T: Serialize>(config: &T, seed: u64) -> Self {
        RunManifest {
            config_digest: digest_of(config),
            seed,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            prng: noise::PRNG_ID.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub x: FrequencyTrace,
    pub y: FrequencyTrace,
    /// Injected `δr(t)` on the output grid.
    pub truth: FrequencyTrace,
    pub warnings: Vec<String>,
    pub manifest: RunManifest,
}

impl RunOutput {
    pub fn complex(&self) -> Vec<Complex64> {
        self.x
            .values
            .iter()
            .zip(&self.y.values)
            .map(|(a, b)| Complex64::new(*a, *b))
            .collect()
    }
}

fn lerp(v: &[f64], k: usize, u: f64) -> f64 {
    v[k - 1] + (v[k] - v[k - 1]) * u
}

/// Simulate `duration` seconds of lock-in output.
pub fn run(setup: &SimSetup, duration: f64) -> Result<RunOutput> {
    setup.validate()?;
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::Config("duration must be > 0".into()));
    }
    let bands = &setup.bands;
    let dt_out = bands.dt_out();
    let n_out = ((duration * bands.f_sample).round() as usize).max(2);
    let steps = bands.internal_steps();
    let dt_int = bands.dt_internal();
    if dt_int > bands.tau_lockin / 10.0 {
        return Err(Error::Config("internal step exceeds tau_lockin/10".into()));
    }

    let seed = setup.noise.seed;
    let truth = noise::compose(&setup.noise, n_out, dt_out)?;
    let mut cm = CommonModeStream::identity(n_out, dt_out);
    for (i, spec) in setup.common_mode.iter().enumerate() {
        let s = noise::common_mode_stream(spec, n_out, dt_out, noise::component_seed(seed, COMMON_MODE_INDEX + i as u64))?;
        cm = cm.combine(&s);
    }
    let mut rng: ChaCha12Rng = noise::rng(noise::component_seed(seed, READOUT_INDEX));
    let sigma = (setup.readout_noise_psd / (2.0 * dt_int)).sqrt();

    let mut filter = LockinFilter::new(bands.tau_lockin, dt_int, bands.filter_order)?;
    let first = setup.steady_output(&setup.state(truth.values[0]), cm.eps_amp[0], cm.theta_phase[0]);
    filter.settle(first);
    let mut x = Vec::with_capacity(n_out);
    let mut y = Vec::with_capacity(n_out);
    x.push(first.re);
    y.push(first.im);
    for k in 1..n_out {
        let mut out = filter.output();
        for j in 1..=steps {
            let u = j as f64 / steps as f64;
            let state = setup.state(lerp(&truth.values, k, u));
            let mut s = setup.steady_output(&state, lerp(&cm.eps_amp, k, u), lerp(&cm.theta_phase, k, u));
            if sigma > 0.0 {
                let (gi, gq): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                s += Complex64::new(sigma * gi, sigma * gq);
            }
            out = filter.step(s);
        }
        x.push(out.re);
        y.push(out.im);
    }

    let manifest = RunManifest::new(&(setup, duration), seed);
    let meta = TraceMeta {
        seed,
        digest: manifest.config_digest.clone(),
    };
    Ok(RunOutput {
        x: FrequencyTrace::new(0.0, dt_out, x, meta.clone())?,
        y: FrequencyTrace::new(0.0, dt_out, y, meta.clone())?,
        truth: FrequencyTrace::new(0.0, dt_out, truth.values, meta)?,
        warnings: bands.warnings(),
        manifest,
    })
}

/// Interactive handle on a simulated instrument, for step-by-step procedures.
///
/// Each reading returns the steady-state output plus Gaussian readout noise filtered
/// by the lock-in, and advances a virtual clock by the settling time.
#[derive(Debug, Clone)]
pub struct Engine {
    setup: SimSetup,
    state: ResonatorState,
    rng: ChaCha12Rng,
    clock: f64,
    measurements: usize,
}

impl Engine {
    pub fn new(setup: SimSetup) -> Result<Self> {
        setup.validate()?;
        let rng = noise::rng(noise::component_seed(setup.noise.seed, MEASURE_INDEX));
        let state = setup.state(0.0);
        Ok(Engine {
            setup,
            state,
            rng,
            clock: 0.0,
            measurements: 0,
        })
    }

    pub fn setup(&self) -> &SimSetup {
        &self.setup
    }

    pub fn modulation(&self) -> ModulationSettings {
        self.setup.modulation
    }

    pub fn carrier(&self) -> CarrierSettings {
        self.setup.carrier
    }

    pub fn set_modulation(&mut self, m: ModulationSettings) -> Result<()> {
        m.validate()?;
        self.setup.modulation = m;
        Ok(())
    }

    pub fn set_q(&mut self, a2: f64, alpha2: f64) {
        self.setup.modulation = self.setup.modulation.with_q(a2.max(0.0), alpha2);
    }

    pub fn set_dc(&mut self, dc_i: f64, dc_q: f64) {
        self.setup.modulation.dc_i = dc_i;
        self.setup.modulation.dc_q = dc_q;
    }

    pub fn set_carrier(&mut self, c: CarrierSettings) -> Result<()> {
        c.validate()?;
        self.setup.carrier = c;
        Ok(())
    }

    pub fn set_carrier_hz(&mut self, f0: f64) {
        self.setup.carrier.omega0 = TAU * f0;
    }

    pub fn set_delta(&mut self, delta: f64) {
        self.setup.carrier.delta = delta;
    }

    pub fn resonator_state(&self) -> ResonatorState {
        self.state
    }

    pub fn set_resonator_state(&mut self, s: ResonatorState) {
        self.state = s;
    }

    /// Virtual time elapsed (s).
    pub fn time(&self) -> f64 {
        self.clock
    }

    pub fn measurements(&self) -> usize {
        self.measurements
    }

    /// Settling time charged per reading: ten filter time constants per stage.
    pub fn settle_time(&self) -> f64 {
        10.0 * self.setup.bands.tau_lockin * self.setup.bands.filter_order as f64
    }

    /// RMS noise per quadrature of one reading (V).
    pub fn noise_rms(&self) -> f64 {
        (self.setup.readout_noise_psd * self.setup.bands.mbw_hz()).sqrt()
    }

    /// Noise-free output at the current settings (V).
    pub fn ideal_output(&self) -> DemodOutput {
        DemodOutput::from_complex(self.setup.steady_output(&self.state, 0.0, 0.0))
    }

    /// Sideband responses `(reference, probe)` at the current settings.
    pub fn true_responses(&self) -> (Complex64, Complex64) {
        sideband_responses(self.setup.resonator.as_ref(), &self.state, &self.setup.modulation, &self.setup.carrier)
    }

    /// One lock-in reading.
    pub fn measure(&mut self) -> DemodOutput {
        self.clock += self.settle_time();
        self.measurements += 1;
        let s = self.setup.steady_output(&self.state, 0.0, 0.0);
        let sd = self.noise_rms();
        let (gi, gq): (f64, f64) = (self.rng.sample(StandardNormal), self.rng.sample(StandardNormal));
        DemodOutput::from_complex(s + Complex64::new(sd * gi, sd * gq))
    }

    /// Residual carrier relative to the I sideband amplitude.
    pub fn carrier_residual(&mut self) -> f64 {
        self.clock += self.settle_time();
        self.measurements += 1;
        let m = &self.setup.modulation;
        carrier_leakage_signal(m, &self.setup.mixer) / m.a1.max(f64::MIN_POSITIVE)
    }

    /// Hidden optimum offsets, for verification only.
    pub fn true_dc_offsets(&self) -> (f64, f64) {
        self.setup.mixer.true_offsets(&self.setup.modulation)
    }
}

/// Phase of a complex sample in degrees in `[0, 360)`.
pub fn phase_deg(z: Complex64) -> f64 {
    z.arg().rem_euclid(TAU) * 180.0 / PI
}
