//! Hanger resonator response, photon number, spectroscopy and phase calibration.
//!
//! The transmission past a side-coupled resonator is modelled as
//!
//! ```text
//! S(f) = A·e^{−i2πfτ}·[1 − (Ql/Qc)·e^{iφ0} / (1 + 2i·Ql·(f − fr − δr)/fr)]
//! ```
//!
//! with `1/Ql = 1/Qc + 1/(Qi·q)` where `q` scales the internal quality factor. The
//! bracket is the notch; `A·e^{−i2πfτ}` is the off-resonant background of the line.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fit::{self, linear_fit};
use crate::phasor::{
    eval_sidebands, ssb_settings, wrap_signed, CarrierSettings, DemodOutput, DutResponse,
    ModulationSettings,
};
use crate::{Error, Result};

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Feedline impedance used for photon-number estimates (Ω).
pub const Z0_DEFAULT: f64 = 50.0;

fn default_z0() -> f64 {
    Z0_DEFAULT
}

fn default_bg() -> f64 {
    1.0
}

/// `1/Ql = 1/Qc + 1/Qi`.
pub fn loaded_q(qc: f64, qi: f64) -> f64 {
    1.0 / (1.0 / qc + 1.0 / qi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorParams {
    /// Resonance frequency (Hz).
    pub fr: f64,
    /// Loaded quality factor as quoted; the response itself uses `Qc` and `Qi`.
    pub ql: f64,
    pub qc: f64,
    pub qi: f64,
    /// Resonator impedance (Ω).
    pub zr: f64,
    /// Impedance-mismatch asymmetry (rad).
    #[serde(default)]
    pub phi0: f64,
    /// Electrical delay of the line (s).
    #[serde(default)]
    pub tau_d: f64,
    /// Off-resonant background amplitude.
    #[serde(default = "default_bg")]
    pub bg_amp: f64,
    /// Feedline impedance (Ω).
    #[serde(default = "default_z0")]
    pub z0: f64,
}

impl ResonatorParams {
    /// NbN hanger resonator used for the reference measurements: fr = 6.16 GHz,
    /// Ql = 8.0e3, Qc = 9.8e3, Zr = 316 Ω. `Qi` is set so that `Qc` and `Qi` compose to
    /// exactly the quoted `Ql`.
    pub fn nbn_reference() -> Self {
        let (ql, qc) = (8.0e3, 9.8e3);
        ResonatorParams {
            fr: 6.16e9,
            ql,
            qc,
            qi: 1.0 / (1.0 / ql - 1.0 / qc),
            zr: 316.0,
            phi0: 0.0,
            tau_d: 0.0,
            bg_amp: 1.0,
            z0: Z0_DEFAULT,
        }
    }

    /// Parameters with `Ql` derived from `Qc` and `Qi`.
    pub fn from_coupling(fr: f64, qc: f64, qi: f64, zr: f64) -> Self {
        ResonatorParams {
            fr,
            ql: loaded_q(qc, qi),
            qc,
            qi,
            zr,
            phi0: 0.0,
            tau_d: 0.0,
            bg_amp: 1.0,
            z0: Z0_DEFAULT,
        }
    }

    /// Loaded Q from `Qc` and `Qi·qi_factor`.
    pub fn loaded_q_with(&self, qi_factor: f64) -> f64 {
        loaded_q(self.qc, self.qi * qi_factor)
    }

    /// Loaded Q of the unperturbed resonator.
    pub fn loaded_q(&self) -> f64 {
        self.loaded_q_with(1.0)
    }

    /// Full loaded linewidth `fr/Ql` (Hz).
    pub fn linewidth_hz(&self) -> f64 {
        self.fr / self.loaded_q()
    }

    /// `γr = ωr/Ql` (rad/s).
    pub fn linewidth_angular(&self) -> f64 {
        TAU * self.linewidth_hz()
    }

    pub fn is_overcoupled(&self) -> bool {
        self.qc < self.qi
    }

    /// Relative mismatch between the quoted `Ql` and the one composed from `Qc`, `Qi`.
    pub fn q_mismatch(&self) -> f64 {
        (self.ql - self.loaded_q()).abs() / self.loaded_q()
    }

    pub fn validate(&self, q_tolerance: f64) -> Result<()> {
        let positive = [self.fr, self.ql, self.qc, self.qi, self.zr, self.z0, self.bg_amp];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("resonator fr, Q factors, impedances and bg_amp must be > 0"));
        }
        if !(self.phi0.is_finite() && self.tau_d.is_finite()) {
            return Err(Error::invalid("resonator phi0 and tau_d must be finite"));
        }
        if self.q_mismatch() > q_tolerance {
            return Err(Error::invalid(format!(
                "1/Ql = 1/Qc + 1/Qi violated by {:.2}% (tolerance {:.2}%)",
                100.0 * self.q_mismatch(),
                100.0 * q_tolerance
            )));
        }
        Ok(())
    }
}

/// Instantaneous resonator state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorState {
    /// Shift of the resonance frequency (Hz).
    pub delta_r: f64,
    /// Multiplier on `Qi`.
    pub qi_factor: f64,
}

impl Default for ResonatorState {
    fn default() -> Self {
        ResonatorState {
            delta_r: 0.0,
            qi_factor: 1.0,
        }
    }
}

impl ResonatorState {
    pub fn detuned(delta_r: f64) -> Self {
        ResonatorState {
            delta_r,
            qi_factor: 1.0,
        }
    }
}

/// Denominator `1 + 2i·Ql·(f − fr − δr)/fr` of the notch.
pub fn lorentzian_denominator(p: &ResonatorParams, s: &ResonatorState, f: f64) -> Complex64 {
    let ql = p.loaded_q_with(s.qi_factor);
    Complex64::new(1.0, 2.0 * ql * (f - p.fr - s.delta_r) / p.fr)
}

/// Notch factor, 1 far from resonance.
pub fn notch(p: &ResonatorParams, s: &ResonatorState, f: f64) -> Complex64 {
    let ql = p.loaded_q_with(s.qi_factor);
    let depth = Complex64::from_polar(ql / p.qc, p.phi0);
    Complex64::new(1.0, 0.0) - depth / lorentzian_denominator(p, s, f)
}

/// Off-resonant background `A·e^{−i2πfτ}`.
pub fn background(p: &ResonatorParams, f: f64) -> Complex64 {
    Complex64::from_polar(p.bg_amp, -TAU * f * p.tau_d)
}

/// Full complex response at frequency `f` (Hz).
pub fn reflection(p: &ResonatorParams, s: &ResonatorState, f: f64) -> Complex64 {
    background(p, f) * notch(p, s, f)
}

/// Probe-sideband response relative to the background, in interferometer convention.
pub fn dut_response(p: &ResonatorParams, s: &ResonatorState, f_probe: f64) -> DutResponse {
    DutResponse::from_probe_response(notch(p, s, f_probe))
}

/// Probe sideband `f0 − fs` and reference sideband `f0 + fs` frequencies (Hz).
pub fn sideband_frequencies(m: &ModulationSettings, c: &CarrierSettings) -> (f64, f64) {
    let (f0, fs) = (c.f0(), m.f_s());
    (f0 - fs, f0 + fs)
}

/// Complex responses `(reference, probe)` seen by the two sidebands. Without a
/// resonator both are 1.
pub fn sideband_responses(
    p: Option<&ResonatorParams>,
    s: &ResonatorState,
    m: &ModulationSettings,
    c: &CarrierSettings,
) -> (Complex64, Complex64) {
    match p {
        Some(p) => {
            let (fp, fr) = sideband_frequencies(m, c);
            (reflection(p, s, fr), reflection(p, s, fp))
        }
        None => (Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)),
    }
}

/// Interferometer output with the resonator in the signal path.
pub fn smi_output(
    p: Option<&ResonatorParams>,
    s: &ResonatorState,
    m: &ModulationSettings,
    c: &CarrierSettings,
) -> DemodOutput {
    let (r, pr) = sideband_responses(p, s, m, c);
    eval_sidebands(m, c, r, pr)
}

/// Mean intra-resonator photon number for an on-resonance input power (W).
pub fn mean_photon_number(p: &ResonatorParams, p_in: f64) -> f64 {
    photons_per_watt(p) * p_in
}

/// Input power (W) that yields `n` photons on average.
pub fn input_power_for_photons(p: &ResonatorParams, n: f64) -> f64 {
    n / photons_per_watt(p)
}

fn photons_per_watt(p: &ResonatorParams) -> f64 {
    let wr = TAU * p.fr;
    let ql = p.loaded_q();
    2.0 / (HBAR * wr * wr) * (ql * ql / p.qc) * (p.z0 / p.zr)
}

/// SMI output versus carrier frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopyTrace {
    pub f0_hz: Vec<f64>,
    pub points: Vec<DemodOutput>,
}

impl SpectroscopyTrace {
    pub fn complex_points(&self) -> Vec<Complex64> {
        self.points.iter().map(|p| p.as_complex()).collect()
    }
}

/// Sweep the carrier and record the output for fixed modulation settings.
pub fn spectroscopy_trace(
    p: &ResonatorParams,
    s: &ResonatorState,
    m: &ModulationSettings,
    c: &CarrierSettings,
    f0_sweep: &[f64],
) -> Result<SpectroscopyTrace> {
    if f0_sweep.is_empty() {
        return Err(Error::invalid("empty carrier sweep"));
    }
    let points = f0_sweep
        .iter()
        .map(|&f0| {
            let cf = CarrierSettings {
                omega0: TAU * f0,
                ..*c
            };
            smi_output(Some(p), s, m, &cf)
        })
        .collect();
    Ok(SpectroscopyTrace {
        f0_hz: f0_sweep.to_vec(),
        points,
    })
}

/// Modulation with the reference sideband cancelled.
pub fn ssb_modulation(m: &ModulationSettings) -> ModulationSettings {
    let (a2, alpha2) = ssb_settings(m.a1, m.alpha1);
    m.with_q(a2, alpha2)
}

/// Evenly spaced carrier sweep.
pub fn linear_sweep(center: f64, half_span: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![center];
    }
    (0..points)
        .map(|k| center - half_span + 2.0 * half_span * k as f64 / (points - 1) as f64)
        .collect()
}

/// Map from the angle of the output around the resonance circle to the resonator
/// detuning, built from a carrier sweep.
///
/// A shift `δr` of the resonance is equivalent to moving the carrier by `−δr`, so the
/// sweep tabulates angle versus `f0_operating − f0`. Readings are converted by linear
/// interpolation in that table; a straight-line fit over the central `±lw/10` is
/// reported alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCalibration {
    pub center: Complex64,
    pub radius: f64,
    pub f0_operating: f64,
    pub resonance_f0: f64,
    pub linewidth_estimate: f64,
    /// Angle at the operating point (rad).
    pub phase_operating: f64,
    /// Angles relative to `phase_operating`, increasing.
    pub phases: Vec<f64>,
    /// Detuning (Hz) at each tabulated angle.
    pub detunings: Vec<f64>,
    pub slope_hz_per_rad: f64,
    pub intercept_hz: f64,
    pub linear_residual_rms_hz: f64,
}

impl PhaseCalibration {
    /// Angle of a reading relative to the operating point, in `(−π, π]`.
    pub fn phase_of(&self, s: Complex64) -> f64 {
        wrap_signed((s - self.center).arg() - self.phase_operating)
    }

    /// Detuning (Hz) for a reading, by table interpolation.
    pub fn detuning(&self, s: Complex64) -> f64 {
        self.detuning_from_phase(self.phase_of(s))
    }

    pub fn detuning_from_phase(&self, phase: f64) -> f64 {
        let ph = &self.phases;
        let n = ph.len();
        if phase <= ph[0] || phase >= ph[n - 1] {
            return self.intercept_hz + self.slope_hz_per_rad * phase;
        }
        let k = ph.partition_point(|v| *v <= phase).clamp(1, n - 1);
        let (p0, p1) = (ph[k - 1], ph[k]);
        let (d0, d1) = (self.detunings[k - 1], self.detunings[k]);
        d0 + (d1 - d0) * (phase - p0) / (p1 - p0)
    }

    /// Detuning from the straight-line fit only.
    pub fn detuning_linear(&self, s: Complex64) -> f64 {
        self.intercept_hz + self.slope_hz_per_rad * self.phase_of(s)
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let k = xs.partition_point(|v| *v <= x).clamp(1, xs.len() - 1);
    let (x0, x1) = (xs[k - 1], xs[k]);
    ys[k - 1] + (ys[k] - ys[k - 1]) * (x - x0) / (x1 - x0)
}

/// Build a [`PhaseCalibration`] from a sweep taken at the readout configuration.
pub fn calibrate_phase_to_frequency(
    trace: &SpectroscopyTrace,
    f0_operating: f64,
) -> Result<PhaseCalibration> {
    let n = trace.f0_hz.len();
    if n < 5 {
        return Err(Error::InsufficientSpan(format!("{n} sweep points")));
    }
    let f = &trace.f0_hz;
    if f.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InsufficientSpan(
            "sweep must be strictly increasing with non-zero span".into(),
        ));
    }
    if !(f0_operating >= f[0] && f0_operating <= f[n - 1]) {
        return Err(Error::InsufficientSpan(format!(
            "operating carrier {f0_operating} Hz outside sweep"
        )));
    }
    let pts = trace.complex_points();
    let circle = fit::fit_circle(&pts).map_err(|e| Error::InsufficientSpan(e.to_string()))?;

    let mut theta: Vec<f64> = Vec::with_capacity(n);
    for p in &pts {
        let a = (p - circle.center).arg();
        theta.push(match theta.last() {
            Some(prev) => prev + wrap_signed(a - prev),
            None => a,
        });
    }
    let (k_res, rate) = (1..n)
        .map(|k| (k, (theta[k] - theta[k - 1]) / (f[k] - f[k - 1])))
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .expect("n >= 5");
    if k_res <= 1 || k_res >= n - 1 || rate == 0.0 {
        return Err(Error::InsufficientSpan("sweep does not cross the resonance".into()));
    }
    let resonance_f0 = 0.5 * (f[k_res] + f[k_res - 1]);
    // ideal notch: angle = const − 2·atan(2Δ/lw), steepest slope 4/lw
    let linewidth_estimate = 4.0 / rate.abs();
    if f[0] > resonance_f0 - linewidth_estimate / 4.0 || f[n - 1] < resonance_f0 + linewidth_estimate / 4.0 {
        return Err(Error::InsufficientSpan(format!(
            "sweep must cover ±{:.0} Hz around the resonance",
            linewidth_estimate / 4.0
        )));
    }

    // monotone segment around the operating point
    let k_op = f.partition_point(|v| *v < f0_operating).clamp(1, n - 1);
    let sign = rate.signum();
    let mut lo = k_op - 1;
    while lo > 0 && (theta[lo] - theta[lo - 1]) * sign > 0.0 {
        lo -= 1;
    }
    let mut hi = k_op;
    while hi + 1 < n && (theta[hi + 1] - theta[hi]) * sign > 0.0 {
        hi += 1;
    }
    if (theta[k_op] - theta[k_op - 1]) * sign <= 0.0 || hi - lo < 2 {
        return Err(Error::InsufficientSpan("angle not monotone at the operating point".into()));
    }
    let phase_operating = interp(&f[lo..=hi], &theta[lo..=hi], f0_operating);

    let mut table: Vec<(f64, f64)> = (lo..=hi)
        .map(|k| (theta[k] - phase_operating, f0_operating - f[k]))
        .collect();
    table.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (phases, detunings): (Vec<f64>, Vec<f64>) = table.into_iter().unzip();

    let window = linewidth_estimate / 10.0;
    let mut central: Vec<(f64, f64)> = phases
        .iter()
        .zip(&detunings)
        .filter(|(_, d)| d.abs() <= window)
        .map(|(p, d)| (*p, *d))
        .collect();
    if central.len() < 3 {
        let mut by_distance: Vec<(f64, f64)> =
            phases.iter().copied().zip(detunings.iter().copied()).collect();
        by_distance.sort_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
        central = by_distance.into_iter().take(5).collect();
    }
    let (cx, cy): (Vec<f64>, Vec<f64>) = central.into_iter().unzip();
    let line = linear_fit(&cx, &cy)?;

    Ok(PhaseCalibration {
        center: circle.center,
        radius: circle.radius,
        f0_operating,
        resonance_f0,
        linewidth_estimate,
        phase_operating: wrap_signed(phase_operating),
        phases,
        detunings,
        slope_hz_per_rad: line.slope,
        intercept_hz: line.intercept,
        linear_residual_rms_hz: line.residual_rms,
    })
}

/// Derivatives of the output with respect to detuning and internal quality factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqJacobian {
    /// `d(x + iy)/dδr` (V/Hz).
    pub d_detuning: Complex64,
    /// `d(x + iy)/d(qi_factor)` (V).
    pub d_qi_factor: Complex64,
}

impl IqJacobian {
    /// `[[dx/dδr, dx/dq], [dy/dδr, dy/dq]]`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [
            [self.d_detuning.re, self.d_qi_factor.re],
            [self.d_detuning.im, self.d_qi_factor.im],
        ]
    }

    /// `|cos|` of the angle between the two columns; 0 when orthogonal.
    pub fn column_cosine(&self) -> f64 {
        let (a, b) = (self.d_detuning, self.d_qi_factor);
        let dot = a.re * b.re + a.im * b.im;
        let norm = a.norm() * b.norm();
        if norm == 0.0 {
            0.0
        } else {
            dot.abs() / norm
        }
    }

    /// Angle between the columns in degrees.
    pub fn column_angle_deg(&self) -> f64 {
        let (a, b) = (self.d_detuning, self.d_qi_factor);
        let dot = a.re * b.re + a.im * b.im;
        (dot / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos() * 180.0 / PI
    }
}

/// Central finite-difference Jacobian of the output at a resonator state.
pub fn iq_jacobian(
    p: &ResonatorParams,
    m: &ModulationSettings,
    c: &CarrierSettings,
    at: &ResonatorState,
) -> IqJacobian {
    let out = |s: ResonatorState| smi_output(Some(p), &s, m, c).as_complex();
    let hr = 1e-4 * p.linewidth_hz();
    let hq = 1e-4 * at.qi_factor;
    let d_detuning = (out(ResonatorState {
        delta_r: at.delta_r + hr,
        ..*at
    }) - out(ResonatorState {
        delta_r: at.delta_r - hr,
        ..*at
    })) / (2.0 * hr);
    let d_qi_factor = (out(ResonatorState {
        qi_factor: at.qi_factor + hq,
        ..*at
    }) - out(ResonatorState {
        qi_factor: at.qi_factor - hq,
        ..*at
    })) / (2.0 * hq);
    IqJacobian {
        d_detuning,
        d_qi_factor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasor::{operating_point_at_delta, InterferenceMode};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const FS: f64 = 10e6;

    fn ssb_setup(p: &ResonatorParams) -> (ModulationSettings, CarrierSettings) {
        let m = ssb_modulation(&ModulationSettings::new(0.05, 0.3, 0.0, 0.0, TAU * FS).unwrap());
        let c = CarrierSettings::from_hz(p.fr + FS, 0.2).unwrap();
        (m, c)
    }

    fn destructive_setup(p: &ResonatorParams) -> (ModulationSettings, CarrierSettings) {
        let (m, c) = ssb_setup(p);
        let (r, pr) = sideband_responses(Some(p), &ResonatorState::default(), &m, &c);
        let (a2, alpha2) =
            operating_point_at_delta(m.a1, m.alpha1, c.delta, r, pr, InterferenceMode::Destructive).unwrap();
        (m.with_q(a2, alpha2), c)
    }

    #[test]
    fn far_off_resonance_is_background() {
        let p = ResonatorParams::nbn_reference();
        let s = reflection(&p, &ResonatorState::default(), p.fr + 1000.0 * p.linewidth_hz());
        assert_relative_eq!(s.re, 1.0, epsilon = 1e-3);
        assert!(s.im.abs() < 1e-3);
    }

    #[test]
    fn on_resonance_depth() {
        let p = ResonatorParams::nbn_reference();
        let s = reflection(&p, &ResonatorState::default(), p.fr);
        assert_relative_eq!(s.re, 1.0 - 8.0e3 / 9.8e3, max_relative = 1e-12);
        assert_relative_eq!(s.re, 0.184, epsilon = 5e-4);
        assert_eq!(s.im, 0.0);
    }

    #[test]
    fn q_composition() {
        assert_relative_eq!(loaded_q(9.8e3, 5e4), 8193.98, epsilon = 0.01);
        assert!((loaded_q(9.8e3, 5e4) - 8.0e3).abs() / 8.0e3 < 0.03);
        let p = ResonatorParams::from_coupling(5e9, 1e4, 3e4, 50.0);
        let q = p.loaded_q_with(0.5);
        assert_relative_eq!(1.0 / q, 1.0 / 1e4 + 1.0 / 1.5e4, max_relative = 1e-14);
        assert!(p.is_overcoupled());
        assert!(p.validate(1e-9).is_ok());
        let mut bad = p;
        bad.ql = 2e4;
        assert!(bad.validate(0.05).is_err());
    }

    #[test]
    fn dut_response_on_and_off_resonance() {
        let p = ResonatorParams::nbn_reference();
        let d = dut_response(&p, &ResonatorState::default(), p.fr);
        assert_relative_eq!(d.xi, 0.184, epsilon = 5e-4);
        assert_eq!(d.phi, 0.0);

        let half = ResonatorState::detuned(p.linewidth_hz() / 2.0);
        let den = lorentzian_denominator(&p, &half, p.fr);
        assert_relative_eq!(den.arg(), -PI / 4.0, epsilon = 1e-12);
        // brute force evaluation of the notch at the same point
        let k = p.loaded_q() / p.qc;
        let brute = Complex64::new(1.0, 0.0) - k / Complex64::new(1.0, -1.0);
        let d = dut_response(&p, &half, p.fr);
        assert_relative_eq!(d.xi, brute.norm(), max_relative = 1e-12);
        assert_relative_eq!(d.phi, -brute.arg(), epsilon = 1e-12);

        let low_q = ResonatorState {
            delta_r: 0.0,
            qi_factor: 0.5,
        };
        let d2 = dut_response(&p, &low_q, p.fr);
        assert!(d2.xi > d.xi.min(0.185));
        assert_eq!(d2.phi, 0.0);
    }

    #[test]
    fn photon_number() {
        let p = ResonatorParams::nbn_reference();
        assert_eq!(mean_photon_number(&p, 0.0), 0.0);
        // 8 photons, evaluated independently by hand: 8 / 1.30818e16 W^-1
        let pin = input_power_for_photons(&p, 8.0);
        assert_relative_eq!(pin, 6.1153e-16, max_relative = 1e-4);
        // at fixed Qc the Ql² factor dominates: double Ql, same Qc
        let mut p3 = p;
        p3.ql *= 2.0;
        p3.qi = 1.0 / (1.0 / p3.ql - 1.0 / p3.qc);
        assert_relative_eq!(mean_photon_number(&p3, 1e-15), 4.0 * mean_photon_number(&p, 1e-15), max_relative = 1e-9);
    }

    #[test]
    fn ssb_sweep_is_a_circle() {
        let p = ResonatorParams::nbn_reference();
        let (m, c) = ssb_setup(&p);
        let sweep = linear_sweep(c.f0(), 2.0 * p.linewidth_hz(), 401);
        let tr = spectroscopy_trace(&p, &ResonatorState::default(), &m, &c, &sweep).unwrap();
        let circle = fit::fit_circle(&tr.complex_points()).unwrap();
        assert!(circle.max_relative_residual < 1e-9, "{}", circle.max_relative_residual);
        // only the probe sideband survives: |s| = 2·a1·|S(f0 − fs)|
        let end = tr.points[0].amplitude();
        let probe = reflection(&p, &ResonatorState::default(), sweep[0] - FS);
        assert_relative_eq!(end, 2.0 * m.a1 * probe.norm(), max_relative = 1e-9);
    }

    #[test]
    fn destructive_sweep_passes_origin_at_resonance() {
        let p = ResonatorParams::nbn_reference();
        let (m, c) = destructive_setup(&p);
        let sweep = linear_sweep(c.f0(), 2.0 * p.linewidth_hz(), 401);
        let tr = spectroscopy_trace(&p, &ResonatorState::default(), &m, &c, &sweep).unwrap();
        assert!(tr.points[200].amplitude() < 1e-12);
        assert!(tr.points[0].amplitude() > 1e-3);
    }

    #[test]
    fn calibration_recovers_steps() {
        let p = ResonatorParams::nbn_reference();
        for (m, c) in [ssb_setup(&p), destructive_setup(&p)] {
            let sweep = linear_sweep(c.f0(), 1.5 * p.linewidth_hz(), 3001);
            let tr = spectroscopy_trace(&p, &ResonatorState::default(), &m, &c, &sweep).unwrap();
            let cal = calibrate_phase_to_frequency(&tr, c.f0()).unwrap();
            assert_relative_eq!(cal.linewidth_estimate, p.linewidth_hz(), max_relative = 0.01);
            for dr in [-1000.0, 1000.0, 24e3, -24e3] {
                let s = smi_output(Some(&p), &ResonatorState::detuned(dr), &m, &c).as_complex();
                let got = cal.detuning(s);
                assert!((got - dr).abs() < 0.02 * dr.abs(), "{dr} -> {got}");
            }
        }
    }

    #[test]
    fn calibration_rejects_short_sweeps() {
        let p = ResonatorParams::nbn_reference();
        let (m, c) = ssb_setup(&p);
        let flat = SpectroscopyTrace {
            f0_hz: vec![c.f0(); 10],
            points: vec![DemodOutput::default(); 10],
        };
        assert!(matches!(calibrate_phase_to_frequency(&flat, c.f0()), Err(Error::InsufficientSpan(_))));
        let off = linear_sweep(c.f0() + 5.0 * p.linewidth_hz(), 0.5 * p.linewidth_hz(), 101);
        let tr = spectroscopy_trace(&p, &ResonatorState::default(), &m, &c, &off).unwrap();
        assert!(matches!(calibrate_phase_to_frequency(&tr, off[50]), Err(Error::InsufficientSpan(_))));
    }

    #[test]
    fn jacobian_columns_are_orthogonal_on_resonance() {
        let p = ResonatorParams::nbn_reference();
        for (m, c) in [ssb_setup(&p), destructive_setup(&p)] {
            let j = iq_jacobian(&p, &m, &c, &ResonatorState::default());
            assert!(j.column_cosine() < 0.04, "{}", j.column_cosine());
            assert!((j.column_angle_deg() - 90.0).abs() < 2.0);
        }
    }

    #[test]
    fn jacobian_vanishes_far_off_resonance() {
        let p = ResonatorParams::nbn_reference();
        let (m, c) = ssb_setup(&p);
        let on = iq_jacobian(&p, &m, &c, &ResonatorState::default());
        let off = iq_jacobian(&p, &m, &c, &ResonatorState::detuned(50.0 * p.linewidth_hz()));
        assert!(off.d_detuning.norm() < 1e-3 * on.d_detuning.norm());
        assert!(off.d_qi_factor.norm() < 1e-2 * on.d_qi_factor.norm());
    }

    #[test]
    fn detuning_moves_the_probe_phase() {
        let p = ResonatorParams::nbn_reference();
        let (m, c) = ssb_setup(&p);
        let j = iq_jacobian(&p, &m, &c, &ResonatorState::default());
        // SSB output ∝ conj(probe); a pure phase change of the probe moves the output
        // perpendicular to the output vector itself
        let s = smi_output(Some(&p), &ResonatorState::default(), &m, &c).as_complex();
        let along = (j.d_detuning * s.conj()).re.abs() / (j.d_detuning.norm() * s.norm());
        assert!(along < 1e-6);
    }

    proptest! {
        #[test]
        fn passive_response(df in -50.0f64..50.0, qi_factor in 0.1f64..10.0) {
            let p = ResonatorParams::nbn_reference();
            let s = ResonatorState { delta_r: 0.0, qi_factor };
            let f = p.fr + df * p.linewidth_hz();
            prop_assert!(reflection(&p, &s, f).norm() <= p.bg_amp + 1e-12);
        }

        #[test]
        fn photon_number_scaling(pin in 1e-18f64..1e-12, k in 0.5f64..3.0) {
            let p = ResonatorParams::nbn_reference();
            let n = mean_photon_number(&p, pin);
            prop_assert!((mean_photon_number(&p, k * pin) / n - k).abs() < 1e-12);
            let mut q = p;
            q.qi = 1.0 / (1.0 / (k * p.ql) - 1.0 / p.qc).abs();
            q.qc = p.qc;
            let ratio = mean_photon_number(&q, pin) / n;
            let ql_ratio = q.loaded_q() / p.loaded_q();
            prop_assert!((ratio / (ql_ratio * ql_ratio) - 1.0).abs() < 1e-9);
        }

        #[test]
        fn calibration_round_trip(frac in -0.1f64..0.1) {
            let p = ResonatorParams::nbn_reference();
            let (m, c) = destructive_setup(&p);
            let sweep = linear_sweep(c.f0(), 1.5 * p.linewidth_hz(), 3001);
            let tr = spectroscopy_trace(&p, &ResonatorState::default(), &m, &c, &sweep).unwrap();
            let cal = calibrate_phase_to_frequency(&tr, c.f0()).unwrap();
            let dr = frac * p.linewidth_hz();
            let s = smi_output(Some(&p), &ResonatorState::detuned(dr), &m, &c).as_complex();
            prop_assert!((cal.detuning(s) - dr).abs() <= (0.02 * dr.abs()).max(1.0));
        }
    }
}
