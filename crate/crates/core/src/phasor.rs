//! Closed-form model of the demodulated interferometer output.
//!
//! With I and Q modulation phasors `z1 = a1·e^{iα1}` and `z2 = a2·e^{iα2}`, carrier
//! phase difference `δ` between the up- and down-conversion mixers, and a device that
//! scales the probe sideband by `ξ` and shifts it by `φ`, the lock-in output at `ωs` is
//!
//! ```text
//! s = (z1 + z2)·e^{iδ} + ξ·e^{iφ}·(z1 − z2)·e^{−iδ} = b1·e^{iβ1} + b2·e^{iβ2}
//! ```
//!
//! The first term comes from the reference sideband, the second from the probe.
//! A common phase `θ` picked up by both sidebands on the shared signal path enters
//! exactly like a shift of `δ`: the reference term rotates by `+θ`, the probe term by
//! `−θ` because the probe sits below the carrier and is conjugated by down-conversion.
//! The same convention applies to a physical complex response `P` of the probe
//! sideband: it enters the output as `conj(P)`, so `ξ·e^{iφ} = conj(P)`.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::simplex::{self, NelderMead};
use crate::{Error, Result};

/// Wrap a phase into `[0, 2π)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let w = phase.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wrap a phase into `(−π, π]`.
pub fn wrap_signed(phase: f64) -> f64 {
    let w = wrap_phase(phase);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Low-frequency modulation applied to the I and Q ports of the IQ mixer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulationSettings {
    /// I amplitude (V).
    pub a1: f64,
    /// Q amplitude (V).
    pub a2: f64,
    /// I phase (rad).
    pub alpha1: f64,
    /// Q phase (rad).
    pub alpha2: f64,
    /// Modulation angular frequency (rad/s).
    pub omega_s: f64,
    /// DC offset on the I port (V).
    #[serde(default)]
    pub dc_i: f64,
    /// DC offset on the Q port (V).
    #[serde(default)]
    pub dc_q: f64,
}

impl ModulationSettings {
    pub fn new(a1: f64, alpha1: f64, a2: f64, alpha2: f64, omega_s: f64) -> Result<Self> {
        let m = ModulationSettings {
            a1,
            a2,
            alpha1: wrap_phase(alpha1),
            alpha2: wrap_phase(alpha2),
            omega_s,
            dc_i: 0.0,
            dc_q: 0.0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a1 >= 0.0 && self.a2 >= 0.0) {
            return Err(Error::invalid("modulation amplitudes must be >= 0"));
        }
        if !(self.omega_s > 0.0 && self.omega_s.is_finite()) {
            return Err(Error::invalid("omega_s must be > 0"));
        }
        if !(self.alpha1.is_finite() && self.alpha2.is_finite()) {
            return Err(Error::invalid("modulation phases must be finite"));
        }
        Ok(())
    }

    /// Copy with new Q amplitude and phase (phase wrapped).
    pub fn with_q(&self, a2: f64, alpha2: f64) -> Self {
        ModulationSettings {
            a2,
            alpha2: wrap_phase(alpha2),
            ..*self
        }
    }

    pub fn i_phasor(&self) -> Complex64 {
        Complex64::from_polar(self.a1, self.alpha1)
    }

    pub fn q_phasor(&self) -> Complex64 {
        Complex64::from_polar(self.a2, self.alpha2)
    }

    /// Modulation frequency in Hz.
    pub fn f_s(&self) -> f64 {
        self.omega_s / TAU
    }
}

/// Carrier as seen by the two mixers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarrierSettings {
    /// Carrier angular frequency (rad/s).
    pub omega0: f64,
    /// Carrier phase difference between up- and down-conversion mixer (rad).
    pub delta: f64,
    /// Residual carrier amplitude relative to one sideband. It down-converts to DC and
    /// therefore never reaches the lock-in output at `ωs`.
    #[serde(default)]
    pub leakage: f64,
}

impl CarrierSettings {
    pub fn new(omega0: f64, delta: f64) -> Result<Self> {
        let c = CarrierSettings {
            omega0,
            delta,
            leakage: 0.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_hz(f0: f64, delta: f64) -> Result<Self> {
        Self::new(TAU * f0, delta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::invalid("omega0 must be > 0"));
        }
        if !(self.leakage >= 0.0) {
            return Err(Error::invalid("carrier leakage must be >= 0"));
        }
        if !self.delta.is_finite() {
            return Err(Error::invalid("delta must be finite"));
        }
        Ok(())
    }

    pub fn f0(&self) -> f64 {
        self.omega0 / TAU
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        CarrierSettings { delta, ..*self }
    }
}

/// Amplitude factor and phase shift applied to the probe sideband.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DutResponse {
    pub xi: f64,
    pub phi: f64,
}

impl DutResponse {
    pub const TRANSPARENT: DutResponse = DutResponse { xi: 1.0, phi: 0.0 };

    pub fn new(xi: f64, phi: f64) -> Self {
        DutResponse { xi, phi }
    }

    /// From the physical complex response of the probe sideband (normalised to the
    /// off-resonant background).
    pub fn from_probe_response(p: Complex64) -> Self {
        DutResponse {
            xi: p.norm(),
            phi: -p.arg(),
        }
    }

    /// Inverse of [`DutResponse::from_probe_response`].
    pub fn probe_response(&self) -> Complex64 {
        Complex64::from_polar(self.xi, -self.phi)
    }
}

/// The two interfering terms `b1·e^{iβ1}` (reference) and `b2·e^{iβ2}` (probe).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferencePoint {
    pub b1: f64,
    pub beta1: f64,
    pub b2: f64,
    pub beta2: f64,
}

impl InterferencePoint {
    pub fn reference(&self) -> Complex64 {
        Complex64::from_polar(self.b1, self.beta1)
    }

    pub fn probe(&self) -> Complex64 {
        Complex64::from_polar(self.b2, self.beta2)
    }

    pub fn sum(&self) -> Complex64 {
        self.reference() + self.probe()
    }
}

/// Lock-in output, in-phase and quadrature (V).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DemodOutput {
    pub x: f64,
    pub y: f64,
}

impl DemodOutput {
    pub fn from_complex(s: Complex64) -> Self {
        DemodOutput { x: s.re, y: s.im }
    }

    pub fn as_complex(&self) -> Complex64 {
        Complex64::new(self.x, self.y)
    }

    pub fn amplitude(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Output for a given complex response of the reference and of the probe sideband.
///
/// `eval_output` is the special case `reference = 1`, `probe = conj(ξ·e^{iφ})`.
pub fn eval_sidebands(
    m: &ModulationSettings,
    c: &CarrierSettings,
    reference: Complex64,
    probe: Complex64,
) -> DemodOutput {
    let (z1, z2) = (m.i_phasor(), m.q_phasor());
    let rot = Complex64::from_polar(1.0, c.delta);
    let s = reference * (z1 + z2) * rot + probe.conj() * (z1 - z2) * rot.conj();
    DemodOutput::from_complex(s)
}

/// Demodulated output of the interferometer.
pub fn eval_output(m: &ModulationSettings, c: &CarrierSettings, dut: &DutResponse) -> DemodOutput {
    let (a1, a2, al1, al2) = (m.a1, m.a2, m.alpha1, m.alpha2);
    let (d, xi, phi) = (c.delta, dut.xi, dut.phi);
    let s = Complex64::from_polar(a1, al1 + d)
        + Complex64::from_polar(xi * a1, al1 + phi - d)
        + Complex64::from_polar(a2, al2 + d)
        - Complex64::from_polar(xi * a2, al2 + phi - d);
    DemodOutput::from_complex(s)
}

/// Decomposition of the output into the reference and the probe term.
pub fn interference_terms(
    m: &ModulationSettings,
    c: &CarrierSettings,
    dut: &DutResponse,
) -> InterferencePoint {
    let (z1, z2) = (m.i_phasor(), m.q_phasor());
    let sum = z1 + z2;
    let diff = z1 - z2;
    InterferencePoint {
        b1: sum.norm(),
        beta1: sum.arg() + c.delta,
        b2: dut.xi * diff.norm(),
        beta2: diff.arg() + dut.phi - c.delta,
    }
}

/// Phase differences `α1 − α2` at which `b1 = b2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceSolution {
    pub cos_delta_alpha: f64,
    /// `+Δα` and `−Δα`, with `Δα ∈ [0, π]`.
    pub branches: [f64; 2],
}

pub fn solve_balance(a1: f64, a2: f64, xi: f64) -> Result<BalanceSolution> {
    if !(a1 > 0.0 && a2 > 0.0 && xi >= 0.0) {
        return Err(Error::invalid("solve_balance needs a1 > 0, a2 > 0, xi >= 0"));
    }
    let xi2 = xi * xi;
    let rhs = (xi2 - 1.0) * (a1 * a1 + a2 * a2) / ((1.0 + xi2) * 2.0 * a1 * a2);
    if rhs.abs() > 1.0 {
        return Err(Error::NoSolution(format!(
            "cos(α1−α2) would be {rhs:.4}, outside [−1, 1]"
        )));
    }
    let da = rhs.acos();
    Ok(BalanceSolution {
        cos_delta_alpha: rhs,
        branches: [da, -da],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterferenceMode {
    /// `β1 − β2 = 0`, rejects common phase noise.
    Constructive,
    /// `β1 − β2 = π`, rejects common amplitude noise.
    Destructive,
}

impl InterferenceMode {
    pub fn target_phase(self) -> f64 {
        match self {
            InterferenceMode::Constructive => 0.0,
            InterferenceMode::Destructive => PI,
        }
    }

    pub fn other(self) -> Self {
        match self {
            InterferenceMode::Constructive => InterferenceMode::Destructive,
            InterferenceMode::Destructive => InterferenceMode::Constructive,
        }
    }
}

/// Modulation and carrier phase realising a balanced interference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub a1: f64,
    pub alpha1: f64,
    pub a2: f64,
    pub alpha2: f64,
    pub delta: f64,
    pub mode: InterferenceMode,
}

impl OperatingPoint {
    /// Apply to existing settings, keeping `ωs`, DC offsets, `ω0` and leakage.
    pub fn apply(
        &self,
        m: &ModulationSettings,
        c: &CarrierSettings,
    ) -> (ModulationSettings, CarrierSettings) {
        let m = ModulationSettings {
            a1: self.a1,
            alpha1: wrap_phase(self.alpha1),
            ..m.with_q(self.a2, self.alpha2)
        };
        (m, c.with_delta(self.delta))
    }
}

/// Both balance branches of [`solve_operating_point`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingSolutions {
    /// Branch with `α2 ∈ [0, π)` when one exists.
    pub preferred: OperatingPoint,
    pub mirror: OperatingPoint,
}

const POLISH_TOL: f64 = 1e-12;

/// Solve for `(a2, α2, δ)` at fixed `(a1, α1)` with `a2 = a1`, returning the branch
/// with `α2 ∈ [0, π)`.
pub fn solve_operating_point(
    a1: f64,
    alpha1: f64,
    dut: &DutResponse,
    mode: InterferenceMode,
) -> Result<OperatingPoint> {
    Ok(solve_operating_point_branches(a1, alpha1, a1, dut, mode)?.preferred)
}

/// Solve for `(α2, δ)` at fixed `(a1, α1, a2)`; both branches of the balance condition.
pub fn solve_operating_point_branches(
    a1: f64,
    alpha1: f64,
    a2: f64,
    dut: &DutResponse,
    mode: InterferenceMode,
) -> Result<OperatingSolutions> {
    if !(a1 > 0.0) || !(dut.xi > 0.0) {
        return Err(Error::invalid("solve_operating_point needs a1 > 0 and xi > 0"));
    }
    let bal = solve_balance(a1, a2, dut.xi)?;
    let mut points = bal.branches.map(|da| {
        let alpha2 = wrap_phase(alpha1 - da);
        let delta = delta_for_mode(a1, alpha1, a2, alpha2, dut, mode);
        polish(OperatingPoint {
            a1,
            alpha1,
            a2,
            alpha2,
            delta,
            mode,
        }, dut)
    });
    if !(points[0].alpha2 < PI) && points[1].alpha2 < PI {
        points.swap(0, 1);
    }
    Ok(OperatingSolutions {
        preferred: points[0],
        mirror: points[1],
    })
}

/// `δ` such that `β1 − β2` equals the mode's target phase; unique modulo `π`.
fn delta_for_mode(
    a1: f64,
    alpha1: f64,
    a2: f64,
    alpha2: f64,
    dut: &DutResponse,
    mode: InterferenceMode,
) -> f64 {
    let z1 = Complex64::from_polar(a1, alpha1);
    let z2 = Complex64::from_polar(a2, alpha2);
    // β1 − β2 = arg(z1+z2) − arg(z1−z2) − φ + 2δ
    let raw = 0.5 * (mode.target_phase() - (z1 + z2).arg() + (z1 - z2).arg() + dut.phi);
    wrap_signed(raw)
}

/// Residuals of an operating point: relative amplitude mismatch and phase error.
pub fn operating_residual(p: &OperatingPoint, dut: &DutResponse) -> (f64, f64) {
    let m = ModulationSettings {
        a1: p.a1,
        a2: p.a2,
        alpha1: p.alpha1,
        alpha2: p.alpha2,
        omega_s: 1.0,
        dc_i: 0.0,
        dc_q: 0.0,
    };
    let c = CarrierSettings {
        omega0: 1.0,
        delta: p.delta,
        leakage: 0.0,
    };
    let t = interference_terms(&m, &c, dut);
    let amp = (t.b1 - t.b2).abs() / t.b1.max(f64::MIN_POSITIVE);
    let ph = wrap_signed(t.beta1 - t.beta2 - p.mode.target_phase()).abs();
    (amp, ph)
}

/// Derivative-free clean-up of `(α2, δ)` when the closed form misses the tolerance.
fn polish(p: OperatingPoint, dut: &DutResponse) -> OperatingPoint {
    let (amp, ph) = operating_residual(&p, dut);
    if amp < POLISH_TOL && ph < POLISH_TOL {
        return p;
    }
    let cost = |x: &[f64]| {
        let q = OperatingPoint {
            alpha2: x[0],
            delta: x[1],
            ..p
        };
        let (a, f) = operating_residual(&q, dut);
        a * a + f * f
    };
    let nm = NelderMead {
        initial_step: vec![1e-4, 1e-4],
        f_tol: 1e-30,
        x_tol: 1e-15,
        max_evaluations: 2000,
        ..NelderMead::default()
    };
    let r = simplex::minimize(&cost, &[p.alpha2, p.delta], &nm);
    let q = OperatingPoint {
        alpha2: wrap_phase(r.x[0]),
        delta: r.x[1],
        ..p
    };
    if cost(&[q.alpha2, q.delta]) < cost(&[p.alpha2, p.delta]) {
        q
    } else {
        p
    }
}

/// Modulation `(a2, α2)` that realises `mode` at a given carrier phase `δ` and given
/// complex sideband responses. Unique for fixed `δ`.
pub fn operating_point_at_delta(
    a1: f64,
    alpha1: f64,
    delta: f64,
    reference: Complex64,
    probe: Complex64,
    mode: InterferenceMode,
) -> Result<(f64, f64)> {
    let rot = Complex64::from_polar(1.0, delta);
    let r = reference * rot;
    let p = probe.conj() * rot.conj();
    let z1 = Complex64::from_polar(a1, alpha1);
    let (num, den) = match mode {
        InterferenceMode::Destructive => (r + p, r - p),
        InterferenceMode::Constructive => (r - p, r + p),
    };
    if den.norm() < 1e-12 * (r.norm() + p.norm()) {
        return Err(Error::NoSolution(format!(
            "{mode:?} point does not exist at delta = {delta}"
        )));
    }
    let z2 = -z1 * num / den;
    Ok((z2.norm(), wrap_phase(z2.arg())))
}

/// Q modulation `(a2, α2)` producing a requested output phasor. The output is affine
/// in `z2 = a2·e^{iα2}`, so the inverse is unique when it exists.
pub fn settings_for_output(
    a1: f64,
    alpha1: f64,
    carrier: &CarrierSettings,
    reference: Complex64,
    probe: Complex64,
    target: Complex64,
) -> Option<(f64, f64)> {
    let rot = Complex64::from_polar(1.0, carrier.delta);
    let r = reference * rot;
    let p = probe.conj() * rot.conj();
    let c2 = r - p;
    if c2.norm() < 1e-15 {
        return None;
    }
    let z1 = Complex64::from_polar(a1, alpha1);
    let z2 = (target - (r + p) * z1) / c2;
    Some((z2.norm(), wrap_phase(z2.arg())))
}

/// Q modulation that cancels the reference sideband, leaving a single (probe) sideband.
pub fn ssb_settings(a1: f64, alpha1: f64) -> (f64, f64) {
    (a1, wrap_phase(alpha1 + PI))
}

/// Scale both modulation amplitudes by `1 + eps_amp` and shift `δ` by `theta_phase`.
pub fn apply_common_noise(
    m: &ModulationSettings,
    c: &CarrierSettings,
    eps_amp: f64,
    theta_phase: f64,
) -> Result<(ModulationSettings, CarrierSettings)> {
    if !(eps_amp > -1.0) {
        return Err(Error::invalid(format!("eps_amp must be > -1, got {eps_amp}")));
    }
    let g = 1.0 + eps_amp;
    let m2 = ModulationSettings {
        a1: m.a1 * g,
        a2: m.a2 * g,
        ..*m
    };
    Ok((m2, c.with_delta(c.delta + theta_phase)))
}

/// Common-mode perturbation used for sensitivity maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perturbation {
    /// Fractional change of both sideband amplitudes.
    Amplitude(f64),
    /// Common phase change of both sidebands (rad).
    Phase(f64),
}

impl Perturbation {
    pub const AMPLITUDE_1PCT: Perturbation = Perturbation::Amplitude(0.01);
    pub const PHASE_10MRAD: Perturbation = Perturbation::Phase(0.01);

    fn as_noise(self) -> (f64, f64) {
        match self {
            Perturbation::Amplitude(e) => (e, 0.0),
            Perturbation::Phase(t) => (0.0, t),
        }
    }
}

/// `ΔS = |s(perturbed) − s(nominal)|`.
pub fn delta_s(
    m: &ModulationSettings,
    c: &CarrierSettings,
    dut: &DutResponse,
    perturbation: Perturbation,
) -> Result<f64> {
    let (eps, theta) = perturbation.as_noise();
    let (mp, cp) = apply_common_noise(m, c, eps, theta)?;
    let s0 = eval_output(m, c, dut).as_complex();
    let s1 = eval_output(&mp, &cp, dut).as_complex();
    Ok((s1 - s0).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub a2: f64,
    pub alpha2: f64,
    pub x: f64,
    pub y: f64,
    pub delta_s: f64,
}

/// ΔS over a grid of Q-modulation settings, row-major with `alpha2` varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMap {
    pub a2_grid: Vec<f64>,
    pub alpha2_grid: Vec<f64>,
    pub perturbation: Perturbation,
    pub cells: Vec<SensitivityCell>,
}

impl SensitivityMap {
    pub fn cell(&self, i_a2: usize, j_alpha2: usize) -> &SensitivityCell {
        &self.cells[i_a2 * self.alpha2_grid.len() + j_alpha2]
    }

    /// Cell with the smallest ΔS.
    pub fn minimum(&self) -> &SensitivityCell {
        self.cells
            .iter()
            .min_by(|a, b| a.delta_s.total_cmp(&b.delta_s))
            .expect("map is never empty")
    }
}

pub fn sensitivity_map(
    a1: f64,
    alpha1: f64,
    carrier: &CarrierSettings,
    dut: &DutResponse,
    a2_grid: &[f64],
    alpha2_grid: &[f64],
    perturbation: Perturbation,
) -> Result<SensitivityMap> {
    if a2_grid.is_empty() || alpha2_grid.is_empty() {
        return Err(Error::invalid("sensitivity map grids must be non-empty"));
    }
    let base = ModulationSettings::new(a1, alpha1, 0.0, 0.0, 1.0)?;
    let mut cells = Vec::with_capacity(a2_grid.len() * alpha2_grid.len());
    for &a2 in a2_grid {
        for &alpha2 in alpha2_grid {
            let m = base.with_q(a2, alpha2);
            let s = eval_output(&m, carrier, dut);
            cells.push(SensitivityCell {
                a2,
                alpha2,
                x: s.x,
                y: s.y,
                delta_s: delta_s(&m, carrier, dut, perturbation)?,
            });
        }
    }
    Ok(SensitivityMap {
        a2_grid: a2_grid.to_vec(),
        alpha2_grid: alpha2_grid.to_vec(),
        perturbation,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinecutPoint {
    /// Signed distance from the line centre in the IQ plane (V).
    pub offset: f64,
    pub x: f64,
    pub y: f64,
    pub delta_s: f64,
}

/// ΔS along a straight line `center + t·direction` of working points in the IQ plane,
/// `t ∈ [−half_width, half_width]`. Each working point is realised by the unique Q
/// modulation that produces it.
#[allow(clippy::too_many_arguments)]
pub fn linecut(
    a1: f64,
    alpha1: f64,
    carrier: &CarrierSettings,
    dut: &DutResponse,
    center: Complex64,
    direction: Complex64,
    half_width: f64,
    points: usize,
    perturbation: Perturbation,
) -> Result<Vec<LinecutPoint>> {
    if points < 2 || !(half_width > 0.0) || direction.norm() == 0.0 {
        return Err(Error::invalid("linecut needs >= 2 points, a positive width and a direction"));
    }
    let dir = direction / direction.norm();
    let base = ModulationSettings::new(a1, alpha1, 0.0, 0.0, 1.0)?;
    let probe = dut.probe_response();
    (0..points)
        .map(|k| {
            let t = -half_width + 2.0 * half_width * k as f64 / (points - 1) as f64;
            let target = center + dir * t;
            let (a2, alpha2) =
                settings_for_output(a1, alpha1, carrier, Complex64::new(1.0, 0.0), probe, target)
                    .ok_or_else(|| Error::NoSolution("output not reachable by Q modulation".into()))?;
            let m = base.with_q(a2, alpha2);
            let s = eval_output(&m, carrier, dut);
            Ok(LinecutPoint {
                offset: t,
                x: s.x,
                y: s.y,
                delta_s: delta_s(&m, carrier, dut, perturbation)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn modulation(a1: f64, alpha1: f64, a2: f64, alpha2: f64) -> ModulationSettings {
        ModulationSettings::new(a1, alpha1, a2, alpha2, TAU * 10e6).unwrap()
    }

    fn carrier(delta: f64) -> CarrierSettings {
        CarrierSettings::from_hz(6.16e9, delta).unwrap()
    }

    #[test]
    fn transparent_single_tone_adds_up() {
        let s = eval_output(&modulation(1.0, 0.0, 0.0, 0.0), &carrier(0.0), &DutResponse::TRANSPARENT);
        assert_relative_eq!(s.x, 2.0, epsilon = 1e-15);
        assert_relative_eq!(s.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn absorbed_probe_leaves_reference() {
        let m = modulation(0.7, 0.4, 0.3, 1.9);
        let c = carrier(0.25);
        let s = eval_output(&m, &c, &DutResponse::new(0.0, 1.3)).as_complex();
        let expect = Complex64::from_polar(0.7, 0.4 + 0.25) + Complex64::from_polar(0.3, 1.9 + 0.25);
        assert_eq!(s, expect);
        let t = interference_terms(&m, &c, &DutResponse::new(0.0, 1.3));
        assert_eq!(t.b2, 0.0);
    }

    #[test]
    fn no_q_modulation_reduces_to_two_terms() {
        let m = modulation(0.8, 0.2, 0.0, 0.0);
        let c = carrier(-0.3);
        let d = DutResponse::new(0.5, 0.7);
        let s = eval_output(&m, &c, &d).as_complex();
        let expect = Complex64::from_polar(0.8, 0.2 - 0.3) + Complex64::from_polar(0.4, 0.2 + 0.7 + 0.3);
        assert_relative_eq!((s - expect).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn figure3_parameters_are_balanced() {
        let m = modulation(1.0, 0.3, 1.0, 2.68);
        let d = DutResponse::new(0.4, 0.3);
        let t = interference_terms(&m, &carrier(0.0), &d);
        // direct evaluation of the closed-form amplitudes
        let da: f64 = 0.3 - 2.68;
        let b1 = (2.0 + 2.0 * da.cos()).sqrt();
        let b2 = (0.16 * (2.0 - 2.0 * da.cos())).sqrt();
        assert_relative_eq!(t.b1, b1, max_relative = 1e-14);
        assert_relative_eq!(t.b2, b2, max_relative = 1e-14);
        assert_relative_eq!(t.b1, 0.7433, epsilon = 1e-4);
        assert_relative_eq!(t.b2, 0.7427, epsilon = 1e-4);
        let s = eval_output(&m, &carrier(0.0), &d).as_complex();
        assert_relative_eq!((s - t.sum()).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn in_phase_and_anti_phase_modulation() {
        let a = 0.6;
        let t = interference_terms(&modulation(a, 1.1, a, 1.1), &carrier(0.0), &DutResponse::new(0.5, 0.0));
        assert_relative_eq!(t.b1, 2.0 * a, max_relative = 1e-15);
        assert_relative_eq!(t.b2, 0.0, epsilon = 1e-15);
        let t = interference_terms(&modulation(a, 1.1, a, 1.1 + PI), &carrier(0.0), &DutResponse::TRANSPARENT);
        assert_relative_eq!(t.b1, 0.0, epsilon = 1e-15);
        assert_relative_eq!(t.b2, 2.0 * a, max_relative = 1e-15);
    }

    #[test]
    fn balance_examples() {
        let b = solve_balance(1.0, 1.0, 0.4).unwrap();
        assert_relative_eq!(b.cos_delta_alpha, -0.72414, epsilon = 1e-5);
        assert_relative_eq!(b.branches[0], 2.3806, epsilon = 1e-4);
        assert_relative_eq!(b.branches[1], -2.3806, epsilon = 1e-4);

        let b = solve_balance(0.3, 0.3, 1.0).unwrap();
        assert_relative_eq!(b.cos_delta_alpha, 0.0, epsilon = 1e-15);
        assert_relative_eq!(b.branches[0], PI / 2.0, epsilon = 1e-15);

        assert!(matches!(solve_balance(1.0, 0.01, 0.5), Err(Error::NoSolution(_))));
    }

    #[test]
    fn figure3_operating_points() {
        let d = DutResponse::new(0.4, 0.3);
        let c = solve_operating_point(1.0, 0.3, &d, InterferenceMode::Constructive).unwrap();
        assert_relative_eq!(c.alpha2, 2.68, epsilon = 2e-3);
        // the caption's carrier phases for the two modes
        assert_relative_eq!(c.delta, -0.64, epsilon = 6e-3);
        let dd = solve_operating_point(1.0, 0.3, &d, InterferenceMode::Destructive).unwrap();
        assert_relative_eq!(dd.delta, 0.94, epsilon = 6e-3);
        assert_relative_eq!(dd.delta - c.delta, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn destructive_point_is_a_null() {
        let d = DutResponse::new(0.184, 0.0);
        for &alpha1 in &[0.0, 1.0, 5.76] {
            let p = solve_operating_point(0.01, alpha1, &d, InterferenceMode::Destructive).unwrap();
            let (m, c) = p.apply(&modulation(0.0, 0.0, 0.0, 0.0), &carrier(0.0));
            assert!(eval_output(&m, &c, &d).amplitude() < 1e-9 * 0.01);
            for eps in [-0.5, -0.1, 0.2, 0.5] {
                let (mp, cp) = apply_common_noise(&m, &c, eps, 0.0).unwrap();
                assert!(eval_output(&mp, &cp, &d).amplitude() < 1e-9 * 0.01);
            }
        }
    }

    #[test]
    fn constructive_point_is_phase_stationary() {
        let d = DutResponse::new(0.4, 0.3);
        let p = solve_operating_point(1.0, 0.3, &d, InterferenceMode::Constructive).unwrap();
        let (m, c) = p.apply(&modulation(0.0, 0.0, 0.0, 0.0), &carrier(0.0));
        let amp = |theta: f64| eval_output(&m, &c.with_delta(c.delta + theta), &d).amplitude();
        let h = 1e-5;
        let deriv = (amp(h) - amp(-h)) / (2.0 * h);
        assert!(deriv.abs() < 1e-6 * amp(0.0), "derivative {deriv}");
        let ds = delta_s(&m, &c, &d, Perturbation::PHASE_10MRAD).unwrap();
        assert!(ds < 1e-4 * amp(0.0));
    }

    #[test]
    fn both_branches_are_balanced() {
        let d = DutResponse::new(0.25, -0.4);
        let sol =
            solve_operating_point_branches(0.5, 2.0, 0.8, &d, InterferenceMode::Destructive).unwrap();
        for p in [sol.preferred, sol.mirror] {
            let (amp, ph) = operating_residual(&p, &d);
            assert!(amp < 1e-9 && ph < 1e-9, "{amp} {ph}");
        }
        assert!(sol.preferred.alpha2 < PI || sol.mirror.alpha2 >= PI);
    }

    #[test]
    fn operating_point_needs_probe_signal() {
        assert!(solve_operating_point(1.0, 0.0, &DutResponse::new(0.0, 0.0), InterferenceMode::Constructive).is_err());
        assert!(matches!(
            solve_operating_point_branches(1.0, 0.0, 0.01, &DutResponse::new(0.5, 0.0), InterferenceMode::Destructive),
            Err(Error::NoSolution(_))
        ));
    }

    #[test]
    fn null_at_fixed_delta_matches_closed_form_family() {
        let d = DutResponse::new(0.3, 0.5);
        let p = solve_operating_point(1.0, 0.7, &d, InterferenceMode::Destructive).unwrap();
        let (a2, alpha2) = operating_point_at_delta(
            1.0,
            0.7,
            p.delta,
            Complex64::new(1.0, 0.0),
            d.probe_response(),
            InterferenceMode::Destructive,
        )
        .unwrap();
        assert_relative_eq!(a2, p.a2, max_relative = 1e-12);
        assert_relative_eq!(wrap_signed(alpha2 - p.alpha2), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn common_noise_identity_and_null_scaling() {
        let m = modulation(0.3, 0.1, 0.2, 4.0);
        let c = carrier(0.4);
        let (m2, c2) = apply_common_noise(&m, &c, 0.0, 0.0).unwrap();
        assert_eq!(m, m2);
        assert_eq!(c, c2);
        assert!(apply_common_noise(&m, &c, -1.0, 0.0).is_err());

        let d = DutResponse::new(0.5, 0.2);
        let p = solve_operating_point(0.3, 0.1, &d, InterferenceMode::Destructive).unwrap();
        let (m, c) = p.apply(&m, &c);
        assert!(delta_s(&m, &c, &d, Perturbation::AMPLITUDE_1PCT).unwrap() < 1e-15);
    }

    #[test]
    fn ssb_amplitude_and_phase_sensitivity_agree() {
        let (a2, alpha2) = ssb_settings(0.01, 5.76);
        let m = modulation(0.01, 5.76, a2, alpha2);
        let c = carrier(0.2);
        let d = DutResponse::TRANSPARENT;
        let amp = delta_s(&m, &c, &d, Perturbation::AMPLITUDE_1PCT).unwrap();
        let ph = delta_s(&m, &c, &d, Perturbation::PHASE_10MRAD).unwrap();
        assert!((amp / ph - 1.0).abs() < 0.01);
        // single tone: δ|s| = |s|·ε
        assert_relative_eq!(amp, 0.01 * eval_output(&m, &c, &d).amplitude(), max_relative = 1e-12);
    }

    #[test]
    fn map_has_zero_at_destructive_point() {
        let d = DutResponse::TRANSPARENT;
        let c = carrier(0.225);
        let p = operating_point_at_delta(
            0.01,
            5.76,
            0.225,
            Complex64::new(1.0, 0.0),
            d.probe_response(),
            InterferenceMode::Destructive,
        )
        .unwrap();
        let map = sensitivity_map(0.01, 5.76, &c, &d, &[0.02, p.0, 0.06], &[p.1 - 0.1, p.1, p.1 + 0.1], Perturbation::AMPLITUDE_1PCT)
            .unwrap();
        assert!(map.cell(1, 1).delta_s < 1e-16);
        assert_eq!(map.minimum(), map.cell(1, 1));
        assert!(sensitivity_map(0.01, 0.0, &c, &d, &[], &[0.0], Perturbation::AMPLITUDE_1PCT).is_err());
    }

    #[test]
    fn amplitude_linecut_is_symmetric_v() {
        let d = DutResponse::new(0.6, 0.2);
        let c = carrier(0.4);
        let cut = linecut(
            0.01,
            5.76,
            &c,
            &d,
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
            0.004,
            41,
            Perturbation::AMPLITUDE_1PCT,
        )
        .unwrap();
        assert!(cut[20].delta_s < 1e-16);
        let left = (cut[0].delta_s - cut[20].delta_s) / 0.004;
        let right = (cut[40].delta_s - cut[20].delta_s) / 0.004;
        assert!((left / right - 1.0).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn decomposition_identity(
            a1 in 0.0f64..2.0, a2 in 0.0f64..2.0,
            al1 in 0.0f64..TAU, al2 in 0.0f64..TAU,
            delta in -PI..PI, xi in 0.0f64..1.0, phi in -PI..PI,
        ) {
            let m = modulation(a1, al1, a2, al2);
            let c = carrier(delta);
            let d = DutResponse::new(xi, phi);
            let s = eval_output(&m, &c, &d).as_complex();
            let t = interference_terms(&m, &c, &d).sum();
            let scale = a1 + a2 + 1e-300;
            prop_assert!((s - t).norm() <= 1e-12 * scale);
            let g = eval_sidebands(&m, &c, Complex64::new(1.0, 0.0), d.probe_response()).as_complex();
            prop_assert!((s - g).norm() <= 1e-12 * scale);
        }

        #[test]
        fn balance_solutions_verify(a1 in 0.1f64..2.0, ratio in 0.5f64..2.0, xi in 0.3f64..1.0) {
            let a2 = a1 * ratio;
            if let Ok(b) = solve_balance(a1, a2, xi) {
                for da in b.branches {
                    let m = modulation(a1, 0.4, a2, 0.4 - da);
                    let t = interference_terms(&m, &carrier(0.0), &DutResponse::new(xi, 0.0));
                    prop_assert!((t.b1 - t.b2).abs() / t.b1 < 1e-12);
                }
            }
        }

        #[test]
        fn settings_for_output_round_trip(
            tx in -0.05f64..0.05, ty in -0.05f64..0.05, delta in 0.1f64..1.4, xi in 0.0f64..0.9,
        ) {
            let c = carrier(delta);
            let d = DutResponse::new(xi, 0.3);
            let target = Complex64::new(tx, ty);
            let (a2, alpha2) = settings_for_output(0.01, 1.0, &c, Complex64::new(1.0, 0.0), d.probe_response(), target).unwrap();
            let s = eval_output(&modulation(0.01, 1.0, a2, alpha2), &c, &d).as_complex();
            prop_assert!((s - target).norm() < 1e-14);
        }
    }
}
