//! Automated set-up of the interferometer against a simulated instrument.
//!
//! The procedure follows the usual bench sequence: configure the modulation, null the
//! carrier leakage with the mixer DC offsets, locate the resonance with a
//! single-sideband sweep, tune the Q modulation until the output vanishes, re-balance
//! the mixer, and optionally rotate the carrier phase to switch from amplitude- to
//! phase-noise rejection.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::phasor::{
    operating_point_at_delta, ssb_settings, wrap_phase, CarrierSettings, InterferenceMode,
};
use crate::resonator::{linear_sweep, ResonatorParams, SpectroscopyTrace};
use crate::simplex::{minimize_with_restart, NelderMead};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Residual carrier relative to the sideband amplitude regarded as balanced.
    pub balance_target: f64,
    pub balance_max_iterations: usize,
    /// First probing step of the DC offsets (V).
    pub balance_step: f64,
    /// Centre of the resonance search for the probe sideband (Hz); defaults to the
    /// probe frequency of the initial carrier.
    pub search_center_hz: Option<f64>,
    pub search_half_span_hz: f64,
    pub sweep_points: usize,
    /// A dip must exceed this multiple of the noise floor.
    pub dip_snr: f64,
    /// Null amplitude tolerance relative to `a1`.
    pub null_tolerance: f64,
    pub null_max_evaluations: usize,
    /// Rotate the carrier phase before the null search so the two sidebands arrive in
    /// antiphase.
    pub align_carrier_phase: bool,
    pub switch_to_phase_rejection: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            balance_target: 1e-4,
            balance_max_iterations: 100,
            balance_step: 5e-3,
            search_center_hz: None,
            search_half_span_hz: 5e6,
            sweep_points: 801,
            dip_snr: 5.0,
            null_tolerance: 1e-4,
            null_max_evaluations: 2000,
            align_carrier_phase: true,
            switch_to_phase_rejection: false,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.balance_target > 0.0 && self.balance_step > 0.0 && self.search_half_span_hz > 0.0) {
            return Err(Error::Config("protocol tolerances and spans must be > 0".into()));
        }
        if self.sweep_points < 16 || self.balance_max_iterations == 0 || self.null_max_evaluations < 10 {
            return Err(Error::Config("protocol needs sweep_points >= 16 and positive iteration caps".into()));
        }
        if !(self.dip_snr > 0.0 && self.null_tolerance > 0.0) {
            return Err(Error::Config("dip_snr and null_tolerance must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceResult {
    pub dc_i: f64,
    pub dc_q: f64,
    /// Residual carrier relative to the sideband amplitude.
    pub residual: f64,
    /// Suppression relative to the starting offsets.
    pub suppression: f64,
    pub evaluations: usize,
    pub iterations: usize,
}

/// Null the residual carrier by coordinate descent on the DC offsets. Along each axis
/// three readings define a parabola in the squared residual whose vertex becomes the
/// new offset.
pub fn balance_mixer(engine: &mut Engine, cfg: &ProtocolConfig) -> Result<BalanceResult> {
    let m0 = engine.modulation();
    let mut dc = [m0.dc_i, m0.dc_q];
    let mut evaluations = 0;
    let mut read = |e: &mut Engine, d: [f64; 2]| {
        e.set_dc(d[0], d[1]);
        evaluations += 1;
        e.carrier_residual()
    };
    let r_start = read(engine, dc);
    let mut r = r_start;
    let mut step = cfg.balance_step;
    let mut iterations = 0;
    while r > cfg.balance_target {
        if iterations >= cfg.balance_max_iterations {
            engine.set_dc(dc[0], dc[1]);
            return Err(Error::NotConverged {
                what: "mixer balance".into(),
                iterations,
                residual: r,
            });
        }
        iterations += 1;
        for axis in 0..2 {
            let mut lo = dc;
            let mut hi = dc;
            lo[axis] -= step;
            hi[axis] += step;
            let (rl, rh) = (read(engine, lo), read(engine, hi));
            let (yl, y0, yh) = (rl * rl, r * r, rh * rh);
            let curv = yh - 2.0 * y0 + yl;
            let shift = if curv > 0.0 {
                -step * (yh - yl) / (2.0 * curv)
            } else if yh < yl {
                step
            } else {
                -step
            };
            let mut next = dc;
            next[axis] += shift;
            let rn = read(engine, next);
            if rn < r {
                dc = next;
                r = rn;
            }
        }
        step = (step * 0.5).max(1e-9);
    }
    engine.set_dc(dc[0], dc[1]);
    Ok(BalanceResult {
        dc_i: dc[0],
        dc_q: dc[1],
        residual: r,
        suppression: r_start / r,
        evaluations,
        iterations,
    })
}

/// Outcome of the resonance search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceFit {
    pub params: ResonatorParams,
    /// Complex factor between the notch model and the conjugated output (V).
    pub scale: Complex64,
    /// RMS of the complex fit residual relative to `|scale|`.
    pub residual_rms: f64,
    pub dip_depth: f64,
    pub noise_floor: f64,
    pub iterations: usize,
    /// Fine sweep used for the fit, against probe frequency.
    pub sweep: SpectroscopyTrace,
}

fn robust_scatter(v: &[f64]) -> f64 {
    let mut d: Vec<f64> = v.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    // median |Δ| of two N(0, σ²) readings is 0.954σ
    d[d.len() / 2] / 0.954
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

fn sweep_probe(engine: &mut Engine, probe_freqs: &[f64]) -> SpectroscopyTrace {
    let fs = engine.modulation().f_s();
    let points = probe_freqs
        .iter()
        .map(|fp| {
            engine.set_carrier_hz(fp + fs);
            engine.measure()
        })
        .collect();
    SpectroscopyTrace {
        f0_hz: probe_freqs.to_vec(),
        points,
    }
}

/// Locate the resonance with single-sideband sweeps and fit the notch model.
///
/// The fitted model is `conj(s) = C·e^{−i2π(f−f_c)τ}·[1 − (Ql/Qc)e^{iφ0}/(1 + 2iQl(f − fr)/fr)]`
/// against the probe frequency `f`. On success the carrier is left with the probe on
/// the fitted resonance and the original modulation restored.
pub fn find_resonance(engine: &mut Engine, cfg: &ProtocolConfig) -> Result<ResonanceFit> {
    let m0 = engine.modulation();
    let c0 = engine.carrier();
    let (a2, alpha2) = ssb_settings(m0.a1, m0.alpha1);
    engine.set_q(a2, alpha2);
    let center = cfg.search_center_hz.unwrap_or(c0.f0() - m0.f_s());
    let result = fit_resonance(engine, cfg, center);
    engine.set_modulation(m0)?;
    match result {
        Ok(fit) => {
            engine.set_carrier_hz(fit.params.fr + m0.f_s());
            Ok(fit)
        }
        Err(e) => {
            engine.set_carrier(c0)?;
            Err(e)
        }
    }
}

fn fit_resonance(engine: &mut Engine, cfg: &ProtocolConfig, center: f64) -> Result<ResonanceFit> {
    let coarse_f = linear_sweep(center, cfg.search_half_span_hz, cfg.sweep_points);
    let coarse = sweep_probe(engine, &coarse_f);
    let amp: Vec<f64> = coarse.points.iter().map(|p| p.amplitude()).collect();
    let baseline = median(&amp);
    let k_min = (0..amp.len()).min_by(|a, b| amp[*a].total_cmp(&amp[*b])).expect("non-empty sweep");
    let depth = baseline - amp[k_min];
    // the off-resonant level of a real line is flat to about 1e-3
    let floor = robust_scatter(&amp).max(1e-3 * baseline);
    if !(depth > cfg.dip_snr * floor) {
        return Err(Error::NotFound(format!(
            "no dip deeper than {} x noise floor ({:.3e} V) in [{:.6e}, {:.6e}] Hz",
            cfg.dip_snr,
            floor,
            coarse_f[0],
            coarse_f[coarse_f.len() - 1]
        )));
    }

    // full width at half depth of |s|² is fr/Ql for the ideal notch
    let half = 0.5 * (baseline * baseline + amp[k_min] * amp[k_min]);
    let mut lo = k_min;
    while lo > 0 && amp[lo] * amp[lo] < half {
        lo -= 1;
    }
    let mut hi = k_min;
    while hi + 1 < amp.len() && amp[hi] * amp[hi] < half {
        hi += 1;
    }
    let step = coarse_f[1] - coarse_f[0];
    let lw0 = ((hi - lo) as f64 * step).max(2.0 * step);
    let fr0 = coarse_f[k_min];

    let fine_f = linear_sweep(fr0, 4.0 * lw0, cfg.sweep_points);
    let fine = sweep_probe(engine, &fine_f);
    let data: Vec<Complex64> = fine.points.iter().map(|p| p.as_complex().conj()).collect();
    let edge = if fine_f[0] - fr0 > 0.0 { data[0] } else { data[data.len() - 1] };
    let c_scale = edge.norm().max(f64::MIN_POSITIVE);
    let ql0 = fr0 / lw0;
    let dip_rel = (1.0 - amp[k_min] / baseline).clamp(0.05, 0.95);
    let qc0 = ql0 / dip_rel;
    let w = 8.0 * TAU * lw0;

    let model = |p: &[f64], f: f64| -> Complex64 {
        let fr = fr0 + p[0] * lw0;
        let (ql, qc) = (p[1].exp(), p[2].exp());
        let tau = p[4] / w;
        let notch = Complex64::new(1.0, 0.0)
            - Complex64::from_polar(ql / qc, p[3]) / Complex64::new(1.0, 2.0 * ql * (f - fr) / fr);
        Complex64::new(p[5], p[6]) * c_scale * Complex64::from_polar(1.0, -TAU * (f - fr0) * tau) * notch
    };
    let residuals = |p: &[f64]| -> Vec<f64> {
        let mut r = Vec::with_capacity(2 * data.len());
        for (f, d) in fine_f.iter().zip(&data) {
            let e = (model(p, *f) - d) / c_scale;
            r.push(e.re);
            r.push(e.im);
        }
        r
    };
    let x0 = [0.0, ql0.ln(), qc0.ln(), 0.0, 0.0, edge.re / c_scale, edge.im / c_scale];
    let fit = levenberg_marquardt(residuals, &x0, &LmOptions::default())?;
    let p = &fit.params;
    let (ql, qc) = (p[1].exp(), p[2].exp());
    let fr = fr0 + p[0] * lw0;
    if !(fr > 0.0 && ql.is_finite() && qc.is_finite()) {
        return Err(Error::NotFound("notch fit diverged".into()));
    }
    let qi = if qc > ql { 1.0 / (1.0 / ql - 1.0 / qc) } else { f64::INFINITY };
    let scale = Complex64::new(p[5], p[6]) * c_scale;
    let m = engine.modulation();
    let gain = engine.setup().gain;
    let prior = engine.setup().resonator;
    let params = ResonatorParams {
        fr,
        ql,
        qc,
        qi,
        zr: prior.map_or(crate::resonator::Z0_DEFAULT, |r| r.zr),
        phi0: p[3],
        tau_d: p[4] / w,
        bg_amp: scale.norm() / (2.0 * m.a1 * gain),
        z0: prior.map_or(crate::resonator::Z0_DEFAULT, |r| r.z0),
    };
    Ok(ResonanceFit {
        params,
        scale,
        residual_rms: (fit.cost / data.len() as f64).sqrt(),
        dip_depth: depth,
        noise_floor: floor,
        iterations: fit.iterations,
        sweep: fine,
    })
}

/// Set the carrier phase so the reference and probe terms are antiparallel.
///
/// With `z2 = −z1` only the probe sideband reaches the detector and the output is
/// `2z1·p`; with `z2 = z1` it is `2z1·r`. Shifting `δ` by `Δ` multiplies `r/p` by
/// `e^{2iΔ}`, so the ratio of the two readings fixes the shift that makes `r/p = −1`.
/// There the destructive point needs the smallest Q drive and the switched
/// constructive point has the smallest output, which maximises the phase-noise
/// rejection. Returns the new `δ`.
pub fn align_carrier_phase(engine: &mut Engine) -> Result<f64> {
    let m = engine.modulation();
    let (a2, alpha2) = ssb_settings(m.a1, m.alpha1);
    engine.set_q(a2, alpha2);
    let s_probe = engine.measure().as_complex();
    engine.set_q(m.a1, m.alpha1);
    let s_ref = engine.measure().as_complex();
    engine.set_modulation(m)?;
    if s_probe.norm() == 0.0 || s_ref.norm() == 0.0 {
        return Err(Error::NoSolution("a sideband is not detected".into()));
    }
    let c = engine.carrier();
    let delta = wrap_phase(c.delta + 0.5 * (PI - (s_ref / s_probe).arg()));
    engine.set_carrier(c.with_delta(delta))?;
    Ok(delta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullResult {
    pub a2: f64,
    pub alpha2: f64,
    /// Output amplitude at the null, noise-free (V).
    pub amplitude: f64,
    /// Last measured amplitude (V).
    pub measured_amplitude: f64,
    pub evaluations: usize,
    pub converged: bool,
    /// Best measured amplitude after each simplex iteration.
    pub best_history: Vec<f64>,
    /// Closed-form `(a2, α2)` from the true sideband responses.
    pub analytic: (f64, f64),
    /// Largest relative deviation from the closed-form point.
    pub analytic_deviation: f64,
}

/// Minimise `|s|` over `(a2, α2)` with a bounded simplex and one restart, starting
/// from the single-sideband setting.
pub fn find_null(engine: &mut Engine, cfg: &ProtocolConfig) -> Result<NullResult> {
    let m = engine.modulation();
    let (a1, alpha1) = (m.a1, m.alpha1);
    let (s2, sa2) = ssb_settings(a1, alpha1);
    let target = (cfg.null_tolerance * a1 * engine.setup().gain).max(3.0 * engine.noise_rms());
    // the simplex takes a shared closure; readings go through a RefCell
    let engine_cell = std::cell::RefCell::new(&mut *engine);
    let cost = |x: &[f64]| {
        let mut e = engine_cell.borrow_mut();
        e.set_q(x[0], x[1]);
        e.measure().amplitude()
    };
    let opts = NelderMead {
        initial_step: vec![0.2 * a1, 0.3],
        lower: Some(vec![0.0, sa2 - TAU]),
        upper: Some(vec![10.0 * a1, sa2 + TAU]),
        f_tol: 1e-14 * a1,
        x_tol: 1e-12,
        f_target: Some(target),
        max_evaluations: cfg.null_max_evaluations,
    };
    let r = minimize_with_restart(&cost, &[s2, sa2], &opts, 0.1);
    let engine = engine_cell.into_inner();
    engine.set_q(r.x[0], r.x[1]);
    let ideal = engine.ideal_output().amplitude();
    let (r_ref, r_probe) = engine.true_responses();
    let c = engine.carrier();
    let analytic = operating_point_at_delta(a1, alpha1, c.delta, r_ref, r_probe, InterferenceMode::Destructive)?;
    let alpha2 = wrap_phase(r.x[1]);
    let dev_a = (r.x[0] - analytic.0).abs() / analytic.0.max(f64::MIN_POSITIVE);
    let dev_p = crate::phasor::wrap_signed(alpha2 - analytic.1).abs() / analytic.1.abs().max(1e-3);
    if r.f > target {
        return Err(Error::NotConverged {
            what: "null search".into(),
            iterations: r.iterations,
            residual: r.f,
        });
    }
    Ok(NullResult {
        a2: r.x[0],
        alpha2,
        amplitude: ideal,
        measured_amplitude: r.f,
        evaluations: r.evaluations,
        converged: true,
        best_history: r.best_history,
        analytic,
        analytic_deviation: dev_a.max(dev_p),
    })
}

/// Rotate the carrier phase so the output moves from one rejection point to the other.
///
/// The reference term turns with `+δ` and the probe term with `−δ`, so a shift of `π/2`
/// changes their relative phase by `π`: destructive interference (amplitude-noise
/// rejection) becomes constructive (phase-noise rejection) and back. The shift is
/// `+π/2` from destructive and `−π/2` from constructive, so two switches restore the
/// original carrier.
pub fn switch_rejection(c: &CarrierSettings, mode: InterferenceMode) -> (CarrierSettings, InterferenceMode) {
    let shift = match mode {
        InterferenceMode::Destructive => FRAC_PI_2,
        InterferenceMode::Constructive => -FRAC_PI_2,
    };
    (c.with_delta(c.delta + shift), mode.other())
}

/// Settings of one rejection point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportedPoint {
    pub mode: InterferenceMode,
    pub a2: f64,
    pub alpha2: f64,
    pub delta: f64,
    /// Noise-free output amplitude (V).
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: String,
    /// Virtual instrument time at start and end (s).
    pub t_start: f64,
    pub t_end: f64,
    pub evaluations: usize,
    pub iterations: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub balance: BalanceResult,
    pub resonator: ResonatorParams,
    pub resonance_residual_rms: f64,
    pub null: NullResult,
    pub rebalance: BalanceResult,
    pub points: Vec<ReportedPoint>,
    /// Output amplitude at the destructive point (V).
    pub residual_null_amplitude: f64,
    pub final_point: ReportedPoint,
    pub steps: Vec<StepLog>,
}

fn step_err(step: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Step {
        step: step.to_string(),
        source: Box::new(e),
    }
}

/// Run the full set-up procedure on a fresh engine.
pub fn run_guide(engine: &mut Engine, cfg: &ProtocolConfig) -> Result<CalibrationReport> {
    cfg.validate()?;
    let mut steps = Vec::new();
    let mut log = |engine: &Engine, step: &str, t0: f64, n0: usize, iterations: usize, detail: String| {
        steps.push(StepLog {
            step: step.to_string(),
            t_start: t0,
            t_end: engine.time(),
            evaluations: engine.measurements() - n0,
            iterations,
            detail,
        });
    };

    let m = engine.modulation();
    let c = engine.carrier();
    log(
        engine,
        "wiring",
        engine.time(),
        engine.measurements(),
        0,
        format!(
            "carrier {:.6e} Hz, modulation {:.3e} Hz, a1 = {:.3e} V, alpha1 = {:.4} rad",
            c.f0(),
            m.f_s(),
            m.a1,
            m.alpha1
        ),
    );

    let (t0, n0) = (engine.time(), engine.measurements());
    let balance = balance_mixer(engine, cfg).map_err(step_err("balance_mixer"))?;
    log(
        engine,
        "balance_mixer",
        t0,
        n0,
        balance.iterations,
        format!("residual carrier {:.2e}, suppression {:.2e}", balance.residual, balance.suppression),
    );

    let (t0, n0) = (engine.time(), engine.measurements());
    let res = find_resonance(engine, cfg).map_err(step_err("find_resonance"))?;
    log(
        engine,
        "find_resonance",
        t0,
        n0,
        res.iterations,
        format!(
            "fr = {:.6e} Hz, Ql = {:.4e}, Qc = {:.4e}, fit rms {:.2e}",
            res.params.fr, res.params.ql, res.params.qc, res.residual_rms
        ),
    );

    if cfg.align_carrier_phase {
        let (t0, n0) = (engine.time(), engine.measurements());
        let d0 = engine.carrier().delta;
        let delta = align_carrier_phase(engine).map_err(step_err("align_carrier_phase"))?;
        log(engine, "align_carrier_phase", t0, n0, 0, format!("delta {d0:.5} -> {delta:.5} rad"));
    }

    let (t0, n0) = (engine.time(), engine.measurements());
    let null = find_null(engine, cfg).map_err(step_err("find_null"))?;
    log(
        engine,
        "find_null",
        t0,
        n0,
        null.best_history.len(),
        format!(
            "a2 = {:.5e} V, alpha2 = {:.5} rad, |s| = {:.2e} V, deviation from closed form {:.2e}",
            null.a2, null.alpha2, null.amplitude, null.analytic_deviation
        ),
    );

    let (t0, n0) = (engine.time(), engine.measurements());
    let rebalance = balance_mixer(engine, cfg).map_err(step_err("rebalance_mixer"))?;
    log(
        engine,
        "rebalance_mixer",
        t0,
        n0,
        rebalance.iterations,
        format!("residual carrier {:.2e}", rebalance.residual),
    );

    let destructive = ReportedPoint {
        mode: InterferenceMode::Destructive,
        a2: null.a2,
        alpha2: null.alpha2,
        delta: engine.carrier().delta,
        amplitude: engine.ideal_output().amplitude(),
    };
    let (switched, mode) = switch_rejection(&engine.carrier(), InterferenceMode::Destructive);
    let constructive_amp = {
        let mut probe = engine.clone();
        probe.set_carrier(switched).map_err(step_err("switch_rejection"))?;
        probe.ideal_output().amplitude()
    };
    let constructive = ReportedPoint {
        mode,
        a2: null.a2,
        alpha2: null.alpha2,
        delta: switched.delta,
        amplitude: constructive_amp,
    };
    let mut final_point = destructive;
    if cfg.switch_to_phase_rejection {
        let (t0, n0) = (engine.time(), engine.measurements());
        engine.set_carrier(switched).map_err(step_err("switch_rejection"))?;
        final_point = constructive;
        log(
            engine,
            "switch_rejection",
            t0,
            n0,
            0,
            format!("delta {:.5} -> {:.5} rad", destructive.delta, switched.delta),
        );
    }

    Ok(CalibrationReport {
        balance,
        resonator: res.params,
        resonance_residual_rms: res.residual_rms,
        residual_null_amplitude: destructive.amplitude,
        null,
        rebalance,
        points: vec![destructive, constructive],
        final_point,
        steps,
    })
}
