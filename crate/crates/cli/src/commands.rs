use std::f64::consts::TAU;
use std::path::Path;

use serde::Serialize;
use smi_core::analysis::{
    allan, fit_flicker, fit_mixture_with, histogram, log_tau_grid, peak_tau, psd, FlickerFit, MixtureComponent,
    MixtureOptions,
};
use smi_core::engine::{run, Engine, SimSetup, TimeCompression};
use smi_core::fit::{fit_circle, linear_fit};
use smi_core::phasor::{
    delta_s, eval_output, linecut, operating_point_at_delta, sensitivity_map, ssb_settings, CarrierSettings,
    DemodOutput, DutResponse, InterferenceMode, ModulationSettings, Perturbation,
};
use smi_core::protocol::{run_guide, CalibrationReport};
use smi_core::resonator::{
    calibrate_phase_to_frequency, linear_sweep, sideband_responses, PhaseCalibration, ResonatorParams,
    ResonatorState, SpectroscopyTrace,
};
use smi_core::trace::{digest_bytes, FrequencyTrace};
use smi_core::Complex64;

use crate::config::{AnalysisSection, ExperimentConfig, Operating, PerturbationKind};
use crate::output::{Artifact, OutDir, Table};
use crate::CliError;

fn need_resonator(cfg: &ExperimentConfig, what: &str) -> Result<ResonatorParams, CliError> {
    cfg.resonator()
        .ok_or_else(|| CliError::Config(format!("{what} needs a [resonator] section")))
}

/// Q modulation `(a2, α2)` for an operating choice at the configured carrier.
fn operating_q(setup: &SimSetup, op: Operating) -> Result<(f64, f64), CliError> {
    let m = setup.modulation;
    let mode = match op {
        Operating::Ssb => return Ok(ssb_settings(m.a1, m.alpha1)),
        Operating::Configured => return Ok((m.a2, m.alpha2)),
        Operating::Destructive => InterferenceMode::Destructive,
        Operating::Constructive => InterferenceMode::Constructive,
    };
    let (r, p) = sideband_responses(setup.resonator.as_ref(), &ResonatorState::default(), &m, &setup.carrier);
    operating_point_at_delta(m.a1, m.alpha1, setup.carrier.delta, r, p, mode).map_err(CliError::from_core)
}

fn with_carrier_hz(c: &CarrierSettings, f0: f64) -> CarrierSettings {
    CarrierSettings {
        omega0: TAU * f0,
        ..*c
    }
}

/// Noise-free carrier sweep of a set-up, including the detection gain.
fn steady_sweep(setup: &SimSetup, freqs: &[f64]) -> SpectroscopyTrace {
    let mut s = setup.clone();
    let points = freqs
        .iter()
        .map(|f| {
            s.carrier = with_carrier_hz(&setup.carrier, *f);
            DemodOutput::from_complex(s.steady_output(&ResonatorState::default(), 0.0, 0.0))
        })
        .collect();
    SpectroscopyTrace {
        f0_hz: freqs.to_vec(),
        points,
    }
}

fn calibration(setup: &SimSetup, p: &ResonatorParams) -> Result<PhaseCalibration, CliError> {
    let f0 = setup.carrier.f0();
    let trace = steady_sweep(setup, &linear_sweep(f0, 1.5 * p.linewidth_hz(), 3001));
    calibrate_phase_to_frequency(&trace, f0).map_err(CliError::from_core)
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    operating: Operating,
    a2: f64,
    alpha2: f64,
    points: usize,
    circle_center_x: f64,
    circle_center_y: f64,
    circle_radius: f64,
    circle_max_relative_residual: f64,
    min_amplitude: f64,
    min_amplitude_f0_hz: f64,
    linewidth_estimate_hz: Option<f64>,
    slope_hz_per_rad: Option<f64>,
}

pub fn sweep(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<String, CliError> {
    let p = need_resonator(cfg, "sweep")?;
    let mut setup = cfg.setup()?;
    let (a2, alpha2) = operating_q(&setup, cfg.sweep.operating)?;
    setup.modulation = setup.modulation.with_q(a2, alpha2);
    let half = cfg.sweep.half_span_hz.unwrap_or(3.0 * p.linewidth_hz());
    let freqs = linear_sweep(cfg.carrier_hz(), half, cfg.sweep.points);
    let mut engine = Engine::new(setup.clone()).map_err(CliError::from_core)?;
    let mut t = Table::new("sweep", &["f0_hz", "x_v", "y_v"]);
    let mut pts = Vec::with_capacity(freqs.len());
    for f in &freqs {
        engine.set_carrier_hz(*f);
        let s = engine.measure();
        t.push(vec![*f, s.x, s.y]);
        pts.push(s);
    }
    out.table(&t)?;
    let trace = SpectroscopyTrace {
        f0_hz: freqs.clone(),
        points: pts,
    };
    let circle = fit_circle(&trace.complex_points()).map_err(CliError::from_core)?;
    let k = (0..trace.points.len())
        .min_by(|a, b| trace.points[*a].amplitude().total_cmp(&trace.points[*b].amplitude()))
        .expect("sweep has points");
    let cal = calibrate_phase_to_frequency(&trace, cfg.carrier_hz()).ok();
    let summary = SweepSummary {
        operating: cfg.sweep.operating,
        a2,
        alpha2,
        points: freqs.len(),
        circle_center_x: circle.center.re,
        circle_center_y: circle.center.im,
        circle_radius: circle.radius,
        circle_max_relative_residual: circle.max_relative_residual,
        min_amplitude: trace.points[k].amplitude(),
        min_amplitude_f0_hz: freqs[k],
        linewidth_estimate_hz: cal.as_ref().map(|c| c.linewidth_estimate),
        slope_hz_per_rad: cal.as_ref().map(|c| c.slope_hz_per_rad),
    };
    out.json("summary", &summary)?;
    Ok(format!(
        "sweep: {} points, circle residual {:.2e}, |s|min {:.3e} V at {:.6e} Hz",
        summary.points, circle.max_relative_residual, summary.min_amplitude, summary.min_amplitude_f0_hz
    ))
}

#[derive(Debug, Serialize)]
struct RejectionPoint {
    mode: InterferenceMode,
    a2: f64,
    alpha2: f64,
    x: f64,
    y: f64,
    delta_s: f64,
}

#[derive(Debug, Serialize)]
struct LinecutSummary {
    slope_negative_side: f64,
    slope_positive_side: f64,
    r_squared_negative_side: f64,
    r_squared_positive_side: f64,
    slope_asymmetry: f64,
}

#[derive(Debug, Serialize)]
struct MapSummary {
    perturbation: Perturbation,
    grid_minimum: smi_core::phasor::SensitivityCell,
    rejection_point: RejectionPoint,
    ssb_delta_s: f64,
    ssb_output_amplitude: f64,
    suppression_vs_ssb: f64,
    linecut: Option<LinecutSummary>,
}

pub fn map(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<String, CliError> {
    let mc = &cfg.map;
    let m = cfg.modulation()?;
    let c = cfg.carrier()?;
    let dut = DutResponse::new(mc.dut_xi, mc.dut_phi);
    let (pert, mode) = match mc.perturbation {
        PerturbationKind::Amplitude => (Perturbation::Amplitude(mc.magnitude), InterferenceMode::Destructive),
        PerturbationKind::Phase => (Perturbation::Phase(mc.magnitude), InterferenceMode::Constructive),
    };
    let a2s: Vec<f64> = (0..mc.a2_points).map(|i| mc.a2_max * i as f64 / (mc.a2_points - 1) as f64).collect();
    let al2s: Vec<f64> = (0..mc.alpha2_points).map(|j| TAU * j as f64 / mc.alpha2_points as f64).collect();
    let map = sensitivity_map(m.a1, m.alpha1, &c, &dut, &a2s, &al2s, pert).map_err(CliError::from_core)?;
    let mut t = Table::new("map", &["a2_v", "alpha2_rad", "x_v", "y_v", "delta_s_v"]);
    for cell in &map.cells {
        t.push(vec![cell.a2, cell.alpha2, cell.x, cell.y, cell.delta_s]);
    }
    out.table(&t)?;

    let (a2, alpha2) = operating_point_at_delta(
        m.a1,
        m.alpha1,
        c.delta,
        Complex64::new(1.0, 0.0),
        dut.probe_response(),
        mode,
    )
    .map_err(CliError::from_core)?;
    let at = |a2: f64, alpha2: f64| -> Result<(DemodOutput, f64), CliError> {
        let mm = m.with_q(a2, alpha2);
        Ok((eval_output(&mm, &c, &dut), delta_s(&mm, &c, &dut, pert).map_err(CliError::from_core)?))
    };
    let (s_rej, ds_rej) = at(a2, alpha2)?;
    let (sa2, sal2) = ssb_settings(m.a1, m.alpha1);
    let (s_ssb, ds_ssb) = at(sa2, sal2)?;

    let linecut_summary = if mc.linecut {
        let center = s_rej.as_complex();
        let half = mc.linecut_half_width * s_ssb.amplitude();
        let pts = linecut(
            m.a1,
            m.alpha1,
            &c,
            &dut,
            center,
            Complex64::new(1.0, 0.0),
            half,
            mc.linecut_points,
            pert,
        )
        .map_err(CliError::from_core)?;
        let mut lt = Table::new("linecut", &["offset_v", "delta_s_v"]);
        for p in &pts {
            lt.push(vec![p.offset, p.delta_s]);
        }
        out.table(&lt)?;
        let branch = |neg: bool| {
            let (x, y): (Vec<f64>, Vec<f64>) = pts
                .iter()
                .filter(|p| if neg { p.offset < 0.0 } else { p.offset > 0.0 })
                .map(|p| (p.offset, p.delta_s))
                .unzip();
            linear_fit(&x, &y).map_err(CliError::from_core)
        };
        let (l, r) = (branch(true)?, branch(false)?);
        Some(LinecutSummary {
            slope_negative_side: l.slope,
            slope_positive_side: r.slope,
            r_squared_negative_side: l.r_squared,
            r_squared_positive_side: r.r_squared,
            slope_asymmetry: (r.slope.abs() - l.slope.abs()) / (0.5 * (r.slope.abs() + l.slope.abs())),
        })
    } else {
        None
    };

    let summary = MapSummary {
        perturbation: pert,
        grid_minimum: *map.minimum(),
        rejection_point: RejectionPoint {
            mode,
            a2,
            alpha2,
            x: s_rej.x,
            y: s_rej.y,
            delta_s: ds_rej,
        },
        ssb_delta_s: ds_ssb,
        ssb_output_amplitude: s_ssb.amplitude(),
        suppression_vs_ssb: ds_ssb / ds_rej.max(f64::MIN_POSITIVE),
        linecut: linecut_summary,
    };
    out.json("summary", &summary)?;
    Ok(format!(
        "map: {}x{} grid, {:?} rejection at a2 = {:.4e} V, alpha2 = {:.4} rad, dS {:.3e} V vs SSB {:.3e} V",
        mc.a2_points, mc.alpha2_points, mode, a2, alpha2, ds_rej, ds_ssb
    ))
}

#[derive(Debug, Serialize)]
pub struct MixtureSummary {
    components: Vec<MixtureComponent>,
    weak: Vec<usize>,
    iterations: usize,
    converged: bool,
    log_likelihood: f64,
}

#[derive(Debug, Serialize)]
pub struct AnalysisSummary {
    samples: usize,
    dt_s: f64,
    mean_hz: f64,
    std_hz: f64,
    flicker: Option<FlickerFit>,
    allan_peak_tau_s: Option<f64>,
    allan_min_sigma_hz: Option<f64>,
    mixture: Option<MixtureSummary>,
    notes: Vec<String>,
}

/// PSD with `a_p/f` fit, Allan deviation and histogram with Gaussian mixture.
pub fn analyze_trace(t: &FrequencyTrace, a: &AnalysisSection, out: &mut OutDir) -> Result<AnalysisSummary, CliError> {
    let mut notes = Vec::new();
    let est = psd(t, Some(a.psd_bins_per_decade)).map_err(CliError::from_core)?;
    let mut pt = Table::new("psd", &["f_hz", "psd_hz2_per_hz", "dof"]);
    for i in 0..est.freqs.len() {
        pt.push(vec![est.freqs[i], est.values[i], est.dof[i]]);
    }
    out.table(&pt)?;
    let flicker = match fit_flicker(&est, a.flicker_band) {
        Ok(f) => Some(f),
        Err(e) => {
            notes.push(format!("flicker fit skipped: {e}"));
            None
        }
    };

    let taus = log_tau_grid(t.dt, t.len(), a.allan_points_per_decade);
    let (peak, min_sigma) = if taus.is_empty() {
        notes.push("trace too short for Allan deviation".into());
        (None, None)
    } else {
        let al = allan(t, &taus).map_err(CliError::from_core)?;
        let mut at = Table::new("allan", &["tau_s", "sigma_hz", "ci_low_hz", "ci_high_hz"]);
        for i in 0..al.taus.len() {
            at.push(vec![al.taus[i], al.sigma[i], al.ci_low[i], al.ci_high[i]]);
        }
        out.table(&at)?;
        (peak_tau(&al), al.sigma.iter().copied().reduce(f64::min))
    };

    let opts = MixtureOptions {
        bins: a.histogram_bins,
        ..MixtureOptions::default()
    };
    let hist = histogram(&t.values, a.histogram_bins).map_err(CliError::from_core)?;
    let mixture = match fit_mixture_with(&t.values, a.mixture_components, &opts) {
        Ok(g) => Some(g),
        Err(e) => {
            notes.push(format!("mixture fit skipped: {e}"));
            None
        }
    };
    let mut ht = Table::new("histogram", &["center_hz", "count", "mixture_count"]);
    let scale = hist.total() as f64 * hist.bin_width();
    for (c, n) in hist.centers().iter().zip(&hist.counts) {
        let model = mixture.as_ref().map_or(f64::NAN, |g| scale * g.density(*c));
        ht.push(vec![*c, *n as f64, model]);
    }
    out.table(&ht)?;

    Ok(AnalysisSummary {
        samples: t.len(),
        dt_s: t.dt,
        mean_hz: t.mean(),
        std_hz: t.variance().sqrt(),
        flicker,
        allan_peak_tau_s: peak,
        allan_min_sigma_hz: min_sigma,
        mixture: mixture.map(|g| MixtureSummary {
            log_likelihood: g.final_log_likelihood(),
            components: g.components,
            weak: g.weak,
            iterations: g.iterations,
            converged: g.converged,
        }),
        notes,
    })
}

#[derive(Debug, Serialize)]
struct MonitorSummary {
    operating: Operating,
    modulation: ModulationSettings,
    carrier_hz: f64,
    delta: f64,
    duration_s: f64,
    compress: f64,
    calibration_slope_hz_per_rad: f64,
    recovery_rms_error_hz: f64,
    warnings: Vec<String>,
    analysis: AnalysisSummary,
}

pub fn monitor(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<String, CliError> {
    let p = need_resonator(cfg, "monitor")?;
    let mut setup = cfg.setup()?;
    let (a2, alpha2) = operating_q(&setup, cfg.monitor.operating)?;
    setup.modulation = setup.modulation.with_q(a2, alpha2);
    let cal = calibration(&setup, &p)?;

    let tc = TimeCompression::new(cfg.compress).map_err(CliError::from_core)?;
    let (scaled, duration) = tc.compress(&setup, cfg.monitor.duration_s);
    let run_out = run(&scaled, duration).map_err(CliError::from_core)?;
    let detuning: Vec<f64> = run_out.complex().into_iter().map(|z| cal.detuning(z)).collect();
    let recovered = tc.to_physical(&FrequencyTrace::new(0.0, run_out.x.dt, detuning, run_out.x.meta.clone()).map_err(CliError::from_core)?);
    let truth = tc.to_physical(&run_out.truth);

    let mut t = Table::new("trace", &["t_s", "x_v", "y_v", "detuning_hz", "truth_hz"]);
    for i in 0..recovered.len() {
        t.push(vec![recovered.time(i), run_out.x.values[i], run_out.y.values[i], recovered.values[i], truth.values[i]]);
    }
    out.table(&t)?;
    let err = (recovered.values.iter().zip(&truth.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / recovered.len() as f64).sqrt();
    let analysis = analyze_trace(&recovered, &cfg.analysis, out)?;
    let summary = MonitorSummary {
        operating: cfg.monitor.operating,
        modulation: setup.modulation,
        carrier_hz: setup.carrier.f0(),
        delta: setup.carrier.delta,
        duration_s: cfg.monitor.duration_s,
        compress: cfg.compress,
        calibration_slope_hz_per_rad: cal.slope_hz_per_rad,
        recovery_rms_error_hz: err,
        warnings: run_out.warnings,
        analysis,
    };
    out.json("summary", &summary)?;
    let ap = summary.analysis.flicker.as_ref().map_or("n/a".to_string(), |f| format!("{:.3e} Hz²", f.a_p));
    Ok(format!(
        "monitor: {} samples over {} s, a_p = {ap}, recovery rms error {:.3e} Hz",
        recovered.len(),
        cfg.monitor.duration_s,
        err
    ))
}

pub fn calibrate(cfg: &ExperimentConfig, out: &mut OutDir) -> Result<String, CliError> {
    let mut engine = Engine::new(cfg.setup()?).map_err(CliError::from_core)?;
    let report: CalibrationReport = run_guide(&mut engine, &cfg.protocol).map_err(CliError::from_core)?;
    out.json("report", &report)?;
    let mut st = Table::new("steps", &["index", "t_start_s", "t_end_s", "evaluations", "iterations"]);
    for (i, s) in report.steps.iter().enumerate() {
        st.push(vec![i as f64, s.t_start, s.t_end, s.evaluations as f64, s.iterations as f64]);
    }
    out.table(&st)?;
    Ok(format!(
        "calibrate: fr = {:.6e} Hz, Ql = {:.4e}, null a2 = {:.4e} V alpha2 = {:.4} rad, |s| = {:.2e} V",
        report.resonator.fr, report.resonator.ql, report.null.a2, report.null.alpha2, report.residual_null_amplitude
    ))
}

/// Read a time column and one value column from a CSV trace.
pub fn read_trace(path: &Path, column: &str) -> Result<(FrequencyTrace, Artifact), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let bad = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let ti = header.iter().position(|h| h == "t_s").ok_or_else(|| bad("no t_s column".into()))?;
    let vi = header
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| bad(format!("no {column} column")))?;
    let (mut t, mut v) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| bad(format!("'{}': {e}", &rec[i])));
        t.push(num(ti)?);
        v.push(num(vi)?);
    }
    if t.len() < 2 {
        return Err(bad("need at least two samples".into()));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt > 0.0) || t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(bad("time column must be uniformly increasing".into()));
    }
    let trace = FrequencyTrace::from_values(dt, v).map_err(CliError::from_core)?;
    let artifact = Artifact {
        file: path.display().to_string(),
        sha256: digest_bytes(&bytes),
    };
    Ok((trace, artifact))
}

pub fn analyze(cfg: &ExperimentConfig, trace: &FrequencyTrace, out: &mut OutDir) -> Result<String, CliError> {
    let summary = analyze_trace(trace, &cfg.analysis, out)?;
    out.json("summary", &summary)?;
    let ap = summary.flicker.as_ref().map_or("n/a".to_string(), |f| format!("{:.3e} Hz²", f.a_p));
    Ok(format!("analyze: {} samples, a_p = {ap}", summary.samples))
}
