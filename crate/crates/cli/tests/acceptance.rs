//! Acceptance suite: one pass/fail line per criterion, non-zero exit on any failure.

use std::f64::consts::{LN_2, PI, TAU};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use smi_core::analysis::{allan, fit_flicker, line_significance, log_slope, log_tau_grid, peak_tau, psd};
use smi_core::engine::{run, BandsConfig, Engine, MixerModel, SimSetup, TimeCompression};
use smi_core::fit::linear_fit;
use smi_core::noise::{
    compose, CommonModeKind, CommonModeModel, CommonModeSpec, FlickerParams, NoiseSpec, RtsParams, WhiteParams,
};
use smi_core::phasor::{
    delta_s, eval_output, interference_terms, linecut, operating_point_at_delta, solve_balance, ssb_settings,
    CarrierSettings, DutResponse, InterferenceMode, ModulationSettings, Perturbation,
};
use smi_core::resonator::{
    calibrate_phase_to_frequency, input_power_for_photons, iq_jacobian, linear_sweep, loaded_q, sideband_responses,
    PhaseCalibration, ResonatorParams, ResonatorState, SpectroscopyTrace,
};
use smi_core::trace::FrequencyTrace;
use smi_core::Complex64;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(ok: bool, detail: String, lines: &mut Vec<String>, all: &mut bool) {
    *all &= ok;
    lines.push(format!("{} {detail}", if ok { "ok  " } else { "FAIL" }));
}

fn finish(lines: Vec<String>, all: bool) -> Outcome {
    Outcome {
        pass: all,
        detail: lines.join("; "),
    }
}

fn phasor_identity() -> Outcome {
    let mut r = smi_core::noise::rng(1);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let m = ModulationSettings::new(
            r.random_range(1e-3..1.0),
            r.random_range(0.0..TAU),
            r.random_range(0.0..1.0),
            r.random_range(0.0..TAU),
            TAU * 10e6,
        )
        .unwrap();
        let c = CarrierSettings::new(TAU * 6e9, r.random_range(-PI..PI)).unwrap();
        let d = DutResponse::new(r.random_range(0.0..1.5), r.random_range(-PI..PI));
        let s = eval_output(&m, &c, &d).as_complex();
        let t = interference_terms(&m, &c, &d).sum();
        worst = worst.max((s - t).norm() / (m.a1 + m.a2));
    }
    let secs = start.elapsed().as_secs_f64();
    let (mut lines, mut all) = (Vec::new(), true);
    check(worst < 1e-12, format!("max relative error {worst:.2e} < 1e-12"), &mut lines, &mut all);
    check(secs < 1.0, format!("10^5 draws in {secs:.3} s < 1 s"), &mut lines, &mut all);
    finish(lines, all)
}

fn balance_example() -> Outcome {
    let m = ModulationSettings::new(1.0, 0.3, 1.0, 2.68, TAU * 10e6).unwrap();
    let c = CarrierSettings::new(TAU * 6e9, 0.0).unwrap();
    let d = DutResponse::new(0.4, 0.3);
    let ip = interference_terms(&m, &c, &d);
    // direct sums of the two sideband pairs
    let z1 = Complex64::from_polar(1.0, 0.3);
    let z2 = Complex64::from_polar(1.0, 2.68);
    let (o1, o2) = ((z1 + z2).norm(), 0.4 * (z1 - z2).norm());
    let (mut lines, mut all) = (Vec::new(), true);
    check(
        (ip.b1 - o1).abs() < 1e-12 && (ip.b2 - o2).abs() < 1e-12,
        format!("b1 = {:.4}, b2 = {:.4} (direct {o1:.4}, {o2:.4})", ip.b1, ip.b2),
        &mut lines,
        &mut all,
    );
    check(
        (ip.b1 - 0.743).abs() < 5e-4 && (ip.b2 - 0.743).abs() < 5e-4,
        "both ≈ 0.743".into(),
        &mut lines,
        &mut all,
    );
    let rel = (ip.b1 - ip.b2).abs() / ip.b1;
    check(rel < 0.01, format!("|b1−b2|/b1 = {rel:.2e} < 1%"), &mut lines, &mut all);
    let da = solve_balance(1.0, 1.0, 0.4).unwrap().branches[0];
    check((da - 2.38).abs() <= 0.01, format!("balance solver |α1−α2| = {da:.4} rad"), &mut lines, &mut all);
    finish(lines, all)
}

fn branch_r2(pts: &[smi_core::phasor::LinecutPoint]) -> (f64, f64) {
    let fit = |neg: bool| {
        let (x, y): (Vec<f64>, Vec<f64>) = pts
            .iter()
            .filter(|p| if neg { p.offset < 0.0 } else { p.offset > 0.0 })
            .map(|p| (p.offset, p.delta_s))
            .unzip();
        linear_fit(&x, &y).unwrap().r_squared
    };
    (fit(true), fit(false))
}

fn rejection_points() -> Outcome {
    let (a1, alpha1) = (1.0, 0.3);
    let dut = DutResponse::new(0.4, 0.3);
    let p = dut.probe_response();
    let one = Complex64::new(1.0, 0.0);
    let (mut lines, mut all) = (Vec::new(), true);
    let base = ModulationSettings::new(a1, alpha1, 0.0, 0.0, TAU * 10e6).unwrap();
    let (sa2, sal2) = ssb_settings(a1, alpha1);
    let ssb = base.with_q(sa2, sal2);
    let amp = Perturbation::Amplitude(0.01);
    let phase = Perturbation::Phase(0.01);

    // amplitude rejection at the destructive point
    let c = CarrierSettings::new(TAU * 6e9, 0.0).unwrap();
    let (a2, al2) = operating_point_at_delta(a1, alpha1, c.delta, one, p, InterferenceMode::Destructive).unwrap();
    let md = base.with_q(a2, al2);
    let s = eval_output(&md, &c, &dut).amplitude();
    check(s < 1e-9 * a1, format!("destructive |s| = {s:.1e} < 1e-9·a1"), &mut lines, &mut all);
    let ds_d = delta_s(&md, &c, &dut, amp).unwrap();
    let ds_ssb = delta_s(&ssb, &c, &dut, amp).unwrap();
    check(
        ds_d < 1e-3 * ds_ssb,
        format!("1% amplitude ΔS {ds_d:.1e} vs SSB {ds_ssb:.2e}"),
        &mut lines,
        &mut all,
    );
    let half = 0.2 * eval_output(&ssb, &c, &dut).amplitude();
    let lc = linecut(a1, alpha1, &c, &dut, Complex64::new(0.0, 0.0), one, half, 81, amp).unwrap();
    let (l, r) = branch_r2(&lc);
    check(l > 0.99 && r > 0.99, format!("destructive linecut R² {l:.6}, {r:.6}"), &mut lines, &mut all);

    // phase rejection at the constructive point. As in the set-up procedure the
    // carrier phase is first aligned so that the reference-only and probe-only outputs
    // are antiparallel, then switched by a quarter turn.
    let s_ref = eval_output(&base.with_q(a1, alpha1), &c, &dut).as_complex();
    let s_probe = eval_output(&base.with_q(a1, alpha1 + PI), &c, &dut).as_complex();
    let delta = 0.5 * (PI - (s_ref / s_probe).arg()) + 0.5 * PI;
    let c = CarrierSettings::new(TAU * 6e9, delta).unwrap();
    let (a2, al2) = operating_point_at_delta(a1, alpha1, delta, one, p, InterferenceMode::Constructive).unwrap();
    let mc = base.with_q(a2, al2);
    let ds_c = delta_s(&mc, &c, &dut, phase).unwrap();
    let ds_ssb_phase = delta_s(&ssb, &c, &dut, phase).unwrap();
    let ratio = ds_ssb_phase / ds_c;
    check(ratio >= 100.0, format!("0.01 rad phase suppressed {ratio:.1}x"), &mut lines, &mut all);
    let center = eval_output(&mc, &c, &dut).as_complex();
    let lc = linecut(a1, alpha1, &c, &dut, center, one, half, 81, phase).unwrap();
    let (l, r) = branch_r2(&lc);
    check(l > 0.99 && r > 0.99, format!("constructive linecut R² {l:.6}, {r:.6}"), &mut lines, &mut all);

    let ap = delta_s(&ssb, &c, &dut, amp).unwrap() / ds_ssb_phase;
    check((ap - 1.0).abs() < 0.01, format!("SSB amplitude/phase ΔS ratio {ap:.5}"), &mut lines, &mut all);
    finish(lines, all)
}

fn resonator_consistency() -> Outcome {
    let (mut lines, mut all) = (Vec::new(), true);
    let ql = loaded_q(9.8e3, 5e4);
    check(
        (ql / 8.0e3 - 1.0).abs() < 0.03,
        format!("Ql = {ql:.0} from Qc = 9.8e3, Qi = 5e4"),
        &mut lines,
        &mut all,
    );
    // n = 2·Ql²/(ħ·ωr²·Qc)·(Z0/Zr)·P for the reference resonator, evaluated offline
    const P_ORACLE: f64 = 6.115_338e-16;
    let p = input_power_for_photons(&ResonatorParams::nbn_reference(), 8.0);
    check(
        (p / P_ORACLE - 1.0).abs() < 0.01,
        format!("P_in(n = 8) = {p:.4e} W vs {P_ORACLE:.4e} W"),
        &mut lines,
        &mut all,
    );
    finish(lines, all)
}

fn steady_trace(setup: &SimSetup, freqs: &[f64]) -> SpectroscopyTrace {
    let mut s = setup.clone();
    let points = freqs
        .iter()
        .map(|f| {
            s.carrier.omega0 = TAU * f;
            smi_core::phasor::DemodOutput::from_complex(s.steady_output(&ResonatorState::default(), 0.0, 0.0))
        })
        .collect();
    SpectroscopyTrace {
        f0_hz: freqs.to_vec(),
        points,
    }
}

fn calibrate(setup: &SimSetup) -> PhaseCalibration {
    let p = setup.resonator.unwrap();
    let f0 = setup.carrier.f0();
    calibrate_phase_to_frequency(&steady_trace(setup, &linear_sweep(f0, 1.5 * p.linewidth_hz(), 3001)), f0).unwrap()
}

/// SSB or interferometric set-up, with the operating point solved at the
/// time-averaged resonator detuning.
fn base_setup(probe_offset_hz: f64, mode: Option<InterferenceMode>, noise: NoiseSpec, bands: BandsConfig) -> SimSetup {
    let p = ResonatorParams::nbn_reference();
    let mean: f64 = noise.rts_list.iter().map(|r| r.delta_f * r.occupancy_up()).sum();
    let m = ModulationSettings::new(0.05, 0.3, 0.0, 0.0, TAU * 10e6).unwrap();
    let c = CarrierSettings::from_hz(p.fr + probe_offset_hz + 10e6, 0.2).unwrap();
    let (a2, al2) = match mode {
        None => ssb_settings(m.a1, m.alpha1),
        Some(mode) => {
            let (r, pr) = sideband_responses(Some(&p), &ResonatorState::detuned(mean), &m, &c);
            operating_point_at_delta(m.a1, m.alpha1, c.delta, r, pr, mode).unwrap()
        }
    };
    SimSetup {
        modulation: m.with_q(a2, al2),
        carrier: c,
        resonator: Some(p),
        noise,
        common_mode: Vec::new(),
        bands,
        readout_noise_psd: 1e-14,
        gain: 1.0,
        mixer: MixerModel::default(),
        qi_factor: 1.0,
    }
}

fn calibration_loop() -> Outcome {
    let (mut lines, mut all) = (Vec::new(), true);
    for (name, mode) in [("SSB", None), ("destructive", Some(InterferenceMode::Destructive))] {
        let setup = base_setup(0.0, mode, NoiseSpec::silent(5), BandsConfig::monitoring());
        let cal = calibrate(&setup);
        let mut e = Engine::new(setup).unwrap();
        e.set_resonator_state(ResonatorState::detuned(24e3));
        let n = 20;
        let got = (0..n).map(|_| cal.detuning(e.measure().as_complex())).sum::<f64>() / n as f64;
        check(
            (got / 24e3 - 1.0).abs() < 0.05,
            format!("{name}: 24 kHz shift read as {:.2} kHz", got / 1e3),
            &mut lines,
            &mut all,
        );
    }
    let setup = base_setup(0.0, None, NoiseSpec::silent(5), BandsConfig::monitoring());
    let j = iq_jacobian(
        setup.resonator.as_ref().unwrap(),
        &setup.modulation,
        &setup.carrier,
        &ResonatorState::default(),
    );
    let cos = j.column_cosine().abs();
    check(
        cos < 0.04,
        format!("(δr, Qi) columns at {:.2}°, |cos| = {cos:.1e}", j.column_angle_deg()),
        &mut lines,
        &mut all,
    );
    finish(lines, all)
}

/// Generate noise for a physical duration through a compressed time axis.
fn compressed_noise(noise: NoiseSpec, dt: f64, n: usize, factor: f64) -> FrequencyTrace {
    let bands = BandsConfig {
        f_sample: 1.0 / dt,
        ..BandsConfig::monitoring()
    };
    let setup = base_setup(0.0, None, noise, bands);
    let tc = TimeCompression::new(factor).unwrap();
    let (scaled, _) = tc.compress(&setup, n as f64 * dt);
    let t = compose(&scaled.noise, n, 1.0 / scaled.bands.f_sample).unwrap();
    tc.to_physical(&t)
}

fn noise_statistics() -> Vec<(String, Outcome, f64)> {
    let factor = 100.0;
    let mut out = Vec::new();

    let start = Instant::now();
    let (n, dt) = (1 << 20, 0.01);
    let a_p = 4.0e6;
    let flicker = NoiseSpec {
        flicker: FlickerParams {
            a_p,
            f_min: 1.0 / (n as f64 * dt),
            f_max: 0.5 / dt,
        },
        ..NoiseSpec::silent(61)
    };
    let t = compressed_noise(flicker, dt, n, factor);
    let (mut lines, mut all) = (Vec::new(), true);
    let fit = fit_flicker(&psd(&t, Some(10.0)).unwrap(), (1e-2, 10.0)).unwrap();
    check(
        (fit.a_p / a_p - 1.0).abs() < 0.15,
        format!("fitted a_p = {:.3e} Hz²", fit.a_p),
        &mut lines,
        &mut all,
    );
    let plateau = (2.0 * LN_2 * a_p).sqrt();
    let taus: Vec<f64> = log_tau_grid(t.dt, t.len(), 10.0).into_iter().filter(|x| *x >= 0.1 && *x <= 1.0).collect();
    let a = allan(&t, &taus).unwrap();
    let worst = a.sigma.iter().map(|s| (s / plateau - 1.0).abs()).fold(0.0, f64::max);
    check(
        worst < 0.15,
        format!("Allan plateau within {:.1}% of {plateau:.0} Hz", 100.0 * worst),
        &mut lines,
        &mut all,
    );
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("{secs:.1} s"), &mut lines, &mut all);
    out.push(("6a flicker".to_string(), finish(lines, all), secs));

    let start = Instant::now();
    let rts = NoiseSpec {
        rts_list: vec![RtsParams::symmetric(1e3, 0.02)],
        ..NoiseSpec::silent(62)
    };
    let t = compressed_noise(rts, 0.25, 1_000_000, factor);
    let est = allan(&t, &log_tau_grid(t.dt, t.len(), 20.0)).unwrap();
    let (mut lines, mut all) = (Vec::new(), true);
    let peak = peak_tau(&est).unwrap_or(f64::NAN);
    check(
        peak >= 4.0 && peak <= 16.0,
        format!("RTS (20 mHz corner) Allan peak at {peak:.1} s"),
        &mut lines,
        &mut all,
    );
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("{secs:.1} s"), &mut lines, &mut all);
    out.push(("6b telegraph".to_string(), finish(lines, all), secs));

    let start = Instant::now();
    let white = NoiseSpec {
        white: WhiteParams { psd_level: 3.0 },
        ..NoiseSpec::silent(63)
    };
    let t = compressed_noise(white, 1e-3, 1_000_000, factor);
    let a = allan(&t, &log_tau_grid(t.dt, t.len(), 10.0)).unwrap();
    let s = log_slope(&a, 1e-3, 1e-1).unwrap().slope;
    let (mut lines, mut all) = (Vec::new(), true);
    check((s + 0.5).abs() <= 0.05, format!("white Allan slope {s:.3}"), &mut lines, &mut all);
    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, format!("{secs:.1} s"), &mut lines, &mut all);
    out.push(("6c white".to_string(), finish(lines, all), secs));
    out
}

fn rejection_demo() -> Outcome {
    let lw = ResonatorParams::nbn_reference().linewidth_hz();
    let noise = NoiseSpec {
        rts_list: vec![RtsParams::symmetric(30e3, 0.02), RtsParams::symmetric(8e3, 0.5)],
        flicker: FlickerParams {
            a_p: 4e6,
            f_min: 1e-4,
            f_max: 5.0,
        },
        white: WhiteParams { psd_level: 1e4 },
        seed: 71,
    };
    let bands = BandsConfig {
        f_sample: 10.0,
        tau_lockin: 0.1,
        filter_order: 4,
        steps_per_tau: 20.0,
    };
    let line = CommonModeSpec {
        kind: CommonModeKind::Amplitude,
        model: CommonModeModel::Sine {
            frequency_hz: 0.1,
            phase: 0.0,
        },
        magnitude: 0.01,
    };
    let duration = 4e4;
    let (mut lines, mut all) = (Vec::new(), true);
    // probe off resonance (2Ql·Δf/fr = 0.5) so that SSB converts amplitude into
    // phase; on resonance the amplitude change is radial to the response circle
    for (name, mode) in [("destructive", Some(InterferenceMode::Destructive)), ("SSB", None)] {
        let mut setup = base_setup(0.25 * lw, mode, noise.clone(), bands);
        setup.common_mode = vec![line];
        let cal = calibrate(&setup);
        let out = run(&setup, duration).unwrap();
        let det: Vec<f64> = out.complex().into_iter().map(|z| cal.detuning(z)).collect();
        let t = FrequencyTrace::from_values(out.x.dt, det).unwrap();
        let z = line_significance(&t, 0.1, 50).unwrap().z;
        let ok = match mode {
            Some(_) => z < 3.0,
            None => z > 10.0,
        };
        let bound = if mode.is_some() { "< 3" } else { "> 10" };
        check(ok, format!("{name}: 0.1 Hz line at {z:.1}σ ({bound})"), &mut lines, &mut all);
    }
    finish(lines, all)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let (mut lines, mut all) = (Vec::new(), true);
    let runs: [&[&str]; 4] = [
        &["monitor", "--duration", "120", "--seed", "11"],
        &["sweep", "--seed", "11"],
        &["map", "--linecut"],
        &["calibrate", "--seed", "11"],
    ];
    for args in runs {
        let mut outs = Vec::new();
        for k in 0..2 {
            let dir = tmp.path().join(format!("{}-{k}", args[0]));
            let st = Command::new(env!("CARGO_BIN_EXE_smi"))
                .args(args)
                .arg("--out")
                .arg(&dir)
                .output()
                .unwrap();
            assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
            outs.push(files(&dir));
        }
        let same = outs[0] == outs[1];
        check(same, format!("{}: {} files identical", args[0], outs[0].len()), &mut lines, &mut all);
    }
    finish(lines, all)
}

fn main() {
    let timed = |name: &str, f: fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        (name.to_string(), o, start.elapsed().as_secs_f64())
    };
    let mut results = vec![
        timed("1 phasor identity", phasor_identity),
        timed("2 sideband balance", balance_example),
        timed("3 rejection points", rejection_points),
        timed("4 resonator consistency", resonator_consistency),
        timed("5 calibration loop", calibration_loop),
    ];
    results.extend(noise_statistics());
    results.push(timed("7 rejection demo", rejection_demo));
    results.push(timed("8 determinism", determinism));

    let mut failed = 0;
    for (name, o, secs) in &results {
        println!("{} criterion {name} ({secs:.2} s): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
