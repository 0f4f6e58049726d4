//! Set-up procedure against instruments with readout noise.

use std::f64::consts::TAU;

use smi_core::engine::{BandsConfig, Engine, MixerModel, SimSetup};
use smi_core::noise::NoiseSpec;
use smi_core::phasor::{CarrierSettings, ModulationSettings};
use smi_core::protocol::{align_carrier_phase, balance_mixer, find_null, find_resonance, ProtocolConfig};
use smi_core::resonator::ResonatorParams;

fn setup(readout_rms: f64, seed: u64) -> SimSetup {
    let p = ResonatorParams::nbn_reference();
    let bands = BandsConfig::monitoring();
    SimSetup {
        modulation: ModulationSettings::new(0.05, 0.4, 0.0, 0.0, TAU * 10e6).unwrap(),
        carrier: CarrierSettings::from_hz(p.fr + 10e6 - 0.9e6, 1.1).unwrap(),
        resonator: Some(p),
        noise: NoiseSpec::silent(seed),
        common_mode: Vec::new(),
        bands,
        readout_noise_psd: readout_rms * readout_rms / bands.mbw_hz(),
        gain: 1.0,
        mixer: MixerModel::default(),
        qi_factor: 1.0,
    }
}

/// SSB dip depth of the reference resonator at `a1 = 0.05`.
fn dip_depth() -> f64 {
    let p = ResonatorParams::nbn_reference();
    2.0 * 0.05 * p.bg_amp * (p.ql / p.qc)
}

#[test]
fn resonance_fit_with_one_percent_noise() {
    let p = ResonatorParams::nbn_reference();
    for seed in 1..=5 {
        let mut e = Engine::new(setup(0.01 * dip_depth(), seed)).unwrap();
        let fit = find_resonance(&mut e, &ProtocolConfig::default()).unwrap();
        let err = (fit.params.fr - p.fr).abs();
        assert!(err < p.linewidth_hz() / 100.0, "seed {seed}: fr off by {err} Hz");
    }
}

#[test]
fn null_with_one_percent_noise_reaches_noise_floor() {
    let cfg = ProtocolConfig::default();
    for seed in 1..=3 {
        let mut e = Engine::new(setup(0.01 * dip_depth(), seed)).unwrap();
        find_resonance(&mut e, &cfg).unwrap();
        align_carrier_phase(&mut e).unwrap();
        let n = find_null(&mut e, &cfg).unwrap();
        assert!(n.amplitude < 10.0 * e.noise_rms(), "seed {seed}: {} vs floor {}", n.amplitude, e.noise_rms());
    }
}

#[test]
fn balance_from_random_offsets() {
    use rand::Rng;
    let mut r = smi_core::noise::rng(77);
    for _ in 0..20 {
        let mut s = setup(0.0, 1);
        s.mixer = MixerModel {
            dc_i_base: r.random_range(-0.05..0.05),
            dc_q_base: r.random_range(-0.05..0.05),
            ..MixerModel::default()
        };
        let mut e = Engine::new(s).unwrap();
        let b = balance_mixer(&mut e, &ProtocolConfig::default()).unwrap();
        assert!(b.residual <= 1e-4);
        assert!(b.evaluations < 50, "{}", b.evaluations);
        let (ti, tq) = e.true_dc_offsets();
        assert!((b.dc_i - ti).hypot(b.dc_q - tq) < 1e-4 * 0.05 / MixerModel::default().gain);
    }
}

#[test]
fn single_null_in_scan_region() {
    // coarse |s| scan over the default operating region has one local minimum
    let cfg = ProtocolConfig::default();
    let mut e = Engine::new(setup(0.0, 1)).unwrap();
    find_resonance(&mut e, &cfg).unwrap();
    let m = e.modulation();
    let (na, np) = (81, 73);
    let a2s: Vec<f64> = (0..na).map(|i| 0.2 * i as f64 / (na - 1) as f64).collect();
    let al2s: Vec<f64> = (0..np).map(|j| TAU * j as f64 / np as f64).collect();
    let mut grid = vec![vec![0.0; np]; na];
    for (i, a2) in a2s.iter().enumerate() {
        for (j, al2) in al2s.iter().enumerate() {
            e.set_q(*a2, *al2);
            grid[i][j] = e.ideal_output().amplitude();
        }
    }
    e.set_modulation(m).unwrap();
    let mut minima = 0;
    for i in 1..na - 1 {
        for j in 0..np {
            let v = grid[i][j];
            let nb = [
                grid[i - 1][j],
                grid[i + 1][j],
                grid[i][(j + 1) % np],
                grid[i][(j + np - 1) % np],
            ];
            if nb.iter().all(|x| v < *x) {
                minima += 1;
            }
        }
    }
    assert_eq!(minima, 1);
}
