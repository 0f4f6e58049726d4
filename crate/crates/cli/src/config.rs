//! Experiment configuration file.
//!
//! TOML is the primary format; a file ending in `.json` is read as JSON with the same
//! structure. Every section and key is optional and unknown keys are rejected. The
//! defaults describe the reference demo: the NbN resonator probed at 10 MHz sideband
//! offset with an illustrative TLS noise model.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};
use smi_core::engine::{BandsConfig, MixerModel, SimSetup};
use smi_core::noise::{CommonModeSpec, FlickerParams, NoiseSpec, RtsParams};
use smi_core::phasor::{CarrierSettings, ModulationSettings};
use smi_core::protocol::ProtocolConfig;
use smi_core::resonator::ResonatorParams;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Time-compression factor for simulated runs; 1 runs in physical time.
    pub compress: f64,
    pub modulation: ModulationSection,
    pub carrier: CarrierSection,
    pub resonator: Option<ResonatorParams>,
    /// Ignore `[resonator]` and probe a bare feedline.
    pub bare_feedline: bool,
    pub noise: NoiseSection,
    pub common_mode: Vec<CommonModeSpec>,
    pub bands: BandsConfig,
    pub readout: ReadoutSection,
    pub mixer: MixerModel,
    pub protocol: ProtocolConfig,
    pub sweep: SweepSection,
    pub map: MapSection,
    pub monitor: MonitorSection,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModulationSection {
    /// I amplitude (V) and phase (rad).
    pub a1: f64,
    pub alpha1: f64,
    /// Q amplitude (V) and phase (rad).
    pub a2: f64,
    pub alpha2: f64,
    /// Sideband offset (Hz).
    pub f_s_hz: f64,
    pub dc_i: f64,
    pub dc_q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarrierSection {
    /// Carrier frequency (Hz); by default the probe sideband sits on the resonance.
    pub f0_hz: Option<f64>,
    /// Phase between up- and down-conversion carriers (rad).
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub rts: Vec<RtsParams>,
    pub flicker: FlickerParams,
    /// White frequency-noise level (Hz²/Hz).
    pub white_psd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutSection {
    /// White voltage noise per quadrature at the lock-in input (V²/Hz).
    pub noise_psd: f64,
    pub gain: f64,
}

/// Which Q modulation a command uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Operating {
    /// `a2 = a1`, `α2 = α1 + π`: only the probe sideband is detected.
    Ssb,
    /// Amplitude-noise rejection point.
    Destructive,
    /// Phase-noise rejection point.
    Constructive,
    /// `a2`, `α2` exactly as given in `[modulation]`.
    Configured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub operating: Operating,
    /// Half span of the carrier sweep (Hz); defaults to three linewidths.
    pub half_span_hz: Option<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    Amplitude,
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapSection {
    pub perturbation: PerturbationKind,
    /// Fractional amplitude change or phase change (rad).
    pub magnitude: f64,
    /// Transmission of the device under test: attenuation and phase.
    pub dut_xi: f64,
    pub dut_phi: f64,
    pub a2_max: f64,
    pub a2_points: usize,
    pub alpha2_points: usize,
    pub linecut: bool,
    pub linecut_points: usize,
    /// Half width of the linecut relative to the single-sideband output amplitude.
    pub linecut_half_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorSection {
    pub operating: Operating,
    /// Physical duration of the run (s).
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub psd_bins_per_decade: f64,
    /// Band of the `a_p/f` fit (Hz).
    pub flicker_band: (f64, f64),
    pub allan_points_per_decade: f64,
    pub histogram_bins: usize,
    pub mixture_components: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            compress: 1.0,
            modulation: ModulationSection::default(),
            carrier: CarrierSection::default(),
            resonator: Some(ResonatorParams::nbn_reference()),
            bare_feedline: false,
            noise: NoiseSection::default(),
            common_mode: Vec::new(),
            bands: BandsConfig::monitoring(),
            readout: ReadoutSection::default(),
            mixer: MixerModel::default(),
            protocol: ProtocolConfig::default(),
            sweep: SweepSection::default(),
            map: MapSection::default(),
            monitor: MonitorSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

impl Default for ModulationSection {
    fn default() -> Self {
        ModulationSection {
            a1: 0.05,
            alpha1: 0.3,
            a2: 0.05,
            alpha2: 0.3 + std::f64::consts::PI,
            f_s_hz: 10e6,
            dc_i: 0.0,
            dc_q: 0.0,
        }
    }
}

impl Default for CarrierSection {
    fn default() -> Self {
        CarrierSection {
            f0_hz: None,
            delta: 0.2,
        }
    }
}

impl Default for NoiseSection {
    // two dominant fluctuators on a 1/f background; illustrative values
    fn default() -> Self {
        NoiseSection {
            rts: vec![
                RtsParams::symmetric(30e3, 0.02),
                RtsParams {
                    delta_f: 70e3,
                    rate_up: 2e-3,
                    rate_down: 8e-3,
                },
            ],
            flicker: FlickerParams {
                a_p: 4.0e6,
                f_min: 1e-4,
                f_max: 50.0,
            },
            white_psd: 0.0,
        }
    }
}

impl Default for ReadoutSection {
    fn default() -> Self {
        ReadoutSection {
            noise_psd: 1e-14,
            gain: 1.0,
        }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            operating: Operating::Ssb,
            half_span_hz: None,
            points: 601,
        }
    }
}

impl Default for MapSection {
    fn default() -> Self {
        MapSection {
            perturbation: PerturbationKind::Amplitude,
            magnitude: 0.01,
            dut_xi: 0.5,
            dut_phi: -1.0,
            a2_max: 0.08,
            a2_points: 81,
            alpha2_points: 73,
            linecut: false,
            linecut_points: 81,
            linecut_half_width: 0.2,
        }
    }
}

impl Default for MonitorSection {
    fn default() -> Self {
        MonitorSection {
            operating: Operating::Destructive,
            duration_s: 1800.0,
        }
    }
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            psd_bins_per_decade: 10.0,
            flicker_band: (0.3, 3.0),
            allan_points_per_decade: 10.0,
            histogram_bins: 256,
            mixture_components: 3,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if !(self.compress >= 1.0 && self.compress.is_finite()) {
            return bad("compress must be a finite factor >= 1");
        }
        if self.sweep.points < 16 || self.sweep.half_span_hz.is_some_and(|h| !(h > 0.0)) {
            return bad("sweep needs points >= 16 and half_span_hz > 0");
        }
        let m = &self.map;
        if m.a2_points < 2 || m.alpha2_points < 2 || !(m.a2_max > 0.0) || m.linecut_points < 2 {
            return bad("map grids need at least two points and a2_max > 0");
        }
        if !(m.magnitude > 0.0 && m.linecut_half_width > 0.0 && m.dut_xi >= 0.0) {
            return bad("map magnitude and linecut width must be > 0 and dut_xi >= 0");
        }
        if !(self.monitor.duration_s > 0.0) {
            return bad("monitor duration_s must be > 0");
        }
        let a = &self.analysis;
        if !(a.psd_bins_per_decade > 0.0 && a.allan_points_per_decade > 0.0) || a.histogram_bins < 2 {
            return bad("analysis smoothing and grids must be positive");
        }
        if !(a.flicker_band.0 > 0.0 && a.flicker_band.1 > a.flicker_band.0) || a.mixture_components == 0 {
            return bad("analysis flicker_band must satisfy 0 < lo < hi and mixture_components >= 1");
        }
        self.protocol.validate().map_err(CliError::from_core)?;
        self.setup()?.validate().map_err(CliError::from_core)
    }

    pub fn modulation(&self) -> Result<ModulationSettings, CliError> {
        let m = &self.modulation;
        let mut s = ModulationSettings::new(m.a1, m.alpha1, m.a2, m.alpha2, TAU * m.f_s_hz).map_err(CliError::from_core)?;
        s.dc_i = m.dc_i;
        s.dc_q = m.dc_q;
        Ok(s)
    }

    pub fn resonator(&self) -> Option<ResonatorParams> {
        if self.bare_feedline {
            None
        } else {
            self.resonator
        }
    }

    pub fn carrier_hz(&self) -> f64 {
        self.carrier
            .f0_hz
            .unwrap_or_else(|| self.resonator.map_or(6e9, |r| r.fr) + self.modulation.f_s_hz)
    }

    pub fn carrier(&self) -> Result<CarrierSettings, CliError> {
        CarrierSettings::from_hz(self.carrier_hz(), self.carrier.delta).map_err(CliError::from_core)
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            rts_list: self.noise.rts.clone(),
            flicker: self.noise.flicker,
            white: smi_core::noise::WhiteParams {
                psd_level: self.noise.white_psd,
            },
            seed: self.seed,
        }
    }

    /// Simulator set-up with the modulation exactly as configured.
    pub fn setup(&self) -> Result<SimSetup, CliError> {
        Ok(SimSetup {
            modulation: self.modulation()?,
            carrier: self.carrier()?,
            resonator: self.resonator(),
            noise: self.noise_spec(),
            common_mode: self.common_mode.clone(),
            bands: self.bands,
            readout_noise_psd: self.readout.noise_psd,
            gain: self.readout.gain,
            mixer: self.mixer,
            qi_factor: 1.0,
        })
    }
}
