//! Browser demo: sensitivity maps, SSB versus interferometric spectroscopy and noise
//! traces with their Allan deviation, computed by `smi-core` compiled to wasm.

use std::f64::consts::TAU;

use smi_core::analysis::{allan, log_tau_grid};
use smi_core::noise::{compose, FlickerParams, NoiseSpec, RtsParams, WhiteParams};
use smi_core::phasor::{
    operating_point_at_delta, sensitivity_map, CarrierSettings, DutResponse, InterferenceMode, ModulationSettings,
    Perturbation,
};
use smi_core::resonator::{linear_sweep, sideband_responses, spectroscopy_trace, ResonatorParams, ResonatorState};
use smi_core::Complex64;
use wasm_bindgen::prelude::*;

const F_S: f64 = 10e6;

fn js(e: smi_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// ΔS map plus the analytic rejection point for one perturbation kind.
#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub a2: Vec<f64>,
    pub alpha2: Vec<f64>,
    /// Row-major over `a2`, `alpha2` fastest.
    pub delta_s: Vec<f64>,
    pub rejection: (f64, f64),
}

#[allow(clippy::too_many_arguments)]
pub fn compute_map(
    a1: f64,
    alpha1: f64,
    delta: f64,
    xi: f64,
    phi: f64,
    phase: bool,
    a2_max: f64,
    n: usize,
) -> smi_core::Result<MapResult> {
    let c = CarrierSettings::new(TAU * 6e9, delta)?;
    let dut = DutResponse::new(xi, phi);
    let (pert, mode) = if phase {
        (Perturbation::Phase(0.01), InterferenceMode::Constructive)
    } else {
        (Perturbation::Amplitude(0.01), InterferenceMode::Destructive)
    };
    let a2: Vec<f64> = (0..n).map(|i| a2_max * i as f64 / (n - 1) as f64).collect();
    let alpha2: Vec<f64> = (0..n).map(|j| TAU * j as f64 / n as f64).collect();
    let map = sensitivity_map(a1, alpha1, &c, &dut, &a2, &alpha2, pert)?;
    let rejection = operating_point_at_delta(a1, alpha1, delta, Complex64::new(1.0, 0.0), dut.probe_response(), mode)?;
    Ok(MapResult {
        a2,
        alpha2,
        delta_s: map.cells.iter().map(|c| c.delta_s).collect(),
        rejection,
    })
}

/// Carrier sweep across the reference resonator, as `[f, x, y]` triples, for SSB
/// (`interferometric = false`) or the destructive point set at the resonance.
pub fn compute_sweep(interferometric: bool, half_span_linewidths: f64, points: usize) -> smi_core::Result<Vec<f64>> {
    let p = ResonatorParams::nbn_reference();
    let base = ModulationSettings::new(0.05, 0.3, 0.0, 0.0, TAU * F_S)?;
    let c = CarrierSettings::from_hz(p.fr + F_S, 0.2)?;
    let (a2, alpha2) = if interferometric {
        let (r, pr) = sideband_responses(Some(&p), &ResonatorState::default(), &base, &c);
        operating_point_at_delta(base.a1, base.alpha1, c.delta, r, pr, InterferenceMode::Destructive)?
    } else {
        smi_core::phasor::ssb_settings(base.a1, base.alpha1)
    };
    let m = base.with_q(a2, alpha2);
    let sweep = linear_sweep(c.f0(), half_span_linewidths * p.linewidth_hz(), points);
    let t = spectroscopy_trace(&p, &ResonatorState::default(), &m, &c, &sweep)?;
    Ok(t.f0_hz
        .iter()
        .zip(&t.points)
        .flat_map(|(f, s)| [*f - F_S - p.fr, s.x, s.y])
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseResult {
    pub values: Vec<f64>,
    pub taus: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Composite detuning noise (one telegraph fluctuator, `1/f`, white) and its Allan
/// deviation.
pub fn compute_noise(
    seed: u64,
    a_p: f64,
    rts_delta_hz: f64,
    rts_corner_hz: f64,
    white_psd: f64,
    n: usize,
    dt: f64,
) -> smi_core::Result<NoiseResult> {
    let spec = NoiseSpec {
        rts_list: if rts_delta_hz > 0.0 {
            vec![RtsParams::symmetric(rts_delta_hz, rts_corner_hz)]
        } else {
            Vec::new()
        },
        flicker: FlickerParams {
            a_p,
            f_min: 1.0 / (n as f64 * dt),
            f_max: 0.5 / dt,
        },
        white: WhiteParams { psd_level: white_psd },
        seed,
    };
    let t = compose(&spec, n, dt)?;
    let est = allan(&t, &log_tau_grid(t.dt, t.len(), 10.0))?;
    Ok(NoiseResult {
        values: t.values,
        taus: est.taus,
        sigma: est.sigma,
    })
}

#[wasm_bindgen]
pub struct SensitivityMap {
    inner: MapResult,
}

#[wasm_bindgen]
impl SensitivityMap {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.inner.a2.len()
    }

    #[wasm_bindgen(getter)]
    pub fn a2_max(&self) -> f64 {
        *self.inner.a2.last().unwrap_or(&0.0)
    }

    #[wasm_bindgen(getter)]
    pub fn delta_s(&self) -> Vec<f64> {
        self.inner.delta_s.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn rejection_a2(&self) -> f64 {
        self.inner.rejection.0
    }

    #[wasm_bindgen(getter)]
    pub fn rejection_alpha2(&self) -> f64 {
        self.inner.rejection.1
    }
}

/// ΔS over an `n × n` grid of `(a2, α2)` for a 1% amplitude or 0.01 rad phase change.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn sensitivity(
    a1: f64,
    alpha1: f64,
    delta: f64,
    xi: f64,
    phi: f64,
    phase: bool,
    a2_max: f64,
    n: usize,
) -> Result<SensitivityMap, JsError> {
    if n < 2 {
        return Err(JsError::new("grid needs at least 2 points"));
    }
    compute_map(a1, alpha1, delta, xi, phi, phase, a2_max, n)
        .map(|inner| SensitivityMap { inner })
        .map_err(js)
}

/// Flat `[Δf, x, y, …]` carrier sweep.
#[wasm_bindgen]
pub fn spectroscopy(interferometric: bool, half_span_linewidths: f64, points: usize) -> Result<Vec<f64>, JsError> {
    compute_sweep(interferometric, half_span_linewidths, points).map_err(js)
}

#[wasm_bindgen]
pub struct NoiseTrace {
    inner: NoiseResult,
}

#[wasm_bindgen]
impl NoiseTrace {
    #[wasm_bindgen(getter)]
    pub fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn taus(&self) -> Vec<f64> {
        self.inner.taus.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sigma(&self) -> Vec<f64> {
        self.inner.sigma.clone()
    }
}

#[wasm_bindgen]
pub fn noise(
    seed: u64,
    a_p: f64,
    rts_delta_hz: f64,
    rts_corner_hz: f64,
    white_psd: f64,
    n: usize,
    dt: f64,
) -> Result<NoiseTrace, JsError> {
    compute_noise(seed, a_p, rts_delta_hz, rts_corner_hz, white_psd, n, dt)
        .map(|inner| NoiseTrace { inner })
        .map_err(js)
}
