//! Estimators for frequency-noise traces: power spectral density with a `1/f` fit,
//! Allan deviation and Gaussian-mixture decomposition of the value histogram.

mod allan;
mod mixture;
mod psd;

pub use allan::{
    allan, allan_non_overlapping, log_slope, log_tau_grid, peak_tau, AllanEstimate, CONFIDENCE,
};
pub use mixture::{
    fit_mixture, fit_mixture_with, histogram, GaussianMixture, Histogram, MixtureComponent,
    MixtureOptions,
};
pub use psd::{
    fit_flicker, line_significance, periodogram, psd, smooth_log, welch, FlickerFit,
    LineSignificance, PsdEstimate, PsdMethod, Spectrum,
};

/// Digamma function ψ(x) for x > 0.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let f = 1.0 / (x * x);
    acc + x.ln() - 0.5 / x
        - f * (1.0 / 12.0 - f * (1.0 / 120.0 - f * (1.0 / 252.0 - f * (1.0 / 240.0 - f / 132.0))))
}

/// Trigamma function ψ′(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let f = 1.0 / (x * x);
    acc + 1.0 / x
        + f / 2.0
        + f / x * (1.0 / 6.0 - f * (1.0 / 30.0 - f * (1.0 / 42.0 - f * (1.0 / 30.0 - f * 5.0 / 66.0))))
}
