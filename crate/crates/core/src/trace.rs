//! Uniformly sampled time series with provenance.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Where a trace came from: the seed and a digest of the generating configuration.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub seed: u64,
    pub digest: String,
}

impl TraceMeta {
    pub fn new<T: Serialize>(seed: u64, config: &T) -> Self {
        TraceMeta {
            seed,
            digest: digest_of(config),
        }
    }
}

/// Hex SHA-256 of the JSON serialisation of `value`.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialise");
    digest_bytes(&bytes)
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    let hash = Sha256::digest(bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// A uniformly sampled series: detuning in Hz, or a lock-in quadrature in V.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTrace {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
    pub meta: TraceMeta,
}

impl FrequencyTrace {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>, meta: TraceMeta) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("trace sample interval must be > 0"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("trace value {i} is not finite")));
        }
        Ok(FrequencyTrace { t0, dt, values, meta })
    }

    /// Trace without provenance, e.g. read back from a file.
    pub fn from_values(dt: f64, values: Vec<f64>) -> Result<Self> {
        Self::new(0.0, dt, values, TraceMeta::default())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 * self.dt
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let n = self.values.len().max(1) as f64;
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_samples() {
        assert!(FrequencyTrace::from_values(0.0, vec![1.0]).is_err());
        assert!(FrequencyTrace::from_values(1.0, vec![1.0, f64::NAN]).is_err());
        let t = FrequencyTrace::from_values(0.5, vec![1.0, 3.0]).unwrap();
        assert_eq!(t.duration(), 1.0);
        assert_eq!(t.mean(), 2.0);
        assert_eq!(t.variance(), 1.0);
    }

    #[test]
    fn digest_is_stable() {
        let a = digest_of(&(1u32, "x"));
        assert_eq!(a, digest_of(&(1u32, "x")));
        assert_ne!(a, digest_of(&(2u32, "x")));
        assert_eq!(a.len(), 64);
    }
}
