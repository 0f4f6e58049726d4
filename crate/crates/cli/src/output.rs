//! Output directory with tables, JSON documents and the run manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use smi_core::trace::digest_bytes;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Numeric table with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &'static str, columns: &[&'static str]) -> Self {
        Table {
            name,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip decimal, switching to exponent form for very small or large
/// magnitudes.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Serialize)]
struct JsonTable<'a> {
    columns: &'a [&'static str],
    rows: Vec<Vec<serde_json::Value>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub software_version: String,
    pub prng: String,
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
}

pub struct OutDir {
    path: PathBuf,
    format: Format,
    artifacts: Vec<Artifact>,
}

impl OutDir {
    pub fn create(path: &Path, format: Format) -> Result<Self, CliError> {
        std::fs::create_dir_all(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(OutDir {
            path: path.to_path_buf(),
            format,
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, file: String, bytes: &[u8], record: bool) -> Result<(), CliError> {
        let p = self.path.join(&file);
        std::fs::write(&p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        if record {
            self.artifacts.push(Artifact {
                file,
                sha256: digest_bytes(bytes),
            });
        }
        Ok(())
    }

    pub fn table(&mut self, t: &Table) -> Result<(), CliError> {
        match self.format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(&t.columns).map_err(|e| CliError::Io(e.to_string()))?;
                for row in &t.rows {
                    w.write_record(row.iter().map(|v| fmt_num(*v))).map_err(|e| CliError::Io(e.to_string()))?;
                }
                let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
                self.write(format!("{}.csv", t.name), &bytes, true)
            }
            Format::Json => {
                let rows = t
                    .rows
                    .iter()
                    .map(|r| r.iter().map(|v| serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, Into::into)).collect())
                    .collect();
                let doc = JsonTable {
                    columns: &t.columns,
                    rows,
                };
                let mut bytes = serde_json::to_vec_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
                bytes.push(b'\n');
                self.write(format!("{}.json", t.name), &bytes, true)
            }
        }
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write(format!("{name}.json"), &bytes, true)
    }

    /// Write the resolved configuration and the manifest; called last.
    pub fn finish(mut self, command: &str, config_toml: &str, seed: u64, inputs: Vec<Artifact>) -> Result<PathBuf, CliError> {
        self.write("config.toml".into(), config_toml.as_bytes(), false)?;
        let manifest = Manifest {
            command: command.to_string(),
            config_digest: digest_bytes(config_toml.as_bytes()),
            seed,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            prng: smi_core::noise::PRNG_ID.to_string(),
            inputs,
            artifacts: std::mem::take(&mut self.artifacts),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write("manifest.json".into(), &bytes, false)?;
        Ok(self.path)
    }
}
