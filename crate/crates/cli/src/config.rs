//! The run configuration document, command-line overrides and the config hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use svmsim_core::config::{ClusterParams, DmaParams, Latency, MemParams, MissParams, Mode, PhtParams, Platform, SoaParams, TlbGeometry};
use svmsim_core::engine::Time;
use svmsim_core::run::DEFAULT_LIMIT;
use svmsim_core::workloads::{PcSpec, SpSpec, WorkloadSpec};
use toml::{Table, Value};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

pub const DEFAULT_INTENSITIES: [f64; 10] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Workload {
    Pc,
    Sp,
}

impl Workload {
    pub fn name(self) -> &'static str {
        match self {
            Workload::Pc => "pc",
            Workload::Sp => "sp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub workloads: Vec<Workload>,
    pub modes: Vec<Mode>,
    /// Compute cycles per transferred byte.
    pub intensities: Vec<f64>,
    /// Simulated cycles after which a point is abandoned.
    pub limit: Time,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { workloads: vec![Workload::Pc, Workload::Sp], modes: Mode::defaults(), intensities: DEFAULT_INTENSITIES.to_vec(), limit: DEFAULT_LIMIT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Metrics file; not part of the hash.
    pub output: PathBuf,
    pub sweep: SweepConfig,
    pub latency: Latency,
    pub tlb: TlbGeometry,
    pub dma: DmaParams,
    pub mem: MemParams,
    pub cluster: ClusterParams,
    pub miss: MissParams,
    pub pht: PhtParams,
    pub soa: SoaParams,
    pub pc: PcSpec,
    pub sp: SpSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("metrics.csv"),
            sweep: SweepConfig::default(),
            latency: Latency::default(),
            tlb: TlbGeometry::default(),
            dma: DmaParams::default(),
            mem: MemParams::default(),
            cluster: ClusterParams::default(),
            miss: MissParams::default(),
            pht: PhtParams::default(),
            soa: SoaParams::default(),
            pc: PcSpec::default(),
            sp: SpSpec::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
                text.parse::<Table>().map_err(|e| invalid(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = Value::Table(doc).try_into().map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn platform(&self) -> Platform {
        Platform {
            latency: self.latency,
            tlb: self.tlb,
            dma: self.dma,
            mem: self.mem,
            cluster: self.cluster,
            miss: self.miss,
            pht: self.pht,
            soa: self.soa,
        }
    }

    pub fn workload(&self, w: Workload) -> WorkloadSpec {
        match w {
            Workload::Pc => WorkloadSpec::Pc(self.pc.clone()),
            Workload::Sp => WorkloadSpec::Sp(self.sp.clone()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let platform = self.platform();
        platform.validate().map_err(|e| invalid(e.0))?;
        let s = &self.sweep;
        if s.workloads.is_empty() || s.modes.is_empty() || s.intensities.is_empty() {
            return Err(invalid("sweep: workloads, modes and intensities must not be empty"));
        }
        for m in &s.modes {
            m.validate(platform.cluster.pes).map_err(|e| invalid(e.0))?;
        }
        if let Some(x) = s.intensities.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(invalid(format!("sweep.intensities: {x} is not a finite non-negative number")));
        }
        if s.limit == 0 {
            return Err(invalid("sweep.limit must be positive"));
        }
        Ok(())
    }

    /// Every field except the output path, in canonical TOML.
    pub fn canonical(&self) -> String {
        let mut t = Table::try_from(self).expect("config serializes");
        t.remove("output");
        toml::to_string(&t).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.canonical().as_bytes());
        hex::encode(&d[..8])
    }
}

/// Sets a dotted key in the document. The value is read as a TOML value
/// and falls back to a plain string.
pub fn apply_override(doc: &mut Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| invalid(format!("override `{spec}`: expected key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("override `{spec}`: empty key component")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut node = doc;
    for p in parents {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = entry.as_table_mut().ok_or_else(|| invalid(format!("override `{spec}`: `{p}` is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
