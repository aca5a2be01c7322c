//! Platform parameters and system modes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("configuration error: {0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Access costs in accelerator clock cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Latency {
    pub l1_access: u64,
    pub l2_spm_access: u64,
    pub dram_access: u64,
    /// Minimum spacing between DRAM completions per 64 B transferred.
    pub dram_gap_per_64b: u64,
    pub tlb_l1_lookup: u64,
    pub tlb_l2_lookup: u64,
    /// One word access to the IOMMU or DMA configuration port.
    pub config_port: u64,
    pub wake: u64,
}

impl Default for Latency {
    fn default() -> Self {
        Self {
            l1_access: 1,
            l2_spm_access: 8,
            dram_access: 100,
            dram_gap_per_64b: 4,
            tlb_l1_lookup: 1,
            tlb_l2_lookup: 6,
            config_port: 8,
            wake: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TlbGeometry {
    pub l1_entries: usize,
    pub l2_entries: usize,
    pub l2_ways: usize,
}

impl Default for TlbGeometry {
    fn default() -> Self {
        Self { l1_entries: 32, l2_entries: 256, l2_ways: 8 }
    }
}

impl TlbGeometry {
    pub fn l2_sets(&self) -> usize {
        self.l2_entries / self.l2_ways
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmaParams {
    pub max_burst: u32,
    pub max_in_flight: usize,
    pub max_transfer: u32,
    /// Cycles a PE spends writing one command to its interface.
    pub command_cycles: u64,
    pub axi_id_bits: u32,
}

impl Default for DmaParams {
    fn default() -> Self {
        Self { max_burst: 2048, max_in_flight: 8, max_transfer: 64 * 1024, command_cycles: 4, axi_id_bits: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemParams {
    pub page_table_levels: u32,
    pub dram_bytes: u64,
}

impl Default for MemParams {
    fn default() -> Self {
        Self { page_table_levels: 3, dram_bytes: 1 << 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub pes: u32,
    pub l1_bytes: u32,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { pes: 8, l1_bytes: 256 * 1024 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissParams {
    pub queue_capacity: usize,
}

impl Default for MissParams {
    fn default() -> Self {
        Self { queue_capacity: 64 }
    }
}

/// Prefetch window in iterations of the worker's own share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhtParams {
    pub min_distance: u64,
    pub max_distance: u64,
}

impl Default for PhtParams {
    fn default() -> Self {
        Self { min_distance: 1, max_distance: 8 }
    }
}

/// Costs of the lock-based baseline's software TLB management.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoaParams {
    /// Software search for one page in the TLB shadow kept in L1. The default
    /// is a linear scan of the 32 fully associative entries at 3 cycles each.
    pub lookup_cycles: u64,
}

impl Default for SoaParams {
    fn default() -> Self {
        Self { lookup_cycles: 96 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Platform {
    pub latency: Latency,
    pub tlb: TlbGeometry,
    pub dma: DmaParams,
    pub mem: MemParams,
    pub cluster: ClusterParams,
    pub miss: MissParams,
    pub pht: PhtParams,
    pub soa: SoaParams,
}

impl Platform {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let l = &self.latency;
        for (name, v) in [
            ("l1_access", l.l1_access),
            ("l2_spm_access", l.l2_spm_access),
            ("dram_access", l.dram_access),
            ("tlb_l1_lookup", l.tlb_l1_lookup),
            ("tlb_l2_lookup", l.tlb_l2_lookup),
            ("config_port", l.config_port),
        ] {
            if v == 0 {
                return Err(bad(format!("latency.{name} must be at least 1")));
            }
        }
        let t = &self.tlb;
        if t.l1_entries == 0 || t.l2_ways == 0 || t.l2_entries == 0 || t.l2_entries % t.l2_ways != 0 {
            return Err(bad("tlb: entries must be positive and l2_entries a multiple of l2_ways"));
        }
        let d = &self.dma;
        if d.max_burst == 0 || d.max_burst > 4096 || d.max_burst % 8 != 0 {
            return Err(bad("dma.max_burst must be a positive multiple of 8 up to one page"));
        }
        if d.max_in_flight == 0 || d.max_in_flight > 64 {
            return Err(bad("dma.max_in_flight must be in 1..=64"));
        }
        if d.max_transfer == 0 || d.max_transfer > 64 * 1024 {
            return Err(bad("dma.max_transfer must be in 1..=65536"));
        }
        if !(1..=8).contains(&d.axi_id_bits) {
            return Err(bad("dma.axi_id_bits must be in 1..=8"));
        }
        if !(2..=4).contains(&self.mem.page_table_levels) {
            return Err(bad("mem.page_table_levels must be in 2..=4"));
        }
        if self.cluster.pes == 0 {
            return Err(bad("cluster.pes must be positive"));
        }
        if self.miss.queue_capacity == 0 {
            return Err(bad("miss.queue_capacity must be positive"));
        }
        if self.pht.min_distance > self.pht.max_distance {
            return Err(bad("pht.min_distance exceeds pht.max_distance"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Ideal,
    Soa,
    Vdma,
}

impl ModeKind {
    pub fn name(self) -> &'static str {
        match self {
            ModeKind::Ideal => "ideal",
            ModeKind::Soa => "soa",
            ModeKind::Vdma => "vdma",
        }
    }
}

/// A system mode with its split of the cluster's PEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mode {
    pub kind: ModeKind,
    pub wt: u32,
    pub pht: u32,
    pub mht: u32,
}

impl Mode {
    pub fn ideal(wt: u32) -> Self {
        Mode { kind: ModeKind::Ideal, wt, pht: 0, mht: 0 }
    }

    pub fn soa(wt: u32) -> Self {
        Mode { kind: ModeKind::Soa, wt, pht: 0, mht: 1 }
    }

    pub fn vdma(wt: u32, pht: u32, mht: u32) -> Self {
        Mode { kind: ModeKind::Vdma, wt, pht, mht }
    }

    /// The configurations compared in the benchmark sweeps.
    pub fn defaults() -> Vec<Mode> {
        vec![Mode::soa(7), Mode::vdma(7, 0, 1), Mode::vdma(6, 0, 2), Mode::vdma(6, 1, 1), Mode::vdma(5, 1, 2)]
    }

    /// Compact `wt/pht/mht` label.
    pub fn split(&self) -> String {
        format!("{}/{}/{}", self.wt, self.pht, self.mht)
    }

    /// Ideal mode ignores helper counts; the lock-based baseline has no PHT
    /// and a single miss handler.
    pub fn normalized(self) -> Self {
        match self.kind {
            ModeKind::Ideal => Mode::ideal(self.wt),
            ModeKind::Soa => Mode::soa(self.wt),
            ModeKind::Vdma => self,
        }
    }

    /// Number of miss-handling processes actually run; zero handlers in a
    /// translating mode means the single manager PE.
    pub fn handlers(&self) -> u32 {
        match self.kind {
            ModeKind::Ideal => 0,
            _ => self.mht.max(1),
        }
    }

    pub fn validate(&self, pes: u32) -> Result<(), ConfigError> {
        if self.wt == 0 {
            return Err(bad(format!("mode {self}: needs at least one worker thread")));
        }
        let used = match self.kind {
            ModeKind::Ideal => self.wt,
            _ => self.wt + self.pht + self.mht,
        };
        if used > pes {
            return Err(bad(format!("mode {self}: uses {used} PEs but the cluster has {pes}")));
        }
        if self.kind == ModeKind::Soa && (self.pht != 0 || self.mht != 1) {
            return Err(bad(format!("mode {self}: the lock-based baseline runs without PHT and with one MHT")));
        }
        Ok(())
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.name(), self.split())
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    /// Parses `ideal:7`, `soa:7`, `vdma:6/1/1` (or a bare `wt/pht/mht` tail
    /// for any kind).
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| bad(format!("mode `{s}`: expected kind:counts")))?;
        let kind = match kind {
            "ideal" => ModeKind::Ideal,
            "soa" => ModeKind::Soa,
            "vdma" => ModeKind::Vdma,
            other => return Err(bad(format!("unknown mode kind `{other}`"))),
        };
        let nums: Vec<u32> = rest
            .split('/')
            .map(|n| n.trim().parse().map_err(|_| bad(format!("mode `{s}`: bad count `{n}`"))))
            .collect::<Result<_, _>>()?;
        let m = match (kind, nums.as_slice()) {
            (ModeKind::Ideal, [wt] | [wt, _, _]) => Mode::ideal(*wt),
            (ModeKind::Soa, [wt]) => Mode::soa(*wt),
            (_, [wt, pht, mht]) => Mode { kind, wt: *wt, pht: *pht, mht: *mht },
            _ => return Err(bad(format!("mode `{s}`: expected wt/pht/mht counts"))),
        };
        Ok(m)
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_round_trip_through_text() {
        for m in Mode::defaults().into_iter().chain([Mode::ideal(6)]) {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("vdma:6/1".parse::<Mode>().is_err());
        assert!("fast:1/1/1".parse::<Mode>().is_err());
    }

    #[test]
    fn pe_budget_is_enforced() {
        assert!(Mode::vdma(6, 1, 2).validate(8).is_err());
        assert!(Mode::vdma(5, 1, 2).validate(8).is_ok());
        assert!(Mode { kind: ModeKind::Soa, wt: 6, pht: 1, mht: 1 }.validate(8).is_err());
    }

    #[test]
    fn defaults_validate() {
        Platform::default().validate().unwrap();
    }
}
