use std::collections::BTreeMap;

use crate::engine::Time;

/// Who asked the IOMMU for a translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Pe(usize),
    Dma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransRecord {
    pub time: Time,
    pub va: u32,
    pub source: Source,
    pub prefetch: bool,
    /// `None` on a miss, otherwise the TLB level (1 or 2) that answered.
    pub level: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkRecord {
    pub mht: usize,
    pub vpn: u32,
    pub start: Time,
    pub end: Time,
}

#[derive(Debug, Clone, Default)]
pub struct Stats {
    pub misses: u64,
    pub walks: u64,
    pub dedup_hits: u64,
    pub map_check_hits: u64,
    pub prefetch_hits: u64,
    pub prefetch_misses: u64,
    pub dma_drain_stall_cycles: u64,
    /// Drain-then-reissue episodes of the DMA engine.
    pub recoveries: u64,
    /// Iterations a helper skipped because it fell behind its worker.
    pub prefetch_late: u64,
    pub bursts_issued: u64,
    pub bursts_failed: u64,
    pub bursts_reissued: u64,
    pub transfers: u64,
    pub backpressure: u64,
    pub tlb_inserts: u64,
    pub wakes: u64,
    pub handled_writes: u64,
    pub soa_locks: u64,
    pub soa_unlocks: u64,
    /// Enqueue-to-wake latency of every woken miss.
    pub miss_latency: Vec<Time>,
    pub transfer_latency: Vec<Time>,
    pub walk_log: Vec<WalkRecord>,
    pub walks_per_vpn: BTreeMap<u32, u32>,
    pub order_violations: Vec<String>,
    pub translations: Option<Vec<TransRecord>>,
}

impl Stats {
    pub fn miss_latency_mean(&self) -> f64 {
        if self.miss_latency.is_empty() {
            return 0.0;
        }
        self.miss_latency.iter().sum::<u64>() as f64 / self.miss_latency.len() as f64
    }

    pub fn miss_latency_percentile(&self, q: f64) -> Time {
        if self.miss_latency.is_empty() {
            return 0;
        }
        let mut v = self.miss_latency.clone();
        v.sort_unstable();
        let i = ((v.len() as f64 * q).ceil() as usize).clamp(1, v.len()) - 1;
        v[i]
    }
}
