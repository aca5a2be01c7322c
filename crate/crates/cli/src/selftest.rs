//! Built-in mechanism checks.

use std::time::Instant;

use svmsim_core::checks::{dedup_matrix, dma_integrity, memory_arithmetic, rb_fuzz, split_oracle, tlb_replay, CheckResult};
use svmsim_core::config::Platform;
use svmsim_core::dma::ReissueOrder;
use svmsim_lang::corpus::check_corpus;

const SEED: u64 = 0x5e1f_7e57;

#[derive(Debug, Clone, Copy, Default)]
pub struct SelftestOptions {
    /// Reissue failed bursts newest first, which the checks must catch.
    pub reversed_reissue: bool,
    pub rb_sequences: usize,
    pub dma_transfers: usize,
    pub tlb_accesses: usize,
}

impl SelftestOptions {
    pub fn standard() -> Self {
        Self { reversed_reissue: false, rb_sequences: 10_000, dma_transfers: 200, tlb_accesses: 100_000 }
    }
}

#[derive(Debug, Clone)]
pub struct CheckLine {
    pub name: &'static str,
    pub result: CheckResult,
    pub seconds: f64,
}

impl std::fmt::Display for CheckLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.result {
            Ok(s) => write!(f, "PASS {:<22} {s} ({:.1}s)", self.name, self.seconds),
            Err(e) => write!(f, "FAIL {:<22} {e}", self.name),
        }
    }
}

pub fn selftest(platform: &Platform, opts: SelftestOptions, mut report: impl FnMut(&CheckLine)) -> Vec<CheckLine> {
    let order = if opts.reversed_reissue { ReissueOrder::Reversed } else { ReissueOrder::Request };
    let dma = platform.dma;
    let checks: Vec<(&'static str, Box<dyn Fn() -> CheckResult>)> = vec![
        ("retirement-buffer", Box::new(move || rb_fuzz(opts.rb_sequences, 24, SEED, order))),
        (
            "dma-integrity",
            Box::new(move || {
                dma_integrity(opts.dma_transfers, SEED, order)
                    .map(|o| format!("{} transfers, {} bursts, {} failed and reissued, data intact", o.transfers, o.bursts, o.failed))
            }),
        ),
        ("burst-split", Box::new(move || split_oracle(&dma))),
        ("miss-dedup", Box::new(dedup_matrix)),
        ("tlb-replay", Box::new(move || tlb_replay(opts.tlb_accesses, SEED))),
        (
            "memory-arithmetic",
            Box::new(move || {
                memory_arithmetic(&dma).map(|a| {
                    format!("{} B of burst metadata vs {} B of data buffer, a factor of {}", a.metadata_bytes, a.data_bytes, a.factor)
                })
            }),
        ),
        ("helper-thread-corpus", Box::new(check_corpus)),
    ];
    checks
        .into_iter()
        .map(|(name, f)| {
            let t = Instant::now();
            let line = CheckLine { name, result: f(), seconds: t.elapsed().as_secs_f64() };
            report(&line);
            line
        })
        .collect()
}
