//! Retirement buffer, burst splitting, TLB replacement and dedup against
//! their reference models.

use svmsim_core::checks::{dedup, dedup_matrix, dma_integrity, memory_arithmetic, rb_fuzz, split_grid, split_oracle, tlb_replay};
use svmsim_core::config::DmaParams;
use svmsim_core::dma::{split, DmaCommand, ReissueOrder};
use svmsim_core::mem::pages_of;
use svmsim_lang::lower::DmaDir;

#[test]
fn retirement_buffer_matches_list_model() {
    let r = rb_fuzz(100_000, 24, 11, ReissueOrder::Request).unwrap();
    assert!(r.contains("100000 sequences"), "{r}");
}

#[test]
fn reversed_reissue_is_caught() {
    let e = rb_fuzz(2_000, 24, 11, ReissueOrder::Reversed).unwrap_err();
    assert!(e.contains("order preservation"), "{e}");
}

#[test]
fn split_grid_is_large_enough() {
    let (lens, offs) = split_grid();
    assert!(lens.len() * offs.len() >= 10_000);
    split_oracle(&DmaParams::default()).unwrap();
}

#[test]
fn split_of_unaligned_transfer() {
    let cmd = DmaCommand { va: 0x1F80, local: 0, len: 5000, dir: DmaDir::In, pe: 0, transfer: 1 };
    let lens: Vec<u32> = split(&cmd, 2048, 65536).unwrap().iter().map(|b| b.len).collect();
    assert_eq!(lens, [128, 2048, 2048, 776]);
}

#[test]
fn largest_transfer_touches_seventeen_pages() {
    let cmd = DmaCommand { va: 0x0FFF, local: 0, len: 64 * 1024, dir: DmaDir::Out, pe: 0, transfer: 1 };
    let bursts = split(&cmd, 2048, 65536).unwrap();
    let mut pages: Vec<u32> = bursts.iter().map(|b| b.vpn()).collect();
    pages.dedup();
    assert_eq!(pages.len(), 17);
    assert_eq!(pages_of(0x0FFF, 64 * 1024).count(), 17);
}

#[test]
fn tlb_matches_reference_model() {
    tlb_replay(100_000, 5).unwrap();
    tlb_replay(20_000, 6).unwrap();
}

#[test]
fn one_walk_per_page_under_concurrent_misses() {
    dedup_matrix().unwrap();
}

#[test]
fn two_misses_on_two_handlers_share_the_walk() {
    let o = dedup(2, 2, 0).unwrap();
    assert_eq!((o.walks, o.woken), (1, 2));
    assert_eq!(o.dedup_hits + o.map_check_hits, 1);
}

#[test]
fn late_miss_is_resolved_by_the_map_check() {
    let o = dedup(2, 1, 2_000).unwrap();
    assert_eq!((o.walks, o.map_check_hits, o.woken), (1, 1, 2));
}

#[test]
fn buffer_metadata_is_a_factor_256_below_data() {
    let a = memory_arithmetic(&DmaParams::default()).unwrap();
    assert_eq!((a.metadata_bytes, a.data_bytes, a.factor), (64, 16 * 1024, 256));
    assert_eq!(8 * a.entry_bits, 496);
    let b = memory_arithmetic(&DmaParams { max_in_flight: 16, ..DmaParams::default() }).unwrap();
    assert_eq!((b.metadata_bytes, b.data_bytes, b.factor), (128, 32 * 1024, 256));
}

#[test]
fn dma_data_survives_injected_misses() {
    let o = dma_integrity(1000, 3, ReissueOrder::Request).unwrap();
    assert_eq!(o.transfers, 1000);
    assert!(o.failed > 0 && o.reissued >= o.failed, "{o:?}");
}

#[test]
fn reversed_reissue_breaks_transfers() {
    let e = dma_integrity(300, 3, ReissueOrder::Reversed).unwrap_err();
    assert!(e.contains("order preservation"), "{e}");
}
