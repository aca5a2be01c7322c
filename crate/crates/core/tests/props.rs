//! Property tests of the DMA and TLB invariants.

use proptest::prelude::*;
use svmsim_core::checks::rb_fuzz;
use svmsim_core::config::{Mode, TlbGeometry};
use svmsim_core::dma::{split, DmaCommand, ReissueOrder};
use svmsim_core::mem::pages_of;
use svmsim_core::oracle::{check_split, RefTlb};
use svmsim_core::tlb::{Lookup, Tlb};
use svmsim_lang::lower::DmaDir;

proptest! {
    #[test]
    fn split_covers_every_byte_once(va in 0u32..0x7fff_0000, len in 1u32..=65536, burst in prop::sample::select(vec![64u32, 256, 1024, 2048, 4096])) {
        let cmd = DmaCommand { va, local: 0, len, dir: DmaDir::In, pe: 0, transfer: 1 };
        let bursts = split(&cmd, burst, 65536).unwrap();
        prop_assert!(check_split(&cmd, &bursts, burst).is_ok());
        let mut pages: Vec<u32> = bursts.iter().map(|b| b.vpn()).collect();
        pages.dedup();
        prop_assert_eq!(pages.len(), pages_of(va, len).count());
        prop_assert!(pages.len() <= 17);
    }

    #[test]
    fn retirement_buffer_follows_the_list_model(seed in any::<u64>(), ops in 1usize..200) {
        prop_assert!(rb_fuzz(4, ops, seed, ReissueOrder::Request).is_ok());
    }

    #[test]
    fn tlb_follows_the_reference_model(trace in prop::collection::vec((0u32..700, any::<bool>()), 1..2000)) {
        let g = TlbGeometry::default();
        let mut tlb = Tlb::new(&g);
        let mut model = RefTlb::new(g.l1_entries, g.l2_entries, g.l2_ways);
        let mut locks = Vec::new();
        for (vpn, lock) in trace {
            let r = tlb.lookup(vpn);
            prop_assert_eq!(r, model.lookup(vpn));
            if r == Lookup::Miss {
                prop_assert_eq!(tlb.insert(vpn, vpn + 1), model.insert(vpn, vpn + 1));
            } else if lock && locks.len() < 4 {
                prop_assert_eq!(tlb.lock(vpn), model.lock(vpn));
                locks.push(vpn);
            } else if let Some(v) = locks.pop() {
                prop_assert_eq!(tlb.unlock(v), model.unlock(v));
            }
            prop_assert!(tlb.duplicates().is_empty());
        }
    }

    #[test]
    fn locked_entry_survives_any_pressure(extra in prop::collection::vec(0u32..40, 1..64)) {
        let g = TlbGeometry::default();
        let sets = g.l2_sets() as u32;
        let mut tlb = Tlb::new(&g);
        tlb.insert(3, 99);
        prop_assert!(tlb.lock(3));
        for k in extra {
            tlb.insert(3 + (k + 1) * sets, k);
        }
        prop_assert!(tlb.probe(3).is_hit());
    }

    #[test]
    fn modes_round_trip_through_text(wt in 1u32..8, pht in 0u32..3, mht in 0u32..3, kind in 0u8..3) {
        let m = match kind {
            0 => Mode::ideal(wt),
            1 => Mode::soa(wt),
            _ => Mode::vdma(wt, pht, mht),
        };
        prop_assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
    }
}
