//! Page-table walks, the miss queue and the miss handlers.

use std::cell::RefCell;
use std::rc::Rc;

use svmsim_core::checks::dedup;
use svmsim_core::config::{Mode, Platform};
use svmsim_core::engine::{ProcKind, SimError, Time};
use svmsim_core::machine::{Access, Machine, MissRecord, Waiter};
use svmsim_core::mem::{AddressSpace, PAGE_BYTES};
use svmsim_core::stats::Source;

/// Handlers are daemons, so a run ends with the last harness process; this
/// one keeps the run going while queued records drain.
fn keep_alive(m: &Rc<Machine>, cycles: Time) {
    let mm = m.clone();
    m.sim.spawn("keepalive", ProcKind::Harness, false, async move {
        mm.sim.sleep(cycles).await;
        Ok(())
    });
}

fn machine(pages: u32, mode: Mode) -> (Rc<Machine>, u32) {
    let platform = Platform::default();
    let mut space = AddressSpace::new(&platform.mem);
    let base = space.alloc(pages * PAGE_BYTES).unwrap().0 >> 12;
    (Machine::new(platform, mode, space), base)
}

/// Each process misses once on its page, all at t=0. Returns the finish
/// time of every process.
fn miss_on(m: &Rc<Machine>, vpns: &[u32]) -> Vec<Time> {
    m.start();
    let pids: Vec<_> = vpns
        .iter()
        .enumerate()
        .map(|(k, &vpn)| {
            let mm = m.clone();
            m.sim.spawn(format!("wt{k}"), ProcKind::Harness, false, async move { mm.miss_and_wait(vpn, Access::Read).await })
        })
        .collect();
    m.sim.run(1 << 30).unwrap();
    pids.iter().map(|&p| m.sim.finished_at(p).unwrap()).collect()
}

#[test]
fn walk_costs_one_dram_access_per_level() {
    let (m, vpn) = machine(1, Mode::vdma(1, 0, 1));
    let out = Rc::new(RefCell::new(None));
    let (mm, o) = (m.clone(), out.clone());
    m.sim.spawn("walker", ProcKind::Harness, false, async move {
        let ppn = mm.walk(vpn).await?;
        *o.borrow_mut() = Some((ppn, mm.sim.now()));
        Ok(())
    });
    m.sim.run(10_000).unwrap();
    let (ppn, t) = out.borrow().unwrap();
    assert_eq!(Some(ppn), m.page_table.walk(vpn));
    assert_eq!(t, 3 * 100);
    m.sim.shutdown();
}

#[test]
fn walk_of_unmapped_page_faults() {
    let (m, vpn) = machine(1, Mode::vdma(1, 0, 1));
    let mm = m.clone();
    m.sim.spawn("walker", ProcKind::Harness, false, async move { mm.walk(vpn + 7).await.map(|_| ()) });
    let e = m.sim.run(10_000).unwrap_err();
    assert!(matches!(e, SimError::Fault(ref s) if s.contains("unmapped")), "{e}");
    m.sim.shutdown();
}

#[test]
fn walks_on_two_handlers_overlap() {
    let (m1, b1) = machine(2, Mode::vdma(1, 0, 1));
    let single = miss_on(&m1, &[b1])[0];
    m1.sim.shutdown();
    let (m2, b2) = machine(2, Mode::vdma(1, 0, 2));
    let both = *miss_on(&m2, &[b2, b2 + 1]).iter().max().unwrap();
    let log = m2.stats.borrow().walk_log.clone();
    m2.sim.shutdown();
    assert_eq!(log.len(), 2);
    assert_ne!(log[0].mht, log[1].mht);
    assert!(log[0].start < log[1].end && log[1].start < log[0].end, "{log:?}");
    assert!(both < 2 * single, "two walks took {both}, one took {single}");
}

#[test]
fn six_misses_on_two_handlers_take_three_walks_each() {
    let (m1, b1) = machine(1, Mode::vdma(1, 0, 1));
    let single = miss_on(&m1, &[b1])[0];
    m1.sim.shutdown();
    let (m, base) = machine(6, Mode::vdma(6, 0, 2));
    let vpns: Vec<u32> = (0..6).map(|k| base + k).collect();
    let elapsed = *miss_on(&m, &vpns).iter().max().unwrap();
    let st = m.stats.borrow().clone();
    m.sim.shutdown();
    assert_eq!(st.walks, 6);
    for h in 0..2 {
        let mine: Vec<_> = st.walk_log.iter().filter(|w| w.mht == h).collect();
        assert_eq!(mine.len(), 3, "handler {h}");
        assert!(mine.windows(2).all(|w| w[0].end <= w[1].start), "handler {h} walks overlap");
    }
    // Three handling rounds per handler, the two handlers side by side.
    assert!(elapsed >= 3 * 300, "{elapsed}");
    assert!(elapsed <= 3 * single + 50, "{elapsed} vs single miss {single}");
}

#[test]
fn map_check_skips_the_walk_for_an_inserted_page() {
    let o = dedup(1, 1, 0).unwrap();
    assert_eq!((o.walks, o.map_check_hits), (1, 0));
    let (m, vpn) = machine(1, Mode::vdma(1, 0, 1));
    let ppn = m.page_table.walk(vpn).unwrap();
    m.tlb.borrow_mut().insert(vpn, ppn);
    miss_on(&m, &[vpn]);
    let st = m.stats.borrow().clone();
    m.sim.shutdown();
    assert_eq!((st.walks, st.map_check_hits, st.wakes), (0, 1, 1));
}

#[test]
fn full_queue_blocks_until_a_handler_takes_a_record() {
    let (m, base) = machine(65, Mode::vdma(1, 0, 1));
    let cap = m.platform.miss.queue_capacity as u32;
    let times = Rc::new(RefCell::new(Vec::new()));
    let (mm, t) = (m.clone(), times.clone());
    m.sim.spawn("producer", ProcKind::Harness, false, async move {
        let me = mm.sim.current();
        for k in 0..=cap {
            let r = MissRecord { vpn: base + k, waiter: Waiter::Pe(me), kind: Access::Prefetch, at: mm.sim.now() };
            mm.enqueue(r).await?;
            t.borrow_mut().push(mm.sim.now());
        }
        Ok(())
    });
    // Handlers come up late, so the first `cap` records fill the ring.
    let mm = m.clone();
    m.sim.spawn("late-start", ProcKind::Harness, false, async move {
        mm.sim.sleep(5_000).await;
        mm.start();
        Ok(())
    });
    keep_alive(&m, 200_000);
    m.sim.run(1 << 30).unwrap();
    let t = times.borrow().clone();
    assert_eq!(t.len(), cap as usize + 1);
    assert!(t[cap as usize - 1] < 5_000);
    assert!(t[cap as usize] > 5_000);
    let st = m.stats.borrow().clone();
    m.sim.shutdown();
    assert_eq!(st.backpressure, 1);
    // Prefetch records are handled but never woken.
    assert_eq!((st.walks, st.wakes), (cap as u64 + 1, 0));
}

#[test]
fn concurrent_producers_keep_their_own_order() {
    let (m, base) = machine(60, Mode::vdma(6, 0, 2));
    *m.missq.log.borrow_mut() = Some(Vec::new());
    m.start();
    for p in 0..6u32 {
        let mm = m.clone();
        m.sim.spawn(format!("wt{p}"), ProcKind::Harness, false, async move {
            let me = mm.sim.current();
            for s in 0..10 {
                let r = MissRecord { vpn: base + p * 10 + s, waiter: Waiter::Pe(me), kind: Access::Prefetch, at: mm.sim.now() };
                mm.enqueue(r).await?;
                mm.sim.sleep(s as Time % 3).await;
            }
            Ok(())
        });
    }
    keep_alive(&m, 200_000);
    m.sim.run(1 << 30).unwrap();
    let log = m.missq.log.borrow_mut().take().unwrap();
    m.sim.shutdown();
    let mut vpns: Vec<u32> = log.iter().map(|r| r.vpn - base).collect();
    for p in 0..6 {
        let mine: Vec<u32> = vpns.iter().copied().filter(|v| v / 10 == p).collect();
        assert_eq!(mine, (p * 10..p * 10 + 10).collect::<Vec<_>>(), "producer {p}");
    }
    vpns.sort_unstable();
    assert_eq!(vpns, (0..60).collect::<Vec<_>>());
}

#[test]
fn prefetch_hit_costs_only_the_lookup() {
    let (m, vpn) = machine(1, Mode::vdma(1, 0, 1));
    let ppn = m.page_table.walk(vpn).unwrap();
    m.tlb.borrow_mut().insert(vpn, ppn);
    let (mm, out) = (m.clone(), Rc::new(RefCell::new(None)));
    let o = out.clone();
    m.sim.spawn("pht", ProcKind::Harness, false, async move {
        let r = mm.translate(vpn, true, Source::Pe(0)).await;
        *o.borrow_mut() = Some((r, mm.sim.now()));
        Ok(())
    });
    m.sim.run(1000).unwrap();
    let lat = m.platform.latency;
    assert_eq!(*out.borrow(), Some((Some(ppn), lat.tlb_l2_lookup)));
    assert_eq!(m.dram.borrow().bytes_moved, 0);
    m.sim.shutdown();
}

#[test]
fn woken_worker_hits_on_retry() {
    let (m, vpn) = machine(1, Mode::vdma(1, 0, 1));
    m.start();
    let (mm, out) = (m.clone(), Rc::new(RefCell::new(Vec::new())));
    let o = out.clone();
    m.sim.spawn("wt0", ProcKind::Harness, false, async move {
        loop {
            let r = mm.translate(vpn, false, Source::Pe(0)).await;
            o.borrow_mut().push(r.is_some());
            if r.is_some() {
                return Ok(());
            }
            mm.miss_and_wait(vpn, Access::Read).await?;
        }
    });
    m.sim.run(1 << 20).unwrap();
    assert_eq!(*out.borrow(), [false, true]);
    m.sim.shutdown();
}
