//! Mechanism suites shared by the self-test and the acceptance run. Each
//! check returns a one-line summary on success and a diagnostic on failure.

use std::cell::Cell;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svmsim_lang::lower::DmaDir;

use crate::config::{DmaParams, Mode, Platform};
use crate::dma::{buffer_arithmetic, split, Burst, BufferArithmetic, DmaCommand, ReissueOrder, RetirementBuffer};
use crate::engine::{ProcKind, SimError, Time};
use crate::machine::{Access, Machine};
use crate::mem::{AddressSpace, PAGE_BYTES};
use crate::oracle::{check_split, RefRetirement, RefTlb};
use crate::run::read_virtual;
use crate::tlb::{Lookup, Tlb};

pub type CheckResult = Result<String, String>;

fn snapshot(rb: &RetirementBuffer) -> Vec<(u64, Burst, u8, crate::dma::RbState)> {
    rb.list()
        .into_iter()
        .map(|i| {
            let e = rb.entry(i);
            (e.serial, e.burst, e.axi, e.state)
        })
        .collect()
}

fn ref_snapshot(r: &RefRetirement) -> Vec<(u64, Burst, u8, crate::dma::RbState)> {
    r.records.iter().map(|x| (x.serial, x.burst, x.axi, x.state)).collect()
}

/// Random add/complete/peek/handled/reissue sequences against the list model.
pub fn rb_fuzz(sequences: usize, ops: usize, seed: u64, order: ReissueOrder) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reissues = 0u64;
    for seq in 0..sequences {
        let capacity = if seq % 4 == 0 { rng.random_range(1..=8) } else { 8 };
        let mut real = RetirementBuffer::new(capacity);
        real.order = order;
        let mut model = RefRetirement::new(capacity);
        let pages = rng.random_range(1..=4u32);
        for op in 0..ops {
            let what = rng.random_range(0..100);
            let step = match what {
                0..35 => {
                    let va = 0x10_0000 + rng.random_range(0..pages) * PAGE_BYTES + rng.random_range(0..64) * 64;
                    let b = Burst { va, local: op as u32 * 64, len: 64, dir: DmaDir::In, transfer: seq as u32 };
                    let axi = rng.random_range(0..4u8);
                    let got = real.add(b, axi).ok().map(|i| real.entry(i).serial);
                    let want = model.add(b, axi);
                    (got == want).then_some(()).ok_or(format!("add returned {got:?}, model {want:?}"))
                }
                35..65 => {
                    let live: Vec<u8> = model.records.iter().filter(|r| r.state == crate::dma::RbState::InFlight).map(|r| r.axi).collect();
                    let axi = if live.is_empty() || rng.random_ratio(1, 20) { rng.random_range(0..4) } else { live[rng.random_range(0..live.len())] };
                    let ok = rng.random_ratio(3, 5);
                    let got = real.complete(axi, ok).ok().map(|i| real.entry(i).serial);
                    let want = model.complete(axi, ok);
                    (got == want).then_some(()).ok_or(format!("response for id {axi} resolved {got:?}, model {want:?}"))
                }
                65..75 => {
                    let (got, want) = (real.read_failed(), model.read_failed());
                    (got == want).then_some(()).ok_or(format!("failed register read {got:#x}, model {want:#x}"))
                }
                75..85 => {
                    let va = 0x10_0000 + rng.random_range(0..pages + 1) * PAGE_BYTES;
                    let (got, want) = (real.write_handled(va), model.write_handled(va));
                    (got == want).then_some(()).ok_or(format!("handled write changed {got}, model {want}"))
                }
                _ => {
                    let got = real.next_reissue().map(|i| real.entry(i).serial);
                    let want = model.next_reissue();
                    if got != want {
                        let show = |s: Option<u64>| s.map_or("none".to_string(), |s| format!("burst {s}"));
                        Err(format!("order preservation: next reissue is {}, request order gives {}", show(got), show(want)))
                    } else {
                        if let (Some(i), Some(s)) = (real.next_reissue(), want) {
                            real.reissue(i).map_err(|e| e.to_string())?;
                            model.reissue(s);
                            reissues += 1;
                        }
                        Ok(())
                    }
                }
            };
            step.map_err(|e| format!("sequence {seq}, op {op}: {e}"))?;
            real.check().map_err(|e| format!("sequence {seq}, op {op}: {e}"))?;
            if snapshot(&real) != ref_snapshot(&model) {
                return Err(format!("sequence {seq}, op {op}: buffer state diverges from the list model"));
            }
            if (real.in_flight(), real.failed()) != (model.in_flight(), model.failed()) {
                return Err(format!("sequence {seq}, op {op}: counters diverge from the list model"));
            }
        }
    }
    Ok(format!("{sequences} sequences x {ops} ops, {reissues} reissues in request order"))
}

/// Lengths and offsets of the sampled split grid.
pub fn split_grid() -> (Vec<u32>, Vec<u32>) {
    let mut lens: Vec<u32> = (1..=16).chain((1..=8192).filter(|l| l % 97 == 0)).collect();
    for p in [64u32, 128, 2048, 4096, 8192] {
        lens.extend([p - 1, p, p + 1]);
    }
    lens.retain(|&l| (1..=8192).contains(&l));
    lens.sort_unstable();
    lens.dedup();
    let mut offs: Vec<u32> = (0..4096).step_by(41).collect();
    offs.extend([1, 7, 64, 2047, 2048, 2049, 0xF80, 4094, 4095]);
    offs.sort_unstable();
    offs.dedup();
    (lens, offs)
}

pub fn split_oracle(p: &DmaParams) -> CheckResult {
    let (lens, offs) = split_grid();
    let mut cases = 0u64;
    for &len in &lens {
        for &off in &offs {
            for page in [0x10u32, 0x7_ffff] {
                let cmd = DmaCommand { va: page * PAGE_BYTES + off, local: off & 0xff, len, dir: DmaDir::Out, pe: 0, transfer: 7 };
                let bursts = split(&cmd, p.max_burst, p.max_transfer).map_err(|e| e.to_string())?;
                check_split(&cmd, &bursts, p.max_burst).map_err(|e| format!("{len} bytes at {:#x}: {e}", cmd.va))?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} commands ({} lengths x {} offsets x 2 pages)", lens.len(), offs.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DedupOutcome {
    pub walks: u64,
    pub woken: u64,
    pub finished: usize,
    pub dedup_hits: u64,
    pub map_check_hits: u64,
    pub elapsed: Time,
}

/// `n` processes miss on one page, arriving `spacing` cycles apart, with
/// `mhts` miss handlers.
pub fn dedup(n: usize, mhts: u32, spacing: Time) -> Result<DedupOutcome, String> {
    let platform = Platform::default();
    let mut space = AddressSpace::new(&platform.mem);
    let va = space.alloc(PAGE_BYTES).map_err(|e| e.to_string())?;
    let m = Machine::new(platform, Mode::vdma(1, 0, mhts), space);
    m.start();
    let pids: Vec<_> = (0..n)
        .map(|k| {
            let mm = m.clone();
            m.sim.spawn(format!("waiter{k}"), ProcKind::Harness, false, async move {
                mm.sim.sleep(k as Time * spacing).await;
                mm.miss_and_wait(va.vpn(), Access::Read).await
            })
        })
        .collect();
    let run = m.sim.run(1 << 30);
    let finished = pids.iter().filter(|&&p| m.sim.finished_at(p).is_some()).count();
    let st = m.stats.borrow().clone();
    let hit = m.tlb.borrow().probe(va.vpn()).is_hit();
    m.sim.shutdown();
    let elapsed = run.map_err(|e| e.to_string())?;
    if !hit {
        return Err("page missing from the TLB after handling".into());
    }
    Ok(DedupOutcome { walks: st.walks, woken: st.wakes, finished, dedup_hits: st.dedup_hits, map_check_hits: st.map_check_hits, elapsed })
}

pub fn dedup_matrix() -> CheckResult {
    let mut scenarios = 0;
    for n in [2, 4, 8] {
        for m in [1, 2, 4] {
            for spacing in [0, 1, 3, 17, 400] {
                let o = dedup(n, m, spacing).map_err(|e| format!("N={n} M={m} spacing {spacing}: {e}"))?;
                if o.walks != 1 || o.woken != n as u64 || o.finished != n {
                    return Err(format!(
                        "N={n} M={m} spacing {spacing}: {} walks, {} of {n} waiters woken, {} finished",
                        o.walks, o.woken, o.finished
                    ));
                }
                scenarios += 1;
            }
        }
    }
    Ok(format!("{scenarios} scenarios, one walk each, every waiter woken"))
}

/// Replays a mixed access trace through the simulator TLB and the reference
/// model, comparing every lookup outcome, victim slot and lock result.
pub fn tlb_replay(accesses: usize, seed: u64) -> CheckResult {
    let platform = Platform::default();
    let g = platform.tlb;
    let mut tlb = Tlb::new(&g);
    let mut model = RefTlb::new(g.l1_entries, g.l2_entries, g.l2_ways);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets = g.l2_sets() as u32;
    let mut locked: Vec<u32> = Vec::new();
    let (mut misses, mut k, mut pattern, mut cursor) = (0u64, 0usize, 0u32, 0u32);
    while k < accesses {
        if k % 1000 == 0 {
            pattern = rng.random_range(0..5);
        }
        let vpn = match pattern {
            0 => {
                cursor = (cursor + 1) % 300;
                cursor
            }
            1 => rng.random_range(0..600),
            2 => rng.random_range(0..12) * sets + 5,
            3 => {
                cursor = (cursor + 1) % 40;
                cursor
            }
            _ => {
                if rng.random_ratio(4, 5) {
                    rng.random_range(0..24)
                } else {
                    rng.random_range(0..4000)
                }
            }
        };
        let got = tlb.lookup(vpn);
        let want = model.lookup(vpn);
        if got != want {
            return Err(format!("access {k} to page {vpn}: simulator {got:?}, model {want:?}"));
        }
        if got == Lookup::Miss {
            misses += 1;
            let ppn = vpn ^ 0x5a5a;
            let (s, r) = (tlb.insert(vpn, ppn), model.insert(vpn, ppn));
            if s != r {
                return Err(format!("access {k} to page {vpn}: simulator chose {s:?}, model {r:?}"));
            }
        } else if locked.len() < 6 && rng.random_ratio(1, 50) {
            if tlb.lock(vpn) != model.lock(vpn) {
                return Err(format!("access {k}: lock of page {vpn} disagrees"));
            }
            locked.push(vpn);
        }
        if !locked.is_empty() && rng.random_ratio(1, 60) {
            let v = locked.remove(0);
            if tlb.unlock(v) != model.unlock(v) {
                return Err(format!("access {k}: unlock of page {v} disagrees"));
            }
        }
        k += 1;
    }
    Ok(format!("{accesses} accesses, {misses} misses, decisions identical"))
}

pub fn memory_arithmetic(p: &DmaParams) -> Result<BufferArithmetic, String> {
    let a = buffer_arithmetic(p.max_in_flight, p.max_burst, p.axi_id_bits);
    if a.entry_bits > 64 {
        return Err(format!("a buffer entry needs {} bits, more than one word", a.entry_bits));
    }
    if a.metadata_bytes * a.factor != a.data_bytes {
        return Err(format!("{} B of data is not a whole multiple of {} B of metadata", a.data_bytes, a.metadata_bytes));
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntegrityOutcome {
    pub transfers: u64,
    pub bursts: u64,
    pub failed: u64,
    pub reissued: u64,
    pub recoveries: u64,
}

const REGION: u32 = 1 << 20;
const SLOT: u32 = 16 * 1024;

/// Random transfers in both directions while the TLB is made to miss on a
/// random share of DMA translations; every transfer is checked byte for
/// byte against a shadow copy of the region.
pub fn dma_integrity(transfers: usize, seed: u64, order: ReissueOrder) -> Result<IntegrityOutcome, String> {
    let platform = Platform::default();
    let mut space = AddressSpace::new(&platform.mem);
    let base = space.alloc(REGION).map_err(|e| e.to_string())?.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shadow = vec![0u8; REGION as usize];
    rng.fill(&mut shadow[..]);
    space.write(base, &shadow);
    let m = Machine::new(platform, Mode::vdma(1, 0, 2), space);
    m.dma.borrow_mut().rb.order = order;
    let miss_rate = Rc::new(Cell::new(0u32));
    {
        let rate = miss_rate.clone();
        let mut irng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        *m.inject.borrow_mut() = Some(Box::new(move |_| irng.random_range(0..100) < rate.get()));
    }
    m.start();
    let mm = m.clone();
    m.sim.spawn("host", ProcKind::Harness, false, async move {
        let mut done = 0usize;
        while done < transfers {
            miss_rate.set([0, 10, 30, 60][rng.random_range(0..4)]);
            let k = rng.random_range(1..=4).min(transfers - done);
            let mut batch: Vec<(DmaDir, u32, u32, u32)> = Vec::new();
            while batch.len() < k {
                let len = match rng.random_range(0..3) {
                    0 => rng.random_range(1..=256),
                    1 => rng.random_range(1..=4096),
                    _ => rng.random_range(1..=SLOT),
                };
                let off = rng.random_range(0..=REGION - len);
                if batch.iter().any(|&(_, _, o, l)| off < o + l && o < off + len) {
                    continue;
                }
                let dir = if rng.random_bool(0.5) { DmaDir::In } else { DmaDir::Out };
                let local = batch.len() as u32 * SLOT;
                batch.push((dir, local, off, len));
            }
            let mut ids = Vec::new();
            for (pe, &(dir, local, off, len)) in batch.iter().enumerate() {
                if dir == DmaDir::Out {
                    let r = mm.l1_range(local, len)?;
                    rng.fill(&mut mm.l1.borrow_mut()[r]);
                }
                ids.push(mm.dma_submit(pe, dir, local, base + off, len).await?);
            }
            for id in ids {
                mm.dma_wait(id).await;
            }
            for &(dir, local, off, len) in &batch {
                let r = mm.l1_range(local, len)?;
                let want = &mut shadow[off as usize..(off + len) as usize];
                match dir {
                    DmaDir::Out => {
                        want.copy_from_slice(&mm.l1.borrow()[r]);
                        let mut got = vec![0u8; len as usize];
                        read_virtual(&mm, base + off, &mut got);
                        if got != *want {
                            return Err(SimError::fault(format!("memory differs after writing {len} bytes at offset {off:#x}")));
                        }
                    }
                    DmaDir::In => {
                        if mm.l1.borrow()[r] != *want {
                            return Err(SimError::fault(format!("scratchpad differs after reading {len} bytes at offset {off:#x}")));
                        }
                    }
                }
            }
            done += batch.len();
        }
        let mut whole = vec![0u8; REGION as usize];
        read_virtual(&mm, base, &mut whole);
        if whole != shadow {
            return Err(SimError::fault("region differs from its shadow at the end"));
        }
        Ok(())
    });
    let run = m.sim.run(1 << 40);
    let st = m.stats.borrow().clone();
    m.sim.shutdown();
    if let Some(v) = st.order_violations.first() {
        return Err(v.clone());
    }
    run.map_err(|e| e.to_string())?;
    Ok(IntegrityOutcome {
        transfers: st.transfers,
        bursts: st.bursts_issued,
        failed: st.bursts_failed,
        reissued: st.bursts_reissued,
        recoveries: st.recoveries,
    })
}
