//! The simulated cluster: IOMMU datapath, DRAM port, scratchpad, miss queue
//! and the miss-handling threads.

use std::cell::{Cell, RefCell};
use std::collections::VecDeque;
use std::rc::{Rc, Weak};

use crate::config::{Mode, ModeKind, Platform};
use crate::dmac::DmaEngine;
use crate::engine::{Pid, ProcKind, Sim, SimError, SimMutex, Time};
use crate::mem::{AddressSpace, Dram, PageTable, PAGE_SHIFT};
use crate::stats::{Source, Stats, TransRecord, WalkRecord};
use crate::tlb::{Level, Lookup, Slot, Tlb};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Read,
    Write,
    Prefetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Waiter {
    Pe(Pid),
    /// A failed DMA burst; the value is the address read from the failed register.
    Dma(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MissRecord {
    pub vpn: u32,
    pub waiter: Waiter,
    pub kind: Access,
    pub at: Time,
}

/// Bounded ring in L1 with one enqueue and one dequeue mutex.
pub struct MissQueue {
    ring: RefCell<VecDeque<MissRecord>>,
    capacity: usize,
    enq: SimMutex,
    deq: SimMutex,
    idle: RefCell<VecDeque<Pid>>,
    space_waiters: RefCell<VecDeque<Pid>>,
    /// Every record in dequeue order, when enabled.
    pub log: RefCell<Option<Vec<MissRecord>>>,
}

impl MissQueue {
    fn new(capacity: usize) -> Self {
        Self {
            ring: RefCell::new(VecDeque::new()),
            capacity,
            enq: SimMutex::new("missq.enq"),
            deq: SimMutex::new("missq.deq"),
            idle: RefCell::new(VecDeque::new()),
            space_waiters: RefCell::new(VecDeque::new()),
            log: RefCell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.ring.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.borrow().is_empty()
    }
}

struct MhtSlot {
    state: Cell<Option<u32>>,
    wake_list: RefCell<Vec<MissRecord>>,
    lock: SimMutex,
}

/// Forces chosen DMA translations to miss.
pub type Injector = Box<dyn FnMut(u32) -> bool>;

pub struct Machine {
    me: Weak<Machine>,
    pub sim: Sim,
    pub platform: Platform,
    pub mode: Mode,
    pub tlb: RefCell<Tlb>,
    pub page_table: PageTable,
    pub dram: RefCell<Dram>,
    pub l1: RefCell<Vec<u8>>,
    l1_top: Cell<u32>,
    iommu_free: Cell<Time>,
    pub missq: MissQueue,
    mhts: Vec<MhtSlot>,
    claim: SimMutex,
    entry_locks: Vec<SimMutex>,
    pub dma: RefCell<DmaEngine>,
    pub dma_pid: Cell<Option<Pid>>,
    pub soa_lock: SimMutex,
    pub stats: RefCell<Stats>,
    pending: RefCell<Vec<bool>>,
    /// Loop position of each worker, as published by its progress stores.
    pub progress: RefCell<Vec<u64>>,
    pub pht_pids: RefCell<Vec<Pid>>,
    pub inject: RefCell<Option<Injector>>,
}

impl Machine {
    pub fn new(platform: Platform, mode: Mode, space: AddressSpace) -> Rc<Self> {
        let lat = platform.latency;
        let sim = Sim::new(lat.wake, lat.l1_access);
        let handlers = mode.handlers() as usize;
        let mhts = (0..handlers)
            .map(|i| MhtSlot { state: Cell::new(None), wake_list: RefCell::new(Vec::new()), lock: SimMutex::new(format!("mht{i}.lock")) })
            .collect();
        let entry_locks = (0..platform.tlb.l2_entries).map(|i| SimMutex::new(format!("tlb.entry{i}"))).collect();
        Rc::new_cyclic(|me| Self {
            me: me.clone(),
            tlb: RefCell::new(Tlb::new(&platform.tlb)),
            page_table: space.page_table,
            dram: RefCell::new(Dram::new(space.phys, &lat)),
            l1: RefCell::new(vec![0; platform.cluster.l1_bytes as usize]),
            l1_top: Cell::new(0),
            iommu_free: Cell::new(0),
            missq: MissQueue::new(platform.miss.queue_capacity),
            mhts,
            claim: SimMutex::new("mht.claim"),
            entry_locks,
            dma: RefCell::new(DmaEngine::new(&platform.dma, platform.cluster.pes as usize)),
            dma_pid: Cell::new(None),
            soa_lock: SimMutex::new("soa.tlb"),
            stats: RefCell::new(Stats::default()),
            pending: RefCell::new(Vec::new()),
            progress: RefCell::new(vec![0; mode.wt as usize]),
            pht_pids: RefCell::new(Vec::new()),
            inject: RefCell::new(None),
            sim,
            platform,
            mode,
        })
    }

    pub(crate) fn self_rc(&self) -> Rc<Self> {
        self.me.upgrade().expect("machine alive")
    }

    /// Starts the DMA control loop and the miss handlers.
    pub fn start(self: &Rc<Self>) {
        let m = self.clone();
        let pid = self.sim.spawn("dma", ProcKind::DmaControl, true, async move { m.dma_control().await });
        self.dma_pid.set(Some(pid));
        if self.mode.kind != ModeKind::Ideal {
            for i in 0..self.mhts.len() {
                let m = self.clone();
                self.sim.spawn(format!("mht{i}"), ProcKind::Mht, true, async move { m.mht_loop(i).await });
            }
        }
    }

    pub fn trace_translations(&self) {
        self.stats.borrow_mut().translations = Some(Vec::new());
    }

    /// Reserves scratchpad bytes, 8-aligned.
    pub fn l1_alloc(&self, bytes: u32) -> Result<u32, SimError> {
        let base = self.l1_top.get().next_multiple_of(8);
        let end = base as u64 + bytes as u64;
        if end > self.platform.cluster.l1_bytes as u64 {
            return Err(SimError::fault(format!("scratchpad exhausted allocating {bytes} bytes")));
        }
        self.l1_top.set(end as u32);
        Ok(base)
    }

    pub fn l1_range(&self, addr: u32, len: u32) -> Result<std::ops::Range<usize>, SimError> {
        let end = addr as u64 + len as u64;
        if end > self.l1.borrow().len() as u64 {
            return Err(SimError::fault(format!("scratchpad access {addr:#x}+{len} out of range")));
        }
        Ok(addr as usize..end as usize)
    }

    /// One IOMMU transaction issued now: the translation outcome and the
    /// delay until it is known. The datapath accepts one transaction per cycle.
    pub fn lookup(&self, vpn: u32, prefetch: bool, source: Source) -> (Option<u32>, Time) {
        let now = self.sim.now();
        let (ppn, delay, level) = if self.mode.kind == ModeKind::Ideal {
            (self.page_table.walk(vpn), self.platform.latency.tlb_l1_lookup, Some(1))
        } else {
            let start = now.max(self.iommu_free.get());
            self.iommu_free.set(start + 1);
            let mut r = self.tlb.borrow_mut().lookup(vpn);
            if source == Source::Dma && r.is_hit() {
                if let Some(f) = self.inject.borrow_mut().as_mut() {
                    if f(vpn) {
                        r = Lookup::Miss;
                    }
                }
            }
            let delay = start - now + Tlb::latency(r, &self.platform.latency);
            match r {
                Lookup::Hit { ppn, level } => (Some(ppn), delay, Some(if level == Level::L1 { 1 } else { 2 })),
                Lookup::Miss => (None, delay, None),
            }
        };
        if let Some(t) = self.stats.borrow_mut().translations.as_mut() {
            t.push(TransRecord { time: now, va: vpn << PAGE_SHIFT, source, prefetch, level });
        }
        (ppn, delay)
    }

    /// Translates from a process, waiting out the lookup latency.
    pub async fn translate(&self, vpn: u32, prefetch: bool, source: Source) -> Option<u32> {
        let (ppn, delay) = self.lookup(vpn, prefetch, source);
        self.sim.sleep(delay).await;
        ppn
    }

    /// Timed access to `bytes` of DRAM through the shared port.
    pub async fn dram_access(&self, bytes: u32) {
        let now = self.sim.now();
        let done = self.dram.borrow_mut().request(now, bytes);
        self.sim.sleep(done - now).await;
    }

    fn set_pending(&self, pid: Pid, v: bool) {
        let mut p = self.pending.borrow_mut();
        if p.len() <= pid {
            p.resize(pid + 1, false);
        }
        p[pid] = v;
    }

    fn is_pending(&self, pid: Pid) -> bool {
        self.pending.borrow().get(pid).copied().unwrap_or(false)
    }

    /// Reports a miss on `vpn` for the current process and blocks until a
    /// handler resolves it.
    pub async fn miss_and_wait(&self, vpn: u32, kind: Access) -> Result<(), SimError> {
        let me = self.sim.current();
        self.stats.borrow_mut().misses += 1;
        self.set_pending(me, true);
        self.enqueue(MissRecord { vpn, waiter: Waiter::Pe(me), kind, at: self.sim.now() }).await?;
        while self.is_pending(me) {
            self.sim.wait_event().await;
        }
        Ok(())
    }

    pub async fn enqueue(&self, r: MissRecord) -> Result<(), SimError> {
        let sim = &self.sim;
        let q = &self.missq;
        let l1 = self.platform.latency.l1_access;
        let me = sim.current();
        loop {
            q.enq.acquire(sim).await?;
            if q.ring.borrow().len() < q.capacity {
                // Record and tail pointer.
                sim.work(2 * l1).await;
                q.ring.borrow_mut().push_back(r);
                q.enq.release(sim)?;
                let idle = q.idle.borrow_mut().pop_front();
                if let Some(h) = idle {
                    sim.work(l1).await;
                    sim.post(h);
                }
                return Ok(());
            }
            q.enq.release(sim)?;
            self.stats.borrow_mut().backpressure += 1;
            while q.ring.borrow().len() >= q.capacity {
                if !q.space_waiters.borrow().contains(&me) {
                    q.space_waiters.borrow_mut().push_back(me);
                }
                sim.wait_event().await;
            }
        }
    }

    async fn dequeue(&self) -> Result<MissRecord, SimError> {
        let sim = &self.sim;
        let q = &self.missq;
        let l1 = self.platform.latency.l1_access;
        let me = sim.current();
        loop {
            q.deq.acquire(sim).await?;
            let r = q.ring.borrow_mut().pop_front();
            if let Some(r) = r {
                sim.work(2 * l1).await;
                q.deq.release(sim)?;
                if let Some(log) = q.log.borrow_mut().as_mut() {
                    log.push(r);
                }
                let w = q.space_waiters.borrow_mut().pop_front();
                if let Some(w) = w {
                    sim.post(w);
                }
                return Ok(r);
            }
            q.deq.release(sim)?;
            q.idle.borrow_mut().push_back(me);
            while q.ring.borrow().is_empty() {
                sim.wait_event().await;
            }
            q.idle.borrow_mut().retain(|&p| p != me);
        }
    }

    /// Service loop of miss handler `id`.
    async fn mht_loop(self: Rc<Self>, id: usize) -> Result<(), SimError> {
        let sim = &self.sim;
        let l1 = self.platform.latency.l1_access;
        let n = self.mhts.len() as u64;
        loop {
            let r = self.dequeue().await?;
            // Checking the peers and publishing our own state happen under one
            // lock, so two handlers never walk the same page concurrently.
            self.claim.acquire(sim).await?;
            sim.work(l1 * n).await;
            let peer = (0..self.mhts.len()).find(|&j| j != id && self.mhts[j].state.get() == Some(r.vpn));
            let mut joined = false;
            if let Some(j) = peer {
                let p = &self.mhts[j];
                p.lock.acquire(sim).await?;
                if p.state.get() == Some(r.vpn) {
                    sim.work(l1).await;
                    p.wake_list.borrow_mut().push(r);
                    joined = true;
                }
                p.lock.release(sim)?;
            }
            if joined {
                self.claim.release(sim)?;
                self.stats.borrow_mut().dedup_hits += 1;
                continue;
            }
            let me = &self.mhts[id];
            me.state.set(Some(r.vpn));
            sim.work(l1).await;
            self.claim.release(sim)?;

            // Map check: the page may have been inserted since the miss.
            if self.translate(r.vpn, true, Source::Pe(sim.current())).await.is_some() {
                self.stats.borrow_mut().map_check_hits += 1;
            } else {
                let start = sim.now();
                let ppn = self.walk(r.vpn).await?;
                {
                    let mut st = self.stats.borrow_mut();
                    st.walks += 1;
                    *st.walks_per_vpn.entry(r.vpn).or_default() += 1;
                    st.walk_log.push(WalkRecord { mht: id, vpn: r.vpn, start, end: sim.now() });
                }
                self.insert(r.vpn, ppn).await?;
            }

            me.lock.acquire(sim).await?;
            let list = std::mem::take(&mut *me.wake_list.borrow_mut());
            me.state.set(None);
            sim.work(l1).await;
            me.lock.release(sim)?;
            self.wake(r).await;
            for w in list {
                self.wake(w).await;
            }
        }
    }

    /// Software page-table walk: one dependent DRAM word per level.
    pub async fn walk(&self, vpn: u32) -> Result<u32, SimError> {
        for _ in 0..self.page_table.levels {
            self.dram_access(4).await;
        }
        self.page_table.walk(vpn).ok_or_else(|| SimError::fault(format!("walk of unmapped page {vpn:#x}")))
    }

    /// Writes a new L2 entry through the configuration port.
    pub async fn insert(&self, vpn: u32, ppn: u32) -> Result<Slot, SimError> {
        let sim = &self.sim;
        let lat = self.platform.latency;
        let slot = loop {
            // Atomic fetch-and-increment of the set counter; locked ways cost
            // one more increment each.
            let (slot, tries) = self.tlb.borrow_mut().next_victim(vpn);
            sim.work(lat.l1_access * tries.max(1) as u64).await;
            let Some(slot) = slot else {
                sim.sleep(lat.tlb_l2_lookup + lat.config_port).await;
                continue;
            };
            let lock = &self.entry_locks[slot.set * self.tlb.borrow().ways() + slot.way];
            lock.acquire(sim).await?;
            // A transfer may have locked the victim since it was chosen.
            if self.tlb.borrow().l2_entry(slot).locks > 0 {
                lock.release(sim)?;
                continue;
            }
            self.tlb.borrow_mut().write_vpn(slot, vpn);
            sim.work(lat.config_port).await;
            sim.work(lat.config_port).await;
            self.tlb.borrow_mut().write_ppn(slot, ppn);
            lock.release(sim)?;
            break slot;
        };
        self.stats.borrow_mut().tlb_inserts += 1;
        let dups = self.tlb.borrow().duplicates();
        if !dups.is_empty() {
            return Err(SimError::fault(format!("duplicate TLB entries for pages {dups:x?}")));
        }
        Ok(slot)
    }

    async fn wake(&self, r: MissRecord) {
        let sim = &self.sim;
        if r.kind == Access::Prefetch {
            return;
        }
        match r.waiter {
            Waiter::Pe(pid) => {
                sim.work(self.platform.latency.l1_access).await;
                self.set_pending(pid, false);
                sim.post(pid);
            }
            Waiter::Dma(va) => {
                sim.work(self.platform.latency.config_port).await;
                self.dma.borrow_mut().rb.write_handled(va);
                self.stats.borrow_mut().handled_writes += 1;
                if let Some(d) = self.dma_pid.get() {
                    sim.post(d);
                }
            }
        }
        let mut st = self.stats.borrow_mut();
        st.wakes += 1;
        st.miss_latency.push(sim.now() - r.at);
    }
}
