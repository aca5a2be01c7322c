//! Worker and helper threads: the kernel interpreter's host on a simulated PE.

use std::collections::BTreeMap;
use std::rc::Rc;

use svmsim_lang::interp::{transform_byte, Host, Interp};
use svmsim_lang::lower::{DmaDir, Lowered};
use svmsim_lang::window::{Decision, PrefetchWindow};
use svmsim_lang::ExecError;

use crate::config::ModeKind;
use crate::engine::{Pid, ProcKind, SimError};
use crate::machine::{Access, Machine, MissRecord, Waiter};
use crate::mem::{pages_of, VirtAddr, PAGE_SHIFT};
use crate::stats::Source;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Worker(usize),
    /// Helper `j` of `n`, serving the workers `k` with `k % n == j`.
    Helper(usize, usize),
}

struct HelperState {
    window: PrefetchWindow,
    served: Vec<usize>,
    positions: Vec<u64>,
    exhausted: Vec<bool>,
    rr: usize,
}

pub struct PeHost {
    m: Rc<Machine>,
    role: Role,
    pe: usize,
    workers: usize,
    lo: i64,
    /// Worker currently served by a helper.
    serving: usize,
    helper: Option<HelperState>,
    /// TLB entries locked for each outstanding lock-based transfer.
    locked: BTreeMap<u32, Vec<u32>>,
    /// Transfers not yet waited for.
    issued: Vec<u32>,
}

fn ex(e: SimError) -> ExecError {
    ExecError::new(e.to_string())
}

impl PeHost {
    pub fn new(m: Rc<Machine>, role: Role, pe: usize) -> Self {
        let workers = m.mode.wt as usize;
        let helper = match role {
            Role::Helper(j, n) => {
                let served: Vec<usize> = (0..workers).filter(|k| k % n == j).collect();
                let p = m.platform.pht;
                Some(HelperState {
                    window: PrefetchWindow::new(p.min_distance, p.max_distance),
                    positions: vec![0; served.len()],
                    exhausted: vec![false; served.len()],
                    served,
                    rr: 0,
                })
            }
            Role::Worker(_) => None,
        };
        Self { m, role, pe, workers, lo: 0, serving: 0, helper, locked: BTreeMap::new(), issued: Vec::new() }
    }

    fn source(&self) -> Source {
        Source::Pe(self.m.sim.current())
    }

    /// Translation for a load or store, blocking on misses.
    async fn resolve(&mut self, va: u32, kind: Access) -> Result<u32, SimError> {
        let vpn = va >> PAGE_SHIFT;
        loop {
            if let Some(ppn) = self.m.translate(vpn, false, self.source()).await {
                return Ok(VirtAddr(va).translate(ppn).0);
            }
            self.m.miss_and_wait(vpn, kind).await?;
        }
    }

    async fn svm_word(&mut self, va: u32, size: u8, store: Option<u64>) -> Result<u64, SimError> {
        if (va & 0xfff) + size as u32 > 0x1000 {
            return Err(SimError::fault(format!("unaligned access at {}", VirtAddr(va))));
        }
        let kind = if store.is_some() { Access::Write } else { Access::Read };
        let pa = self.resolve(va, kind).await?;
        self.m.dram_access(size as u32).await;
        let mut dram = self.m.dram.borrow_mut();
        match store {
            Some(v) => {
                dram.data.write_u(pa, size, v);
                Ok(0)
            }
            None => Ok(dram.data.read_u(pa, size)),
        }
    }

    /// Maps and locks every page of a lock-based transfer before it starts.
    async fn lock_span(&mut self, va: u32, len: u32) -> Result<Vec<u32>, SimError> {
        let m = self.m.clone();
        let sim = &m.sim;
        let lat = m.platform.latency;
        let mut locked = Vec::new();
        m.soa_lock.acquire(sim).await?;
        for vpn in pages_of(va, len) {
            loop {
                sim.work(m.platform.soa.lookup_cycles).await;
                if m.tlb.borrow().probe(vpn).is_hit() {
                    sim.work(lat.config_port).await;
                    if m.tlb.borrow_mut().lock(vpn) {
                        m.stats.borrow_mut().soa_locks += 1;
                        locked.push(vpn);
                        break;
                    }
                    continue;
                }
                m.soa_lock.release(sim)?;
                m.miss_and_wait(vpn, Access::Read).await?;
                m.soa_lock.acquire(sim).await?;
            }
        }
        m.soa_lock.release(sim)?;
        Ok(locked)
    }

    async fn unlock(&mut self, handles: Vec<u32>) -> Result<(), SimError> {
        let pages: Vec<u32> = handles.iter().filter_map(|h| self.locked.remove(h)).flatten().collect();
        if pages.is_empty() {
            return Ok(());
        }
        let m = self.m.clone();
        let sim = &m.sim;
        m.soa_lock.acquire(sim).await?;
        for vpn in pages {
            sim.work(m.platform.latency.config_port).await;
            if !m.tlb.borrow_mut().unlock(vpn) {
                return Err(SimError::fault(format!("unlock of page {vpn:#x} that is not locked")));
            }
            m.stats.borrow_mut().soa_unlocks += 1;
        }
        m.soa_lock.release(sim)
    }

    async fn wait_all(&mut self) -> Result<(), SimError> {
        for id in std::mem::take(&mut self.issued) {
            self.m.dma_wait(id).await;
        }
        let all: Vec<u32> = self.locked.keys().copied().collect();
        self.unlock(all).await
    }

    fn local_range(&self, addr: u32, len: u32) -> Result<std::ops::Range<usize>, ExecError> {
        self.m.l1_range(addr, len).map_err(ex)
    }
}

impl Host for PeHost {
    async fn svm_load(&mut self, va: u32, size: u8) -> Result<u64, ExecError> {
        self.svm_word(va, size, None).await.map_err(ex)
    }

    async fn svm_store(&mut self, va: u32, size: u8, value: u64) -> Result<(), ExecError> {
        if matches!(self.role, Role::Helper(..)) {
            return Err(ExecError::new("helper thread stores to shared memory"));
        }
        self.svm_word(va, size, Some(value)).await.map(|_| ()).map_err(ex)
    }

    async fn local_load(&mut self, addr: u32, size: u8) -> Result<u64, ExecError> {
        let r = self.local_range(addr, size as u32)?;
        self.m.sim.work(self.m.platform.latency.l1_access).await;
        let mut buf = [0u8; 8];
        buf[..size as usize].copy_from_slice(&self.m.l1.borrow()[r]);
        Ok(u64::from_le_bytes(buf))
    }

    async fn local_store(&mut self, addr: u32, size: u8, value: u64) -> Result<(), ExecError> {
        let r = self.local_range(addr, size as u32)?;
        self.m.sim.work(self.m.platform.latency.l1_access).await;
        self.m.l1.borrow_mut()[r].copy_from_slice(&value.to_le_bytes()[..size as usize]);
        Ok(())
    }

    fn frame(&mut self, bytes: u32) -> Result<u32, ExecError> {
        self.m.l1_alloc(bytes).map_err(ex)
    }

    async fn alu(&mut self, ops: u64) {
        self.m.sim.work(ops).await;
    }

    async fn dma(&mut self, dir: DmaDir, local: u32, va: u32, len: u32) -> Result<i64, ExecError> {
        let pages = if self.m.mode.kind == ModeKind::Soa { Some(self.lock_span(va, len).await.map_err(ex)?) } else { None };
        let id = self.m.dma_submit(self.pe, dir, local, va, len).await.map_err(ex)?;
        if let Some(p) = pages {
            self.locked.insert(id, p);
        }
        self.issued.push(id);
        Ok(id as i64)
    }

    async fn dma_wait(&mut self, handle: i64) -> Result<(), ExecError> {
        if handle == 0 {
            return Ok(());
        }
        let id = u32::try_from(handle).map_err(|_| ExecError::new(format!("bad transfer handle {handle}")))?;
        self.m.dma_wait(id).await;
        self.issued.retain(|&t| t != id);
        self.unlock(vec![id]).await.map_err(ex)
    }

    async fn dma_barrier(&mut self) -> Result<(), ExecError> {
        self.wait_all().await.map_err(ex)
    }

    async fn compute(&mut self, cycles: u64) {
        self.m.sim.work(cycles).await;
    }

    async fn transform(&mut self, dst: u32, src: u32, len: u32) -> Result<(), ExecError> {
        let s = self.local_range(src, len)?;
        let d = self.local_range(dst, len)?;
        self.m.sim.work(len.div_ceil(4) as u64).await;
        let mut l1 = self.m.l1.borrow_mut();
        let data: Vec<u8> = l1[s].iter().map(|&b| transform_byte(b)).collect();
        l1[d].copy_from_slice(&data);
        Ok(())
    }

    async fn prefetch(&mut self, va: u32, len: u32) -> Result<(), ExecError> {
        let m = self.m.clone();
        for vpn in pages_of(va, len.max(1)) {
            if m.translate(vpn, true, self.source()).await.is_some() {
                m.stats.borrow_mut().prefetch_hits += 1;
                continue;
            }
            m.stats.borrow_mut().prefetch_misses += 1;
            let me = m.sim.current();
            m.enqueue(MissRecord { vpn, waiter: Waiter::Pe(me), kind: Access::Prefetch, at: m.sim.now() }).await.map_err(ex)?;
        }
        Ok(())
    }

    async fn progress(&mut self, index: i64) -> Result<(), ExecError> {
        let Role::Worker(k) = self.role else { return Ok(()) };
        let pos = ((index - self.lo - k as i64) / self.workers as i64).max(0) as u64;
        self.m.sim.work(self.m.platform.latency.l1_access).await;
        self.m.progress.borrow_mut()[k] = pos;
        for &p in self.m.pht_pids.borrow().iter() {
            self.m.sim.post(p);
        }
        Ok(())
    }

    fn wt_id(&self) -> i64 {
        match self.role {
            Role::Worker(k) => k as i64,
            Role::Helper(..) => self.serving as i64,
        }
    }

    fn wt_count(&self) -> i64 {
        self.workers as i64
    }

    fn parallel_share(&mut self, lo: i64, _hi: i64) -> (i64, i64) {
        self.lo = lo;
        (lo + self.wt_id(), self.workers as i64)
    }

    async fn parallel_done(&mut self, lo: i64, hi: i64) -> Result<(), ExecError> {
        if let Role::Worker(k) = self.role {
            // Past the last iteration: the helper has nothing left to do for us.
            let count = iterations(lo, hi, k, self.workers);
            self.m.progress.borrow_mut()[k] = count + self.m.platform.pht.max_distance + 1;
            for &p in self.m.pht_pids.borrow().iter() {
                self.m.sim.post(p);
            }
        }
        if !self.locked.is_empty() || !self.issued.is_empty() {
            self.wait_all().await.map_err(ex)?;
        }
        Ok(())
    }

    async fn window_next(&mut self, lo: i64, hi: i64) -> Result<Option<i64>, ExecError> {
        self.lo = lo;
        let m = self.m.clone();
        let l1 = m.platform.latency.l1_access;
        let workers = self.workers;
        let h = self.helper.as_mut().ok_or_else(|| ExecError::new("window loop outside a helper thread"))?;
        let n = h.served.len();
        loop {
            for _ in 0..n {
                let s = h.rr;
                h.rr = (h.rr + 1) % n;
                if h.exhausted[s] {
                    continue;
                }
                let k = h.served[s];
                m.sim.work(l1).await;
                let w = m.progress.borrow()[k];
                let count = iterations(lo, hi, k, workers);
                let before = h.positions[s];
                match h.window.decide(w, &mut h.positions[s]) {
                    Decision::Prefetch(at) if at < count => {
                        m.stats.borrow_mut().prefetch_late += at - before.min(at);
                        self.serving = k;
                        return Ok(Some(lo + k as i64 + at as i64 * workers as i64));
                    }
                    Decision::Prefetch(_) => h.exhausted[s] = true,
                    Decision::Skip => {}
                }
            }
            if h.exhausted.iter().all(|&e| e) {
                return Ok(None);
            }
            m.sim.wait_event().await;
        }
    }
}

/// Iterations of `lo..hi` run by worker `k` of `w` under cyclic distribution.
pub fn iterations(lo: i64, hi: i64, k: usize, w: usize) -> u64 {
    let first = lo + k as i64;
    if first >= hi {
        0
    } else {
        ((hi - first) as u64).div_ceil(w as u64)
    }
}

/// Spawns one kernel interpreter on PE `pe`.
pub fn spawn_kernel(m: &Rc<Machine>, role: Role, pe: usize, prog: Rc<Lowered>, args: Vec<i64>) -> Pid {
    let (name, kind, daemon) = match role {
        Role::Worker(k) => (format!("wt{k}"), ProcKind::Wt, false),
        Role::Helper(j, _) => (format!("pht{j}"), ProcKind::Pht, true),
    };
    let host = PeHost::new(m.clone(), role, pe);
    let label = name.clone();
    let pid = m.sim.spawn(name, kind, daemon, async move {
        let mut it = Interp::new(&prog, host);
        it.run(&args).await.map_err(|e| SimError::Fault(format!("{label}: {e}")))
    });
    if matches!(role, Role::Helper(..)) {
        m.pht_pids.borrow_mut().push(pid);
    }
    pid
}
