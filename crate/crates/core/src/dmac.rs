//! DMA control unit: command arbitration, burst issue through the IOMMU,
//! and drain-then-reissue recovery from translation misses.

use std::collections::{HashMap, VecDeque};
use std::rc::Rc;

use svmsim_lang::lower::DmaDir;

use crate::config::{DmaParams, ModeKind};
use crate::dma::{split, AxiIds, Burst, DmaCommand, RbState, RetirementBuffer};
use crate::engine::{Pid, SimError, Time};
use crate::machine::{Access, Machine, MissRecord, Waiter};
use crate::mem::{VirtAddr, PAGE_SHIFT};
use crate::stats::Source;

#[derive(Debug, Clone)]
pub struct Transfer {
    pub pid: Pid,
    pub remaining: usize,
    pub done: bool,
    pub issued_at: Time,
}

pub struct DmaEngine {
    queues: Vec<VecDeque<DmaCommand>>,
    rr: usize,
    current: VecDeque<Burst>,
    pub rb: RetirementBuffer,
    ids: AxiIds,
    axi_last: Vec<Time>,
    transfers: HashMap<u32, Transfer>,
    next_transfer: u32,
    max_burst: u32,
    max_transfer: u32,
    /// Serials reissued since the last drain.
    episode: Vec<u64>,
}

impl DmaEngine {
    pub fn new(p: &DmaParams, pes: usize) -> Self {
        Self {
            queues: vec![VecDeque::new(); pes.max(1)],
            rr: 0,
            current: VecDeque::new(),
            rb: RetirementBuffer::new(p.max_in_flight),
            ids: AxiIds::new(p.axi_id_bits),
            axi_last: vec![0; 1 << p.axi_id_bits],
            transfers: HashMap::new(),
            next_transfer: 1,
            max_burst: p.max_burst,
            max_transfer: p.max_transfer,
            episode: Vec::new(),
        }
    }

    pub fn transfer(&self, id: u32) -> Option<&Transfer> {
        self.transfers.get(&id)
    }

    pub fn outstanding(&self) -> usize {
        self.transfers.values().filter(|t| !t.done).count()
    }

    /// Next burst to issue, pulling a command round-robin over the PE
    /// interfaces when the current one is exhausted.
    fn next_burst(&mut self) -> Option<Burst> {
        if self.current.is_empty() {
            let n = self.queues.len();
            for k in 0..n {
                let q = (self.rr + k) % n;
                if let Some(cmd) = self.queues[q].pop_front() {
                    self.rr = (q + 1) % n;
                    // Commands were validated at submission.
                    self.current.extend(split(&cmd, self.max_burst, self.max_transfer).expect("validated command"));
                    break;
                }
            }
        }
        self.current.front().copied()
    }
}

fn access_of(dir: DmaDir) -> Access {
    match dir {
        DmaDir::In => Access::Read,
        DmaDir::Out => Access::Write,
    }
}

impl Machine {
    /// Writes a command to the interface of PE `pe`; returns the transfer id.
    pub async fn dma_submit(&self, pe: usize, dir: DmaDir, local: u32, va: u32, len: u32) -> Result<u32, SimError> {
        let sim = &self.sim;
        sim.work(self.platform.dma.command_cycles).await;
        self.l1_range(local, len)?;
        let id = {
            let mut d = self.dma.borrow_mut();
            let id = d.next_transfer;
            let cmd = DmaCommand { va, local, len, dir, pe, transfer: id };
            let bursts = split(&cmd, d.max_burst, d.max_transfer).map_err(|e| SimError::fault(e.to_string()))?;
            d.next_transfer += 1;
            d.transfers.insert(id, Transfer { pid: sim.current(), remaining: bursts.len(), done: false, issued_at: sim.now() });
            let q = pe.min(d.queues.len() - 1);
            d.queues[q].push_back(cmd);
            id
        };
        self.stats.borrow_mut().transfers += 1;
        if let Some(p) = self.dma_pid.get() {
            sim.post(p);
        }
        Ok(id)
    }

    pub fn transfer_done(&self, id: u32) -> bool {
        self.dma.borrow().transfers.get(&id).is_none_or(|t| t.done)
    }

    /// Blocks until transfer `id` completes and forgets it.
    pub async fn dma_wait(&self, id: u32) {
        while !self.transfer_done(id) {
            self.sim.wait_event().await;
        }
        self.dma.borrow_mut().transfers.remove(&id);
    }

    pub(crate) async fn dma_control(self: Rc<Self>) -> Result<(), SimError> {
        let sim = &self.sim;
        loop {
            if self.dma.borrow().rb.failed() > 0 {
                self.recover().await?;
                continue;
            }
            let next = {
                let mut d = self.dma.borrow_mut();
                match d.next_burst() {
                    Some(b) if d.rb.has_free() => {
                        d.current.pop_front();
                        let axi = d.ids.assign(b.vpn());
                        let idx = d.rb.add(b, axi).map_err(|e| SimError::fault(e.to_string()))?;
                        Some((idx, b, axi))
                    }
                    _ => None,
                }
            };
            match next {
                Some((idx, b, axi)) => {
                    self.issue_burst(idx, b, axi)?;
                    sim.work(1).await;
                }
                None => sim.wait_event().await,
            }
        }
    }

    async fn recover(&self) -> Result<(), SimError> {
        let sim = &self.sim;
        let t0 = sim.now();
        loop {
            // Failed pages are reported while the remaining bursts drain.
            loop {
                while self.dma.borrow().rb.count(RbState::Failed) > 0 {
                    sim.work(self.platform.latency.config_port).await;
                    let va = self.dma.borrow_mut().rb.read_failed();
                    if va == 0 {
                        break;
                    }
                    let dir = {
                        let d = self.dma.borrow();
                        d.rb.list().into_iter().map(|i| d.rb.entry(i)).find(|e| e.burst.va == va).map_or(DmaDir::In, |e| e.burst.dir)
                    };
                    self.stats.borrow_mut().misses += 1;
                    let r = MissRecord { vpn: va >> PAGE_SHIFT, waiter: Waiter::Dma(va), kind: access_of(dir), at: sim.now() };
                    self.enqueue(r).await?;
                }
                if self.dma.borrow().rb.in_flight() == 0 {
                    break;
                }
                sim.wait_event().await;
            }
            self.dma.borrow_mut().episode.clear();
            loop {
                let (refailed, next, idle) = {
                    let d = self.dma.borrow();
                    (d.rb.count(RbState::Failed) > 0, d.rb.next_reissue(), d.rb.failed() == 0 && d.rb.in_flight() == 0)
                };
                if refailed || idle {
                    break;
                }
                match next {
                    Some(i) => {
                        let (b, axi) = {
                            let mut d = self.dma.borrow_mut();
                            let b = d.rb.reissue(i).map_err(|e| SimError::fault(e.to_string()))?;
                            let e = *d.rb.entry(i);
                            if d.episode.last().is_some_and(|&s| s > e.serial) {
                                self.stats.borrow_mut().order_violations.push(format!(
                                    "order preservation: burst {} reissued after burst {}",
                                    e.serial,
                                    d.episode.last().unwrap()
                                ));
                            }
                            d.episode.push(e.serial);
                            (b, e.axi)
                        };
                        self.stats.borrow_mut().bursts_reissued += 1;
                        self.issue_burst(i, b, axi)?;
                        sim.work(1).await;
                    }
                    None => sim.wait_event().await,
                }
            }
            let d = self.dma.borrow();
            if d.rb.failed() == 0 && d.rb.in_flight() == 0 {
                break;
            }
        }
        let mut st = self.stats.borrow_mut();
        st.dma_drain_stall_cycles += sim.now() - t0;
        st.recoveries += 1;
        Ok(())
    }

    fn issue_burst(&self, idx: usize, b: Burst, axi: u8) -> Result<(), SimError> {
        let sim = &self.sim;
        let now = sim.now();
        let (ppn, delay) = self.lookup(b.vpn(), false, Source::Dma);
        let t = now + delay;
        let (ok, ready, pa, snapshot) = match ppn {
            Some(ppn) => {
                let pa = VirtAddr(b.va).translate(ppn).0;
                let done = self.dram.borrow_mut().request(t, b.len);
                let snapshot = match b.dir {
                    DmaDir::Out => {
                        let r = self.l1_range(b.local, b.len)?;
                        Some(self.l1.borrow()[r].to_vec())
                    }
                    DmaDir::In => None,
                };
                (true, done, pa, snapshot)
            }
            None if self.mode.kind == ModeKind::Soa => {
                return Err(SimError::fault(format!("lock-based transfer missed on page {:#x} at {} (transfer {}, locked entries {})", b.vpn(), now, b.transfer, self.tlb.borrow().locked_entries())));
            }
            None => (false, t, 0, None),
        };
        let resp = {
            let mut d = self.dma.borrow_mut();
            let slot = &mut d.axi_last[axi as usize];
            *slot = (*slot).max(ready);
            *slot
        };
        self.stats.borrow_mut().bursts_issued += 1;
        let m = self.self_rc();
        sim.at(resp, move || m.burst_response(idx, axi, b, ok, pa, snapshot))?;
        Ok(())
    }

    fn burst_response(&self, idx: usize, axi: u8, b: Burst, ok: bool, pa: u32, snapshot: Option<Vec<u8>>) -> Result<(), SimError> {
        let sim = &self.sim;
        let i = self.dma.borrow_mut().rb.complete(axi, ok).map_err(|e| SimError::fault(e.to_string()))?;
        if i != idx {
            self.stats.borrow_mut().order_violations.push(format!(
                "order preservation: response for entry {idx} retired entry {i} (AXI id {axi})"
            ));
        }
        if ok {
            match snapshot {
                Some(data) => self.dram.borrow_mut().data.write(pa, &data),
                None => {
                    let r = self.l1_range(b.local, b.len)?;
                    let mut buf = vec![0u8; b.len as usize];
                    self.dram.borrow().data.read(pa, &mut buf);
                    self.l1.borrow_mut()[r].copy_from_slice(&buf);
                }
            }
            let notify = {
                let mut d = self.dma.borrow_mut();
                let t = d.transfers.get_mut(&b.transfer).ok_or_else(|| SimError::fault("burst of unknown transfer"))?;
                t.remaining -= 1;
                if t.remaining == 0 {
                    t.done = true;
                    Some((t.pid, sim.now() - t.issued_at))
                } else {
                    None
                }
            };
            if let Some((pid, latency)) = notify {
                self.stats.borrow_mut().transfer_latency.push(latency);
                sim.post(pid);
            }
        } else {
            self.stats.borrow_mut().bursts_failed += 1;
        }
        if let Some(p) = self.dma_pid.get() {
            sim.post(p);
        }
        Ok(())
    }
}
