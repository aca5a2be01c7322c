//! Untimed host: flat sparse memory, instantaneous DMA, access tracing.

use std::collections::BTreeMap;
use std::future::Future;
use std::pin::pin;
use std::task::{Context, Poll, Waker};

use crate::error::ExecError;
use crate::interp::{transform_byte, Host};
use crate::lower::DmaDir;

pub const PAGE_SIZE: u32 = 4096;

/// Byte-addressed sparse memory in 4 KiB pages.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseMemory {
    pages: BTreeMap<u32, Box<[u8]>>,
}

impl SparseMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&self, va: u32, out: &mut [u8]) {
        for (k, b) in out.iter_mut().enumerate() {
            let a = va.wrapping_add(k as u32);
            *b = self.pages.get(&(a / PAGE_SIZE)).map_or(0, |p| p[(a % PAGE_SIZE) as usize]);
        }
    }

    pub fn write(&mut self, va: u32, data: &[u8]) {
        for (k, b) in data.iter().enumerate() {
            let a = va.wrapping_add(k as u32);
            let page = self
                .pages
                .entry(a / PAGE_SIZE)
                .or_insert_with(|| vec![0u8; PAGE_SIZE as usize].into_boxed_slice());
            page[(a % PAGE_SIZE) as usize] = *b;
        }
    }

    pub fn read_u(&self, va: u32, size: u8) -> u64 {
        let mut buf = [0u8; 8];
        self.read(va, &mut buf[..size as usize]);
        u64::from_le_bytes(buf)
    }

    pub fn write_u(&mut self, va: u32, size: u8, value: u64) {
        self.write(va, &value.to_le_bytes()[..size as usize]);
    }

    /// Pages that hold at least one written byte.
    pub fn page_numbers(&self) -> impl Iterator<Item = u32> + '_ {
        self.pages.keys().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AccessKind {
    Load,
    Store,
    DmaIn,
    DmaOut,
    Prefetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TraceEntry {
    pub iteration: Option<i64>,
    pub kind: AccessKind,
    pub va: u32,
    pub len: u32,
}

impl TraceEntry {
    pub fn pages(&self) -> impl Iterator<Item = u32> {
        let first = self.va / PAGE_SIZE;
        let last = (self.va as u64 + self.len.max(1) as u64 - 1) / PAGE_SIZE as u64;
        first..=last as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Worker { id: i64 },
    /// Runs `window_for` loops for all workers with an unbounded window.
    Helper,
}

pub const L1_BYTES: usize = 64 * 1024;

pub struct FunctionalHost<'m> {
    pub mem: &'m mut SparseMemory,
    pub l1: Vec<u8>,
    pub trace: Vec<TraceEntry>,
    role: Role,
    workers: i64,
    current: Option<i64>,
    current_worker: i64,
    next_handle: i64,
    positions: Vec<i64>,
    next_worker: usize,
}

impl<'m> FunctionalHost<'m> {
    pub fn new(mem: &'m mut SparseMemory, role: Role, workers: i64) -> Self {
        let current_worker = match role {
            Role::Worker { id } => id,
            Role::Helper => 0,
        };
        Self {
            mem,
            l1: vec![0; L1_BYTES],
            trace: Vec::new(),
            role,
            workers,
            current: None,
            current_worker,
            next_handle: 1,
            positions: vec![0; workers as usize],
            next_worker: 0,
        }
    }

    fn record(&mut self, kind: AccessKind, va: u32, len: u32) {
        self.trace.push(TraceEntry { iteration: self.current, kind, va, len });
    }

    fn l1_range(&self, addr: u32, len: u32) -> Result<std::ops::Range<usize>, ExecError> {
        let end = addr as usize + len as usize;
        if end > self.l1.len() {
            return Err(ExecError::new(format!("scratchpad access {addr:#x}+{len} out of range")));
        }
        Ok(addr as usize..end)
    }
}

impl Host for FunctionalHost<'_> {
    async fn svm_load(&mut self, va: u32, size: u8) -> Result<u64, ExecError> {
        self.record(AccessKind::Load, va, size as u32);
        Ok(self.mem.read_u(va, size))
    }

    async fn svm_store(&mut self, va: u32, size: u8, value: u64) -> Result<(), ExecError> {
        if self.role == Role::Helper {
            return Err(ExecError::new("helper thread stored to shared memory"));
        }
        self.record(AccessKind::Store, va, size as u32);
        self.mem.write_u(va, size, value);
        Ok(())
    }

    async fn local_load(&mut self, addr: u32, size: u8) -> Result<u64, ExecError> {
        let r = self.l1_range(addr, size as u32)?;
        let mut buf = [0u8; 8];
        buf[..size as usize].copy_from_slice(&self.l1[r]);
        Ok(u64::from_le_bytes(buf))
    }

    async fn local_store(&mut self, addr: u32, size: u8, value: u64) -> Result<(), ExecError> {
        let r = self.l1_range(addr, size as u32)?;
        self.l1[r].copy_from_slice(&value.to_le_bytes()[..size as usize]);
        Ok(())
    }

    fn frame(&mut self, bytes: u32) -> Result<u32, ExecError> {
        if bytes as usize > self.l1.len() {
            return Err(ExecError::new("scratchpad frame too large"));
        }
        Ok(0)
    }

    async fn alu(&mut self, _ops: u64) {}

    async fn dma(&mut self, dir: DmaDir, local: u32, va: u32, len: u32) -> Result<i64, ExecError> {
        let r = self.l1_range(local, len)?;
        match dir {
            DmaDir::In => {
                self.record(AccessKind::DmaIn, va, len);
                let mut buf = vec![0u8; len as usize];
                self.mem.read(va, &mut buf);
                self.l1[r].copy_from_slice(&buf);
            }
            DmaDir::Out => {
                if self.role == Role::Helper {
                    return Err(ExecError::new("helper thread wrote shared memory by DMA"));
                }
                self.record(AccessKind::DmaOut, va, len);
                let data = self.l1[r].to_vec();
                self.mem.write(va, &data);
            }
        }
        self.next_handle += 1;
        Ok(self.next_handle - 1)
    }

    async fn dma_wait(&mut self, _handle: i64) -> Result<(), ExecError> {
        Ok(())
    }

    async fn dma_barrier(&mut self) -> Result<(), ExecError> {
        Ok(())
    }

    async fn compute(&mut self, _cycles: u64) {}

    async fn transform(&mut self, dst: u32, src: u32, len: u32) -> Result<(), ExecError> {
        let s = self.l1_range(src, len)?;
        let d = self.l1_range(dst, len)?;
        let data: Vec<u8> = self.l1[s].iter().map(|&b| transform_byte(b)).collect();
        self.l1[d].copy_from_slice(&data);
        Ok(())
    }

    async fn prefetch(&mut self, va: u32, len: u32) -> Result<(), ExecError> {
        self.record(AccessKind::Prefetch, va, len);
        Ok(())
    }

    async fn progress(&mut self, _index: i64) -> Result<(), ExecError> {
        Ok(())
    }

    fn wt_id(&self) -> i64 {
        self.current_worker
    }

    fn wt_count(&self) -> i64 {
        self.workers
    }

    fn parallel_share(&mut self, lo: i64, _hi: i64) -> (i64, i64) {
        (lo + self.current_worker, self.workers)
    }

    async fn parallel_done(&mut self, _lo: i64, _hi: i64) -> Result<(), ExecError> {
        self.current = None;
        Ok(())
    }

    async fn window_next(&mut self, lo: i64, hi: i64) -> Result<Option<i64>, ExecError> {
        let w = self.workers as usize;
        for step in 0..w {
            let k = (self.next_worker + step) % w;
            let i = lo + k as i64 + self.positions[k] * self.workers;
            if i < hi {
                self.positions[k] += 1;
                self.next_worker = (k + 1) % w;
                self.current_worker = k as i64;
                return Ok(Some(i));
            }
        }
        self.current = None;
        Ok(None)
    }

    fn begin_iteration(&mut self, index: i64) {
        self.current = Some(index);
    }

    fn corrupt_local(&mut self, addr: u32, len: u32, delta: i64) {
        if let Ok(r) = self.l1_range(addr, len) {
            for b in &mut self.l1[r] {
                *b = b.wrapping_add(delta as u8);
            }
        }
    }
}

/// Drives a future that never waits (all functional host operations complete immediately).
pub fn run_now<F: Future>(f: F) -> F::Output {
    let mut f = pin!(f);
    let mut cx = Context::from_waker(Waker::noop());
    match f.as_mut().poll(&mut cx) {
        Poll::Ready(v) => v,
        Poll::Pending => panic!("functional execution suspended"),
    }
}
