//! Physical memory, the page table and the host-side address space used at
//! offload.

use std::collections::HashMap;
use std::fmt;

use svmsim_lang::host::SparseMemory;

use crate::config::{ConfigError, Latency, MemParams};
use crate::engine::Time;

pub const PAGE_SHIFT: u32 = 12;
pub const PAGE_BYTES: u32 = 1 << PAGE_SHIFT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VirtAddr(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhysAddr(pub u32);

impl VirtAddr {
    pub fn vpn(self) -> u32 {
        self.0 >> PAGE_SHIFT
    }

    pub fn offset(self) -> u32 {
        self.0 & (PAGE_BYTES - 1)
    }

    /// Physical address of this byte given the frame its page maps to.
    pub fn translate(self, ppn: u32) -> PhysAddr {
        PhysAddr((ppn << PAGE_SHIFT) | self.offset())
    }
}

impl fmt::Display for VirtAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "va:{:#010x}", self.0)
    }
}

/// Pages covered by `[va, va + len)`.
pub fn pages_of(va: u32, len: u32) -> std::ops::RangeInclusive<u32> {
    let last = (va as u64 + len.max(1) as u64 - 1) >> PAGE_SHIFT;
    (va >> PAGE_SHIFT)..=last as u32
}

/// Radix page table of the offloaded process. Only the leaf mapping is kept;
/// a walk reads one word per level.
#[derive(Debug, Clone)]
pub struct PageTable {
    pub levels: u32,
    map: HashMap<u32, u32>,
}

impl PageTable {
    pub fn new(levels: u32) -> Self {
        Self { levels, map: HashMap::new() }
    }

    pub fn map(&mut self, vpn: u32, ppn: u32) {
        self.map.insert(vpn, ppn);
    }

    pub fn walk(&self, vpn: u32) -> Option<u32> {
        self.map.get(&vpn).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn vpns(&self) -> impl Iterator<Item = u32> + '_ {
        self.map.keys().copied()
    }
}

/// Shared DRAM behind one pipelined port: each request completes no earlier
/// than its latency after issue and no earlier than the previous completion
/// plus the bandwidth gap for its size.
#[derive(Debug, Clone)]
pub struct Dram {
    pub data: SparseMemory,
    latency: Time,
    gap_per_64b: Time,
    last_completion: Time,
    pub bytes_moved: u64,
}

impl Dram {
    pub fn new(data: SparseMemory, lat: &Latency) -> Self {
        Self { data, latency: lat.dram_access, gap_per_64b: lat.dram_gap_per_64b, last_completion: 0, bytes_moved: 0 }
    }

    /// Completion time of a request of `bytes` issued at `now`.
    pub fn request(&mut self, now: Time, bytes: u32) -> Time {
        let units = (bytes as u64).div_ceil(64).max(1);
        let done = (now + self.latency).max(self.last_completion + units * self.gap_per_64b);
        self.last_completion = done;
        self.bytes_moved += bytes as u64;
        done
    }
}

/// Virtual address space built by the host before offload.
#[derive(Debug, Clone)]
pub struct AddressSpace {
    pub page_table: PageTable,
    pub phys: SparseMemory,
    next_va: u32,
    next_ppn: u32,
    first_ppn: u32,
    dram_pages: u64,
}

/// Start of the heap handed to benchmarks; low pages stay unmapped.
pub const HEAP_BASE: u32 = 0x1000_0000;
const FIRST_FRAME: u32 = 0x100;

impl AddressSpace {
    pub fn new(params: &MemParams) -> Self {
        Self {
            page_table: PageTable::new(params.page_table_levels),
            phys: SparseMemory::new(),
            next_va: HEAP_BASE,
            next_ppn: FIRST_FRAME,
            first_ppn: FIRST_FRAME,
            dram_pages: params.dram_bytes >> PAGE_SHIFT,
        }
    }

    /// Allocates and maps `bytes` at the next page boundary. Page alignment
    /// also gives every power-of-two struct array up to a page its natural
    /// size alignment.
    pub fn alloc(&mut self, bytes: u32) -> Result<VirtAddr, ConfigError> {
        let va = self.next_va;
        let pages = bytes.div_ceil(PAGE_BYTES).max(1);
        let used = (self.next_ppn - self.first_ppn) as u64 + pages as u64;
        if used + self.first_ppn as u64 > self.dram_pages {
            return Err(ConfigError(format!(
                "workload needs {} pages but DRAM holds {}",
                used + self.first_ppn as u64,
                self.dram_pages
            )));
        }
        for k in 0..pages {
            self.page_table.map((va >> PAGE_SHIFT) + k, self.next_ppn + k);
        }
        self.next_ppn += pages;
        self.next_va = va
            .checked_add(pages * PAGE_BYTES)
            .ok_or_else(|| ConfigError("virtual address space exhausted".into()))?;
        Ok(VirtAddr(va))
    }

    fn phys_of(&self, va: u32) -> u32 {
        let ppn = self.page_table.walk(va >> PAGE_SHIFT).unwrap_or_else(|| panic!("unmapped {}", VirtAddr(va)));
        VirtAddr(va).translate(ppn).0
    }

    pub fn write(&mut self, va: u32, data: &[u8]) {
        let mut done = 0usize;
        while done < data.len() {
            let a = va + done as u32;
            let chunk = ((PAGE_BYTES - (a & (PAGE_BYTES - 1))) as usize).min(data.len() - done);
            let pa = self.phys_of(a);
            self.phys.write(pa, &data[done..done + chunk]);
            done += chunk;
        }
    }

    pub fn read(&self, va: u32, out: &mut [u8]) {
        let mut done = 0usize;
        while done < out.len() {
            let a = va + done as u32;
            let chunk = ((PAGE_BYTES - (a & (PAGE_BYTES - 1))) as usize).min(out.len() - done);
            let pa = self.phys_of(a);
            self.phys.read(pa, &mut out[done..done + chunk]);
            done += chunk;
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

    pub fn mapped_pages(&self) -> usize {
        self.page_table.len()
    }
}
