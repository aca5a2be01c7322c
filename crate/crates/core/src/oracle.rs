//! Naive reference models of the retirement buffer, the TLB and the burst
//! splitter. They trade speed for obviousness and share no code with the
//! models they check.

use crate::dma::{Burst, DmaCommand, RbState};
use crate::mem::{PAGE_BYTES, PAGE_SHIFT};
use crate::tlb::{Level, Lookup, Slot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefRecord {
    pub serial: u64,
    pub burst: Burst,
    pub axi: u8,
    pub state: RbState,
}

/// Retirement buffer as a plain list of live records in request order.
#[derive(Debug, Clone)]
pub struct RefRetirement {
    capacity: usize,
    pub records: Vec<RefRecord>,
    next_serial: u64,
}

fn page(b: &Burst) -> u32 {
    b.va >> PAGE_SHIFT
}

impl RefRetirement {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, records: Vec::new(), next_serial: 0 }
    }

    pub fn add(&mut self, burst: Burst, axi: u8) -> Option<u64> {
        if self.records.len() == self.capacity {
            return None;
        }
        let serial = self.next_serial;
        self.next_serial += 1;
        self.records.push(RefRecord { serial, burst, axi, state: RbState::InFlight });
        Some(serial)
    }

    /// Serial of the record the response resolved.
    pub fn complete(&mut self, axi: u8, ok: bool) -> Option<u64> {
        let k = self.records.iter().position(|r| r.state == RbState::InFlight && r.axi == axi)?;
        let serial = self.records[k].serial;
        if ok {
            self.records.remove(k);
        } else {
            self.records[k].state = RbState::Failed;
        }
        Some(serial)
    }

    pub fn read_failed(&mut self) -> u32 {
        let Some(first) = self.records.iter().find(|r| r.state == RbState::Failed).copied() else {
            return 0;
        };
        for r in &mut self.records {
            if r.state == RbState::Failed && page(&r.burst) == page(&first.burst) {
                r.state = RbState::Peeked;
            }
        }
        first.burst.va
    }

    pub fn write_handled(&mut self, va: u32) -> usize {
        let mut n = 0;
        for r in &mut self.records {
            if (r.state == RbState::Failed || r.state == RbState::Peeked) && page(&r.burst) == va >> PAGE_SHIFT {
                r.state = RbState::Reissuable;
                n += 1;
            }
        }
        n
    }

    /// The oldest record that still has to be reissued, if it may go now.
    pub fn next_reissue(&self) -> Option<u64> {
        let oldest = self.records.iter().find(|r| r.state != RbState::InFlight)?;
        (oldest.state == RbState::Reissuable).then_some(oldest.serial)
    }

    pub fn reissue(&mut self, serial: u64) -> bool {
        match self.records.iter_mut().find(|r| r.serial == serial && r.state == RbState::Reissuable) {
            Some(r) => {
                r.state = RbState::InFlight;
                true
            }
            None => false,
        }
    }

    pub fn in_flight(&self) -> usize {
        self.records.iter().filter(|r| r.state == RbState::InFlight).count()
    }

    pub fn failed(&self) -> usize {
        self.records.len() - self.in_flight()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RefEntry {
    vpn: u32,
    ppn: u32,
    locks: u32,
}

/// Two-level TLB with round-robin replacement that skips locked entries.
#[derive(Debug, Clone)]
pub struct RefTlb {
    l1: Vec<Option<RefEntry>>,
    l1_next: usize,
    sets: Vec<Vec<Option<RefEntry>>>,
    set_next: Vec<usize>,
}

impl RefTlb {
    pub fn new(l1_entries: usize, l2_entries: usize, ways: usize) -> Self {
        let nsets = l2_entries / ways;
        Self { l1: vec![None; l1_entries], l1_next: 0, sets: vec![vec![None; ways]; nsets], set_next: vec![0; nsets] }
    }

    fn set(&self, vpn: u32) -> usize {
        vpn as usize % self.sets.len()
    }

    pub fn lookup(&mut self, vpn: u32) -> Lookup {
        if let Some(e) = self.l1.iter().flatten().find(|e| e.vpn == vpn) {
            return Lookup::Hit { ppn: e.ppn, level: Level::L1 };
        }
        let s = self.set(vpn);
        let Some(e) = self.sets[s].iter().flatten().find(|e| e.vpn == vpn).copied() else {
            return Lookup::Miss;
        };
        let n = self.l1.len();
        for _ in 0..n {
            let k = self.l1_next;
            self.l1_next = (k + 1) % n;
            if self.l1[k].is_none_or(|x| x.locks == 0) {
                self.l1[k] = Some(RefEntry { vpn, ppn: e.ppn, locks: 0 });
                break;
            }
        }
        Lookup::Hit { ppn: e.ppn, level: Level::L2 }
    }

    pub fn insert(&mut self, vpn: u32, ppn: u32) -> Option<Slot> {
        let s = self.set(vpn);
        let ways = self.sets[s].len();
        for _ in 0..ways {
            let w = self.set_next[s];
            self.set_next[s] = (w + 1) % ways;
            if self.sets[s][w].is_none_or(|x| x.locks == 0) {
                self.sets[s][w] = Some(RefEntry { vpn, ppn, locks: 0 });
                return Some(Slot { set: s, way: w });
            }
        }
        None
    }

    fn entries_of(&mut self, vpn: u32) -> impl Iterator<Item = &mut RefEntry> {
        self.l1.iter_mut().chain(self.sets.iter_mut().flatten()).flatten().filter(move |e| e.vpn == vpn)
    }

    pub fn lock(&mut self, vpn: u32) -> bool {
        let mut any = false;
        for e in self.entries_of(vpn) {
            e.locks += 1;
            any = true;
        }
        any
    }

    pub fn unlock(&mut self, vpn: u32) -> bool {
        let mut any = false;
        for e in self.entries_of(vpn).filter(|e| e.locks > 0) {
            e.locks -= 1;
            any = true;
        }
        any
    }
}

/// Checks a burst split byte by byte: every byte of the command covered
/// exactly once in ascending order, the local side following along, no
/// burst crossing a page or exceeding `max_burst`.
pub fn check_split(cmd: &DmaCommand, bursts: &[Burst], max_burst: u32) -> Result<(), String> {
    let mut covered = vec![0u8; cmd.len as usize];
    let mut last_end: Option<u64> = None;
    for b in bursts {
        if b.len == 0 || b.len > max_burst {
            return Err(format!("burst at {:#x} has length {}", b.va, b.len));
        }
        let first_page = b.va / PAGE_BYTES;
        let last_page = (b.va as u64 + b.len as u64 - 1) / PAGE_BYTES as u64;
        if first_page as u64 != last_page {
            return Err(format!("burst at {:#x}+{} crosses a page", b.va, b.len));
        }
        if last_end.is_some_and(|e| e != b.va as u64) {
            return Err(format!("burst at {:#x} does not follow the previous one", b.va));
        }
        last_end = Some(b.va as u64 + b.len as u64);
        let off = b.va.wrapping_sub(cmd.va);
        if b.local.wrapping_sub(cmd.local) != off || b.dir != cmd.dir || b.transfer != cmd.transfer {
            return Err(format!("burst at {:#x} has inconsistent local side or tags", b.va));
        }
        for k in off..off + b.len {
            let c = covered.get_mut(k as usize).ok_or_else(|| format!("byte {k} lies outside the command"))?;
            *c += 1;
        }
    }
    match covered.iter().position(|&c| c != 1) {
        None => Ok(()),
        Some(k) => Err(format!("byte {k} covered {} times", covered[k])),
    }
}
