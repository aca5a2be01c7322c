//! Two-level IOMMU TLB: a fully associative L1 filled on L2 hits and a
//! set-associative L2 written by software, both replaced through per-set
//! counters.

use crate::config::{Latency, TlbGeometry};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TlbEntry {
    pub vpn: u32,
    pub ppn: u32,
    pub valid: bool,
    /// Transfers holding this entry; a locked entry is never replaced.
    pub locks: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit { ppn: u32, level: Level },
    Miss,
}

impl Lookup {
    pub fn is_hit(self) -> bool {
        matches!(self, Lookup::Hit { .. })
    }
}

/// Location of an L2 entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub set: usize,
    pub way: usize,
}

#[derive(Debug, Clone)]
pub struct Tlb {
    l1: Vec<TlbEntry>,
    l1_counter: usize,
    l2: Vec<TlbEntry>,
    counters: Vec<usize>,
    ways: usize,
    sets: usize,
    /// Total counter increments, across both levels.
    pub counter_increments: u64,
}

impl Tlb {
    pub fn new(g: &TlbGeometry) -> Self {
        Self {
            l1: vec![TlbEntry::default(); g.l1_entries],
            l1_counter: 0,
            l2: vec![TlbEntry::default(); g.l2_entries],
            counters: vec![0; g.l2_sets()],
            ways: g.l2_ways,
            sets: g.l2_sets(),
            counter_increments: 0,
        }
    }

    pub fn set_of(&self, vpn: u32) -> usize {
        vpn as usize % self.sets
    }

    pub fn ways(&self) -> usize {
        self.ways
    }

    pub fn counter(&self, set: usize) -> usize {
        self.counters[set]
    }

    fn l2_index(&self, s: Slot) -> usize {
        s.set * self.ways + s.way
    }

    pub fn l2_entry(&self, s: Slot) -> TlbEntry {
        self.l2[self.l2_index(s)]
    }

    fn find_l1(&self, vpn: u32) -> Option<usize> {
        self.l1.iter().position(|e| e.valid && e.vpn == vpn)
    }

    fn find_l2(&self, vpn: u32) -> Option<usize> {
        let base = self.set_of(vpn) * self.ways;
        (base..base + self.ways).find(|&i| self.l2[i].valid && self.l2[i].vpn == vpn)
    }

    /// Translates without side effects.
    pub fn probe(&self, vpn: u32) -> Lookup {
        if let Some(i) = self.find_l1(vpn) {
            return Lookup::Hit { ppn: self.l1[i].ppn, level: Level::L1 };
        }
        match self.find_l2(vpn) {
            Some(i) => Lookup::Hit { ppn: self.l2[i].ppn, level: Level::L2 },
            None => Lookup::Miss,
        }
    }

    /// Translates as the datapath does: an L2 hit copies the entry into L1.
    pub fn lookup(&mut self, vpn: u32) -> Lookup {
        let r = self.probe(vpn);
        if let Lookup::Hit { ppn, level: Level::L2 } = r {
            if let Some(v) = self.l1_victim() {
                self.l1[v] = TlbEntry { vpn, ppn, valid: true, locks: 0 };
            }
        }
        r
    }

    /// Cycles the datapath spends on a lookup with this outcome.
    pub fn latency(r: Lookup, lat: &Latency) -> u64 {
        match r {
            Lookup::Hit { level: Level::L1, .. } => lat.tlb_l1_lookup,
            Lookup::Hit { level: Level::L2, .. } => lat.tlb_l2_lookup,
            Lookup::Miss => lat.tlb_l1_lookup + lat.tlb_l2_lookup,
        }
    }

    fn l1_victim(&mut self) -> Option<usize> {
        let n = self.l1.len();
        for _ in 0..n {
            let v = self.l1_counter;
            self.l1_counter = (v + 1) % n;
            self.counter_increments += 1;
            if self.l1[v].locks == 0 {
                return Some(v);
            }
        }
        None
    }

    /// Atomic fetch-and-increment on the set's counter, skipping locked
    /// ways. Returns the slot to overwrite and the number of increments it
    /// took, or `None` when every way is locked.
    pub fn next_victim(&mut self, vpn: u32) -> (Option<Slot>, u32) {
        let set = self.set_of(vpn);
        for tries in 1..=self.ways as u32 {
            let way = self.counters[set];
            self.counters[set] = (way + 1) % self.ways;
            self.counter_increments += 1;
            let slot = Slot { set, way };
            if self.l2_entry(slot).locks == 0 {
                return (Some(slot), tries);
            }
        }
        (None, self.ways as u32)
    }

    /// First of the two entry writes: the new page number, entry invalid.
    pub fn write_vpn(&mut self, s: Slot, vpn: u32) {
        let i = self.l2_index(s);
        self.l2[i] = TlbEntry { vpn, ppn: 0, valid: false, locks: self.l2[i].locks };
    }

    /// Second write: the frame number, which validates the entry.
    pub fn write_ppn(&mut self, s: Slot, ppn: u32) {
        let i = self.l2_index(s);
        self.l2[i].ppn = ppn;
        self.l2[i].valid = true;
    }

    /// Both writes at once, for untimed use.
    pub fn insert(&mut self, vpn: u32, ppn: u32) -> Option<Slot> {
        let (slot, _) = self.next_victim(vpn);
        let s = slot?;
        self.write_vpn(s, vpn);
        self.write_ppn(s, ppn);
        Some(s)
    }

    /// Locks every live entry of `vpn`. Returns false if none is present.
    pub fn lock(&mut self, vpn: u32) -> bool {
        let mut any = false;
        for e in self.l1.iter_mut().chain(self.l2.iter_mut()) {
            if e.valid && e.vpn == vpn {
                e.locks += 1;
                any = true;
            }
        }
        any
    }

    /// Releases one lock of `vpn`. Returns false if it was not locked.
    pub fn unlock(&mut self, vpn: u32) -> bool {
        let mut any = false;
        for e in self.l1.iter_mut().chain(self.l2.iter_mut()) {
            if e.valid && e.vpn == vpn && e.locks > 0 {
                e.locks -= 1;
                any = true;
            }
        }
        any
    }

    pub fn locked_entries(&self) -> usize {
        self.l1.iter().chain(self.l2.iter()).filter(|e| e.locks > 0).count()
    }

    /// Page numbers with more than one live entry within one level.
    pub fn duplicates(&self) -> Vec<u32> {
        let mut dups = Vec::new();
        for level in [&self.l1, &self.l2] {
            let mut seen: Vec<u32> = level.iter().filter(|e| e.valid).map(|e| e.vpn).collect();
            seen.sort_unstable();
            dups.extend(seen.windows(2).filter(|w| w[0] == w[1]).map(|w| w[0]));
        }
        dups
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tlb() -> Tlb {
        Tlb::new(&TlbGeometry::default())
    }

    #[test]
    fn empty_tlb_misses() {
        assert_eq!(tlb().lookup(123), Lookup::Miss);
    }

    #[test]
    fn insert_then_hit_in_l2_then_l1() {
        let mut t = tlb();
        t.insert(5, 9);
        assert_eq!(t.lookup(5), Lookup::Hit { ppn: 9, level: Level::L2 });
        assert_eq!(t.lookup(5), Lookup::Hit { ppn: 9, level: Level::L1 });
    }

    #[test]
    fn counter_walks_ways_in_order() {
        let mut t = tlb();
        let slots: Vec<usize> = (0..9).map(|k| t.insert(7 + 32 * k, k).unwrap().way).collect();
        assert_eq!(slots, [0, 1, 2, 3, 4, 5, 6, 7, 0]);
        assert_eq!(t.probe(7), Lookup::Miss);
    }

    #[test]
    fn locked_entry_survives_insert_pressure() {
        let mut t = tlb();
        t.insert(3, 30);
        assert!(t.lock(3));
        for k in 1..=8 {
            t.insert(3 + 32 * k, k);
        }
        assert!(t.probe(3).is_hit());
        assert!(t.unlock(3));
        for k in 9..=16 {
            t.insert(3 + 32 * k, k);
        }
        assert!(!t.probe(3).is_hit());
    }

    #[test]
    fn fully_locked_set_has_no_victim() {
        let mut t = tlb();
        for k in 0..8 {
            t.insert(32 * k, k);
            t.lock(32 * k);
        }
        assert_eq!(t.next_victim(32 * 9).0, None);
        assert!(!t.lock(999));
    }

    #[test]
    fn entry_is_invalid_between_writes() {
        let mut t = tlb();
        let (s, _) = t.next_victim(4);
        let s = s.unwrap();
        t.write_vpn(s, 4);
        assert_eq!(t.probe(4), Lookup::Miss);
        t.write_ppn(s, 44);
        assert_eq!(t.probe(4), Lookup::Hit { ppn: 44, level: Level::L2 });
    }
}
