//! DMA command splitting and the burst retirement buffer.

use svmsim_lang::lower::DmaDir;

use crate::mem::{PAGE_BYTES, PAGE_SHIFT};

/// A coarse transfer as written to a PE's command interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmaCommand {
    pub va: u32,
    pub local: u32,
    pub len: u32,
    pub dir: DmaDir,
    pub pe: usize,
    pub transfer: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Burst {
    pub va: u32,
    pub local: u32,
    pub len: u32,
    pub dir: DmaDir,
    pub transfer: u32,
}

impl Burst {
    pub fn vpn(&self) -> u32 {
        self.va >> PAGE_SHIFT
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DmaError {
    #[error("zero-length transfer rejected")]
    ZeroLength,
    #[error("transfer of {0} bytes exceeds the command limit")]
    TooLong(u32),
    #[error("retirement buffer full")]
    Full,
    #[error("response for AXI id {0} without a matching in-flight burst")]
    NoMatch(u8),
    #[error("entry {0} is not reissuable")]
    NotReissuable(usize),
}

/// Splits a command into bursts of at most `max_burst` bytes that never
/// cross a page, in ascending address order.
pub fn split(cmd: &DmaCommand, max_burst: u32, max_transfer: u32) -> Result<Vec<Burst>, DmaError> {
    if cmd.len == 0 {
        return Err(DmaError::ZeroLength);
    }
    if cmd.len > max_transfer {
        return Err(DmaError::TooLong(cmd.len));
    }
    let mut out = Vec::new();
    let mut done = 0u32;
    while done < cmd.len {
        let va = cmd.va.wrapping_add(done);
        let to_page_end = PAGE_BYTES - (va & (PAGE_BYTES - 1));
        let len = (cmd.len - done).min(max_burst).min(to_page_end);
        out.push(Burst { va, local: cmd.local + done, len, dir: cmd.dir, transfer: cmd.transfer });
        done += len;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RbState {
    Free,
    InFlight,
    Failed,
    Peeked,
    Reissuable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetireEntry {
    pub burst: Burst,
    pub axi: u8,
    pub state: RbState,
    pub next: Option<usize>,
    /// Position in the original request order.
    pub serial: u64,
}

/// Order in which reissuable bursts leave the buffer. `Reversed` exists
/// only to check that the order checks catch a wrong implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReissueOrder {
    #[default]
    Request,
    Reversed,
}

/// Linked list over a register file with one word per in-flight burst.
#[derive(Debug, Clone)]
pub struct RetirementBuffer {
    entries: Vec<RetireEntry>,
    head: Option<usize>,
    tail: Option<usize>,
    in_flight: usize,
    failed: usize,
    serial: u64,
    pub order: ReissueOrder,
}

impl RetirementBuffer {
    pub fn new(capacity: usize) -> Self {
        let blank = RetireEntry {
            burst: Burst { va: 0, local: 0, len: 0, dir: DmaDir::In, transfer: 0 },
            axi: 0,
            state: RbState::Free,
            next: None,
            serial: 0,
        };
        Self { entries: vec![blank; capacity], head: None, tail: None, in_flight: 0, failed: 0, serial: 0, order: ReissueOrder::Request }
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    /// Entries that failed and have not been reissued yet.
    pub fn failed(&self) -> usize {
        self.failed
    }

    pub fn count(&self, state: RbState) -> usize {
        self.entries.iter().filter(|e| e.state == state).count()
    }

    pub fn is_empty(&self) -> bool {
        self.head.is_none()
    }

    pub fn has_free(&self) -> bool {
        self.in_flight + self.failed < self.entries.len()
    }

    pub fn head(&self) -> Option<usize> {
        self.head
    }

    pub fn tail(&self) -> Option<usize> {
        self.tail
    }

    pub fn entry(&self, i: usize) -> &RetireEntry {
        &self.entries[i]
    }

    /// Indices of the non-free entries from head to tail.
    pub fn list(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.head;
        while let Some(i) = cur {
            out.push(i);
            cur = self.entries[i].next;
        }
        out
    }

    pub fn add(&mut self, burst: Burst, axi: u8) -> Result<usize, DmaError> {
        let i = self.entries.iter().position(|e| e.state == RbState::Free).ok_or(DmaError::Full)?;
        self.entries[i] = RetireEntry { burst, axi, state: RbState::InFlight, next: None, serial: self.serial };
        self.serial += 1;
        match self.tail {
            Some(t) => self.entries[t].next = Some(i),
            None => self.head = Some(i),
        }
        self.tail = Some(i);
        self.in_flight += 1;
        Ok(i)
    }

    /// Resolves the response for `axi`: the first in-flight entry with that
    /// id from the head is freed or marked failed.
    pub fn complete(&mut self, axi: u8, ok: bool) -> Result<usize, DmaError> {
        let mut prev = None;
        let mut cur = self.head;
        while let Some(i) = cur {
            let e = self.entries[i];
            if e.state == RbState::InFlight && e.axi == axi {
                self.in_flight -= 1;
                if ok {
                    self.unlink(prev, i);
                } else {
                    self.entries[i].state = RbState::Failed;
                    self.failed += 1;
                }
                return Ok(i);
            }
            prev = cur;
            cur = e.next;
        }
        Err(DmaError::NoMatch(axi))
    }

    fn unlink(&mut self, prev: Option<usize>, i: usize) {
        let next = self.entries[i].next;
        match prev {
            Some(p) => self.entries[p].next = next,
            None => self.head = next,
        }
        if self.tail == Some(i) {
            self.tail = prev;
        }
        self.entries[i].state = RbState::Free;
        self.entries[i].next = None;
    }

    /// Register read: external address of the first failed burst in request
    /// order (0 if none); all failed bursts on that page become peeked.
    pub fn read_failed(&mut self) -> u32 {
        let Some(first) = self.list().into_iter().find(|&i| self.entries[i].state == RbState::Failed) else {
            return 0;
        };
        let va = self.entries[first].burst.va;
        let vpn = va >> PAGE_SHIFT;
        for e in self.entries.iter_mut() {
            if e.state == RbState::Failed && e.burst.vpn() == vpn {
                e.state = RbState::Peeked;
            }
        }
        va
    }

    /// Register write: failed or peeked bursts on the page of `va` become
    /// reissuable. Returns how many changed.
    pub fn write_handled(&mut self, va: u32) -> usize {
        let vpn = va >> PAGE_SHIFT;
        let mut n = 0;
        for e in self.entries.iter_mut() {
            if matches!(e.state, RbState::Failed | RbState::Peeked) && e.burst.vpn() == vpn {
                e.state = RbState::Reissuable;
                n += 1;
            }
        }
        n
    }

    /// The next burst to reissue, if it is reissuable. Bursts leave in
    /// request order, so an earlier burst still waiting for its page
    /// blocks later ones.
    pub fn next_reissue(&self) -> Option<usize> {
        let pending: Vec<usize> = self
            .list()
            .into_iter()
            .filter(|&i| matches!(self.entries[i].state, RbState::Failed | RbState::Peeked | RbState::Reissuable))
            .collect();
        let pick = match self.order {
            ReissueOrder::Request => pending.first(),
            ReissueOrder::Reversed => pending.iter().rev().find(|&&i| self.entries[i].state == RbState::Reissuable),
        }?;
        (self.entries[*pick].state == RbState::Reissuable).then_some(*pick)
    }

    pub fn reissue(&mut self, i: usize) -> Result<Burst, DmaError> {
        if self.entries[i].state != RbState::Reissuable {
            return Err(DmaError::NotReissuable(i));
        }
        self.entries[i].state = RbState::InFlight;
        self.failed -= 1;
        self.in_flight += 1;
        Ok(self.entries[i].burst)
    }

    /// Checks the list against the register file and the counters.
    pub fn check(&self) -> Result<(), String> {
        let list = self.list();
        if list.len() > self.entries.len() {
            return Err("list longer than the register file".into());
        }
        let mut seen = vec![false; self.entries.len()];
        for w in list.windows(2) {
            if self.entries[w[0]].serial >= self.entries[w[1]].serial {
                return Err(format!("entries {} and {} out of request order", w[0], w[1]));
            }
        }
        for &i in &list {
            if std::mem::replace(&mut seen[i], true) {
                return Err(format!("entry {i} linked twice"));
            }
            if self.entries[i].state == RbState::Free {
                return Err(format!("free entry {i} is linked"));
            }
        }
        if self.tail != list.last().copied() {
            return Err("tail does not end the list".into());
        }
        for (i, e) in self.entries.iter().enumerate() {
            if !seen[i] && e.state != RbState::Free {
                return Err(format!("live entry {i} is not linked"));
            }
        }
        let inflight = list.iter().filter(|&&i| self.entries[i].state == RbState::InFlight).count();
        if inflight != self.in_flight || list.len() - inflight != self.failed {
            return Err("counters disagree with the list".into());
        }
        Ok(())
    }
}

/// Round-robin AXI id assignment where consecutive bursts on one page share
/// an id.
#[derive(Debug, Clone)]
pub struct AxiIds {
    count: u8,
    next: u8,
    last: Option<(u32, u8)>,
}

impl AxiIds {
    pub fn new(bits: u32) -> Self {
        Self { count: (1u16 << bits).min(256) as u8, next: 0, last: None }
    }

    pub fn assign(&mut self, vpn: u32) -> u8 {
        if let Some((p, id)) = self.last {
            if p == vpn {
                return id;
            }
        }
        let id = self.next;
        self.next = ((self.next as u16 + 1) % self.count.max(1) as u16) as u8;
        self.last = Some((vpn, id));
        id
    }
}

/// Retirement-buffer metadata versus the data buffer needed to absorb the
/// same number of missing bursts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferArithmetic {
    pub entry_bits: u32,
    pub metadata_bytes: u64,
    pub data_bytes: u64,
    pub factor: u64,
}

/// External address, internal address, AXI id, length code and state.
pub fn entry_bits(axi_id_bits: u32) -> u32 {
    32 + 16 + axi_id_bits + 8 + 3
}

pub fn buffer_arithmetic(max_in_flight: usize, max_burst: u32, axi_id_bits: u32) -> BufferArithmetic {
    let bits = entry_bits(axi_id_bits);
    // Each entry is stored in one 8-byte word.
    let metadata_bytes = max_in_flight as u64 * (bits as u64).div_ceil(64) * 8;
    let data_bytes = max_in_flight as u64 * max_burst as u64;
    BufferArithmetic { entry_bits: bits, metadata_bytes, data_bytes, factor: data_bytes / metadata_bytes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cmd(va: u32, len: u32) -> DmaCommand {
        DmaCommand { va, local: 0, len, dir: DmaDir::In, pe: 0, transfer: 1 }
    }

    fn burst(va: u32) -> Burst {
        Burst { va, local: 0, len: 64, dir: DmaDir::Out, transfer: 1 }
    }

    #[test]
    fn split_example() {
        let lens: Vec<u32> = split(&cmd(0x1F80, 5000), 2048, 65536).unwrap().iter().map(|b| b.len).collect();
        assert_eq!(lens, [128, 2048, 2048, 776]);
    }

    #[test]
    fn split_of_aligned_small_transfer_is_one_burst() {
        assert_eq!(split(&cmd(0x3000, 64), 2048, 65536).unwrap().len(), 1);
        assert_eq!(split(&cmd(0x3000, 0), 2048, 65536), Err(DmaError::ZeroLength));
    }

    #[test]
    fn buffer_links_in_issue_order() {
        let mut rb = RetirementBuffer::new(8);
        let a = rb.add(burst(0x1000), 0).unwrap();
        assert_eq!((rb.head(), rb.tail()), (Some(a), Some(a)));
        for k in 1..8 {
            rb.add(burst(0x1000 * (k + 1)), k as u8).unwrap();
        }
        assert!(!rb.has_free());
        assert_eq!(rb.add(burst(0), 0), Err(DmaError::Full));
        rb.check().unwrap();
    }

    #[test]
    fn completion_matches_earliest_in_flight_with_id() {
        let mut rb = RetirementBuffer::new(8);
        let a = rb.add(burst(0x1000), 3).unwrap();
        let b = rb.add(burst(0x2000), 3).unwrap();
        assert_eq!(rb.complete(3, true), Ok(a));
        assert_eq!(rb.head(), Some(b));
        assert_eq!(rb.complete(3, false), Ok(b));
        assert_eq!(rb.failed(), 1);
        assert_eq!(rb.complete(3, true), Err(DmaError::NoMatch(3)));
        rb.check().unwrap();
    }

    #[test]
    fn register_protocol() {
        let mut rb = RetirementBuffer::new(8);
        assert_eq!(rb.read_failed(), 0);
        let p = 0x5000;
        let q = 0x9000;
        for (k, va) in [p, p + 64, q, p + 128].into_iter().enumerate() {
            rb.add(burst(va), k as u8).unwrap();
            rb.complete(k as u8, false).unwrap();
        }
        assert_eq!(rb.read_failed(), p);
        let states: Vec<RbState> = rb.list().iter().map(|&i| rb.entry(i).state).collect();
        assert_eq!(states, [RbState::Peeked, RbState::Peeked, RbState::Failed, RbState::Peeked]);
        assert_eq!(rb.read_failed(), q);
        assert_eq!(rb.write_handled(0x7000), 0);
        assert_eq!(rb.write_handled(p), 3);
        // The burst on q is first in line and still waits for its page.
        assert_eq!(rb.next_reissue(), Some(rb.list()[0]));
        let first = rb.next_reissue().unwrap();
        rb.reissue(first).unwrap();
        let second = rb.next_reissue().unwrap();
        rb.reissue(second).unwrap();
        assert_eq!(rb.next_reissue(), None);
        assert_eq!(rb.write_handled(q), 1);
        assert!(rb.next_reissue().is_some());
        rb.check().unwrap();
    }

    #[test]
    fn failed_page_may_skip_peek() {
        let mut rb = RetirementBuffer::new(2);
        rb.add(burst(0x4000), 0).unwrap();
        rb.complete(0, false).unwrap();
        assert_eq!(rb.write_handled(0x4000), 1);
        assert_eq!(rb.entry(0).state, RbState::Reissuable);
    }

    #[test]
    fn same_page_bursts_share_an_id() {
        let mut ids = AxiIds::new(3);
        let got: Vec<u8> = [1, 1, 2, 3, 3, 4, 5, 6, 7, 8, 9].into_iter().map(|v| ids.assign(v)).collect();
        assert_eq!(got, [0, 0, 1, 2, 2, 3, 4, 5, 6, 7, 0]);
    }

    #[test]
    fn memory_arithmetic() {
        let a = buffer_arithmetic(8, 2048, 3);
        assert_eq!(a.entry_bits, 62);
        assert_eq!((a.metadata_bytes, a.data_bytes, a.factor), (64, 16 * 1024, 256));
        let b = buffer_arithmetic(16, 2048, 3);
        assert_eq!((b.metadata_bytes, b.data_bytes, b.factor), (128, 32 * 1024, 256));
    }
}
