//! Position window a helper thread keeps relative to each worker.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrefetchWindow {
    /// Minimum distance ahead of the worker, in iterations.
    pub min: u64,
    /// Maximum distance ahead of the worker, in iterations.
    pub max: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// Prefetch the iteration at this position; the next position is one further.
    Prefetch(u64),
    /// Too far ahead of the worker.
    Skip,
}

impl PrefetchWindow {
    pub fn new(min: u64, max: u64) -> Self {
        assert!(min <= max, "window minimum exceeds maximum");
        Self { min, max }
    }

    pub fn unbounded() -> Self {
        Self { min: 0, max: u64::MAX }
    }

    /// Applies the window rule for worker position `w` and helper position `*p`,
    /// advancing `*p` when a prefetch is due.
    pub fn decide(&self, w: u64, p: &mut u64) -> Decision {
        let lo = w.saturating_add(self.min);
        let hi = w.saturating_add(self.max);
        if *p > hi {
            return Decision::Skip;
        }
        if *p < lo {
            *p = lo;
        }
        let at = *p;
        *p += 1;
        Decision::Prefetch(at)
    }
}
