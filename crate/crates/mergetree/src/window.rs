//! Count-based sliding windows over a preallocated ring.
//!
//! A window logically holds the `w` most recent tuples of one stream. Slots
//! are retained past expiry so that indexes which defer deletion (flag-based
//! eviction, batch discard at merge) and in-flight probes with older window
//! boundaries keep stable sequence numbers to refer to. Three positions
//! describe the ring:
//!
//! ```text
//!   tail_seq            live floor = head_seq - w         head_seq
//!      |  expired, reclaimable  |        live tuples         |
//!      v                        v                            v
//!   ...[e][e][e][e][e][e][e][e][L][L][L][L][L][L][L][L][L][L]  -> appends
//! ```
//!
//! `head_seq` counts appended tuples (the next sequence number), `tail_seq`
//! is the oldest physically retained slot. A slot is addressed by
//! `seq % capacity`; it stays valid until `reclaim_to` advances the tail past
//! it. Appending when `head_seq - tail_seq` would exceed the physical
//! capacity fails with [`WindowError::CapacityExhausted`] — that means the
//! caller's reclamation (normally a side effect of index merges or result
//! propagation) has fallen too far behind.
//!
//! Concurrency: exactly one writer may append at a time (the join engine
//! serializes appends through its queue lock); any number of readers may
//! scan concurrently. Slot words are atomics so readers never tear; the
//! ordering guarantees come from the caller's synchronization, except for the
//! `indexed` flag which is published with release/acquire on its own.

use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, Ordering};

use crate::types::Entry;

/// How appends treat the tuple that falls out of the logical window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvictionPolicy {
    /// The evicted tuple is reported to the caller, which removes it from its
    /// index immediately (classic B+-tree and round-robin indexes).
    Eager,
    /// The evicted tuple is only flagged; indexes filter it during searches
    /// and discard it wholesale at the next merge (merge/partitioned trees)
    /// or when a whole subindex expires (chained index).
    FlagOnly,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WindowError {
    /// The ring is physically full: expired slots have not been reclaimed
    /// fast enough (e.g. merges are not keeping up with the input).
    #[error("window ring full: head {head}, tail {tail}, capacity {capacity}")]
    CapacityExhausted { head: u64, tail: u64, capacity: usize },
}

/// A tuple that just left the logical window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Evicted {
    pub seq: u64,
    pub key: i64,
}

/// Result of one append.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Appended {
    /// Sequence number assigned to the new tuple.
    pub seq: u64,
    /// Set once the window has grown past its logical size.
    pub evicted: Option<Evicted>,
}

struct Slot {
    seq: AtomicU64,
    key: AtomicI64,
    expired: AtomicBool,
    indexed: AtomicBool,
}

/// Where a scan starts within the requested sequence bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanRegion {
    All,
    /// Skip everything below `seq` — used by the engine to scan only the
    /// not-yet-indexed suffix of a window.
    FromSeq(u64),
}

pub struct SlidingWindow {
    logical: usize,
    capacity: usize,
    policy: EvictionPolicy,
    slots: Box<[Slot]>,
    head: AtomicU64,
    tail: AtomicU64,
}

impl SlidingWindow {
    /// A window of logical size `w` over a ring of `capacity` slots.
    ///
    /// `capacity` must cover the worst-case reclamation lag; see
    /// [`SlidingWindow::capacity_for`].
    pub fn new(w: usize, capacity: usize, policy: EvictionPolicy) -> Self {
        assert!(w >= 1, "window size must be at least 1");
        assert!(capacity >= w + 1, "ring must be larger than the logical window");
        let slots = (0..capacity)
            .map(|_| Slot {
                seq: AtomicU64::new(u64::MAX),
                key: AtomicI64::new(0),
                expired: AtomicBool::new(false),
                indexed: AtomicBool::new(false),
            })
            .collect::<Vec<_>>()
            .into_boxed_slice();
        SlidingWindow {
            logical: w,
            capacity,
            policy,
            slots,
            head: AtomicU64::new(0),
            tail: AtomicU64::new(0),
        }
    }

    /// Ring capacity covering a window that merges at ratio `m` while
    /// `threads` workers keep `task_size` tuples each in flight.
    pub fn capacity_for(w: usize, m: f64, threads: usize, task_size: usize) -> usize {
        let merged = (w as f64 * (1.0 + m)).ceil() as usize;
        merged + threads * task_size + 64
    }

    #[inline]
    pub fn logical_size(&self) -> usize {
        self.logical
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    #[inline]
    pub fn policy(&self) -> EvictionPolicy {
        self.policy
    }

    /// Number of appended tuples == next sequence number.
    #[inline]
    pub fn head_seq(&self) -> u64 {
        self.head.load(Ordering::Relaxed)
    }

    /// Oldest physically retained sequence number.
    #[inline]
    pub fn tail_seq(&self) -> u64 {
        self.tail.load(Ordering::Relaxed)
    }

    /// First live (non-expired) sequence number right now.
    #[inline]
    pub fn live_floor(&self) -> u64 {
        self.head_seq().saturating_sub(self.logical as u64)
    }

    /// Positional expiry check; equivalent to the slot flag for FIFO appends
    /// but immune to slot reuse.
    #[inline]
    pub fn is_expired(&self, seq: u64) -> bool {
        seq < self.live_floor()
    }

    #[inline]
    fn slot(&self, seq: u64) -> &Slot {
        &self.slots[(seq % self.capacity as u64) as usize]
    }

    /// Append the next tuple. Single writer only.
    pub fn append(&self, key: i64) -> Result<Appended, WindowError> {
        let head = self.head.load(Ordering::Relaxed);
        let tail = self.tail.load(Ordering::Relaxed);
        if head - tail >= self.capacity as u64 {
            return Err(WindowError::CapacityExhausted {
                head,
                tail,
                capacity: self.capacity,
            });
        }
        let slot = self.slot(head);
        slot.key.store(key, Ordering::Relaxed);
        slot.seq.store(head, Ordering::Relaxed);
        slot.expired.store(false, Ordering::Relaxed);
        slot.indexed.store(false, Ordering::Relaxed);
        // Publish the new head after the slot body so concurrent scans that
        // observe the head also observe the slot.
        self.head.store(head + 1, Ordering::Release);

        let evicted = if head >= self.logical as u64 {
            let out = head - self.logical as u64;
            let slot = self.slot(out);
            debug_assert_eq!(slot.seq.load(Ordering::Relaxed), out);
            slot.expired.store(true, Ordering::Relaxed);
            Some(Evicted {
                seq: out,
                key: slot.key.load(Ordering::Relaxed),
            })
        } else {
            None
        };
        Ok(Appended { seq: head, evicted })
    }

    /// Release every slot below `floor` for reuse. `floor` is clamped to the
    /// live region so live tuples can never be reclaimed.
    pub fn reclaim_to(&self, floor: u64) {
        let floor = floor.min(self.live_floor());
        // Monotone max; races between reclaimers are benign.
        let mut cur = self.tail.load(Ordering::Relaxed);
        while cur < floor {
            match self.tail.compare_exchange_weak(
                cur,
                floor,
                Ordering::Relaxed,
                Ordering::Relaxed,
            ) {
                Ok(_) => break,
                Err(now) => cur = now,
            }
        }
    }

    /// Key of the slot holding `seq`. The slot must still be retained.
    #[inline]
    pub fn key_of(&self, seq: u64) -> i64 {
        debug_assert!(seq >= self.tail_seq() && seq < self.head_seq());
        debug_assert_eq!(self.slot(seq).seq.load(Ordering::Relaxed), seq);
        self.slot(seq).key.load(Ordering::Relaxed)
    }

    /// Slot-level expired flag (set at eviction time).
    #[inline]
    pub fn expired_flag(&self, seq: u64) -> bool {
        debug_assert!(seq >= self.tail_seq() && seq < self.head_seq());
        self.slot(seq).expired.load(Ordering::Relaxed)
    }

    /// Mark `seq` as inserted into its stream's index (release-published for
    /// the edge protocol).
    #[inline]
    pub fn mark_indexed(&self, seq: u64) {
        self.slot(seq).indexed.store(true, Ordering::Release);
    }

    #[inline]
    pub fn is_indexed(&self, seq: u64) -> bool {
        self.slot(seq).indexed.load(Ordering::Acquire)
    }

    /// Collect slots with `key` in `[key_lo, key_hi]` and `seq` in
    /// `[seq_lo, seq_end)`, ascending by seq.
    ///
    /// The caller's sequence bounds define liveness: slots below `seq_lo` are
    /// expired from the caller's point of view and slots at/above `seq_end`
    /// have not arrived yet. Bounds are clamped to the physically retained
    /// range.
    pub fn scan(
        &self,
        key_lo: i64,
        key_hi: i64,
        seq_lo: u64,
        seq_end: u64,
        region: ScanRegion,
        out: &mut Vec<Entry>,
    ) {
        let mut lo = seq_lo.max(self.tail_seq());
        if let ScanRegion::FromSeq(s) = region {
            lo = lo.max(s);
        }
        let end = seq_end.min(self.head_seq());
        let mut seq = lo;
        while seq < end {
            let slot = self.slot(seq);
            debug_assert_eq!(slot.seq.load(Ordering::Relaxed), seq);
            let key = slot.key.load(Ordering::Relaxed);
            if key >= key_lo && key <= key_hi {
                out.push(Entry::new(key, seq));
            }
            seq += 1;
        }
    }
}
