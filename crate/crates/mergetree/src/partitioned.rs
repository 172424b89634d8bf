//! Concurrent merge tree whose mutable stage is range-partitioned.
//!
//! The read-only archive tree doubles as the partitioning function: a
//! configured number of routing steps from its root lands on an inner node,
//! and each node at that level owns one *subindex* — a small mutable
//! B+-tree guarded by its own lock. An insert descends the archive (no
//! locks; it is immutable), locks exactly one subindex, and inserts there.
//! Inserts that route to different subindexes proceed in parallel.
//!
//! A probe first scans the archive without any lock, then walks the
//! subindexes covering its key range in ascending order. Neighboring
//! subindexes are chained hand over hand: the successor's lock is acquired
//! *before* the current one is released, so a probe observes a consistent
//! cut of the partitioned stage without ever holding more than two locks.
//! All multi-lock acquisition is ascending, which rules out deadlock among
//! probes and single-lock inserts.
//!
//! A merge folds every subindex plus the live part of the archive into a
//! fresh archive, then re-derives the partitioning from the new tree's
//! shape — a *generation*: `{archive, subindexes, routing depth}` swapped in
//! atomically. Readers that loaded the old generation keep using it; retired
//! generations wait in a graveyard until [`PartitionedTree::reclaim_generations`]
//! is called at a point where no reader can still hold one.
//!
//! # Quiescence contract
//!
//! [`PartitionedTree::snapshot`], [`PartitionedTree::install`], and
//! [`PartitionedTree::merge`] expect no concurrent inserts (the engine
//! closes its task gate and drains workers first; inserts arriving during an
//! offline rebuild are buffered and replayed after `install`). Probes may
//! run concurrently with everything except `reclaim_generations`.

use std::sync::atomic::{AtomicPtr, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::btree::BPlusTree;
use crate::immutable::ImmutableTree;
use crate::merge_tree::merge_live;
use crate::types::{Entry, TreeGeometry};

/// Routing steps actually used for an archive of the given depth: the
/// configured depth, clamped so the routing level stays above the leaves
/// (and to the root for a trivial archive).
pub fn effective_depth(configured: usize, archive_depth: usize) -> usize {
    configured.min(archive_depth.saturating_sub(1))
}

/// Lock acquisition trace of a probe, for inspecting the handoff protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LockEvent {
    Acquired(usize),
    Released(usize),
}

struct Generation {
    archive: Arc<ImmutableTree>,
    subindexes: Vec<Mutex<BPlusTree>>,
    insert_counts: Vec<AtomicU64>,
    routing_depth: usize,
}

impl Generation {
    fn new(archive: Arc<ImmutableTree>, geometry: TreeGeometry, configured_depth: usize) -> Self {
        let routing_depth = effective_depth(configured_depth, archive.depth());
        let count = archive.level_width(routing_depth).max(1);
        Generation {
            subindexes: (0..count)
                .map(|_| {
                    Mutex::new(BPlusTree::new(
                        geometry.mutable_fan_out,
                        geometry.mutable_leaf_capacity,
                    ))
                })
                .collect(),
            insert_counts: (0..count).map(|_| AtomicU64::new(0)).collect(),
            archive,
            routing_depth,
        }
    }

    #[inline]
    fn route(&self, key: i64) -> usize {
        self.archive.descend_to_level(key, self.routing_depth)
    }
}

/// Entries captured from a generation for an offline rebuild.
pub struct MergeSnapshot {
    archive: Arc<ImmutableTree>,
    staged: Vec<Entry>,
}

impl MergeSnapshot {
    /// Entries currently staged in the mutable subindexes.
    pub fn staged_len(&self) -> usize {
        self.staged.len()
    }
}

/// A fully built replacement generation, ready to swap in.
pub struct PreparedMerge(Box<Generation>);

pub struct PartitionedTree {
    current: AtomicPtr<Generation>,
    graveyard: Mutex<Vec<*mut Generation>>,
    geometry: TreeGeometry,
    insertion_depth: usize,
    threshold: u64,
    since_merge: AtomicU64,
    merges: AtomicU64,
}

// The raw pointers are owned boxes managed under the documented quiescence
// contract; all shared mutable state behind them is lock- or atomic-guarded.
unsafe impl Send for PartitionedTree {}
unsafe impl Sync for PartitionedTree {}

impl PartitionedTree {
    pub fn new(threshold: usize, insertion_depth: usize, geometry: TreeGeometry) -> Self {
        assert!(threshold >= 1);
        let archive = Arc::new(ImmutableTree::empty(
            geometry.immutable_fan_out,
            geometry.immutable_leaf_capacity,
        ));
        let first = Box::new(Generation::new(archive, geometry, insertion_depth));
        PartitionedTree {
            current: AtomicPtr::new(Box::into_raw(first)),
            graveyard: Mutex::new(Vec::new()),
            geometry,
            insertion_depth,
            threshold: threshold as u64,
            since_merge: AtomicU64::new(0),
            merges: AtomicU64::new(0),
        }
    }

    fn generation(&self) -> &Generation {
        // Safety: the pointer always targets a live generation. `install`
        // moves replaced generations to the graveyard instead of freeing
        // them, and `reclaim_generations` (the only free) runs only when no
        // operation is in flight, per the module contract.
        unsafe { &*self.current.load(Ordering::Acquire) }
    }

    #[inline]
    pub fn threshold(&self) -> usize {
        self.threshold as usize
    }

    #[inline]
    pub fn merge_count(&self) -> u64 {
        self.merges.load(Ordering::Relaxed)
    }

    #[inline]
    pub fn merge_due(&self) -> bool {
        self.since_merge.load(Ordering::Relaxed) >= self.threshold
    }

    pub fn subindex_count(&self) -> usize {
        self.generation().subindexes.len()
    }

    pub fn routing_depth(&self) -> usize {
        self.generation().routing_depth
    }

    /// Ordinal of the subindex that currently receives `key`.
    pub fn route_of(&self, key: i64) -> usize {
        self.generation().route(key)
    }

    pub fn archive_len(&self) -> usize {
        self.generation().archive.len()
    }

    /// Inserts routed to each subindex since the current generation was
    /// installed.
    pub fn insert_histogram(&self) -> Vec<u64> {
        self.generation()
            .insert_counts
            .iter()
            .map(|c| c.load(Ordering::Relaxed))
            .collect()
    }

    /// Insert an entry; returns whether the merge threshold is reached.
    pub fn insert(&self, key: i64, seq: u64) -> bool {
        let gen = self.generation();
        let ordinal = gen.route(key);
        gen.subindexes[ordinal].lock().insert(key, seq);
        gen.insert_counts[ordinal].fetch_add(1, Ordering::Relaxed);
        self.since_merge.fetch_add(1, Ordering::Relaxed) + 1 >= self.threshold
    }

    /// Collect entries with key in `[lo, hi]` and seq in `[seq_lo, seq_end)`.
    pub fn probe(&self, lo: i64, hi: i64, seq_lo: u64, seq_end: u64, out: &mut Vec<Entry>) {
        self.probe_inner(lo, hi, seq_lo, seq_end, out, None);
    }

    /// [`probe`](Self::probe), recording every lock acquisition and release.
    pub fn probe_traced(
        &self,
        lo: i64,
        hi: i64,
        seq_lo: u64,
        seq_end: u64,
        out: &mut Vec<Entry>,
        trace: &mut Vec<LockEvent>,
    ) {
        self.probe_inner(lo, hi, seq_lo, seq_end, out, Some(trace));
    }

    /// The lock-free part of a probe: the archive scan only.
    pub fn scan_archive(&self, lo: i64, hi: i64, seq_lo: u64, seq_end: u64, out: &mut Vec<Entry>) {
        self.generation()
            .archive
            .range_search(lo, hi, |s| s >= seq_lo && s < seq_end, out);
    }

    fn probe_inner(
        &self,
        lo: i64,
        hi: i64,
        seq_lo: u64,
        seq_end: u64,
        out: &mut Vec<Entry>,
        mut trace: Option<&mut Vec<LockEvent>>,
    ) {
        debug_assert!(lo <= hi);
        let gen = self.generation();
        let accept = |s: u64| s >= seq_lo && s < seq_end;
        gen.archive.range_search(lo, hi, accept, out);

        let first = gen.route(lo);
        let last = gen.route(hi);
        debug_assert!(first <= last);
        let mut guard = gen.subindexes[first].lock();
        if let Some(t) = trace.as_deref_mut() {
            t.push(LockEvent::Acquired(first));
        }
        for ordinal in first..=last {
            guard.range_search(lo, hi, accept, out);
            if ordinal < last {
                let next = gen.subindexes[ordinal + 1].lock();
                if let Some(t) = trace.as_deref_mut() {
                    t.push(LockEvent::Acquired(ordinal + 1));
                }
                guard = next; // drops the previous guard: release after acquire
                if let Some(t) = trace.as_deref_mut() {
                    t.push(LockEvent::Released(ordinal));
                }
            }
        }
        drop(guard);
        if let Some(t) = trace {
            t.push(LockEvent::Released(last));
        }
    }

    /// Capture the current contents for an offline rebuild. Subindexes are
    /// read under their locks, ascending, and left untouched.
    pub fn snapshot(&self) -> MergeSnapshot {
        let gen = self.generation();
        let mut staged = Vec::new();
        for sub in &gen.subindexes {
            staged.extend(sub.lock().iter());
        }
        debug_assert!(
            staged.windows(2).all(|w| w[0] < w[1]),
            "subindex ranges are ordered and disjoint"
        );
        MergeSnapshot {
            archive: Arc::clone(&gen.archive),
            staged,
        }
    }

    /// Fold a snapshot into a fresh generation, dropping entries with
    /// `seq < floor`. Pure computation — runs off the hot path.
    pub fn prepare_merge(&self, snapshot: MergeSnapshot, floor: u64) -> PreparedMerge {
        let merged = merge_live(snapshot.archive.entries(), &snapshot.staged, floor);
        let archive = Arc::new(ImmutableTree::build(
            self.geometry.immutable_fan_out,
            self.geometry.immutable_leaf_capacity,
            merged,
        ));
        PreparedMerge(Box::new(Generation::new(
            archive,
            self.geometry,
            self.insertion_depth,
        )))
    }

    /// Swap in a prepared generation; returns the retired generation's
    /// insert histogram. The retired generation is parked in the graveyard.
    pub fn install(&self, prepared: PreparedMerge) -> Vec<u64> {
        let fresh = Box::into_raw(prepared.0);
        let old = self.current.swap(fresh, Ordering::AcqRel);
        // Safety: `old` is the generation this tree owned until the swap;
        // it stays allocated until reclaimed.
        let histogram = unsafe {
            (*old)
                .insert_counts
                .iter()
                .map(|c| c.load(Ordering::Relaxed))
                .collect()
        };
        self.graveyard.lock().push(old);
        self.since_merge.store(0, Ordering::Relaxed);
        self.merges.fetch_add(1, Ordering::Relaxed);
        histogram
    }

    /// Snapshot, rebuild, and install in one step.
    pub fn merge(&self, floor: u64) -> Vec<u64> {
        let snapshot = self.snapshot();
        let prepared = self.prepare_merge(snapshot, floor);
        self.install(prepared)
    }

    /// Free retired generations. Callers must guarantee that no probe or
    /// insert that might have loaded an old generation is still running.
    pub fn reclaim_generations(&self) {
        let retired: Vec<*mut Generation> = {
            let mut g = self.graveyard.lock();
            g.drain(..).collect()
        };
        for ptr in retired {
            // Safety: graveyard pointers are uniquely owned boxes; the
            // caller vouches that no reader still holds a reference.
            unsafe { drop(Box::from_raw(ptr)) }
        }
    }

    pub fn retired_generations(&self) -> usize {
        self.graveyard.lock().len()
    }

    /// Entries across archive and subindexes, including not-yet-merged
    /// expired ones.
    pub fn len(&self) -> usize {
        let gen = self.generation();
        gen.archive.len()
            + gen
                .subindexes
                .iter()
                .map(|s| s.lock().len())
                .sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Drop for PartitionedTree {
    fn drop(&mut self) {
        self.reclaim_generations();
        let current = *self.current.get_mut();
        // Safety: exclusive access in drop; the pointer is the owned
        // current generation.
        unsafe { drop(Box::from_raw(current)) }
    }
}

/// Single-threaded twin of [`PartitionedTree`]: identical routing, merge,
/// and probe semantics with plain fields instead of locks and atomics. The
/// reference executor uses it to measure the same index organization with
/// synchronization costs removed.
pub struct UnsyncPartitionedTree {
    archive: ImmutableTree,
    subindexes: Vec<BPlusTree>,
    insert_counts: Vec<u64>,
    routing_depth: usize,
    geometry: TreeGeometry,
    insertion_depth: usize,
    threshold: usize,
    since_merge: usize,
    merges: u64,
}

impl UnsyncPartitionedTree {
    pub fn new(threshold: usize, insertion_depth: usize, geometry: TreeGeometry) -> Self {
        assert!(threshold >= 1);
        let archive =
            ImmutableTree::empty(geometry.immutable_fan_out, geometry.immutable_leaf_capacity);
        let routing_depth = effective_depth(insertion_depth, archive.depth());
        let count = archive.level_width(routing_depth).max(1);
        UnsyncPartitionedTree {
            archive,
            subindexes: (0..count)
                .map(|_| {
                    BPlusTree::new(geometry.mutable_fan_out, geometry.mutable_leaf_capacity)
                })
                .collect(),
            insert_counts: vec![0; count],
            routing_depth,
            geometry,
            insertion_depth,
            threshold,
            since_merge: 0,
            merges: 0,
        }
    }

    #[inline]
    fn route(&self, key: i64) -> usize {
        self.archive.descend_to_level(key, self.routing_depth)
    }

    pub fn insert(&mut self, key: i64, seq: u64) -> bool {
        let ordinal = self.route(key);
        self.subindexes[ordinal].insert(key, seq);
        self.insert_counts[ordinal] += 1;
        self.since_merge += 1;
        self.since_merge >= self.threshold
    }

    #[inline]
    pub fn merge_due(&self) -> bool {
        self.since_merge >= self.threshold
    }

    pub fn probe(&self, lo: i64, hi: i64, seq_lo: u64, seq_end: u64, out: &mut Vec<Entry>) {
        let accept = |s: u64| s >= seq_lo && s < seq_end;
        self.archive.range_search(lo, hi, accept, out);
        let first = self.route(lo);
        let last = self.route(hi);
        for sub in &self.subindexes[first..=last] {
            sub.range_search(lo, hi, accept, out);
        }
    }

    pub fn merge(&mut self, floor: u64) -> Vec<u64> {
        let mut staged = Vec::new();
        for sub in &mut self.subindexes {
            staged.extend(sub.iter());
        }
        let merged = merge_live(self.archive.entries(), &staged, floor);
        self.archive = ImmutableTree::build(
            self.geometry.immutable_fan_out,
            self.geometry.immutable_leaf_capacity,
            merged,
        );
        self.routing_depth = effective_depth(self.insertion_depth, self.archive.depth());
        let count = self.archive.level_width(self.routing_depth).max(1);
        self.subindexes = (0..count)
            .map(|_| {
                BPlusTree::new(
                    self.geometry.mutable_fan_out,
                    self.geometry.mutable_leaf_capacity,
                )
            })
            .collect();
        let histogram = std::mem::replace(&mut self.insert_counts, vec![0; count]);
        self.since_merge = 0;
        self.merges += 1;
        histogram
    }

    #[inline]
    pub fn subindex_count(&self) -> usize {
        self.subindexes.len()
    }

    #[inline]
    pub fn routing_depth(&self) -> usize {
        self.routing_depth
    }

    /// Ordinal of the subindex that currently receives `key`.
    #[inline]
    pub fn route_of(&self, key: i64) -> usize {
        self.route(key)
    }

    #[inline]
    pub fn merge_count(&self) -> u64 {
        self.merges
    }

    pub fn insert_histogram(&self) -> Vec<u64> {
        self.insert_counts.clone()
    }

    pub fn len(&self) -> usize {
        self.archive.len() + self.subindexes.iter().map(|s| s.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
