//! Two-component index: a small mutable B+-tree in front of a large
//! read-only array tree.
//!
//! Inserts land in the mutable component; probes search both. After a fixed
//! number of inserts — the merge threshold, chosen as a fraction `m` of the
//! window size — the two components are merged: live entries of the
//! read-only tree and everything in the mutable tree are combined into a
//! fresh read-only tree, and the mutable side starts over empty.
//!
//! Expired entries are never removed one by one. They simply stop matching
//! probe sequence filters, and the merge drops them wholesale — that is the
//! entire deletion story, which is why the per-tuple maintenance cost of
//! this index is the merge cost spread over `m·w` inserts.
//!
//! The read-only component is held behind an [`Arc`], so a reader that
//! cloned the handle keeps a consistent tree even while a merge installs a
//! replacement.

use std::sync::Arc;

use crate::btree::BPlusTree;
use crate::immutable::ImmutableTree;
use crate::types::{Entry, TreeGeometry};

/// Inserts between merges for a window of `w` and merge ratio `m`.
pub fn merge_threshold(window: usize, merge_ratio: f64) -> usize {
    assert!(merge_ratio > 0.0, "merge ratio must be positive");
    ((window as f64 * merge_ratio).ceil() as usize).max(1)
}

pub struct MergeTree {
    mutable: BPlusTree,
    immutable: Arc<ImmutableTree>,
    geometry: TreeGeometry,
    threshold: usize,
    since_merge: usize,
    merges: u64,
}

impl MergeTree {
    pub fn new(threshold: usize, geometry: TreeGeometry) -> Self {
        assert!(threshold >= 1);
        MergeTree {
            mutable: BPlusTree::new(geometry.mutable_fan_out, geometry.mutable_leaf_capacity),
            immutable: Arc::new(ImmutableTree::empty(
                geometry.immutable_fan_out,
                geometry.immutable_leaf_capacity,
            )),
            geometry,
            threshold,
            since_merge: 0,
            merges: 0,
        }
    }

    #[inline]
    pub fn threshold(&self) -> usize {
        self.threshold
    }

    #[inline]
    pub fn merge_count(&self) -> u64 {
        self.merges
    }

    #[inline]
    pub fn mutable_len(&self) -> usize {
        self.mutable.len()
    }

    #[inline]
    pub fn immutable_len(&self) -> usize {
        self.immutable.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.mutable.len() + self.immutable.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Handle to the current read-only component.
    pub fn immutable_handle(&self) -> Arc<ImmutableTree> {
        Arc::clone(&self.immutable)
    }

    /// Insert and report whether the merge threshold has been reached.
    pub fn insert(&mut self, key: i64, seq: u64) -> bool {
        self.mutable.insert(key, seq);
        self.since_merge += 1;
        self.merge_due()
    }

    #[inline]
    pub fn merge_due(&self) -> bool {
        self.since_merge >= self.threshold
    }

    /// Combine both components into a fresh read-only tree, dropping
    /// entries with `seq < floor` (slid out of the window).
    pub fn merge(&mut self, floor: u64) {
        let fresh = self.mutable.drain_sorted();
        let merged = merge_live(self.immutable.entries(), &fresh, floor);
        self.immutable = Arc::new(ImmutableTree::build(
            self.geometry.immutable_fan_out,
            self.geometry.immutable_leaf_capacity,
            merged,
        ));
        self.since_merge = 0;
        self.merges += 1;
    }

    /// Collect entries with key in `[lo, hi]` and seq in `[seq_lo, seq_end)`.
    pub fn probe(&self, lo: i64, hi: i64, seq_lo: u64, seq_end: u64, out: &mut Vec<Entry>) {
        let accept = |seq: u64| seq >= seq_lo && seq < seq_end;
        self.immutable.range_search(lo, hi, accept, out);
        self.mutable.range_search(lo, hi, accept, out);
    }

    #[inline]
    pub fn geometry(&self) -> TreeGeometry {
        self.geometry
    }

    /// Inputs for an offline rebuild: the current read-only component and a
    /// copy of the staged entries. The tree itself is left untouched, so
    /// searches proceed against it while the replacement is built elsewhere.
    pub fn snapshot_parts(&self) -> (Arc<ImmutableTree>, Vec<Entry>) {
        (Arc::clone(&self.immutable), self.mutable.iter().collect())
    }

    /// Adopt a tree built offline from [`MergeTree::snapshot_parts`] output.
    /// The staged component is emptied: every staged entry present at
    /// snapshot time now lives in `archive`.
    pub fn install(&mut self, archive: Arc<ImmutableTree>) {
        self.immutable = archive;
        self.mutable = BPlusTree::new(
            self.geometry.mutable_fan_out,
            self.geometry.mutable_leaf_capacity,
        );
        self.since_merge = 0;
        self.merges += 1;
    }
}

/// Merge two `(key, seq)`-sorted runs, keeping entries with `seq >= floor`.
pub(crate) fn merge_live(a: &[Entry], b: &[Entry], floor: u64) -> Vec<Entry> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let e = if a[i] <= b[j] {
            let e = a[i];
            i += 1;
            e
        } else {
            let e = b[j];
            j += 1;
            e
        };
        if e.seq >= floor {
            out.push(e);
        }
    }
    for &e in &a[i..] {
        if e.seq >= floor {
            out.push(e);
        }
    }
    for &e in &b[j..] {
        if e.seq >= floor {
            out.push(e);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn threshold_arithmetic() {
        assert_eq!(merge_threshold(100, 0.5), 50);
        assert_eq!(merge_threshold(100, 1.0), 100);
        assert_eq!(merge_threshold(3, 0.1), 1);
        assert_eq!(merge_threshold(1000, 0.333), 333);
    }

    #[test]
    fn merge_fires_at_threshold_and_resets() {
        let mut t = MergeTree::new(50, TreeGeometry::default());
        for seq in 0..49u64 {
            assert!(!t.insert(seq as i64, seq), "seq {seq} not due yet");
        }
        assert!(t.insert(49, 49), "50th insert reaches threshold");
        assert!(t.merge_due());
        t.merge(0);
        assert!(!t.merge_due());
        assert_eq!(t.merge_count(), 1);
        assert_eq!(t.mutable_len(), 0);
        assert_eq!(t.immutable_len(), 50);
    }

    #[test]
    fn merge_unions_and_drops_expired() {
        let mut t = MergeTree::new(1000, TreeGeometry::default());
        for seq in 0..50u64 {
            t.insert(seq as i64 % 7, seq);
        }
        t.merge(20);
        assert_eq!(t.immutable_len(), 30);
        for seq in 50..80u64 {
            t.insert(seq as i64 % 7, seq);
        }
        t.merge(40);
        let seqs: Vec<u64> = {
            let mut s: Vec<u64> = t.immutable_handle().entries().iter().map(|e| e.seq).collect();
            s.sort_unstable();
            s
        };
        assert_eq!(seqs, (40..80).collect::<Vec<u64>>());
        assert_eq!(t.mutable_len(), 0);
    }

    #[test]
    fn old_handle_survives_merge_unchanged() {
        let mut t = MergeTree::new(10, TreeGeometry::default());
        for seq in 0..10u64 {
            t.insert(seq as i64, seq);
        }
        t.merge(0);
        let before = t.immutable_handle();
        let before_len = before.len();
        for seq in 10..20u64 {
            t.insert(seq as i64, seq);
        }
        t.merge(0);
        let after = t.immutable_handle();
        assert!(!Arc::ptr_eq(&before, &after));
        assert_eq!(before.len(), before_len, "old tree untouched");
        assert_eq!(after.len(), 20);
    }

    #[test]
    fn probe_spans_both_components() {
        let mut rng = StdRng::seed_from_u64(5);
        let mut t = MergeTree::new(64, TreeGeometry::default());
        let mut all: Vec<Entry> = Vec::new();
        let mut floor = 0u64;
        for seq in 0..3000u64 {
            let key = rng.gen_range(0..400);
            if t.insert(key, seq) {
                floor = seq.saturating_sub(1000);
                t.merge(floor);
            }
            all.push(Entry::new(key, seq));
        }
        for _ in 0..200 {
            let a = rng.gen_range(0..400);
            let b = rng.gen_range(0..400);
            let (lo, hi) = (a.min(b), a.max(b));
            let s_lo = rng.gen_range(floor..3000);
            let s_end = rng.gen_range(s_lo..=3000);
            let mut expect: Vec<Entry> = all
                .iter()
                .filter(|e| e.key >= lo && e.key <= hi && e.seq >= s_lo && e.seq < s_end)
                .copied()
                .collect();
            expect.sort();
            let mut got = Vec::new();
            t.probe(lo, hi, s_lo, s_end, &mut got);
            got.sort();
            assert_eq!(got, expect, "range [{lo},{hi}] seq [{s_lo},{s_end})");
        }
    }

    #[test]
    fn merge_live_two_pointer_agrees_with_sort() {
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..50 {
            let mut a: Vec<Entry> = (0..rng.gen_range(0..100u64))
                .map(|i| Entry::new(rng.gen_range(0..50), i * 2))
                .collect();
            let mut b: Vec<Entry> = (0..rng.gen_range(0..100u64))
                .map(|i| Entry::new(rng.gen_range(0..50), i * 2 + 1))
                .collect();
            a.sort();
            b.sort();
            let floor = rng.gen_range(0..120);
            let got = merge_live(&a, &b, floor);
            let mut expect: Vec<Entry> = a
                .iter()
                .chain(b.iter())
                .filter(|e| e.seq >= floor)
                .copied()
                .collect();
            expect.sort();
            assert_eq!(got, expect);
        }
    }
}
