//! Chain of time-ordered subindexes.
//!
//! New entries go into one small active B+-tree. When it reaches the
//! per-subindex capacity — the window size spread over `L − 1` runs — it is
//! archived as-is (or converted into a read-only array tree, which trades a
//! one-off rebuild for cheaper probes) and a fresh active tree starts.
//!
//! Because arrivals carry ascending sequence numbers, every archived run
//! covers a contiguous sequence span. Expiry never touches individual
//! entries: once a run's newest sequence falls below the window floor the
//! whole run is dropped. Probes search the active tree plus every archived
//! run whose span still overlaps the probe's sequence range.

use std::collections::VecDeque;

use crate::btree::BPlusTree;
use crate::immutable::ImmutableTree;
use crate::types::TreeGeometry;
use crate::types::Entry;

/// How archived runs are stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainStyle {
    /// Archive the full B+-tree unchanged.
    Mutable,
    /// Convert each archived run into a read-only array tree.
    Rebuilt,
}

/// Entries per subindex for a window of `w` split across `L − 1` full runs
/// (the active tree is the `L`-th).
pub fn subindex_capacity(window: usize, chain_length: usize) -> usize {
    assert!(chain_length >= 2, "a chain needs at least two subindexes");
    window.div_ceil(chain_length - 1)
}

enum Run {
    Tree(BPlusTree),
    Array(ImmutableTree),
}

struct Archived {
    run: Run,
    min_seq: u64,
    max_seq: u64,
}

pub struct ChainedIndex {
    active: BPlusTree,
    archived: VecDeque<Archived>,
    capacity: usize,
    chain_length: usize,
    style: ChainStyle,
    geometry: TreeGeometry,
    archives: u64,
}

impl ChainedIndex {
    pub fn new(window: usize, chain_length: usize, style: ChainStyle, geometry: TreeGeometry) -> Self {
        ChainedIndex {
            active: BPlusTree::new(geometry.mutable_fan_out, geometry.mutable_leaf_capacity),
            archived: VecDeque::new(),
            capacity: subindex_capacity(window, chain_length),
            chain_length,
            style,
            geometry,
            archives: 0,
        }
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    #[inline]
    pub fn chain_length(&self) -> usize {
        self.chain_length
    }

    #[inline]
    pub fn archived_runs(&self) -> usize {
        self.archived.len()
    }

    #[inline]
    pub fn active_len(&self) -> usize {
        self.active.len()
    }

    #[inline]
    pub fn archive_count(&self) -> u64 {
        self.archives
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.active.len()
            + self
                .archived
                .iter()
                .map(|a| match &a.run {
                    Run::Tree(t) => t.len(),
                    Run::Array(t) => t.len(),
                })
                .sum::<usize>()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, key: i64, seq: u64) {
        if self.active.len() >= self.capacity {
            self.archive();
        }
        self.active.insert(key, seq);
    }

    fn archive(&mut self) {
        let full = std::mem::replace(
            &mut self.active,
            BPlusTree::new(self.geometry.mutable_fan_out, self.geometry.mutable_leaf_capacity),
        );
        let (min_seq, max_seq) = full
            .iter()
            .fold((u64::MAX, 0), |(lo, hi), e| (lo.min(e.seq), hi.max(e.seq)));
        let run = match self.style {
            ChainStyle::Mutable => Run::Tree(full),
            ChainStyle::Rebuilt => {
                let mut full = full;
                Run::Array(ImmutableTree::build(
                    self.geometry.immutable_fan_out,
                    self.geometry.immutable_leaf_capacity,
                    full.drain_sorted(),
                ))
            }
        };
        self.archived.push_back(Archived { run, min_seq, max_seq });
        self.archives += 1;
    }

    /// Drop archived runs whose newest entry has slid out of the window.
    pub fn drop_expired(&mut self, floor: u64) {
        while let Some(front) = self.archived.front() {
            if front.max_seq < floor {
                self.archived.pop_front();
            } else {
                break;
            }
        }
    }

    /// Collect entries with key in `[lo, hi]` and seq in `[seq_lo, seq_end)`.
    pub fn probe(&self, lo: i64, hi: i64, seq_lo: u64, seq_end: u64, out: &mut Vec<Entry>) {
        let accept = |seq: u64| seq >= seq_lo && seq < seq_end;
        for archived in &self.archived {
            if archived.max_seq < seq_lo || archived.min_seq >= seq_end {
                continue;
            }
            match &archived.run {
                Run::Tree(t) => t.range_search(lo, hi, accept, out),
                Run::Array(t) => t.range_search(lo, hi, accept, out),
            }
        }
        self.active.range_search(lo, hi, accept, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn capacity_split() {
        assert_eq!(subindex_capacity(100, 2), 100);
        assert_eq!(subindex_capacity(100, 3), 50);
        assert_eq!(subindex_capacity(100, 8), 15);
        assert_eq!(subindex_capacity(7, 4), 3);
    }

    #[test]
    fn archives_roll_and_expire() {
        for style in [ChainStyle::Mutable, ChainStyle::Rebuilt] {
            let w = 100;
            let l = 3;
            let mut c = ChainedIndex::new(w, l, style, TreeGeometry::default());
            assert_eq!(c.capacity(), 50);
            for seq in 0..50u64 {
                c.insert(seq as i64, seq);
            }
            assert_eq!(c.archived_runs(), 0);
            c.insert(50, 50);
            assert_eq!(c.archived_runs(), 1);
            assert_eq!(c.active_len(), 1);

            // steady state over many windows: never more than L−1 full runs
            for seq in 51..2000u64 {
                c.insert(seq as i64, seq);
                c.drop_expired(seq.saturating_sub(w as u64 - 1));
                assert!(
                    c.archived_runs() <= l - 1,
                    "style {style:?} seq {seq}: {} runs",
                    c.archived_runs()
                );
            }
            assert!(c.archive_count() > 30);
        }
    }

    #[test]
    fn drop_expired_keeps_partially_live_runs() {
        let mut c = ChainedIndex::new(40, 3, ChainStyle::Mutable, TreeGeometry::default());
        for seq in 0..60u64 {
            c.insert(seq as i64, seq);
        }
        assert_eq!(c.archived_runs(), 2);
        // first run covers 0..=19: floor 19 keeps it, floor 20 drops it
        c.drop_expired(19);
        assert_eq!(c.archived_runs(), 2);
        c.drop_expired(20);
        assert_eq!(c.archived_runs(), 1);
        c.drop_expired(60);
        assert_eq!(c.archived_runs(), 0);
    }

    #[test]
    fn probe_matches_brute_force_in_both_styles() {
        for style in [ChainStyle::Mutable, ChainStyle::Rebuilt] {
            let mut rng = StdRng::seed_from_u64(21);
            let w = 256;
            let mut c = ChainedIndex::new(w, 4, style, TreeGeometry::default());
            let mut all = Vec::new();
            for seq in 0..4000u64 {
                let key = rng.gen_range(0..500);
                c.insert(key, seq);
                all.push(Entry::new(key, seq));
                c.drop_expired(seq.saturating_sub(w as u64 - 1));
            }
            for _ in 0..200 {
                let a = rng.gen_range(0..500);
                let b = rng.gen_range(0..500);
                let (lo, hi) = (a.min(b), a.max(b));
                let s_lo = rng.gen_range(3744..4000);
                let s_end = rng.gen_range(s_lo..=4000);
                let mut expect: Vec<Entry> = all
                    .iter()
                    .filter(|e| e.key >= lo && e.key <= hi && e.seq >= s_lo && e.seq < s_end)
                    .copied()
                    .collect();
                expect.sort();
                let mut got = Vec::new();
                c.probe(lo, hi, s_lo, s_end, &mut got);
                got.sort();
                assert_eq!(got, expect, "style {style:?} range [{lo},{hi}]");
            }
        }
    }
}
