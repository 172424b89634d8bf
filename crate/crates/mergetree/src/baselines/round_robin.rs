//! Round-robin partitioned B+-tree.
//!
//! Entry `seq` lives in partition `seq % P`, so consecutive arrivals spread
//! evenly and the partition of any entry is computable without bookkeeping:
//! inserts and the eviction of the tuple sliding out of the window each
//! touch exactly one partition. The price is paid on probes, which must
//! search all `P` partitions — there is no key range discipline.

use crate::btree::BPlusTree;
use crate::types::TreeGeometry;
use crate::types::Entry;

pub struct RoundRobinIndex {
    parts: Vec<BPlusTree>,
}

impl RoundRobinIndex {
    pub fn new(partitions: usize, geometry: TreeGeometry) -> Self {
        assert!(partitions >= 1);
        RoundRobinIndex {
            parts: (0..partitions)
                .map(|_| BPlusTree::new(geometry.mutable_fan_out, geometry.mutable_leaf_capacity))
                .collect(),
        }
    }

    #[inline]
    pub fn partitions(&self) -> usize {
        self.parts.len()
    }

    #[inline]
    pub fn part_len(&self, i: usize) -> usize {
        self.parts[i].len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.parts.iter().map(|p| p.len()).sum()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.parts.iter().all(|p| p.is_empty())
    }

    #[inline]
    fn part_of(&self, seq: u64) -> usize {
        (seq % self.parts.len() as u64) as usize
    }

    pub fn insert(&mut self, key: i64, seq: u64) {
        let p = self.part_of(seq);
        self.parts[p].insert(key, seq);
    }

    pub fn delete(&mut self, key: i64, seq: u64) -> bool {
        let p = self.part_of(seq);
        self.parts[p].delete(key, seq)
    }

    /// Collect entries with key in `[lo, hi]` and seq in `[seq_lo, seq_end)`.
    pub fn probe(&self, lo: i64, hi: i64, seq_lo: u64, seq_end: u64, out: &mut Vec<Entry>) {
        for part in &self.parts {
            part.range_search(lo, hi, |seq| seq >= seq_lo && seq < seq_end, out);
        }
    }
}
