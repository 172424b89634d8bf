//! Shared value types: streams, tuples, index entries, band predicates.

use std::fmt;

/// One of the two input streams of a two-way join.
///
/// A self-join uses [`Stream::R`] for every tuple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    R,
    S,
}

impl Stream {
    /// Side index, usable for `[T; 2]` per-stream state.
    #[inline]
    pub fn side(self) -> usize {
        match self {
            Stream::R => 0,
            Stream::S => 1,
        }
    }

    /// The stream whose window this stream's tuples probe.
    #[inline]
    pub fn opposite(self) -> Stream {
        match self {
            Stream::R => Stream::S,
            Stream::S => Stream::R,
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stream::R => write!(f, "R"),
            Stream::S => write!(f, "S"),
        }
    }
}

/// A stream tuple: arrival position within its stream plus the join key.
///
/// `seq` is assigned per stream, contiguous from 0 in arrival order. Keys may
/// repeat freely; `(stream, seq)` is the unique identity of a tuple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tuple {
    pub stream: Stream,
    pub seq: u64,
    pub key: i64,
}

/// An index entry: the key of a window tuple plus the sequence number that
/// identifies its window slot.
///
/// Entries order lexicographically by `(key, seq)`, which makes duplicates
/// well-ordered and gives every tree a strict total order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Entry {
    pub key: i64,
    pub seq: u64,
}

impl Entry {
    pub const fn new(key: i64, seq: u64) -> Self {
        Entry { key, seq }
    }
}

/// Join flavor: two windows fed by two streams, or one shared window that
/// every tuple both probes and joins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JoinMode {
    TwoWay,
    SelfJoin,
}

/// Band-join predicate: `r` matches `s` iff `|r.key - s.key| <= diff`.
///
/// `diff = 0` degenerates to an equi-join on integer keys.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BandPredicate {
    pub diff: i64,
}

impl BandPredicate {
    pub fn new(diff: i64) -> Self {
        assert!(diff >= 0, "band width must be non-negative");
        BandPredicate { diff }
    }

    /// Key range matched by a probe with key `k`, saturating at the i64 bounds.
    #[inline]
    pub fn range(&self, k: i64) -> (i64, i64) {
        (k.saturating_sub(self.diff), k.saturating_add(self.diff))
    }

    #[inline]
    pub fn matches(&self, a: i64, b: i64) -> bool {
        // abs_diff keeps the comparison overflow-free for extreme keys
        a.abs_diff(b) <= self.diff as u64
    }
}

/// Node geometry shared by the tree indexes: fan-out and leaf capacity for
/// the mutable B+-trees and for the read-only array trees built by merges.
#[derive(Clone, Copy, Debug)]
pub struct TreeGeometry {
    pub mutable_fan_out: usize,
    pub mutable_leaf_capacity: usize,
    pub immutable_fan_out: usize,
    pub immutable_leaf_capacity: usize,
}

impl Default for TreeGeometry {
    fn default() -> Self {
        TreeGeometry {
            mutable_fan_out: crate::btree::DEFAULT_FAN_OUT,
            mutable_leaf_capacity: crate::btree::DEFAULT_FAN_OUT,
            immutable_fan_out: crate::immutable::DEFAULT_IMMUTABLE_FAN_OUT,
            immutable_leaf_capacity: crate::immutable::DEFAULT_IMMUTABLE_FAN_OUT,
        }
    }
}

/// One emitted join result: the probing tuple and the window tuple it matched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResultRecord {
    pub probe_stream: Stream,
    pub probe_seq: u64,
    pub probe_key: i64,
    pub match_seq: u64,
    pub match_key: i64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_order_is_key_then_seq() {
        let mut v = vec![
            Entry::new(5, 2),
            Entry::new(3, 9),
            Entry::new(5, 0),
            Entry::new(3, 1),
        ];
        v.sort();
        assert_eq!(
            v,
            vec![
                Entry::new(3, 1),
                Entry::new(3, 9),
                Entry::new(5, 0),
                Entry::new(5, 2),
            ]
        );
    }

    #[test]
    fn band_predicate_saturates() {
        let p = BandPredicate::new(10);
        assert_eq!(p.range(i64::MAX - 3), (i64::MAX - 13, i64::MAX));
        assert!(p.matches(i64::MAX, i64::MAX - 10));
        assert!(!p.matches(i64::MAX, i64::MAX - 11));
        assert!(BandPredicate::new(0).matches(7, 7));
    }
}
