//! Read-only array B+-tree with breadth-first node layout.
//!
//! Built once from a sorted run of entries, never updated in place. All
//! inner nodes of one level sit contiguously in a single array, so a node's
//! children are found by arithmetic instead of pointers: the child `j` of
//! node `i` is node `i * fan_out + j` of the next level. Leaves are the
//! sorted entry array itself, in `leaf_capacity` chunks.
//!
//! Slot `j` of an inner node holds a copy of the **largest** entry in child
//! `j`'s subtree; unused slots in the (possibly underfull) last node of a
//! level hold a `+∞` sentinel. Descent therefore takes the first slot whose
//! entry is `>=` the target, scanning slots linearly — nodes are small and
//! contiguous, so the scan stays within one or two cache lines.
//!
//! Construction is a single pass: each leaf pushes its largest entry into
//! the deepest inner level, and whenever that write fills a node the same
//! entry cascades one level up. A node's largest entry arrives exactly when
//! its last child completes, which is what makes one pass suffice. After
//! the pass, levels whose last node never filled are topped up with the
//! global maximum (the last node's subtree maximum at every level), so the
//! slot invariant holds for underfull nodes too.

use crate::types::Entry;

/// Slots per inner node in the default geometry.
pub const DEFAULT_IMMUTABLE_FAN_OUT: usize = 32;

const SENTINEL: Entry = Entry::new(i64::MAX, u64::MAX);

pub struct ImmutableTree {
    fan_out: usize,
    leaf_capacity: usize,
    /// Inner slots, node-major, root level first.
    inner: Vec<Entry>,
    /// First node index of each inner level, in node units.
    level_offset: Vec<usize>,
    /// Node count of each inner level; `level_count[0] == 1` (the root).
    level_count: Vec<usize>,
    entries: Vec<Entry>,
    num_leaves: usize,
}

impl ImmutableTree {
    pub fn empty(fan_out: usize, leaf_capacity: usize) -> Self {
        Self::build(fan_out, leaf_capacity, Vec::new())
    }

    /// Build from entries sorted strictly ascending by `(key, seq)`.
    pub fn build(fan_out: usize, leaf_capacity: usize, entries: Vec<Entry>) -> Self {
        assert!(fan_out >= 2);
        assert!(leaf_capacity >= 1);
        debug_assert!(
            entries.windows(2).all(|w| w[0] < w[1]),
            "immutable build input must be strictly sorted"
        );
        let n = entries.len();
        let num_leaves = n.div_ceil(leaf_capacity);

        let mut level_count = Vec::new();
        let mut c = num_leaves;
        while c > 1 {
            c = c.div_ceil(fan_out);
            level_count.push(c);
        }
        level_count.reverse();
        let depth = level_count.len();

        let mut level_offset = Vec::with_capacity(depth);
        let mut acc = 0;
        for &count in &level_count {
            level_offset.push(acc);
            acc += count;
        }
        let mut inner = vec![SENTINEL; acc * fan_out];
        let mut fill = vec![0usize; depth];

        for leaf in 0..num_leaves {
            let end = ((leaf + 1) * leaf_capacity).min(n);
            let max = entries[end - 1];
            let mut v = depth as isize - 1;
            while v >= 0 {
                let level = v as usize;
                inner[level_offset[level] * fan_out + fill[level]] = max;
                fill[level] += 1;
                if fill[level] % fan_out != 0 {
                    break;
                }
                v -= 1;
            }
        }
        // Top up parents whose last child never triggered a cascade: each
        // inner level must hold exactly one slot per child node below it.
        if depth > 0 {
            let global_max = *entries.last().expect("non-empty implies entries");
            for level in (0..depth).rev() {
                let children = if level + 1 < depth {
                    level_count[level + 1]
                } else {
                    num_leaves
                };
                if fill[level] < children {
                    inner[level_offset[level] * fan_out + fill[level]] = global_max;
                    fill[level] += 1;
                }
                debug_assert_eq!(fill[level], children, "one slot per child");
            }
        }

        ImmutableTree {
            fan_out,
            leaf_capacity,
            inner,
            level_offset,
            level_count,
            entries,
            num_leaves,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of inner levels — routing steps from root to a leaf.
    #[inline]
    pub fn depth(&self) -> usize {
        self.level_count.len()
    }

    #[inline]
    pub fn fan_out(&self) -> usize {
        self.fan_out
    }

    #[inline]
    pub fn leaf_capacity(&self) -> usize {
        self.leaf_capacity
    }

    /// Sorted entry storage (the leaf level).
    #[inline]
    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Nodes at `level`: inner counts for `level < depth`, leaves at `depth`.
    pub fn level_width(&self, level: usize) -> usize {
        if level < self.level_count.len() {
            self.level_count[level]
        } else {
            self.num_leaves
        }
    }

    #[inline]
    fn slot(&self, level: usize, node: usize, j: usize) -> Entry {
        self.inner[(self.level_offset[level] + node) * self.fan_out + j]
    }

    #[inline]
    fn children_of(&self, level: usize, node: usize) -> usize {
        let below = if level + 1 < self.level_count.len() {
            self.level_count[level + 1]
        } else {
            self.num_leaves
        };
        self.fan_out.min(below - node * self.fan_out)
    }

    /// Route `key` for `steps` levels from the root; returns the node index
    /// reached at that level (a leaf index when `steps == depth()`).
    pub fn descend_to_level(&self, key: i64, steps: usize) -> usize {
        debug_assert!(steps <= self.depth());
        let target = Entry::new(key, 0);
        let mut node = 0usize;
        for level in 0..steps {
            let fanned = self.children_of(level, node);
            let mut j = 0;
            while j + 1 < fanned && self.slot(level, node, j) < target {
                j += 1;
            }
            node = node * self.fan_out + j;
        }
        node
    }

    /// Index of the first entry with `entry.key >= key`, or `len()` when no
    /// entry qualifies.
    pub fn lower_bound(&self, key: i64) -> usize {
        if self.entries.is_empty() {
            return 0;
        }
        let leaf = self.descend_to_level(key, self.depth());
        let start = leaf * self.leaf_capacity;
        let end = ((leaf + 1) * self.leaf_capacity).min(self.entries.len());
        let target = Entry::new(key, 0);
        let pos = start + self.entries[start..end].partition_point(|e| *e < target);
        debug_assert!(
            pos == self.entries.len() || pos < end || leaf + 1 == self.num_leaves,
            "descent routed past the target leaf"
        );
        pos
    }

    /// Collect entries with key in `[lo, hi]` that pass `accept`, in
    /// `(key, seq)` order.
    pub fn range_search(
        &self,
        lo: i64,
        hi: i64,
        mut accept: impl FnMut(u64) -> bool,
        out: &mut Vec<Entry>,
    ) {
        let mut pos = self.lower_bound(lo);
        while let Some(e) = self.entries.get(pos) {
            if e.key > hi {
                break;
            }
            if accept(e.seq) {
                out.push(*e);
            }
            pos += 1;
        }
    }

    /// Total inner nodes across all levels.
    pub fn inner_node_count(&self) -> usize {
        self.level_count.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    fn sorted_entries(n: usize, key_range: i64, seed: u64) -> Vec<Entry> {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut set = BTreeSet::new();
        let mut seq = 0u64;
        while set.len() < n {
            set.insert(Entry::new(rng.gen_range(0..key_range), seq));
            seq += 1;
        }
        set.into_iter().collect()
    }

    #[test]
    fn empty_and_single_leaf() {
        let t = ImmutableTree::empty(4, 4);
        assert_eq!(t.depth(), 0);
        assert_eq!(t.lower_bound(0), 0);
        let mut out = Vec::new();
        t.range_search(i64::MIN, i64::MAX, |_| true, &mut out);
        assert!(out.is_empty());

        let t = ImmutableTree::build(4, 4, vec![Entry::new(7, 0), Entry::new(9, 1)]);
        assert_eq!(t.depth(), 0);
        assert_eq!(t.lower_bound(8), 1);
        assert_eq!(t.lower_bound(99), 2);
    }

    #[test]
    fn four_entry_two_leaf_shape() {
        let entries = vec![
            Entry::new(10, 0),
            Entry::new(20, 1),
            Entry::new(30, 2),
            Entry::new(40, 3),
        ];
        let t = ImmutableTree::build(4, 2, entries);
        assert_eq!(t.depth(), 1);
        assert_eq!(t.level_width(0), 1);
        assert_eq!(t.level_width(1), 2);
        assert_eq!(t.slot(0, 0, 0), Entry::new(20, 1));
        assert_eq!(t.slot(0, 0, 1), Entry::new(40, 3));
        assert_eq!(t.slot(0, 0, 2), Entry::new(i64::MAX, u64::MAX));
        assert_eq!(t.descend_to_level(15, 1), 0);
        assert_eq!(t.descend_to_level(20, 1), 0);
        assert_eq!(t.descend_to_level(21, 1), 1);
        assert_eq!(t.descend_to_level(999, 1), 1);
    }

    #[test]
    fn every_slot_is_its_subtree_max() {
        for (n, f, cap) in [(23, 2, 2), (97, 3, 4), (1000, 5, 3), (4096, 8, 8)] {
            let entries = sorted_entries(n, 10_000, n as u64);
            let t = ImmutableTree::build(f, cap, entries.clone());
            // subtree maxima, bottom-up
            let mut maxes: Vec<Entry> = (0..t.num_leaves)
                .map(|leaf| {
                    let end = ((leaf + 1) * cap).min(n);
                    entries[end - 1]
                })
                .collect();
            for level in (0..t.depth()).rev() {
                let mut next = Vec::with_capacity(t.level_width(level));
                for node in 0..t.level_width(level) {
                    let children = t.children_of(level, node);
                    for j in 0..children {
                        assert_eq!(
                            t.slot(level, node, j),
                            maxes[node * f + j],
                            "n={n} f={f} level={level} node={node} slot={j}"
                        );
                    }
                    for j in children..f {
                        assert_eq!(t.slot(level, node, j), SENTINEL);
                    }
                    next.push(maxes[node * f + children - 1]);
                }
                maxes = next;
            }
        }
    }

    #[test]
    fn lower_bound_matches_binary_search() {
        let entries = sorted_entries(5000, 2000, 42);
        let t = ImmutableTree::build(5, 4, entries.clone());
        let mut rng = StdRng::seed_from_u64(43);
        for _ in 0..2000 {
            let key = rng.gen_range(-10..2010);
            let expect = entries.partition_point(|e| *e < Entry::new(key, 0));
            assert_eq!(t.lower_bound(key), expect, "key {key}");
        }
        assert_eq!(t.lower_bound(i64::MAX), 5000);
        assert_eq!(t.lower_bound(i64::MIN), 0);
    }

    #[test]
    fn range_search_matches_brute_force() {
        let entries = sorted_entries(3000, 800, 7);
        let t = ImmutableTree::build(4, 6, entries.clone());
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..300 {
            let a = rng.gen_range(-20..820);
            let b = rng.gen_range(-20..820);
            let (lo, hi) = (a.min(b), a.max(b));
            let floor = rng.gen_range(0..3000u64);
            let expect: Vec<Entry> = entries
                .iter()
                .filter(|e| e.key >= lo && e.key <= hi && e.seq >= floor)
                .copied()
                .collect();
            let mut got = Vec::new();
            t.range_search(lo, hi, |seq| seq >= floor, &mut got);
            assert_eq!(got, expect, "range [{lo}, {hi}] floor {floor}");
        }
    }

    #[test]
    fn inner_storage_stays_linear_in_leaves() {
        for f in [2, 4, 16] {
            for n in [100, 1000, 33_333] {
                let entries: Vec<Entry> =
                    (0..n).map(|i| Entry::new(i as i64, i as u64)).collect();
                let t = ImmutableTree::build(f, 4, entries);
                let bound = t.num_leaves / (f - 1) + t.depth() + 1;
                assert!(
                    t.inner_node_count() <= bound,
                    "f={f} n={n}: {} inner nodes for {} leaves (bound {bound})",
                    t.inner_node_count(),
                    t.num_leaves
                );
            }
        }
    }

    #[test]
    fn depth_shrinks_as_fanout_grows() {
        let entries: Vec<Entry> = (0..100_000)
            .map(|i| Entry::new(i as i64, i as u64))
            .collect();
        let narrow = ImmutableTree::build(4, 4, entries.clone());
        let wide = ImmutableTree::build(32, 4, entries);
        assert!(wide.depth() < narrow.depth());
        let leaves = 100_000usize.div_ceil(4);
        let expect = (leaves as f64).log(32.0).ceil() as usize;
        assert!(wide.depth() <= expect + 1 && wide.depth() + 1 >= expect);
    }

    #[test]
    fn routing_agrees_with_leaf_spans() {
        let entries = sorted_entries(2048, 500, 99);
        let t = ImmutableTree::build(4, 4, entries.clone());
        // every key routes to the leaf whose span contains its lower bound
        for key in (-5..505).step_by(3) {
            let leaf = t.descend_to_level(key, t.depth());
            let pos = entries.partition_point(|e| *e < Entry::new(key, 0));
            if pos < entries.len() {
                assert_eq!(pos / 4, leaf, "key {key}");
            } else {
                assert_eq!(leaf, t.num_leaves - 1, "key {key} clamps right");
            }
        }
    }
}
