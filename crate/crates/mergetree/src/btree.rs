//! Mutable B+-tree over `(key, seq)` entries with a chained leaf level.
//!
//! Nodes live in an arena indexed by `u32`; inner nodes hold child ids and
//! separator entries, leaves hold the data and a forward chain pointer. The
//! last leaf of the chain carries a *tail flag* — range scans that run off a
//! flagged leaf know they have exhausted this tree, which is how the
//! partitioned merge tree detects the boundary of one subindex during a scan
//! that hands off to its successor. Splits and merges keep exactly one leaf
//! flagged.
//!
//! Entries are unique, ordered by `(key, seq)`; duplicates of a key are
//! ordered by arrival. Deletion rebalances with the textbook borrow/merge
//! steps, keeping every non-root node at least half full.
//!
//! The tree performs no synchronization; callers serialize access (the
//! engine wraps whole-tree users in a mutex and gives the partitioned tree
//! one lock per subindex).

use crate::types::Entry;

/// Children per inner node and entries per leaf in the default geometry.
pub const DEFAULT_FAN_OUT: usize = 32;

const NIL: u32 = u32::MAX;

#[derive(Debug)]
enum Node {
    Inner {
        /// `keys[i]` separates `children[i]` from `children[i+1]`: it is a
        /// copy of the smallest entry that belonged to `children[i+1]` when
        /// the separator was created, so everything left of it is strictly
        /// smaller and everything at or right of it is `>=`.
        keys: Vec<Entry>,
        children: Vec<u32>,
    },
    Leaf {
        entries: Vec<Entry>,
        next: u32,
        tail: bool,
    },
    Free,
}

/// Position of an entry (or of the insertion point) in the leaf chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LeafCursor {
    pub(crate) leaf: u32,
    pub(crate) pos: usize,
}

pub struct BPlusTree {
    nodes: Vec<Node>,
    free: Vec<u32>,
    root: u32,
    head_leaf: u32,
    tail_leaf: u32,
    len: usize,
    max_children: usize,
    leaf_capacity: usize,
}

impl Default for BPlusTree {
    fn default() -> Self {
        Self::new(DEFAULT_FAN_OUT, DEFAULT_FAN_OUT)
    }
}

impl BPlusTree {
    pub fn new(fan_out: usize, leaf_capacity: usize) -> Self {
        assert!(fan_out >= 3, "fan-out below 3 cannot rebalance");
        assert!(leaf_capacity >= 2);
        let mut t = BPlusTree {
            nodes: Vec::new(),
            free: Vec::new(),
            root: 0,
            head_leaf: 0,
            tail_leaf: 0,
            len: 0,
            max_children: fan_out,
            leaf_capacity,
        };
        let root = t.alloc(Node::Leaf {
            entries: Vec::new(),
            next: NIL,
            tail: true,
        });
        t.root = root;
        t.head_leaf = root;
        t.tail_leaf = root;
        t
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn fan_out(&self) -> usize {
        self.max_children
    }

    #[inline]
    pub fn leaf_capacity(&self) -> usize {
        self.leaf_capacity
    }

    fn min_leaf(&self) -> usize {
        self.leaf_capacity.div_ceil(2)
    }

    fn min_children(&self) -> usize {
        self.max_children.div_ceil(2)
    }

    fn alloc(&mut self, node: Node) -> u32 {
        if let Some(id) = self.free.pop() {
            self.nodes[id as usize] = node;
            id
        } else {
            self.nodes.push(node);
            (self.nodes.len() - 1) as u32
        }
    }

    fn free_node(&mut self, id: u32) {
        self.nodes[id as usize] = Node::Free;
        self.free.push(id);
    }

    /// Levels from root to leaves (a lone leaf has height 1).
    pub fn height(&self) -> usize {
        let mut h = 1;
        let mut id = self.root;
        while let Node::Inner { children, .. } = &self.nodes[id as usize] {
            id = children[0];
            h += 1;
        }
        h
    }

    // ------------------------------------------------------------- insert

    pub fn insert(&mut self, key: i64, seq: u64) {
        let entry = Entry::new(key, seq);
        if let Some((sep, right)) = self.insert_rec(self.root, entry) {
            let old_root = self.root;
            let new_root = self.alloc(Node::Inner {
                keys: vec![sep],
                children: vec![old_root, right],
            });
            self.root = new_root;
        }
        self.len += 1;
    }

    fn insert_rec(&mut self, id: u32, entry: Entry) -> Option<(Entry, u32)> {
        let (idx, child) = match &mut self.nodes[id as usize] {
            Node::Leaf { entries, .. } => {
                let pos = entries.partition_point(|e| *e < entry);
                debug_assert!(entries.get(pos) != Some(&entry), "duplicate (key, seq)");
                entries.insert(pos, entry);
                if entries.len() > self.leaf_capacity {
                    return Some(self.split_leaf(id));
                }
                return None;
            }
            Node::Inner { keys, children } => {
                let idx = keys.partition_point(|k| *k <= entry);
                (idx, children[idx])
            }
            Node::Free => unreachable!("descended into freed node"),
        };
        let split = self.insert_rec(child, entry)?;
        let max_children = self.max_children;
        let Node::Inner { keys, children } = &mut self.nodes[id as usize] else {
            unreachable!()
        };
        keys.insert(idx, split.0);
        children.insert(idx + 1, split.1);
        if children.len() > max_children {
            return Some(self.split_inner(id));
        }
        None
    }

    fn split_leaf(&mut self, id: u32) -> (Entry, u32) {
        let (right_node, was_tail, sep);
        {
            let Node::Leaf { entries, next, tail } = &mut self.nodes[id as usize] else {
                unreachable!()
            };
            let right_entries = entries.split_off(entries.len() - entries.len() / 2);
            sep = right_entries[0];
            was_tail = *tail;
            right_node = Node::Leaf {
                entries: right_entries,
                next: *next,
                tail: *tail,
            };
            *tail = false;
        }
        let right = self.alloc(right_node);
        let Node::Leaf { next, .. } = &mut self.nodes[id as usize] else {
            unreachable!()
        };
        *next = right;
        if was_tail {
            self.tail_leaf = right;
        }
        (sep, right)
    }

    fn split_inner(&mut self, id: u32) -> (Entry, u32) {
        let Node::Inner { keys, children } = &mut self.nodes[id as usize] else {
            unreachable!()
        };
        let n = children.len();
        let left_count = n - n / 2;
        let right_children = children.split_off(left_count);
        let mut left_keys = std::mem::take(keys);
        let right_keys = left_keys.split_off(left_count);
        let sep = left_keys.pop().expect("separator for promoted split");
        *keys = left_keys;
        let right = self.alloc(Node::Inner {
            keys: right_keys,
            children: right_children,
        });
        (sep, right)
    }

    // ------------------------------------------------------------- delete

    /// Remove the exact entry `(key, seq)`; returns whether it was present.
    pub fn delete(&mut self, key: i64, seq: u64) -> bool {
        let entry = Entry::new(key, seq);
        let found = self.delete_rec(self.root, entry);
        if found {
            self.len -= 1;
            if let Node::Inner { children, .. } = &self.nodes[self.root as usize] {
                if children.len() == 1 {
                    let child = children[0];
                    let old = self.root;
                    self.root = child;
                    self.free_node(old);
                }
            }
        }
        found
    }

    fn delete_rec(&mut self, id: u32, entry: Entry) -> bool {
        let (idx, child) = match &mut self.nodes[id as usize] {
            Node::Leaf { entries, .. } => {
                let pos = entries.partition_point(|e| *e < entry);
                if entries.get(pos) == Some(&entry) {
                    entries.remove(pos);
                    return true;
                }
                return false;
            }
            Node::Inner { keys, children } => {
                let idx = keys.partition_point(|k| *k <= entry);
                (idx, children[idx])
            }
            Node::Free => unreachable!("descended into freed node"),
        };
        let found = self.delete_rec(child, entry);
        if found && self.is_underfull(child) {
            self.rebalance(id, idx);
        }
        found
    }

    fn node_size(&self, id: u32) -> usize {
        match &self.nodes[id as usize] {
            Node::Leaf { entries, .. } => entries.len(),
            Node::Inner { children, .. } => children.len(),
            Node::Free => unreachable!(),
        }
    }

    fn min_size_of(&self, id: u32) -> usize {
        match &self.nodes[id as usize] {
            Node::Leaf { .. } => self.min_leaf(),
            Node::Inner { .. } => self.min_children(),
            Node::Free => unreachable!(),
        }
    }

    fn is_underfull(&self, id: u32) -> bool {
        self.node_size(id) < self.min_size_of(id)
    }

    fn rebalance(&mut self, parent: u32, idx: usize) {
        let (left_sibling, right_sibling) = {
            let Node::Inner { children, .. } = &self.nodes[parent as usize] else {
                unreachable!()
            };
            (
                idx.checked_sub(1).map(|i| children[i]),
                children.get(idx + 1).copied(),
            )
        };
        if let Some(left) = left_sibling {
            if self.node_size(left) > self.min_size_of(left) {
                return self.borrow_from_left(parent, idx);
            }
        }
        if let Some(right) = right_sibling {
            if self.node_size(right) > self.min_size_of(right) {
                return self.borrow_from_right(parent, idx);
            }
        }
        if left_sibling.is_some() {
            self.merge_children(parent, idx - 1);
        } else {
            self.merge_children(parent, idx);
        }
    }

    fn borrow_from_left(&mut self, parent: u32, idx: usize) {
        let (left_id, child_id, sep) = {
            let Node::Inner { keys, children } = &self.nodes[parent as usize] else {
                unreachable!()
            };
            (children[idx - 1], children[idx], keys[idx - 1])
        };
        enum Moved {
            LeafEntry(Entry),
            InnerPair(Entry, u32),
        }
        let moved = match &mut self.nodes[left_id as usize] {
            Node::Leaf { entries, .. } => Moved::LeafEntry(entries.pop().expect("donor leaf")),
            Node::Inner { keys, children } => Moved::InnerPair(
                keys.pop().expect("donor inner"),
                children.pop().expect("donor inner"),
            ),
            Node::Free => unreachable!(),
        };
        let new_sep = match (&mut self.nodes[child_id as usize], moved) {
            (Node::Leaf { entries, .. }, Moved::LeafEntry(e)) => {
                entries.insert(0, e);
                e
            }
            (Node::Inner { keys, children }, Moved::InnerPair(k, c)) => {
                keys.insert(0, sep);
                children.insert(0, c);
                k
            }
            _ => unreachable!("sibling kind mismatch"),
        };
        let Node::Inner { keys, .. } = &mut self.nodes[parent as usize] else {
            unreachable!()
        };
        keys[idx - 1] = new_sep;
    }

    fn borrow_from_right(&mut self, parent: u32, idx: usize) {
        let (child_id, right_id, sep) = {
            let Node::Inner { keys, children } = &self.nodes[parent as usize] else {
                unreachable!()
            };
            (children[idx], children[idx + 1], keys[idx])
        };
        enum Moved {
            LeafEntry(Entry, Entry),
            InnerPair(Entry, u32),
        }
        let moved = match &mut self.nodes[right_id as usize] {
            Node::Leaf { entries, .. } => {
                let e = entries.remove(0);
                Moved::LeafEntry(e, entries[0])
            }
            Node::Inner { keys, children } => {
                Moved::InnerPair(keys.remove(0), children.remove(0))
            }
            Node::Free => unreachable!(),
        };
        let new_sep = match (&mut self.nodes[child_id as usize], moved) {
            (Node::Leaf { entries, .. }, Moved::LeafEntry(e, right_min)) => {
                entries.push(e);
                right_min
            }
            (Node::Inner { keys, children }, Moved::InnerPair(k, c)) => {
                keys.push(sep);
                children.push(c);
                k
            }
            _ => unreachable!("sibling kind mismatch"),
        };
        let Node::Inner { keys, .. } = &mut self.nodes[parent as usize] else {
            unreachable!()
        };
        keys[idx] = new_sep;
    }

    /// Absorb `children[i + 1]` into `children[i]`.
    fn merge_children(&mut self, parent: u32, i: usize) {
        let (left_id, right_id, sep) = {
            let Node::Inner { keys, children } = &self.nodes[parent as usize] else {
                unreachable!()
            };
            (children[i], children[i + 1], keys[i])
        };
        let right = std::mem::replace(&mut self.nodes[right_id as usize], Node::Free);
        match (&mut self.nodes[left_id as usize], right) {
            (
                Node::Leaf { entries, next, tail },
                Node::Leaf {
                    entries: re,
                    next: rn,
                    tail: rt,
                },
            ) => {
                entries.extend(re);
                *next = rn;
                if rt {
                    *tail = true;
                }
            }
            (
                Node::Inner { keys, children },
                Node::Inner {
                    keys: rk,
                    children: rc,
                },
            ) => {
                keys.push(sep);
                keys.extend(rk);
                children.extend(rc);
            }
            _ => unreachable!("sibling kind mismatch"),
        }
        if self.tail_leaf == right_id {
            self.tail_leaf = left_id;
        }
        self.free.push(right_id);
        let Node::Inner { keys, children } = &mut self.nodes[parent as usize] else {
            unreachable!()
        };
        keys.remove(i);
        children.remove(i + 1);
    }

    // ------------------------------------------------------------- search

    /// Position of the first entry with `entry.key >= key` in chain order.
    /// When every entry is smaller, this is the first empty slot of the last
    /// leaf (one past its final entry).
    pub fn lower_bound(&self, key: i64) -> LeafCursor {
        let target = Entry::new(key, 0);
        let mut id = self.root;
        loop {
            match &self.nodes[id as usize] {
                Node::Inner { keys, children } => {
                    let idx = keys.partition_point(|k| *k <= target);
                    id = children[idx];
                }
                Node::Leaf { entries, next, .. } => {
                    let pos = entries.partition_point(|e| *e < target);
                    if pos == entries.len() && *next != NIL {
                        return LeafCursor {
                            leaf: *next,
                            pos: 0,
                        };
                    }
                    return LeafCursor { leaf: id, pos };
                }
                Node::Free => unreachable!("descended into freed node"),
            }
        }
    }

    /// Entry under the cursor, if any.
    pub fn entry_at(&self, c: LeafCursor) -> Option<Entry> {
        match &self.nodes[c.leaf as usize] {
            Node::Leaf { entries, .. } => entries.get(c.pos).copied(),
            _ => unreachable!("cursor into non-leaf"),
        }
    }

    /// Step the cursor forward in chain order. `None` past the last entry.
    pub fn cursor_next(&self, c: LeafCursor) -> Option<LeafCursor> {
        let Node::Leaf { entries, next, .. } = &self.nodes[c.leaf as usize] else {
            unreachable!("cursor into non-leaf")
        };
        if c.pos + 1 < entries.len() {
            return Some(LeafCursor {
                leaf: c.leaf,
                pos: c.pos + 1,
            });
        }
        if *next != NIL {
            return Some(LeafCursor {
                leaf: *next,
                pos: 0,
            });
        }
        None
    }

    /// Whether the cursor's leaf carries the tail flag (is the chain's last).
    pub fn at_tail_leaf(&self, c: LeafCursor) -> bool {
        match &self.nodes[c.leaf as usize] {
            Node::Leaf { tail, .. } => *tail,
            _ => unreachable!("cursor into non-leaf"),
        }
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
        let mut cursor = self.lower_bound(lo);
        while let Some(e) = self.entry_at(cursor) {
            if e.key > hi {
                break;
            }
            if accept(e.seq) {
                out.push(e);
            }
            match self.cursor_next(cursor) {
                Some(next) => cursor = next,
                None => break,
            }
        }
    }

    /// All entries in `(key, seq)` order via the leaf chain.
    pub fn iter(&self) -> impl Iterator<Item = Entry> + '_ {
        let mut leaf = self.head_leaf;
        let mut pos = 0;
        std::iter::from_fn(move || loop {
            match &self.nodes[leaf as usize] {
                Node::Leaf { entries, next, .. } => {
                    if pos < entries.len() {
                        let e = entries[pos];
                        pos += 1;
                        return Some(e);
                    }
                    if *next == NIL {
                        return None;
                    }
                    leaf = *next;
                    pos = 0;
                }
                _ => unreachable!("leaf chain visits non-leaf"),
            }
        })
    }

    /// Drain every entry, leaving an empty tree. Used by merges, which bulk
    /// up entries faster than repeated deletes would.
    pub fn drain_sorted(&mut self) -> Vec<Entry> {
        let out: Vec<Entry> = self.iter().collect();
        *self = BPlusTree::new(self.max_children, self.leaf_capacity);
        out
    }

    // --------------------------------------------------------- invariants

    /// Exhaustive structural check; test and debug use.
    pub fn validate(&self) {
        let mut depth = None;
        let mut leaves_in_order = Vec::new();
        self.check_node(
            self.root,
            true,
            1,
            None,
            None,
            &mut depth,
            &mut leaves_in_order,
        );
        // the chain must visit exactly the in-order leaves, head to tail
        let mut chain = Vec::new();
        let mut id = self.head_leaf;
        loop {
            chain.push(id);
            match &self.nodes[id as usize] {
                Node::Leaf { next, .. } => {
                    if *next == NIL {
                        break;
                    }
                    id = *next;
                }
                _ => panic!("chain visits non-leaf node"),
            }
        }
        assert_eq!(chain, leaves_in_order, "leaf chain order");
        assert_eq!(*chain.last().unwrap(), self.tail_leaf, "tail pointer");
        let flagged: Vec<u32> = chain
            .iter()
            .copied()
            .filter(|&l| match &self.nodes[l as usize] {
                Node::Leaf { tail, .. } => *tail,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(flagged, vec![self.tail_leaf], "exactly the tail leaf is flagged");
        let total: usize = chain
            .iter()
            .map(|&l| match &self.nodes[l as usize] {
                Node::Leaf { entries, .. } => entries.len(),
                _ => unreachable!(),
            })
            .sum();
        assert_eq!(total, self.len, "entry count");
        let sorted: Vec<Entry> = self.iter().collect();
        assert!(sorted.windows(2).all(|w| w[0] < w[1]), "strict global order");
    }

    #[allow(clippy::too_many_arguments)]
    fn check_node(
        &self,
        id: u32,
        is_root: bool,
        level: usize,
        lo: Option<Entry>,
        hi: Option<Entry>,
        leaf_depth: &mut Option<usize>,
        leaves: &mut Vec<u32>,
    ) {
        match &self.nodes[id as usize] {
            Node::Leaf { entries, .. } => {
                match leaf_depth {
                    None => *leaf_depth = Some(level),
                    Some(d) => assert_eq!(*d, level, "uniform leaf depth"),
                }
                if !is_root {
                    assert!(entries.len() >= self.min_leaf(), "leaf occupancy");
                }
                assert!(entries.len() <= self.leaf_capacity, "leaf overflow");
                for e in entries {
                    assert!(lo.is_none_or(|b| *e >= b), "leaf entry below bound");
                    assert!(hi.is_none_or(|b| *e < b), "leaf entry above bound");
                }
                leaves.push(id);
            }
            Node::Inner { keys, children } => {
                assert_eq!(keys.len() + 1, children.len(), "separator count");
                if is_root {
                    assert!(children.len() >= 2, "inner root needs two children");
                } else {
                    assert!(children.len() >= self.min_children(), "inner occupancy");
                }
                assert!(children.len() <= self.max_children, "inner overflow");
                assert!(keys.windows(2).all(|w| w[0] < w[1]), "separator order");
                for (i, &child) in children.iter().enumerate() {
                    let child_lo = if i == 0 { lo } else { Some(keys[i - 1]) };
                    let child_hi = if i == keys.len() { hi } else { Some(keys[i]) };
                    self.check_node(child, false, level + 1, child_lo, child_hi, leaf_depth, leaves);
                }
            }
            Node::Free => panic!("reachable freed node"),
        }
    }
}
