//! Dispatch from [`IndexKind`](super::IndexKind) to concrete index forms.
//!
//! The reference executor owns its indexes outright, so it uses the plain
//! single-threaded types. The parallel executor wraps the same structures
//! in locks — one coarse lock where the structure is inherently serial, a
//! lock per partition where it shards naturally — except the partitioned
//! tree, which carries its own synchronization.
//!
//! Eviction discipline also lives here. `expire`/`evict` receive both the
//! live floor and the concrete evicted tuple: the B+-tree and round-robin
//! indexes delete that tuple immediately, the chained index drops whole
//! subindexes that fell behind the floor, and the merging indexes do
//! nothing — their next merge discards dead entries wholesale.

use std::sync::Arc;

use parking_lot::Mutex;

use crate::baselines::{ChainStyle, ChainedIndex, RoundRobinIndex};
use crate::btree::BPlusTree;
use crate::immutable::ImmutableTree;
use crate::merge_tree::{merge_live, merge_threshold, MergeTree};
use crate::partitioned::{MergeSnapshot, PartitionedTree, PreparedMerge, UnsyncPartitionedTree};
use crate::types::{Entry, TreeGeometry};

use super::{EngineConfig, IndexKind};

fn merge_tree_for(config: &EngineConfig, side: usize) -> MergeTree {
    MergeTree::new(
        merge_threshold(config.window_of(side), config.merge_ratio),
        config.geometry,
    )
}

fn partitioned_threshold(config: &EngineConfig, side: usize) -> usize {
    merge_threshold(config.window_of(side), config.merge_ratio)
}

/// Plain index forms for the single-threaded executor.
pub enum ReferenceIndex {
    BTree(BPlusTree),
    Chained(ChainedIndex),
    RoundRobin(RoundRobinIndex),
    MergeTree(MergeTree),
    Partitioned(UnsyncPartitionedTree),
}

impl ReferenceIndex {
    pub fn for_config(config: &EngineConfig, side: usize) -> Self {
        let g = config.geometry;
        match config.index {
            IndexKind::BTree => {
                ReferenceIndex::BTree(BPlusTree::new(g.mutable_fan_out, g.mutable_leaf_capacity))
            }
            IndexKind::ChainMutable => ReferenceIndex::Chained(ChainedIndex::new(
                config.window_of(side),
                config.chain_length,
                ChainStyle::Mutable,
                g,
            )),
            IndexKind::ChainRebuilt => ReferenceIndex::Chained(ChainedIndex::new(
                config.window_of(side),
                config.chain_length,
                ChainStyle::Rebuilt,
                g,
            )),
            IndexKind::RoundRobin => {
                ReferenceIndex::RoundRobin(RoundRobinIndex::new(config.partitions, g))
            }
            IndexKind::MergeTree => ReferenceIndex::MergeTree(merge_tree_for(config, side)),
            IndexKind::Partitioned => ReferenceIndex::Partitioned(UnsyncPartitionedTree::new(
                partitioned_threshold(config, side),
                config.insertion_depth,
                g,
            )),
        }
    }

    pub fn probe(&self, lo: i64, hi: i64, seq_lo: u64, seq_end: u64, out: &mut Vec<Entry>) {
        match self {
            ReferenceIndex::BTree(t) => {
                t.range_search(lo, hi, |seq| seq >= seq_lo && seq < seq_end, out)
            }
            ReferenceIndex::Chained(t) => t.probe(lo, hi, seq_lo, seq_end, out),
            ReferenceIndex::RoundRobin(t) => t.probe(lo, hi, seq_lo, seq_end, out),
            ReferenceIndex::MergeTree(t) => t.probe(lo, hi, seq_lo, seq_end, out),
            ReferenceIndex::Partitioned(t) => t.probe(lo, hi, seq_lo, seq_end, out),
        }
    }

    /// Insert and report whether a merge is now due.
    pub fn insert(&mut self, key: i64, seq: u64) -> bool {
        match self {
            ReferenceIndex::BTree(t) => {
                t.insert(key, seq);
                false
            }
            ReferenceIndex::Chained(t) => {
                t.insert(key, seq);
                false
            }
            ReferenceIndex::RoundRobin(t) => {
                t.insert(key, seq);
                false
            }
            ReferenceIndex::MergeTree(t) => t.insert(key, seq),
            ReferenceIndex::Partitioned(t) => t.insert(key, seq),
        }
    }

    /// Apply this index's eviction discipline for one slide of the window.
    pub fn expire(&mut self, floor: u64, evicted: Option<(i64, u64)>) {
        match self {
            ReferenceIndex::BTree(t) => {
                if let Some((key, seq)) = evicted {
                    t.delete(key, seq);
                }
            }
            ReferenceIndex::RoundRobin(t) => {
                if let Some((key, seq)) = evicted {
                    t.delete(key, seq);
                }
            }
            ReferenceIndex::Chained(t) => t.drop_expired(floor),
            ReferenceIndex::MergeTree(_) | ReferenceIndex::Partitioned(_) => {}
        }
    }

    /// Rebuild now; only called after `insert` returned true. Returns the
    /// retired generation's insert histogram where the index keeps one.
    pub fn merge(&mut self, floor: u64) -> Option<Vec<u64>> {
        match self {
            ReferenceIndex::MergeTree(t) => {
                t.merge(floor);
                None
            }
            ReferenceIndex::Partitioned(t) => Some(t.merge(floor)),
            _ => unreachable!("only merging indexes report a merge as due"),
        }
    }

    pub fn merge_count(&self) -> u64 {
        match self {
            ReferenceIndex::MergeTree(t) => t.merge_count(),
            ReferenceIndex::Partitioned(t) => t.merge_count(),
            _ => 0,
        }
    }

    pub fn insert_histogram(&self) -> Option<Vec<u64>> {
        match self {
            ReferenceIndex::Partitioned(t) => Some(t.insert_histogram()),
            _ => None,
        }
    }
}

/// Snapshot taken under a drained gate; the heavy rebuild happens on it
/// outside the gate.
pub enum MergePlan {
    MergeTree {
        archive: Arc<ImmutableTree>,
        staged: Vec<Entry>,
        floor: u64,
        geometry: TreeGeometry,
    },
    Partitioned {
        snapshot: MergeSnapshot,
        floor: u64,
    },
}

/// A fully built replacement, ready to swap in under a drained gate.
pub enum MergeReady {
    MergeTree(Arc<ImmutableTree>),
    Partitioned(PreparedMerge),
}

/// Shared index forms for the parallel executor.
pub enum SharedIndex {
    BTree(Mutex<BPlusTree>),
    Chained(Mutex<ChainedIndex>),
    RoundRobin(Vec<Mutex<BPlusTree>>),
    MergeTree(Mutex<MergeTree>),
    Partitioned(PartitionedTree),
}

impl SharedIndex {
    pub fn for_config(config: &EngineConfig, side: usize) -> Self {
        let g = config.geometry;
        match config.index {
            IndexKind::BTree => SharedIndex::BTree(Mutex::new(BPlusTree::new(
                g.mutable_fan_out,
                g.mutable_leaf_capacity,
            ))),
            IndexKind::ChainMutable => SharedIndex::Chained(Mutex::new(ChainedIndex::new(
                config.window_of(side),
                config.chain_length,
                ChainStyle::Mutable,
                g,
            ))),
            IndexKind::ChainRebuilt => SharedIndex::Chained(Mutex::new(ChainedIndex::new(
                config.window_of(side),
                config.chain_length,
                ChainStyle::Rebuilt,
                g,
            ))),
            IndexKind::RoundRobin => SharedIndex::RoundRobin(
                (0..config.partitions)
                    .map(|_| Mutex::new(BPlusTree::new(g.mutable_fan_out, g.mutable_leaf_capacity)))
                    .collect(),
            ),
            IndexKind::MergeTree => SharedIndex::MergeTree(Mutex::new(merge_tree_for(config, side))),
            IndexKind::Partitioned => SharedIndex::Partitioned(PartitionedTree::new(
                partitioned_threshold(config, side),
                config.insertion_depth,
                g,
            )),
        }
    }

    pub fn probe(&self, lo: i64, hi: i64, seq_lo: u64, seq_end: u64, out: &mut Vec<Entry>) {
        match self {
            SharedIndex::BTree(t) => {
                t.lock()
                    .range_search(lo, hi, |seq| seq >= seq_lo && seq < seq_end, out)
            }
            SharedIndex::Chained(t) => t.lock().probe(lo, hi, seq_lo, seq_end, out),
            SharedIndex::RoundRobin(parts) => {
                for part in parts {
                    part.lock()
                        .range_search(lo, hi, |seq| seq >= seq_lo && seq < seq_end, out);
                }
            }
            SharedIndex::MergeTree(t) => t.lock().probe(lo, hi, seq_lo, seq_end, out),
            SharedIndex::Partitioned(t) => t.probe(lo, hi, seq_lo, seq_end, out),
        }
    }

    pub fn insert(&self, key: i64, seq: u64) -> bool {
        match self {
            SharedIndex::BTree(t) => {
                t.lock().insert(key, seq);
                false
            }
            SharedIndex::Chained(t) => {
                t.lock().insert(key, seq);
                false
            }
            SharedIndex::RoundRobin(parts) => {
                parts[(seq % parts.len() as u64) as usize].lock().insert(key, seq);
                false
            }
            SharedIndex::MergeTree(t) => t.lock().insert(key, seq),
            SharedIndex::Partitioned(t) => t.insert(key, seq),
        }
    }

    /// Applied by the propagation step once the eviction is behind every
    /// in-flight probe.
    pub fn evict(&self, floor: u64, evicted: Option<(i64, u64)>) {
        match self {
            SharedIndex::BTree(t) => {
                if let Some((key, seq)) = evicted {
                    t.lock().delete(key, seq);
                }
            }
            SharedIndex::RoundRobin(parts) => {
                if let Some((key, seq)) = evicted {
                    parts[(seq % parts.len() as u64) as usize].lock().delete(key, seq);
                }
            }
            SharedIndex::Chained(t) => t.lock().drop_expired(floor),
            SharedIndex::MergeTree(_) | SharedIndex::Partitioned(_) => {}
        }
    }

    /// Capture everything the rebuild needs. Called with the gate closed
    /// and no task in flight.
    pub fn merge_begin(&self, floor: u64) -> MergePlan {
        match self {
            SharedIndex::MergeTree(t) => {
                let t = t.lock();
                let (archive, staged) = t.snapshot_parts();
                MergePlan::MergeTree {
                    archive,
                    staged,
                    floor,
                    geometry: t.geometry(),
                }
            }
            SharedIndex::Partitioned(t) => MergePlan::Partitioned {
                snapshot: t.snapshot(),
                floor,
            },
            _ => unreachable!("only merging indexes report a merge as due"),
        }
    }

    /// The heavy part: pure computation, touches no shared state.
    pub fn merge_build(&self, plan: MergePlan) -> MergeReady {
        match (self, plan) {
            (
                SharedIndex::MergeTree(_),
                MergePlan::MergeTree {
                    archive,
                    staged,
                    floor,
                    geometry,
                },
            ) => {
                let merged = merge_live(archive.entries(), &staged, floor);
                MergeReady::MergeTree(Arc::new(ImmutableTree::build(
                    geometry.immutable_fan_out,
                    geometry.immutable_leaf_capacity,
                    merged,
                )))
            }
            (SharedIndex::Partitioned(t), MergePlan::Partitioned { snapshot, floor }) => {
                MergeReady::Partitioned(t.prepare_merge(snapshot, floor))
            }
            _ => unreachable!("merge plan built by a different index kind"),
        }
    }

    /// Swap the replacement in. Called with the gate closed and no task in
    /// flight. Returns the retired generation's insert histogram where the
    /// index keeps one.
    pub fn merge_install(&self, ready: MergeReady) -> Option<Vec<u64>> {
        match (self, ready) {
            (SharedIndex::MergeTree(t), MergeReady::MergeTree(archive)) => {
                t.lock().install(archive);
                None
            }
            (SharedIndex::Partitioned(t), MergeReady::Partitioned(prepared)) => {
                Some(t.install(prepared))
            }
            _ => unreachable!("merge plan built by a different index kind"),
        }
    }

    /// Free retired generations. Only safe at quiescent points — the engine
    /// calls it while the gate is closed and drained.
    pub fn reclaim(&self) {
        if let SharedIndex::Partitioned(t) = self {
            t.reclaim_generations();
        }
    }

    pub fn merge_count(&self) -> u64 {
        match self {
            SharedIndex::MergeTree(t) => t.lock().merge_count(),
            SharedIndex::Partitioned(t) => t.merge_count(),
            _ => 0,
        }
    }

    pub fn insert_histogram(&self) -> Option<Vec<u64>> {
        match self {
            SharedIndex::Partitioned(t) => Some(t.insert_histogram()),
            _ => None,
        }
    }
}
