//! Execution of the per-tuple join loop, single-threaded or parallel.
//!
//! Every arriving tuple is handled with the same three index operations —
//! search the opposite stream's index, expire whatever slid out of the
//! window, insert the newcomer — and the engine's job is to run that loop
//! over an arrival sequence and produce the join output. It comes in two
//! forms with identical semantics:
//!
//! - [`run_reference`] drives plain, unsynchronized indexes on one thread.
//!   There are no atomics, no locks and no task queue in its inner loop, so
//!   it doubles as the baseline for measuring what the shared-state
//!   machinery costs.
//! - [`run_parallel`] drives lock-sharded indexes with a worker pool. Its
//!   output is bit-for-bit equal to the reference executor's for the same
//!   arrival sequence.
//!
//! # How the parallel schedule stays deterministic
//!
//! The output of a sliding-window join is fixed once each probe knows
//! exactly which opposite-stream tuples are "in the window" for it. The
//! parallel engine pins that down at one place: task acquisition. A worker
//! takes the next batch of arrivals under the queue lock and, still holding
//! it, *flips* each one in arrival order — the tuple is appended to its
//! stream's window, and the sequence interval `[t_e, t_end)` of the
//! opposite window is captured. Those bounds are precisely the window
//! contents a serial executor would have probed, no matter when the probe
//! actually runs.
//!
//! After flipping, the worker owns its tasks outright:
//!
//! 1. **Probe.** The captured interval is split at the opposite stream's
//!    *edge*, the sequence number below which every tuple is already
//!    indexed. The part below the edge is answered by the index; the rest
//!    by a linear scan of the window ring, which is how a tuple that is
//!    flipped but not yet indexed still gets found. Matches are buffered
//!    with the task, sorted by matched sequence.
//! 2. **Update.** The worker inserts its tuple into its own stream's index,
//!    marks the window slot as indexed, and opportunistically advances the
//!    edge across the contiguous indexed prefix.
//! 3. **Propagate.** Whoever wins the propagation try-lock drains finished
//!    tasks in arrival order and emits their buffered matches. Window
//!    reclamation and eager index deletions are applied only for fully
//!    propagated prefixes: an eviction recorded at arrival `g` is performed
//!    once every task before `g` has retired, which is exactly the point
//!    where no in-flight probe can still need the evicted entry.
//!
//! Merging indexes get one more mechanism: a gate that briefly stops task
//! acquisition so in-flight tasks can drain. A blocking merge rebuilds
//! inside one such closure. A non-blocking merge uses two short closures —
//! snapshot, then install — and builds the replacement off to the side
//! while other workers keep joining; inserts for the merging side are
//! deferred to a pending list replayed at install time. Deferred tuples are
//! invisible to the index but, because they are not yet marked indexed, the
//! edge cannot move past them and probes find them in the window scan.
//!
//! Lock order, outermost first: task queue, propagation, task slot, edge,
//! subindex. The only nested acquisitions are queue → slot (flip) and
//! propagation → slot (drain); everything triggered by propagation —
//! deletes, reclamation — runs after the propagation lock is released.

mod index;
mod parallel;
mod single;

use std::str::FromStr;

use crate::types::{BandPredicate, JoinMode, ResultRecord, TreeGeometry};

pub use parallel::run_parallel;
pub use single::run_reference;

/// Index structure driven by the engine, one instance per stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IndexKind {
    /// One mutable B+-tree per stream; evicted tuples are deleted eagerly.
    BTree,
    /// Chain of fixed-capacity B+-trees; full subindexes are frozen as-is.
    ChainMutable,
    /// Chain of subindexes rebuilt into read-only array trees when full.
    ChainRebuilt,
    /// Tuples spread over `partitions` B+-trees by sequence number.
    RoundRobin,
    /// Mutable B+-tree in front of a read-only array tree, merged at a
    /// threshold.
    MergeTree,
    /// Merge tree whose mutable half is sharded by key range under the
    /// archive's own fan-out.
    Partitioned,
}

impl IndexKind {
    pub const ALL: [IndexKind; 6] = [
        IndexKind::BTree,
        IndexKind::ChainMutable,
        IndexKind::ChainRebuilt,
        IndexKind::RoundRobin,
        IndexKind::MergeTree,
        IndexKind::Partitioned,
    ];

    /// Whether this index rebuilds itself through merges (and therefore
    /// honors [`EngineConfig::merge_mode`]).
    pub fn merges(self) -> bool {
        matches!(self, IndexKind::MergeTree | IndexKind::Partitioned)
    }

    pub fn name(self) -> &'static str {
        match self {
            IndexKind::BTree => "btree",
            IndexKind::ChainMutable => "chain-mutable",
            IndexKind::ChainRebuilt => "chain-rebuilt",
            IndexKind::RoundRobin => "round-robin",
            IndexKind::MergeTree => "merge-tree",
            IndexKind::Partitioned => "partitioned",
        }
    }
}

impl FromStr for IndexKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        IndexKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ConfigError::UnknownIndex(s.to_string()))
    }
}

/// How a merging index rebuilds while the engine is running.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MergeMode {
    /// Task acquisition stays gated for the whole rebuild.
    Blocking,
    /// The rebuild runs beside the workers between two short gate
    /// closures; inserts for the merging side are deferred and replayed.
    NonBlocking,
}

impl MergeMode {
    pub fn name(self) -> &'static str {
        match self {
            MergeMode::Blocking => "blocking",
            MergeMode::NonBlocking => "non-blocking",
        }
    }
}

impl FromStr for MergeMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "blocking" => Ok(MergeMode::Blocking),
            "non-blocking" => Ok(MergeMode::NonBlocking),
            other => Err(ConfigError::UnknownMergeMode(other.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown index kind `{0}`")]
    UnknownIndex(String),
    #[error("unknown merge mode `{0}`")]
    UnknownMergeMode(String),
    #[error("{0}")]
    Invalid(&'static str),
}

/// Everything a run needs besides the arrivals themselves.
#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub join_mode: JoinMode,
    pub index: IndexKind,
    pub merge_mode: MergeMode,
    /// Logical window size of stream R (and of the single window in a
    /// self-join).
    pub window_r: usize,
    /// Logical window size of stream S; ignored by self-joins.
    pub window_s: usize,
    pub predicate: BandPredicate,
    pub threads: usize,
    /// Tuples acquired per queue-lock visit.
    pub task_size: usize,
    /// Staged inserts between merges, as a fraction of the window size.
    pub merge_ratio: f64,
    /// Levels of the archive tree used to shard the partitioned index.
    pub insertion_depth: usize,
    /// Subindex count for the chained index.
    pub chain_length: usize,
    /// Partition count for the round-robin index.
    pub partitions: usize,
    pub geometry: TreeGeometry,
    /// Arrivals excluded from latency statistics at the front of the run.
    pub warmup: usize,
    /// Deferred-insert limit during a non-blocking merge; beyond it the
    /// engine falls back to gating acquisition until the merge installs.
    /// Defaults to half the merging side's window, and is always lowered
    /// far enough that a deferred tuple cannot expire before it is
    /// replayed.
    pub pending_cap: Option<usize>,
}

impl EngineConfig {
    /// A symmetric two-way join with one worker and unit defaults.
    pub fn new(index: IndexKind, window: usize) -> Self {
        EngineConfig {
            join_mode: JoinMode::TwoWay,
            index,
            merge_mode: MergeMode::Blocking,
            window_r: window,
            window_s: window,
            predicate: BandPredicate::new(0),
            threads: 1,
            task_size: 8,
            merge_ratio: 1.0,
            insertion_depth: 2,
            chain_length: 2,
            partitions: 4,
            geometry: TreeGeometry::default(),
            warmup: 0,
            pending_cap: None,
        }
    }

    /// Window size backing the given side (0 = R, 1 = S). Self-joins use
    /// the R window for everything.
    pub fn window_of(&self, side: usize) -> usize {
        match (self.join_mode, side) {
            (JoinMode::SelfJoin, _) | (JoinMode::TwoWay, 0) => self.window_r,
            (JoinMode::TwoWay, _) => self.window_s,
        }
    }

    /// The merge mode that will actually be used: indexes that never merge
    /// behave identically under either setting, so they report `Blocking`.
    pub fn effective_merge_mode(&self) -> MergeMode {
        if self.index.merges() {
            self.merge_mode
        } else {
            MergeMode::Blocking
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.threads < 1 {
            return Err(ConfigError::Invalid("threads must be at least 1"));
        }
        if self.task_size < 1 {
            return Err(ConfigError::Invalid("task size must be at least 1"));
        }
        if self.window_r < 1 {
            return Err(ConfigError::Invalid("window size must be at least 1"));
        }
        if self.join_mode == JoinMode::TwoWay && self.window_s < 1 {
            return Err(ConfigError::Invalid("window size must be at least 1"));
        }
        match self.index {
            IndexKind::ChainMutable | IndexKind::ChainRebuilt => {
                if self.chain_length < 2 {
                    return Err(ConfigError::Invalid("chain length must be at least 2"));
                }
            }
            IndexKind::RoundRobin => {
                if self.partitions < 1 {
                    return Err(ConfigError::Invalid("partition count must be at least 1"));
                }
            }
            IndexKind::MergeTree | IndexKind::Partitioned => {
                if !(self.merge_ratio > 0.0) {
                    return Err(ConfigError::Invalid("merge ratio must be positive"));
                }
            }
            IndexKind::BTree => {}
        }
        Ok(())
    }
}

/// Counters and samples gathered by a run.
#[derive(Clone, Debug, Default)]
pub struct EngineStats {
    pub tuples: usize,
    pub elapsed_ns: u64,
    /// Merges completed, summed over both sides.
    pub merge_count: u64,
    /// Times a non-blocking merge overflowed its pending list and fell
    /// back to gating acquisition.
    pub blocking_fallbacks: u64,
    /// Largest deferred-insert backlog observed.
    pub pending_peak: usize,
    /// Tuples excluded from latency and steady-state figures.
    pub warmup: usize,
    /// Run-relative time at which the first measured tuple entered the
    /// pipeline; zero when there is no warmup.
    pub warmup_end_ns: u64,
    /// Per-tuple flip-to-emit latency in nanoseconds, ascending. Empty for
    /// the reference executor, which has no queue to time.
    pub latencies_ns: Vec<u64>,
    /// Final per-subindex insert tallies of the partitioned index, per side.
    pub insert_histograms: [Option<Vec<u64>>; 2],
    /// Insert tallies of each retired partitioned generation, oldest first.
    pub retired_histograms: Vec<Vec<u64>>,
}

impl EngineStats {
    pub fn throughput_tps(&self) -> f64 {
        if self.elapsed_ns == 0 {
            return 0.0;
        }
        self.tuples as f64 / (self.elapsed_ns as f64 / 1e9)
    }

    /// Throughput over the post-warmup portion of the run. Falls back to the
    /// whole-run figure when no warmup boundary was recorded.
    pub fn measured_throughput_tps(&self) -> f64 {
        if self.warmup == 0 || self.warmup >= self.tuples || self.warmup_end_ns >= self.elapsed_ns
        {
            return self.throughput_tps();
        }
        let span = (self.elapsed_ns - self.warmup_end_ns) as f64 / 1e9;
        (self.tuples - self.warmup) as f64 / span
    }

    /// Latency at quantile `q` in [0, 1], by rank on the sorted samples.
    pub fn latency_ns(&self, q: f64) -> Option<u64> {
        if self.latencies_ns.is_empty() {
            return None;
        }
        let rank = (q * (self.latencies_ns.len() - 1) as f64).round() as usize;
        Some(self.latencies_ns[rank.min(self.latencies_ns.len() - 1)])
    }
}

/// Join output plus run statistics.
#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Match records in arrival order of the probing tuple, each probe's
    /// matches ascending by matched sequence number.
    pub results: Vec<ResultRecord>,
    pub stats: EngineStats,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_kind_names_round_trip() {
        for kind in IndexKind::ALL {
            assert_eq!(kind.name().parse::<IndexKind>().unwrap(), kind);
        }
        assert!("spline".parse::<IndexKind>().is_err());
        assert_eq!("non-blocking".parse::<MergeMode>(), Ok(MergeMode::NonBlocking));
    }

    #[test]
    fn merge_mode_is_normalized_for_non_merging_indexes() {
        let mut config = EngineConfig::new(IndexKind::BTree, 64);
        config.merge_mode = MergeMode::NonBlocking;
        assert_eq!(config.effective_merge_mode(), MergeMode::Blocking);
        config.index = IndexKind::Partitioned;
        assert_eq!(config.effective_merge_mode(), MergeMode::NonBlocking);
    }

    #[test]
    fn validation_rejects_degenerate_setups() {
        let mut config = EngineConfig::new(IndexKind::ChainMutable, 64);
        config.chain_length = 1;
        assert!(config.validate().is_err());

        let mut config = EngineConfig::new(IndexKind::MergeTree, 64);
        config.merge_ratio = 0.0;
        assert!(config.validate().is_err());

        let mut config = EngineConfig::new(IndexKind::BTree, 64);
        config.threads = 0;
        assert!(config.validate().is_err());
        config.threads = 4;
        assert!(config.validate().is_ok());
    }

    #[test]
    fn latency_quantiles_pick_by_rank() {
        let stats = EngineStats {
            latencies_ns: vec![10, 20, 30, 40, 50],
            ..EngineStats::default()
        };
        assert_eq!(stats.latency_ns(0.0), Some(10));
        assert_eq!(stats.latency_ns(0.5), Some(30));
        assert_eq!(stats.latency_ns(1.0), Some(50));
        assert_eq!(EngineStats::default().latency_ns(0.5), None);
    }
}
