//! Single-threaded executor over plain indexes.
//!
//! This is the join loop with every concurrency mechanism removed: no task
//! queue, no atomics, no locks, no edge tracking — just the per-tuple
//! sequence *probe, expire, insert* against unsynchronized structures. Its
//! output defines what the parallel executor must produce, and its
//! throughput is the yardstick for what synchronization costs.

use std::time::Instant;

use crate::types::{Entry, JoinMode, ResultRecord, Stream, Tuple};

use super::index::ReferenceIndex;
use super::{EngineConfig, EngineStats, RunOutput};

/// Count-based window distilled to what the serial loop needs: sequence
/// assignment and the identity of the tuple that slid out.
struct RefWindow {
    w: u64,
    ring: Vec<(u64, i64)>,
    head: u64,
}

impl RefWindow {
    fn new(w: usize) -> Self {
        RefWindow {
            w: w as u64,
            ring: vec![(u64::MAX, 0); w],
            head: 0,
        }
    }

    #[inline]
    fn head_seq(&self) -> u64 {
        self.head
    }

    #[inline]
    fn live_floor(&self) -> u64 {
        self.head.saturating_sub(self.w)
    }

    fn append(&mut self, key: i64) -> (u64, Option<(i64, u64)>) {
        let seq = self.head;
        let slot = (seq % self.w) as usize;
        let evicted = if seq >= self.w {
            let (old_seq, old_key) = self.ring[slot];
            debug_assert_eq!(old_seq, seq - self.w);
            Some((old_key, old_seq))
        } else {
            None
        };
        self.ring[slot] = (seq, key);
        self.head = seq + 1;
        (seq, evicted)
    }
}

/// Run the whole arrival sequence serially and return the join output.
///
/// `config.threads`, `config.task_size` and `config.merge_mode` are
/// ignored: there is nothing to schedule and every merge happens inline.
pub fn run_reference(config: &EngineConfig, arrivals: &[Tuple]) -> RunOutput {
    config.validate().expect("invalid engine config");
    let self_join = config.join_mode == JoinMode::SelfJoin;

    let mut windows = [
        RefWindow::new(config.window_of(0)),
        RefWindow::new(config.window_of(1)),
    ];
    let mut indexes = [
        ReferenceIndex::for_config(config, 0),
        ReferenceIndex::for_config(config, 1),
    ];

    let mut results: Vec<ResultRecord> = Vec::new();
    let mut matches: Vec<Entry> = Vec::new();
    let mut retired_histograms: Vec<Vec<u64>> = Vec::new();

    let start = Instant::now();
    let mut warmup_end_ns = 0u64;
    for (i, t) in arrivals.iter().enumerate() {
        if i == config.warmup && i > 0 {
            warmup_end_ns = start.elapsed().as_nanos() as u64;
        }
        debug_assert!(!self_join || t.stream == Stream::R);
        let own = if self_join { 0 } else { t.stream.side() };
        let probe = if self_join { 0 } else { t.stream.opposite().side() };

        let t_end = windows[probe].head_seq();
        let t_e = t_end.saturating_sub(windows[probe].w);
        if t_end > t_e {
            let (lo, hi) = config.predicate.range(t.key);
            matches.clear();
            indexes[probe].probe(lo, hi, t_e, t_end, &mut matches);
            matches.sort_unstable_by_key(|e| e.seq);
            for e in &matches {
                results.push(ResultRecord {
                    probe_stream: t.stream,
                    probe_seq: t.seq,
                    probe_key: t.key,
                    match_seq: e.seq,
                    match_key: e.key,
                });
            }
        }

        let (seq, evicted) = windows[own].append(t.key);
        debug_assert_eq!(seq, t.seq);
        let floor = windows[own].live_floor();
        indexes[own].expire(floor, evicted);
        if indexes[own].insert(t.key, seq) {
            if let Some(histogram) = indexes[own].merge(floor) {
                retired_histograms.push(histogram);
            }
        }
    }
    let elapsed_ns = start.elapsed().as_nanos() as u64;

    let stats = EngineStats {
        tuples: arrivals.len(),
        elapsed_ns,
        merge_count: indexes[0].merge_count() + indexes[1].merge_count(),
        blocking_fallbacks: 0,
        pending_peak: 0,
        warmup: config.warmup.min(arrivals.len()),
        warmup_end_ns,
        latencies_ns: Vec::new(),
        insert_histograms: [indexes[0].insert_histogram(), indexes[1].insert_histogram()],
        retired_histograms,
    };
    RunOutput { results, stats }
}
