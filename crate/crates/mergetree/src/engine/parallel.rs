//! Shared-state executor: the join loop on a worker pool.
//!
//! See the [module docs](super) for the schedule. This file owns the task
//! ring, the flip protocol, the edge trackers, the propagation step and the
//! merge gate; the index forms it drives live in [`super::index`].

use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, AtomicUsize, Ordering};
use std::thread;
use std::time::Instant;

use parking_lot::Mutex;

use crate::types::{Entry, JoinMode, ResultRecord, Stream, Tuple};
use crate::window::{EvictionPolicy, ScanRegion, SlidingWindow};

use super::index::SharedIndex;
use super::{EngineConfig, EngineStats, MergeMode, RunOutput};

const SLOT_EMPTY: u8 = 0;
const SLOT_DONE: u8 = 2;

const GATE_OPEN: u8 = 0;
const GATE_CLOSED: u8 = 1;

/// Everything decided about a tuple at acquisition time, in queue order:
/// its window membership interval, what its append evicted, and the
/// per-stream floors in force once it is propagated.
struct FlipRecord {
    stream: Stream,
    seq: u64,
    key: i64,
    t_e: u64,
    t_end: u64,
    evicted: Option<(usize, i64, u64)>,
    floors: [u64; 2],
    flip_ns: u64,
}

struct SlotData {
    record: FlipRecord,
    matches: Vec<Entry>,
}

/// One ring slot. Ownership moves with `status`: the flipping worker fills
/// it under the queue lock, the processing worker (the same thread) buffers
/// matches into it, and after `SLOT_DONE` only the propagation holder may
/// touch it. The mutex is uncontended by construction; it exists so each
/// handover is a plain lock instead of unsafe cell juggling.
struct TaskSlot {
    status: AtomicU8,
    data: Mutex<Option<SlotData>>,
}

struct AssignState {
    cursor: usize,
}

struct PropagationState {
    head: usize,
    results: Vec<ResultRecord>,
    latencies: Vec<u64>,
    warmup_end_ns: u64,
    floors: [u64; 2],
}

/// Per-stream indexed-prefix boundary. `next` is the first sequence number
/// not yet known to be indexed; the mutex admits one advancing walker at a
/// time while probes read `next` lock-free.
struct Edge {
    next: AtomicU64,
    advance: Mutex<()>,
}

struct Engine<'a> {
    config: &'a EngineConfig,
    arrivals: &'a [Tuple],
    self_join: bool,
    windows: [SlidingWindow; 2],
    indexes: [SharedIndex; 2],
    slots: Box<[TaskSlot]>,
    assign: Mutex<AssignState>,
    inflight: AtomicUsize,
    prop: Mutex<PropagationState>,
    prop_head: AtomicUsize,
    edges: [Edge; 2],
    gate: AtomicU8,
    fallback: AtomicBool,
    defer: [AtomicBool; 2],
    pending: [Mutex<Vec<(i64, u64)>>; 2],
    pending_caps: [usize; 2],
    merge_claim: AtomicBool,
    start: Instant,
    blocking_fallbacks: AtomicU64,
    pending_peak: AtomicUsize,
    retired: Mutex<Vec<Vec<u64>>>,
}

impl<'a> Engine<'a> {
    fn new(config: &'a EngineConfig, arrivals: &'a [Tuple]) -> Self {
        let queue_len = config.threads * config.task_size * 4 + 64;
        let window = |side: usize| {
            let w = config.window_of(side);
            SlidingWindow::new(w, w + queue_len + 64, EvictionPolicy::Eager)
        };
        // A deferred insert must still own its window slot when it is
        // replayed, so the backlog (plus the flips already past the gate
        // when the fallback trips) must stay inside one window.
        let cap = |side: usize| {
            let w = config.window_of(side);
            config
                .pending_cap
                .unwrap_or(w / 2)
                .min(w.saturating_sub(queue_len + 1))
        };
        let slots = (0..queue_len)
            .map(|_| TaskSlot {
                status: AtomicU8::new(SLOT_EMPTY),
                data: Mutex::new(None),
            })
            .collect::<Vec<_>>()
            .into_boxed_slice();
        Engine {
            config,
            arrivals,
            self_join: config.join_mode == JoinMode::SelfJoin,
            windows: [window(0), window(1)],
            indexes: [
                SharedIndex::for_config(config, 0),
                SharedIndex::for_config(config, 1),
            ],
            slots,
            assign: Mutex::new(AssignState { cursor: 0 }),
            inflight: AtomicUsize::new(0),
            prop: Mutex::new(PropagationState {
                head: 0,
                results: Vec::new(),
                latencies: Vec::with_capacity(arrivals.len().saturating_sub(config.warmup)),
                warmup_end_ns: 0,
                floors: [0, 0],
            }),
            prop_head: AtomicUsize::new(0),
            edges: [
                Edge {
                    next: AtomicU64::new(0),
                    advance: Mutex::new(()),
                },
                Edge {
                    next: AtomicU64::new(0),
                    advance: Mutex::new(()),
                },
            ],
            gate: AtomicU8::new(GATE_OPEN),
            fallback: AtomicBool::new(false),
            defer: [AtomicBool::new(false), AtomicBool::new(false)],
            pending: [Mutex::new(Vec::new()), Mutex::new(Vec::new())],
            pending_caps: [cap(0), cap(1)],
            merge_claim: AtomicBool::new(false),
            start: Instant::now(),
            blocking_fallbacks: AtomicU64::new(0),
            pending_peak: AtomicUsize::new(0),
            retired: Mutex::new(Vec::new()),
        }
    }

    #[inline]
    fn sides_of(&self, stream: Stream) -> (usize, usize) {
        if self.self_join {
            (0, 0)
        } else {
            (stream.side(), stream.opposite().side())
        }
    }

    #[inline]
    fn barred(&self) -> bool {
        self.gate.load(Ordering::SeqCst) == GATE_CLOSED || self.fallback.load(Ordering::SeqCst)
    }

    fn worker(&self) {
        let mut scratch: Vec<Entry> = Vec::new();
        loop {
            let Some((base, count)) = self.acquire() else {
                if self.prop_head.load(Ordering::Acquire) >= self.arrivals.len() {
                    return;
                }
                self.try_propagate();
                thread::yield_now();
                continue;
            };
            let mut merge_side: Option<usize> = None;
            for g in base..base + count {
                self.process(g, &mut scratch, &mut merge_side);
            }
            if let Some(side) = merge_side {
                self.run_merge(side);
            }
            self.try_propagate();
        }
    }

    /// Hand out the next batch, flipping each tuple in arrival order. The
    /// in-flight counter is raised before the gate is re-checked so a
    /// closing merger either sees the batch or the batch sees the gate.
    fn acquire(&self) -> Option<(usize, usize)> {
        loop {
            {
                let mut assign = self.assign.lock();
                if assign.cursor >= self.arrivals.len() {
                    return None;
                }
                let head = self.prop_head.load(Ordering::Acquire);
                let free = self.slots.len() - (assign.cursor - head);
                let n = self
                    .config
                    .task_size
                    .min(self.arrivals.len() - assign.cursor)
                    .min(free);
                if n > 0 {
                    self.inflight.fetch_add(n, Ordering::SeqCst);
                    if self.barred() {
                        self.inflight.fetch_sub(n, Ordering::SeqCst);
                    } else {
                        let base = assign.cursor;
                        for g in base..base + n {
                            self.flip(g);
                        }
                        assign.cursor = base + n;
                        return Some((base, n));
                    }
                }
            }
            self.try_propagate();
            thread::yield_now();
        }
    }

    /// Append arrival `g` to its window and capture its probe interval.
    /// Runs under the queue lock, so flips are serialized in arrival order
    /// and the captured bounds equal the serial executor's window contents.
    fn flip(&self, g: usize) {
        let t = &self.arrivals[g];
        let (own, probe) = self.sides_of(t.stream);
        let t_end = self.windows[probe].head_seq();
        let t_e = t_end.saturating_sub(self.windows[probe].logical_size() as u64);
        let appended = self.windows[own]
            .append(t.key)
            .expect("ring capacity covers the in-flight bound");
        debug_assert_eq!(appended.seq, t.seq, "arrivals must carry per-stream sequence order");
        let record = FlipRecord {
            stream: t.stream,
            seq: t.seq,
            key: t.key,
            t_e,
            t_end,
            evicted: appended.evicted.map(|e| (own, e.key, e.seq)),
            floors: [self.windows[0].live_floor(), self.windows[1].live_floor()],
            flip_ns: self.start.elapsed().as_nanos() as u64,
        };
        let slot = &self.slots[g % self.slots.len()];
        debug_assert_eq!(slot.status.load(Ordering::Acquire), SLOT_EMPTY);
        *slot.data.lock() = Some(SlotData {
            record,
            matches: Vec::new(),
        });
    }

    fn process(&self, g: usize, scratch: &mut Vec<Entry>, merge_side: &mut Option<usize>) {
        let slot = &self.slots[g % self.slots.len()];
        let (stream, seq, key, t_e, t_end) = {
            let guard = slot.data.lock();
            let r = &guard.as_ref().expect("slot was flipped").record;
            (r.stream, r.seq, r.key, r.t_e, r.t_end)
        };
        let (own, probe) = self.sides_of(stream);

        scratch.clear();
        if t_end > t_e {
            let (lo, hi) = self.config.predicate.range(key);
            // Everything below the edge is in the index; everything else in
            // the captured interval is flipped but possibly unindexed, so
            // it is read from the window ring instead. Together the two
            // parts cover [t_e, t_end) exactly once.
            let edge = self.edges[probe].next.load(Ordering::Acquire);
            let split = edge.clamp(t_e, t_end);
            if split > t_e {
                self.indexes[probe].probe(lo, hi, t_e, split, scratch);
            }
            if t_end > split {
                self.windows[probe].scan(lo, hi, split, t_end, ScanRegion::All, scratch);
            }
            scratch.sort_unstable_by_key(|e| e.seq);
        }
        if !scratch.is_empty() {
            slot.data
                .lock()
                .as_mut()
                .expect("slot was flipped")
                .matches
                .extend_from_slice(scratch);
        }

        if self.defer[own].load(Ordering::SeqCst) {
            let mut pending = self.pending[own].lock();
            pending.push((key, seq));
            let backlog = pending.len();
            drop(pending);
            self.pending_peak.fetch_max(backlog, Ordering::Relaxed);
            if backlog > self.pending_caps[own]
                && !self.fallback.swap(true, Ordering::SeqCst)
            {
                self.blocking_fallbacks.fetch_add(1, Ordering::Relaxed);
            }
        } else {
            let due = self.indexes[own].insert(key, seq);
            self.windows[own].mark_indexed(seq);
            self.advance_edge(own);
            if due
                && merge_side.is_none()
                && self
                    .merge_claim
                    .compare_exchange(false, true, Ordering::AcqRel, Ordering::Relaxed)
                    .is_ok()
            {
                *merge_side = Some(own);
            }
        }

        slot.status.store(SLOT_DONE, Ordering::Release);
        self.inflight.fetch_sub(1, Ordering::SeqCst);
    }

    /// Walk the edge across the contiguous indexed prefix. Losing the
    /// try-lock is fine: the edge is a performance hint, and a lagging edge
    /// only shifts work from the index probe to the window scan.
    fn advance_edge(&self, side: usize) {
        let edge = &self.edges[side];
        let Some(_walker) = edge.advance.try_lock() else {
            return;
        };
        let mut next = edge.next.load(Ordering::Relaxed);
        let head = self.windows[side].head_seq();
        while next < head && self.windows[side].is_indexed(next) {
            next += 1;
        }
        edge.next.store(next, Ordering::Release);
    }

    /// Drain finished tasks in arrival order, emit their matches, then
    /// apply evictions and reclamation for the newly retired prefix. Index
    /// deletes run after the propagation lock is released.
    fn try_propagate(&self) {
        let Some(mut st) = self.prop.try_lock() else {
            return;
        };
        let total = self.arrivals.len();
        let mut evictions: Vec<(usize, i64, u64)> = Vec::new();
        let mut consumed = false;
        while st.head < total {
            let slot = &self.slots[st.head % self.slots.len()];
            if slot.status.load(Ordering::Acquire) != SLOT_DONE {
                break;
            }
            let data = slot.data.lock().take().expect("done slot has data");
            slot.status.store(SLOT_EMPTY, Ordering::Release);
            let r = data.record;
            for e in &data.matches {
                st.results.push(ResultRecord {
                    probe_stream: r.stream,
                    probe_seq: r.seq,
                    probe_key: r.key,
                    match_seq: e.seq,
                    match_key: e.key,
                });
            }
            if st.head >= self.config.warmup {
                if st.head == self.config.warmup {
                    st.warmup_end_ns = r.flip_ns;
                }
                let done_ns = self.start.elapsed().as_nanos() as u64;
                st.latencies.push(done_ns.saturating_sub(r.flip_ns));
            }
            if let Some(ev) = r.evicted {
                evictions.push(ev);
            }
            st.floors = r.floors;
            st.head += 1;
            consumed = true;
        }
        if consumed {
            let head = st.head;
            let floors = st.floors;
            self.prop_head.store(head, Ordering::Release);
            drop(st);
            for (side, key, seq) in evictions {
                self.indexes[side].evict(floors[side], Some((key, seq)));
            }
            self.windows[0].reclaim_to(floors[0]);
            self.windows[1].reclaim_to(floors[1]);
        }
    }

    fn wait_drained(&self) {
        while self.inflight.load(Ordering::SeqCst) != 0 {
            self.try_propagate();
            thread::yield_now();
        }
    }

    /// Run one merge of `side`'s index. The caller holds the merge claim.
    fn run_merge(&self, side: usize) {
        self.gate.store(GATE_CLOSED, Ordering::SeqCst);
        self.wait_drained();
        let floor = self.windows[side].live_floor();
        let plan = self.indexes[side].merge_begin(floor);
        match self.config.effective_merge_mode() {
            MergeMode::Blocking => {
                let ready = self.indexes[side].merge_build(plan);
                self.note_retired(self.indexes[side].merge_install(ready));
                self.indexes[side].reclaim();
                self.gate.store(GATE_OPEN, Ordering::SeqCst);
            }
            MergeMode::NonBlocking => {
                self.defer[side].store(true, Ordering::SeqCst);
                self.gate.store(GATE_OPEN, Ordering::SeqCst);

                let ready = self.indexes[side].merge_build(plan);

                self.gate.store(GATE_CLOSED, Ordering::SeqCst);
                self.wait_drained();
                self.note_retired(self.indexes[side].merge_install(ready));
                let replay: Vec<(i64, u64)> =
                    std::mem::take(&mut *self.pending[side].lock());
                for (key, seq) in replay {
                    debug_assert!(
                        seq >= self.windows[side].tail_seq(),
                        "pending cap keeps deferred tuples inside the window"
                    );
                    let _due = self.indexes[side].insert(key, seq);
                    self.windows[side].mark_indexed(seq);
                }
                self.defer[side].store(false, Ordering::SeqCst);
                self.advance_edge(side);
                self.indexes[side].reclaim();
                self.fallback.store(false, Ordering::SeqCst);
                self.gate.store(GATE_OPEN, Ordering::SeqCst);
            }
        }
        self.merge_claim.store(false, Ordering::Release);
    }

    fn note_retired(&self, histogram: Option<Vec<u64>>) {
        if let Some(h) = histogram {
            self.retired.lock().push(h);
        }
    }

    fn into_output(self, elapsed_ns: u64) -> RunOutput {
        let prop = self.prop.into_inner();
        debug_assert_eq!(prop.head, self.arrivals.len());
        let mut latencies = prop.latencies;
        latencies.sort_unstable();
        let stats = EngineStats {
            tuples: self.arrivals.len(),
            elapsed_ns,
            merge_count: self.indexes[0].merge_count() + self.indexes[1].merge_count(),
            blocking_fallbacks: self.blocking_fallbacks.load(Ordering::Relaxed),
            pending_peak: self.pending_peak.load(Ordering::Relaxed),
            warmup: self.config.warmup.min(self.arrivals.len()),
            warmup_end_ns: prop.warmup_end_ns,
            latencies_ns: latencies,
            insert_histograms: [
                self.indexes[0].insert_histogram(),
                self.indexes[1].insert_histogram(),
            ],
            retired_histograms: self.retired.into_inner(),
        };
        RunOutput {
            results: prop.results,
            stats,
        }
    }
}

/// Run the arrival sequence on `config.threads` workers and return the join
/// output, bit-for-bit equal to [`run_reference`](super::run_reference) on
/// the same input.
pub fn run_parallel(config: &EngineConfig, arrivals: &[Tuple]) -> RunOutput {
    config.validate().expect("invalid engine config");
    debug_assert!(
        config.join_mode == JoinMode::TwoWay || arrivals.iter().all(|t| t.stream == Stream::R),
        "self-join arrivals must all be stream R"
    );
    let engine = Engine::new(config, arrivals);
    let start = Instant::now();
    thread::scope(|scope| {
        for _ in 0..config.threads {
            scope.spawn(|| engine.worker());
        }
    });
    let elapsed_ns = start.elapsed().as_nanos() as u64;
    engine.into_output(elapsed_ns)
}

#[cfg(test)]
mod tests {
    use crate::oracle::NestedLoopJoin;
    use crate::types::BandPredicate;
    use crate::workload::{generate_stream, interleave, KeyDistribution, WorkloadSpec};

    use super::super::IndexKind;
    use super::*;

    fn arrivals(n: usize, seed: u64) -> Vec<Tuple> {
        let dist = KeyDistribution::Uniform { lo: 0, hi: 1 << 16 };
        let r = generate_stream(&WorkloadSpec::new(dist.clone(), seed, n), Stream::R).unwrap();
        let s = generate_stream(&WorkloadSpec::new(dist, seed ^ 0x9e37_79b9, n), Stream::S)
            .unwrap();
        interleave(&r, &s, 1, 1)
    }

    #[test]
    fn every_kind_and_thread_count_reproduces_the_oracle() {
        let input = arrivals(1200, 3);
        let predicate = BandPredicate::new(64);
        let expected = NestedLoopJoin::run(JoinMode::TwoWay, predicate, 64, 64, &input);
        assert!(!expected.is_empty());

        for kind in IndexKind::ALL {
            let modes: &[MergeMode] = if kind.merges() {
                &[MergeMode::Blocking, MergeMode::NonBlocking]
            } else {
                &[MergeMode::Blocking]
            };
            for &mode in modes {
                for threads in [1, 2, 4] {
                    let mut config = EngineConfig::new(kind, 64);
                    config.predicate = predicate;
                    config.merge_ratio = 0.5;
                    config.merge_mode = mode;
                    config.threads = threads;
                    config.task_size = 4;
                    let out = run_parallel(&config, &input);
                    assert_eq!(
                        out.results, expected,
                        "kind {kind:?} mode {mode:?} threads {threads}"
                    );
                    if kind.merges() {
                        assert!(out.stats.merge_count > 0);
                    }
                }
            }
        }
    }

    #[test]
    fn self_join_runs_parallel() {
        let mut spec = WorkloadSpec::new(
            KeyDistribution::Gaussian {
                mean: 0.5,
                std_dev: 0.15,
            },
            17,
            2500,
        );
        spec.domain_width = 1 << 14;
        let input = generate_stream(&spec, Stream::R).unwrap();
        let predicate = BandPredicate::new(24);
        let expected = NestedLoopJoin::run(JoinMode::SelfJoin, predicate, 128, 128, &input);
        assert!(!expected.is_empty());

        let mut config = EngineConfig::new(IndexKind::Partitioned, 128);
        config.join_mode = JoinMode::SelfJoin;
        config.predicate = predicate;
        config.merge_ratio = 0.25;
        config.merge_mode = MergeMode::NonBlocking;
        config.threads = 4;
        let out = run_parallel(&config, &input);
        assert_eq!(out.results, expected);
        assert!(out.stats.merge_count > 0);
    }

    #[test]
    fn deferred_and_overflowing_merges_lose_nothing() {
        let input = arrivals(2000, 29);
        let predicate = BandPredicate::new(48);
        let expected = NestedLoopJoin::run(JoinMode::TwoWay, predicate, 256, 256, &input);

        for cap in [Some(0), Some(8), None] {
            let mut config = EngineConfig::new(IndexKind::MergeTree, 256);
            config.predicate = predicate;
            config.merge_ratio = 0.125;
            config.merge_mode = MergeMode::NonBlocking;
            config.threads = 4;
            config.pending_cap = cap;
            let out = run_parallel(&config, &input);
            assert_eq!(out.results, expected, "pending cap {cap:?}");
            assert!(out.stats.merge_count > 0);
        }
    }

    #[test]
    fn asymmetric_windows_and_rates_match_the_oracle() {
        let dist = KeyDistribution::Uniform { lo: 0, hi: 1 << 15 };
        let r = generate_stream(&WorkloadSpec::new(dist.clone(), 41, 1800), Stream::R).unwrap();
        let s = generate_stream(&WorkloadSpec::new(dist, 43, 600), Stream::S).unwrap();
        let input = interleave(&r, &s, 3, 1);
        let predicate = BandPredicate::new(30);
        let expected = NestedLoopJoin::run(JoinMode::TwoWay, predicate, 32, 256, &input);
        assert!(!expected.is_empty());

        let mut config = EngineConfig::new(IndexKind::BTree, 32);
        config.window_s = 256;
        config.predicate = predicate;
        config.threads = 2;
        let out = run_parallel(&config, &input);
        assert_eq!(out.results, expected);
    }

    #[test]
    fn repeated_runs_are_deterministic() {
        let input = arrivals(1000, 53);
        let mut config = EngineConfig::new(IndexKind::Partitioned, 64);
        config.predicate = BandPredicate::new(64);
        config.merge_ratio = 0.25;
        config.threads = 4;
        let a = run_parallel(&config, &input);
        let b = run_parallel(&config, &input);
        assert_eq!(a.results, b.results);
    }

    #[test]
    fn stats_cover_the_run() {
        let input = arrivals(800, 61);
        let mut config = EngineConfig::new(IndexKind::BTree, 64);
        config.predicate = BandPredicate::new(16);
        config.threads = 2;
        config.warmup = 100;
        let out = run_parallel(&config, &input);
        assert_eq!(out.stats.tuples, input.len());
        assert_eq!(out.stats.latencies_ns.len(), input.len() - 100);
        assert!(out.stats.throughput_tps() > 0.0);
        assert!(out.stats.latencies_ns.windows(2).all(|w| w[0] <= w[1]));
    }
}
