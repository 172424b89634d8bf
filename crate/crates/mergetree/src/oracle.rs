//! Nested-loop reference join.
//!
//! This is the semantic oracle every index and every engine schedule must
//! reproduce exactly: process arrivals one at a time, scan the opposite live
//! window front to back, emit the matches, then slide the arriving tuple into
//! its own window. It deliberately shares no code with the indexes it checks —
//! plain ring deques and a linear scan, nothing else.
//!
//! Match semantics: a pair `(r, s)` is emitted exactly once, by whichever
//! tuple arrives later, provided the earlier tuple is still inside its
//! window's logical size at that moment. Matches of one probe are emitted in
//! ascending sequence order; probes emit in arrival order. A self-join probes
//! the single shared window before inserting, so a tuple never matches itself
//! and every unordered pair appears once.

use std::collections::VecDeque;

use crate::types::{BandPredicate, JoinMode, ResultRecord, Stream, Tuple};

pub struct NestedLoopJoin {
    mode: JoinMode,
    predicate: BandPredicate,
    sizes: [usize; 2],
    windows: [VecDeque<(u64, i64)>; 2],
}

impl NestedLoopJoin {
    pub fn new(mode: JoinMode, predicate: BandPredicate, w_r: usize, w_s: usize) -> Self {
        NestedLoopJoin {
            mode,
            predicate,
            sizes: [w_r, w_s],
            windows: [VecDeque::new(), VecDeque::new()],
        }
    }

    fn probe_side(&self, stream: Stream) -> usize {
        match self.mode {
            JoinMode::SelfJoin => 0,
            JoinMode::TwoWay => stream.opposite().side(),
        }
    }

    fn own_side(&self, stream: Stream) -> usize {
        match self.mode {
            JoinMode::SelfJoin => 0,
            JoinMode::TwoWay => stream.side(),
        }
    }

    /// Process one arrival: emit its matches, then insert it.
    pub fn process(&mut self, t: &Tuple, out: &mut Vec<ResultRecord>) {
        let probe = self.probe_side(t.stream);
        for &(seq, key) in &self.windows[probe] {
            if self.predicate.matches(t.key, key) {
                out.push(ResultRecord {
                    probe_stream: t.stream,
                    probe_seq: t.seq,
                    probe_key: t.key,
                    match_seq: seq,
                    match_key: key,
                });
            }
        }
        let own = self.own_side(t.stream);
        let win = &mut self.windows[own];
        win.push_back((t.seq, t.key));
        if win.len() > self.sizes[own] {
            win.pop_front();
        }
    }

    /// Run a whole arrival sequence.
    pub fn run(
        mode: JoinMode,
        predicate: BandPredicate,
        w_r: usize,
        w_s: usize,
        arrivals: &[Tuple],
    ) -> Vec<ResultRecord> {
        let mut join = NestedLoopJoin::new(mode, predicate, w_r, w_s);
        let mut out = Vec::new();
        for t in arrivals {
            join.process(t, &mut out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(stream: Stream, seq: u64, key: i64) -> Tuple {
        Tuple { stream, seq, key }
    }

    #[test]
    fn empty_opposite_window_yields_nothing() {
        let out = NestedLoopJoin::run(
            JoinMode::TwoWay,
            BandPredicate::new(5),
            4,
            4,
            &[t(Stream::R, 0, 10)],
        );
        assert!(out.is_empty());
    }

    #[test]
    fn each_pair_emitted_once_by_the_later_tuple() {
        let arrivals = [
            t(Stream::R, 0, 10),
            t(Stream::S, 0, 11), // matches r0
            t(Stream::R, 1, 12), // matches s0
        ];
        let out = NestedLoopJoin::run(JoinMode::TwoWay, BandPredicate::new(1), 4, 4, &arrivals);
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].probe_stream, out[0].probe_seq, out[0].match_seq), (Stream::S, 0, 0));
        assert_eq!((out[1].probe_stream, out[1].probe_seq, out[1].match_seq), (Stream::R, 1, 0));
    }

    #[test]
    fn eviction_is_fifo_per_window() {
        // w = 2: by the time s0 arrives, r0 has been evicted by r2
        let arrivals = [
            t(Stream::R, 0, 100),
            t(Stream::R, 1, 100),
            t(Stream::R, 2, 100),
            t(Stream::S, 0, 100),
        ];
        let out = NestedLoopJoin::run(JoinMode::TwoWay, BandPredicate::new(0), 2, 2, &arrivals);
        let matched: Vec<u64> = out.iter().map(|r| r.match_seq).collect();
        assert_eq!(matched, vec![1, 2]);
    }

    #[test]
    fn duplicates_all_match_in_seq_order() {
        let arrivals = [
            t(Stream::S, 0, 7),
            t(Stream::S, 1, 7),
            t(Stream::S, 2, 7),
            t(Stream::R, 0, 7),
        ];
        let out = NestedLoopJoin::run(JoinMode::TwoWay, BandPredicate::new(0), 8, 8, &arrivals);
        let matched: Vec<u64> = out.iter().map(|r| r.match_seq).collect();
        assert_eq!(matched, vec![0, 1, 2]);
    }

    #[test]
    fn self_join_never_matches_itself() {
        let arrivals = [t(Stream::R, 0, 5), t(Stream::R, 1, 5), t(Stream::R, 2, 5)];
        let out = NestedLoopJoin::run(JoinMode::SelfJoin, BandPredicate::new(0), 4, 4, &arrivals);
        // pairs (1,0), (2,0), (2,1)
        let pairs: Vec<(u64, u64)> = out.iter().map(|r| (r.probe_seq, r.match_seq)).collect();
        assert_eq!(pairs, vec![(1, 0), (2, 0), (2, 1)]);
    }
}
